"""Small rigid-body helpers shared by the simulator, grounding and executor."""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "box_corners",
    "footprint_contains",
    "ray_box_depth",
    "rot_z",
    "wrap_angle",
    "yaw_rotate",
]


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_rotate(x: float, y: float, yaw: float) -> tuple[float, float]:
    c, s = math.cos(yaw), math.sin(yaw)
    return c * x - s * y, s * x + c * y


def box_corners(center, yaw: float, half) -> np.ndarray:
    """8x3 corners of an upright box rotated by ``yaw`` about z."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    local = signs * np.asarray(half, dtype=float)
    return local @ rot_z(yaw).T + np.asarray(center, dtype=float)


def footprint_contains(center, yaw: float, half, x: float, y: float, margin: float = 0.0) -> bool:
    """Whether (x, y) lies in the box's horizontal footprint grown by ``margin``
    (negative margins shrink it)."""
    dx, dy = x - center[0], y - center[1]
    lx, ly = yaw_rotate(dx, dy, -yaw)
    return abs(lx) <= half[0] + margin and abs(ly) <= half[1] + margin


def ray_box_depth(origin: np.ndarray, dirs: np.ndarray, center, yaw: float, half) -> np.ndarray:
    """Entry parameter ``t`` of rays ``origin + t * dirs`` into an upright box.

    ``dirs`` is (N, 3).  Misses (and boxes behind the origin) give ``inf``.
    With camera rays scaled to unit z-component, ``t`` is the z-depth.
    """
    c, s = math.cos(yaw), math.sin(yaw)
    o = np.asarray(origin, dtype=float) - np.asarray(center, dtype=float)
    # world -> box frame is a rotation by -yaw
    ox, oy, oz = c * o[0] + s * o[1], -s * o[0] + c * o[1], o[2]
    dx = c * dirs[:, 0] + s * dirs[:, 1]
    dy = -s * dirs[:, 0] + c * dirs[:, 1]
    dz = dirs[:, 2]
    t_near = np.full(dirs.shape[0], -np.inf)
    t_far = np.full(dirs.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for oc, dc, h in ((ox, dx, half[0]), (oy, dy, half[1]), (oz, dz, half[2])):
            parallel = np.abs(dc) < 1e-12
            t1 = (-h - oc) / dc
            t2 = (h - oc) / dc
            lo = np.where(parallel, np.where(abs(oc) <= h, -np.inf, np.inf), np.minimum(t1, t2))
            hi = np.where(parallel, np.where(abs(oc) <= h, np.inf, -np.inf), np.maximum(t1, t2))
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    return np.where(hit, t_near, np.inf)
