"""Independent reference implementations used as test oracles.

Each function recomputes a quantity from first principles with plain Python
scalars or brute force, without calling the package code it checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def box_lattice(center, half, yaw: float = 0.0, k: int = 11) -> np.ndarray:
    """A symmetric ``k``^3 lattice filling a yawed box; its mean is the centre
    and its dominant variance lies along the longest half-size."""
    g = [np.linspace(-h, h, k) for h in half]
    pts = np.array(list(itertools.product(*g)))
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return pts @ rot.T + np.asarray(center, dtype=float)


def axis_angle(a, b) -> float:
    """Unsigned angle between two lines, folded to [0, pi/2]."""
    cos = abs(sum(x * y for x, y in zip(a, b))) / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))
    return math.acos(min(1.0, cos))


def pinhole_point(u: float, v: float, d: float, fx: float, fy: float, cx: float, cy: float) -> tuple[float, float, float]:
    return ((u - cx) * d / fx, (v - cy) * d / fy, d)


def windowed_product(bits, n: int, t: int) -> int:
    """prod_{j=0}^{n-1} b_{t-j}; zero while fewer than n samples exist."""
    if t - n + 1 < 0:
        return 0
    out = 1
    for j in range(n):
        out *= int(bits[t - j])
    return out


def weighted_argmax(table, weights) -> int:
    """First index attaining the maximum weighted sum, by linear scan."""
    best, best_s = 0, None
    for i, row in enumerate(table):
        s = sum(float(x) * float(w) for x, w in zip(row, weights))
        if best_s is None or s > best_s:
            best, best_s = i, s
    return best


def pair_relation(ca, ea, axa, cb, eb, axb) -> tuple[float, float, float, float]:
    """(horizontal, vertical gap bottom(a)-top(b), centroid distance, alignment)."""
    horizontal = math.sqrt((ca[0] - cb[0]) ** 2 + (ca[1] - cb[1]) ** 2)
    gap = (ca[2] - ea[2]) - (cb[2] + eb[2])
    dist = math.sqrt(sum((x - y) ** 2 for x, y in zip(ca, cb)))
    return horizontal, gap, dist, axis_angle(axa, axb)
