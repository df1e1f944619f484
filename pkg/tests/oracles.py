"""Independent reference computations used as test oracles.

These are written differently from the package code on purpose (polynomial
roots, brute force, plain loops) so agreement means something.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def radius_candidates(w: float, h: float, alpha: float) -> list[float]:
    """Each candidate radius is the larger root of ``r^2 - a r + b/4``."""
    out = []
    s, p = h + w, h * w
    for a, b in (
        (s, 4 * p * (1 - alpha) / (1 + alpha)),
        (2 * s, 16 * p * (1 - alpha)),
        (-2 * s, 16 * p * alpha * (alpha - 1)),
    ):
        roots = np.roots([1.0, -a, b / 4.0])
        out.append(abs(float(np.max(roots.real))))
    return out


def radius(w: float, h: float, alpha: float = 0.7) -> tuple[float, float]:
    r = max(min(radius_candidates(w, h, alpha)), 1.0)
    return r, r / 3.0


def presence_rule(history: list[int], l: int, beta: float) -> int:
    """Window rule written out longhand: padded with leading zeros to ``l``."""
    padded = [0] * (l - len(history)) + list(history)
    if padded[-1] == 1:
        return 1
    positives = 0
    for v in padded:
        positives += v
    return 1 if positives / l >= beta else 0


def brute_force_assignment(cost: np.ndarray) -> float:
    """Minimum total cost over every injective matching of the smaller side.

    Sums are exactly rounded so the result does not depend on summation order.
    """
    n, m = cost.shape
    if n == 0 or m == 0:
        return 0.0
    if n <= m:
        return min(math.fsum(cost[i, c] for i, c in enumerate(p)) for p in itertools.permutations(range(m), n))
    return min(math.fsum(cost[r, j] for j, r in enumerate(p)) for p in itertools.permutations(range(n), m))


def box_iou(a, b) -> float:
    """IOU of two ``(cx, cy, w, h)`` boxes via corner coordinates."""
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def smooth_l1_term(x: float) -> float:
    return 0.5 * x * x if abs(x) < 1 else abs(x) - 0.5


def splat_value(dx: int, dy: int, r: float) -> float:
    sigma = r / 3.0
    if dx * dx + dy * dy > math.ceil(r) ** 2:
        return 0.0
    return math.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
