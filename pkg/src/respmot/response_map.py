"""Gaussian response maps: kernel geometry, rendering, peak extraction,
presence inference over a time window, and label generation."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from os import PathLike
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from . import mot_io
from .config import NmsConfig
from .mot_io import DetectionRow

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class GaussianKernel:
    r: float
    sigma: float
    alpha: float = 0.7

    @property
    def extent(self) -> int:
        """Radius of the splatted disc in whole pixels."""
        return int(math.ceil(self.r))


def gaussian_radius(w: float, h: float, alpha: float = 0.7) -> GaussianKernel:
    """Kernel radius for a ``w`` x ``h`` box.

    Three candidate radii are formed from ``a_i`` and ``b_i``::

        a = (h + w,  2(h + w),  -2(h + w))
        b = (4hw(1 - alpha)/(1 + alpha),  16hw(1 - alpha),  16hw*alpha*(alpha - 1))
        r_i = |(a_i + sqrt(a_i^2 - b_i)) / 2|

    The smallest is kept, clamped to at least one pixel, and ``sigma = r / 3``.
    """
    if not (w > 0 and h > 0):
        raise ValueError(f"box size must be positive, got {w}x{h}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    s = h + w
    hw = h * w
    a = (s, 2.0 * s, -2.0 * s)
    b = (
        4.0 * hw * (1.0 - alpha) / (1.0 + alpha),
        16.0 * hw * (1.0 - alpha),
        16.0 * hw * alpha * (alpha - 1.0),
    )
    radii = [abs((ai + math.sqrt(max(ai * ai - bi, 0.0))) / 2.0) for ai, bi in zip(a, b)]
    r = max(min(radii), 1.0)
    return GaussianKernel(r=r, sigma=r / 3.0, alpha=alpha)


@dataclass(frozen=True, eq=False)
class ResponseMap:
    """Single-channel map with values in [0, 1], stored as float32 ``z[y, x]``."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float32)
        if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
            raise ValueError(f"response map must be a non-empty 2-D grid, got {z.shape}")
        if not np.all((z >= 0.0) & (z <= 1.0)):
            raise ValueError("response map values must lie in [0, 1]")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def width(self) -> int:
        return self.z.shape[1]

    @property
    def height(self) -> int:
        return self.z.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> ResponseMap:
        return cls(np.zeros((height, width), dtype=np.float32))

    def __eq__(self, other):
        if not isinstance(other, ResponseMap):
            return NotImplemented
        return self.z.shape == other.z.shape and self.z.tobytes() == other.z.tobytes()

    def save(self, path: str | PathLike) -> None:
        mot_io.write_map(path, self.z)

    @classmethod
    def load(cls, path: str | PathLike) -> ResponseMap:
        return cls(mot_io.read_map(path))

    def to_raster(self) -> np.ndarray:
        return mot_io.map_to_raster(self.z)


class Splat(NamedTuple):
    cx: float
    cy: float
    kernel: GaussianKernel
    z: int = 1


def _disc(kernel: GaussianKernel) -> np.ndarray:
    ext = kernel.extent
    d = np.arange(-ext, ext + 1, dtype=np.float64)
    d2 = d[None, :] ** 2 + d[:, None] ** 2
    patch = np.exp(-d2 / (2.0 * kernel.sigma**2))
    patch[d2 > ext * ext] = 0.0
    return patch


def render(objects: Iterable[Splat | tuple], width: int, height: int) -> ResponseMap:
    """Splat one Gaussian bump per present object, merging overlaps by max.

    Centers are rounded to the nearest pixel. Objects with ``z == 0`` are
    ignored; objects whose center falls outside the map are skipped and
    counted in a logged warning.
    """
    canvas = np.zeros((height, width), dtype=np.float64)
    skipped = 0
    for obj in objects:
        cx, cy, kernel, z = Splat(*obj)
        if not z:
            continue
        px, py = round_half_up(cx), round_half_up(cy)
        if not (0 <= px < width and 0 <= py < height):
            skipped += 1
            continue
        patch = _disc(kernel)
        ext = kernel.extent
        x0, x1 = max(px - ext, 0), min(px + ext + 1, width)
        y0, y1 = max(py - ext, 0), min(py + ext + 1, height)
        sub = patch[y0 - (py - ext) : y1 - (py - ext), x0 - (px - ext) : x1 - (px - ext)]
        np.maximum(canvas[y0:y1, x0:x1], sub, out=canvas[y0:y1, x0:x1])
    if skipped:
        logger.warning("render: skipped %d objects centered outside the map", skipped)
    return ResponseMap(canvas.astype(np.float32))


@dataclass(frozen=True, order=True)
class Peak:
    cx: int
    cy: int
    score: float = 1.0


def extract_peaks(rmap: ResponseMap, cfg: NmsConfig = NmsConfig()) -> list[Peak]:
    """Local maxima of ``rmap`` above ``cfg.score_min``, best first, at most ``cfg.k``.

    A pixel qualifies when no value in its ``s x s`` neighbourhood (clamped at
    the border) exceeds it. Among equal-valued maxima sharing a window only
    the first in raster order survives.
    """
    z = rmap.z
    local_max = maximum_filter(z, size=cfg.s, mode="nearest")
    cand = (z >= local_max) & (z > cfg.score_min)
    half = cfg.s // 2
    if half and cand.any():
        h, w = cand.shape
        padded = np.zeros((h + 2 * half, w + 2 * half), dtype=bool)
        padded[half : half + h, half : half + w] = cand
        earlier = np.zeros_like(cand)
        for dy in range(-half, 1):
            for dx in range(-half, half + 1):
                if dy == 0 and dx >= 0:
                    break
                earlier |= padded[half + dy : half + dy + h, half + dx : half + dx + w]
        cand &= ~earlier
    ys, xs = np.nonzero(cand)
    scores = z[ys, xs]
    order = np.lexsort((xs, ys, -scores))[: cfg.k]
    return [Peak(int(xs[i]), int(ys[i]), float(scores[i])) for i in order]


class PresenceHistory:
    """Most recent ``l`` binary observations, oldest first."""

    def __init__(self, l: int, values: Iterable[int] = ()):
        self.l = l
        self._window: deque[int] = deque(maxlen=l)
        for v in values:
            self.append(v)

    def append(self, observed: int) -> None:
        if observed not in (0, 1):
            raise ValueError(f"presence observations are 0/1, got {observed!r}")
        self._window.append(int(observed))

    @property
    def window(self) -> tuple[int, ...]:
        return tuple(self._window)

    def __len__(self) -> int:
        return len(self._window)

    def __repr__(self) -> str:
        return f"PresenceHistory(l={self.l}, window={list(self._window)})"


def infer_state(history: Sequence[int] | PresenceHistory, l: int, beta: float) -> int:
    """Presence state from the previous ``l`` observations.

    Present when the latest observation is positive or when the positive
    share of the window reaches ``beta``. Short windows keep ``l`` as the
    denominator.
    """
    window = history.window if isinstance(history, PresenceHistory) else tuple(history)
    if not window:
        raise ValueError("infer_state needs at least one past observation")
    if len(window) > l:
        raise ValueError(f"history of length {len(window)} exceeds window {l}")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if window[-1] == 1 or sum(window) / l >= beta:
        return 1
    return 0


class LabelPoint(NamedTuple):
    track_id: int
    cx: int
    cy: int
    z: int
    row: DetectionRow


def generate_labels(
    gt_rows: Iterable[DetectionRow], l: int = 5, beta: float = 0.6, vis_min: float = 0.5
) -> dict[int, list[LabelPoint]]:
    """Per-frame presence labels for ground-truth trajectories.

    A row counts as observed when its visibility reaches ``vis_min`` (unknown
    visibility counts as observed). Observed rows are labelled present;
    unobserved ones take :func:`infer_state` over the track's preceding
    ``l`` observations. Frames a track skips count as unobserved.
    """
    tracks: dict[int, list[DetectionRow]] = {}
    for row in gt_rows:
        tracks.setdefault(row.id, []).append(row)
    labels: dict[int, list[LabelPoint]] = {}
    for track_id in sorted(tracks):
        rows = sorted(tracks[track_id], key=lambda r: r.frame)
        history = PresenceHistory(l)
        prev_frame = None
        for row in rows:
            if prev_frame is not None:
                for _ in range(row.frame - prev_frame - 1):
                    history.append(0)
            observed = 1 if row.visibility == -1 or row.visibility >= vis_min else 0
            if observed:
                z = 1
            elif len(history):
                z = infer_state(history, l, beta)
            else:
                z = 0
            history.append(observed)
            prev_frame = row.frame
            cx, cy = row.center
            labels.setdefault(row.frame, []).append(
                LabelPoint(track_id, round_half_up(cx), round_half_up(cy), z, row)
            )
    return dict(sorted(labels.items()))


def label_rows(labels: dict[int, list[LabelPoint]]) -> list[DetectionRow]:
    """Ground-truth rows with the presence label stored in ``conf``."""
    out = [replace(p.row, conf=float(p.z)) for pts in labels.values() for p in pts]
    out.sort(key=lambda r: (r.frame, r.id))
    return out


def render_labels(
    points: Iterable[LabelPoint], width: int, height: int, alpha: float = 0.7
) -> ResponseMap:
    splats = [
        Splat(p.cx, p.cy, gaussian_radius(p.row.bb_width, p.row.bb_height, alpha), p.z)
        for p in points
    ]
    return render(splats, width, height)


def bce_score(pred: ResponseMap, label: ResponseMap, eps: float = BCE_EPS) -> float:
    """Pixel-mean binary cross entropy of ``pred`` against ``label``."""
    if pred.z.shape != label.z.shape:
        raise ValueError(f"map shapes differ: {pred.z.shape} vs {label.z.shape}")
    p = np.clip(pred.z.astype(np.float64), eps, 1.0 - eps)
    y = label.z.astype(np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))
