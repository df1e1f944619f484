"""Flow-driven motion: ROI sampling, robust displacement aggregation,
location prediction and the smooth-L1 score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mot_io import FlowField
from .response_map import Peak

Box = tuple[float, float, float, float]  # (cx, cy, w, h)


@dataclass(frozen=True)
class Displacement:
    dcx: float = 0.0
    dcy: float = 0.0
    dw: float = 0.0
    dh: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.dcx, self.dcy, self.dw, self.dh], dtype=np.float64)


ZERO = Displacement()


@dataclass(frozen=True, eq=False)
class RoiPatch:
    """``side x side`` window of flow vectors around a peak.

    ``data[i, j]`` is the flow at pixel ``(cx - side//2 + j, cy - side//2 + i)``;
    cells outside the field are zero and flagged off in ``valid_mask``.
    """

    side: int
    data: np.ndarray
    valid_mask: np.ndarray

    @property
    def valid_vectors(self) -> np.ndarray:
        return self.data[self.valid_mask]

    def offsets(self) -> np.ndarray:
        """Pixel offsets ``(dx, dy)`` of the valid cells relative to the center."""
        half = self.side // 2
        ii, jj = np.nonzero(self.valid_mask)
        return np.stack([jj - half, ii - half], axis=1).astype(np.float64)


def sample_roi(flow: FlowField, peak: Peak, r_z: int = 20) -> RoiPatch:
    if r_z < 1:
        raise ValueError(f"ROI size must be >= 1, got {r_z}")
    if not (0 <= peak.cx < flow.width and 0 <= peak.cy < flow.height):
        raise ValueError(f"peak ({peak.cx}, {peak.cy}) outside {flow.width}x{flow.height} field")
    half = r_z // 2
    x0, y0 = peak.cx - half, peak.cy - half
    xa, xb = max(x0, 0), min(x0 + r_z, flow.width)
    ya, yb = max(y0, 0), min(y0 + r_z, flow.height)
    data = np.zeros((r_z, r_z, 2), dtype=np.float32)
    mask = np.zeros((r_z, r_z), dtype=bool)
    data[ya - y0 : yb - y0, xa - x0 : xb - x0] = flow.data[ya:yb, xa:xb]
    mask[ya - y0 : yb - y0, xa - x0 : xb - x0] = True
    return RoiPatch(r_z, data, mask)


def lower_median(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    k = (values.size - 1) // 2
    return float(np.partition(values, k)[k])


def similarity_scale(offsets: np.ndarray, vectors: np.ndarray) -> float:
    """Scale factor of the least-squares similarity map ``p -> s R p + t``
    sending each offset ``p`` to ``p + flow(p)``."""
    src = offsets - offsets.mean(axis=0)
    dst = offsets + vectors
    dst = dst - dst.mean(axis=0)
    norm = float(np.sum(src**2))
    if norm == 0.0:
        return 1.0
    a = float(np.sum(src[:, 0] * dst[:, 0] + src[:, 1] * dst[:, 1])) / norm
    b = float(np.sum(src[:, 0] * dst[:, 1] - src[:, 1] * dst[:, 0])) / norm
    return float(np.hypot(a, b))


def aggregate_displacement(
    patch: RoiPatch, *, fit_scale: bool = False, size: tuple[float, float] | None = None
) -> Displacement:
    """Collapse a flow patch into one displacement.

    Center motion is the componentwise lower median of the valid vectors.
    With ``fit_scale`` a similarity transform is fitted to the valid cells
    and its scale change, applied to ``size = (w, h)``, becomes ``(dw, dh)``.
    """
    vecs = patch.valid_vectors
    if vecs.shape[0] == 0:
        raise ValueError("ROI patch has no valid cells")
    dcx = lower_median(vecs[:, 0])
    dcy = lower_median(vecs[:, 1])
    if not fit_scale:
        return Displacement(dcx, dcy, 0.0, 0.0)
    if size is None:
        raise ValueError("fit_scale needs the box size to express dw, dh in pixels")
    rate = similarity_scale(patch.offsets(), vecs.astype(np.float64)) - 1.0
    return Displacement(dcx, dcy, rate * size[0], rate * size[1])


def predict_location(prev: Box, d: Displacement) -> Box:
    cx, cy, w, h = prev
    return (cx + d.dcx, cy + d.dcy, max(w + d.dw, 1.0), max(h + d.dh, 1.0))


def smooth_l1(pred: Displacement, gt: Displacement) -> float:
    """Mean smooth-L1 over the four displacement components."""
    x = np.abs(pred.as_array() - gt.as_array())
    f = np.where(x < 1.0, 0.5 * x**2, x - 0.5)
    return float(f.mean())
