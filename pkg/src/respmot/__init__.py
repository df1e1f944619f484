"""Response-map multi-object tracking toolkit.

Objects are observed as Gaussian bumps on a per-frame response map, moved by
a dense flow field and linked frame to frame by IOU and optimal assignment.
"""

from .config import LinkerConfig, NmsConfig, TrackerConfig
from .linker import Tracker, hungarian, iou
from .metrics import MetricsReport, compute_report, evaluate
from .response_map import ResponseMap, extract_peaks, gaussian_radius, infer_state, render

__all__ = [
    "LinkerConfig",
    "MetricsReport",
    "NmsConfig",
    "ResponseMap",
    "Tracker",
    "TrackerConfig",
    "compute_report",
    "evaluate",
    "extract_peaks",
    "gaussian_radius",
    "hungarian",
    "infer_state",
    "iou",
    "render",
]

__version__ = "0.1.0"
