"""Frame loop tying peak extraction, flow and linking together."""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

from .config import TrackerConfig
from .linker import Tracker
from .mot_io import DetectionRow, FlowField
from .response_map import Peak, ResponseMap, extract_peaks

MapSource = Callable[[int], ResponseMap]
PeakSource = Callable[[int], Sequence[Peak]]
FlowSource = Callable[[int], FlowField]


def track_sequence(
    n_frames: int,
    flow: FlowSource,
    cfg: TrackerConfig = TrackerConfig(),
    *,
    maps: MapSource | None = None,
    peaks: PeakSource | None = None,
) -> Iterator[tuple[int, list[DetectionRow]]]:
    """Yield ``(frame, rows)`` for frames ``1 .. n_frames``.

    Observations come either from response maps (peaks are extracted with the
    configured NMS) or directly from a peak source. Frame ``t`` is only read
    when frame ``t`` is produced, so consumers may stop early.
    """
    if (maps is None) == (peaks is None):
        raise ValueError("pass exactly one of maps= or peaks=")
    tracker = Tracker(cfg)
    nms = cfg.nms
    for t in range(1, n_frames + 1):
        frame_peaks = extract_peaks(maps(t), nms) if maps is not None else list(peaks(t))
        frame_flow = flow(t) if t >= 2 else None
        yield t, tracker.step(frame_peaks, frame_flow, t)


def track_all(
    n_frames: int,
    flow: FlowSource,
    cfg: TrackerConfig = TrackerConfig(),
    **sources,
) -> list[DetectionRow]:
    out: list[DetectionRow] = []
    for _, rows in track_sequence(n_frames, flow, cfg, **sources):
        out.extend(rows)
    return out
