"""Data linking: IOU, optimal assignment, two-stage frame association,
age-ordered matching cascade and the track lifecycle."""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .config import LinkerConfig, TrackerConfig
from .mot_io import DetectionRow, FlowField
from .motion import ZERO, Box, Displacement, aggregate_displacement, predict_location, sample_roi
from .response_map import Peak, PresenceHistory, infer_state, round_half_up

logger = logging.getLogger(__name__)

FORBIDDEN = 1e9


# ---------------------------------------------------------------------------
# IOU
# ---------------------------------------------------------------------------


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two ``(cx, cy, w, h)`` boxes."""
    if a[2] <= 0 or a[3] <= 0 or b[2] <= 0 or b[3] <= 0:
        raise ValueError(f"boxes need positive size: {a}, {b}")
    ix = min(a[0] + a[2] / 2, b[0] + b[2] / 2) - max(a[0] - a[2] / 2, b[0] - b[2] / 2)
    iy = min(a[1] + a[3] / 2, b[1] + b[3] / 2) - max(a[1] - a[3] / 2, b[1] - b[3] / 2)
    if ix <= 0 or iy <= 0:
        return 0.0
    area_a, area_b = a[2] * a[3], b[2] * b[3]
    # rounding in the corner arithmetic can push ix * iy past the smaller area
    inter = min(ix * iy, area_a, area_b)
    return inter / (area_a + area_b - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IOU between ``(n, 4)`` and ``(m, 4)`` arrays of ``(cx, cy, w, h)``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if np.any(a[:, 2:] <= 0) or np.any(b[:, 2:] <= 0):
        raise ValueError("boxes need positive size")
    a_lo, a_hi = a[:, None, :2] - a[:, None, 2:] / 2, a[:, None, :2] + a[:, None, 2:] / 2
    b_lo, b_hi = b[None, :, :2] - b[None, :, 2:] / 2, b[None, :, :2] + b[None, :, 2:] / 2
    wh = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0.0, None)
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    inter = np.minimum(wh[..., 0] * wh[..., 1], np.minimum(area_a, area_b))
    return inter / (area_a + area_b - inter)


# ---------------------------------------------------------------------------
# Hungarian algorithm
# ---------------------------------------------------------------------------


def _shortest_augmenting_paths(c: np.ndarray):
    """Square min-cost assignment with dual potentials (Kuhn-Munkres in the
    shortest-augmenting-path form). Returns ``(row_to_col, u, v)``."""
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: 1-based row owning column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    row_to_col[p[1:] - 1] = np.arange(n)
    return row_to_col, u[1:], v[1:]


def _lexicographic_refine(tight: np.ndarray, match: np.ndarray, n_rows: int) -> np.ndarray:
    """Among the perfect matchings of the tight-edge graph, move to the one
    whose row->column list (over the first ``n_rows`` rows) is lexicographically
    smallest. Every such matching has the same (optimal) cost."""
    match = match.copy()
    n = len(match)
    owner = np.empty(n, dtype=np.int64)
    owner[match] = np.arange(n)
    adj = [np.flatnonzero(tight[r]) for r in range(n)]
    for i in range(n_rows):
        for j in adj[i]:
            if j >= match[i]:
                break
            r = owner[j]
            if r <= i:
                continue
            target = match[i]
            # alternating path r -> ... -> target avoiding fixed rows 0..i
            taker = {}
            queue = deque([r])
            seen_rows = {r}
            found = False
            while queue and not found:
                x = queue.popleft()
                for y in adj[x]:
                    if y == j or y in taker:
                        continue
                    taker[y] = x
                    if y == target:
                        found = True
                        break
                    nxt = owner[y]
                    if nxt > i and nxt not in seen_rows:
                        seen_rows.add(nxt)
                        queue.append(nxt)
            if not found:
                continue
            y = target
            while True:
                x = taker[y]
                prev = match[x]
                match[x] = y
                owner[y] = x
                if x == r:
                    break
                y = prev
            match[i] = j
            owner[j] = i
            break
    return match


def hungarian(cost: np.ndarray | Sequence[Sequence[float]]) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of rows to columns.

    Entries ``>= FORBIDDEN`` mark disallowed pairs: the solver first maximises
    the number of allowed pairs, then minimises their cost, and never returns
    a forbidden pair. Among equal-cost optima the pair list (sorted by row)
    is the lexicographically smallest one.

    Returns:
        ``(row, col)`` pairs sorted by row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if cost.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite; encode forbidden pairs with FORBIDDEN")
    n, m = cost.shape
    size = max(n, m)
    forbidden = cost >= FORBIDDEN
    work = np.zeros((size, size))
    work[:n, :m] = cost
    if forbidden.any():
        finite = cost[~forbidden]
        bound = float(np.abs(finite).max()) if finite.size else 0.0
        work[:n, :m][forbidden] = (2 * size + 2) * (bound + 1.0)
    match, u, v = _shortest_augmenting_paths(work)
    scale = max(1.0, float(np.abs(work).max()))
    reduced = work - u[:, None] - v[None, :]
    tight = np.abs(reduced) <= 1e-9 * scale
    tight[np.arange(size), match] = True
    match = _lexicographic_refine(tight, match, n)
    return [(i, int(match[i])) for i in range(n) if match[i] < m and not forbidden[i, match[i]]]


def assignment_cost(cost: np.ndarray, pairs: Iterable[tuple[int, int]]) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[i, j] for i, j in pairs))


# ---------------------------------------------------------------------------
# Frame association and cascade
# ---------------------------------------------------------------------------


@dataclass
class Assignment:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_peaks: list[int] = field(default_factory=list)


def _peak_boxes(peaks: Sequence[Peak], sizes: np.ndarray) -> np.ndarray:
    """Boxes centred on each peak, one row per (size, peak) combination.

    ``sizes`` is ``(n, 2)``; the result is ``(n, m, 4)``.
    """
    centers = np.array([[p.cx, p.cy] for p in peaks], dtype=np.float64).reshape(-1, 2)
    n, m = len(sizes), len(centers)
    out = np.empty((n, m, 4))
    out[..., :2] = centers[None, :, :]
    out[..., 2:] = np.asarray(sizes, dtype=np.float64)[:, None, :]
    return out


def _pairwise_iou(track_boxes: np.ndarray, peak_boxes: np.ndarray) -> np.ndarray:
    """IOU of track ``i`` against ``peak_boxes[i, j]`` for every ``(i, j)``."""
    a = track_boxes[:, None, :]
    b = peak_boxes
    lo = np.maximum(a[..., :2] - a[..., 2:] / 2, b[..., :2] - b[..., 2:] / 2)
    hi = np.minimum(a[..., :2] + a[..., 2:] / 2, b[..., :2] + b[..., 2:] / 2)
    wh = np.clip(hi - lo, 0.0, None)
    area_a = a[..., 2] * a[..., 3]
    area_b = b[..., 2] * b[..., 3]
    inter = np.minimum(wh[..., 0] * wh[..., 1], np.minimum(area_a, area_b))
    return inter / (area_a + area_b - inter)


def _gated_assignment(
    prev_boxes: np.ndarray, sizes: np.ndarray, peaks: Sequence[Peak], iou_min: float
) -> list[tuple[int, int]]:
    """Hungarian on ``1 - IOU(previous box, peak box)``; pairs at or below
    ``iou_min`` are forbidden."""
    if len(prev_boxes) == 0 or len(peaks) == 0:
        return []
    ious = _pairwise_iou(prev_boxes, _peak_boxes(peaks, sizes))
    cost = np.where(ious > iou_min, 1.0 - ious, FORBIDDEN)
    return hungarian(cost)


def associate_frame(
    predicted: Sequence[Box],
    previous: Sequence[Box],
    peaks: Sequence[Peak],
    iou_min: float = 0.7,
) -> Assignment:
    """Two-stage association of tracks to peaks.

    Stage one tests each track's nearest peak (by center distance) against
    the track's predicted box; passing peaks become candidates. Stage two
    runs the Hungarian algorithm between all tracks and the candidates on
    ``1 - IOU(box at t-1, candidate box)``, forbidding pairs with IOU at or
    below ``iou_min``. A peak borrows the size of the track it is compared
    with.

    Args:
        predicted: Predicted ``(cx, cy, w, h)`` of each track at frame t.
        previous: Box of each track at frame t-1.
        peaks: Peaks of frame t.
        iou_min: Gate threshold.
    """
    n, m = len(predicted), len(peaks)
    if n == 0 or m == 0:
        return Assignment([], list(range(n)), list(range(m)))
    pred = np.asarray(predicted, dtype=np.float64).reshape(n, 4)
    prev = np.asarray(previous, dtype=np.float64).reshape(n, 4)
    centers = np.array([[p.cx, p.cy] for p in peaks], dtype=np.float64)
    dist = np.hypot(pred[:, None, 0] - centers[None, :, 0], pred[:, None, 1] - centers[None, :, 1])
    nearest = np.argmin(dist, axis=1)
    gate_boxes = np.column_stack([centers[nearest], pred[:, 2:]])
    gate = _pairwise_iou(pred, gate_boxes[:, None, :])[:, 0]
    candidates = sorted({int(nearest[i]) for i in range(n) if gate[i] > iou_min})
    sub = _gated_assignment(prev, pred[:, 2:], [peaks[j] for j in candidates], iou_min)
    pairs = [(i, candidates[j]) for i, j in sub]
    matched_t = {i for i, _ in pairs}
    matched_p = {j for _, j in pairs}
    return Assignment(
        pairs,
        [i for i in range(n) if i not in matched_t],
        [j for j in range(m) if j not in matched_p],
    )


def matching_cascade(
    peaks: Sequence[Peak],
    peak_indices: Sequence[int],
    previous: Sequence[Box],
    sizes: Sequence[tuple[float, float]],
    ages: Sequence[int],
    iou_min: float = 0.7,
    a_max: int = 30,
) -> list[tuple[int, int]]:
    """Re-match leftover peaks to unmatched tracks, youngest tracks first.

    For ``age = 1 .. a_max`` the tracks of exactly that age are matched to
    the still-free peaks with the same gated cost as the second stage of
    :func:`associate_frame`.

    Returns:
        ``(track index, peak index)`` pairs into ``previous`` and ``peaks``.
    """
    free = list(peak_indices)
    prev = np.asarray(previous, dtype=np.float64).reshape(-1, 4)
    sizes_arr = np.asarray(sizes, dtype=np.float64).reshape(-1, 2)
    ages = list(ages)
    out: list[tuple[int, int]] = []
    for age in range(1, a_max + 1):
        if not free:
            break
        rows = [i for i, a in enumerate(ages) if a == age]
        if not rows:
            continue
        sub = _gated_assignment(prev[rows], sizes_arr[rows], [peaks[j] for j in free], iou_min)
        taken = set()
        for r, c in sub:
            out.append((rows[r], free[c]))
            taken.add(c)
        free = [j for k, j in enumerate(free) if k not in taken]
    return out


# ---------------------------------------------------------------------------
# Track lifecycle
# ---------------------------------------------------------------------------


class TrackStatus(enum.Enum):
    ACTIVE = "active"
    COASTING = "coasting"
    TERMINATED = "terminated"


@dataclass
class TrackState:
    id: int
    box: Box
    history: PresenceHistory
    z: int
    last_match_frame: int
    status: TrackStatus = TrackStatus.ACTIVE

    def age(self, frame: int) -> int:
        return frame - self.last_match_frame

    def as_row(self, frame: int) -> DetectionRow:
        cx, cy, w, h = self.box
        return DetectionRow(frame, self.id, cx - w / 2, cy - h / 2, w, h, 1.0)


def flow_displacement(flow: FlowField | None, box: Box, r_z: int) -> Displacement:
    """Median flow in the ROI around a box center; zero when there is no flow
    or the center has left the field."""
    if flow is None:
        return ZERO
    px, py = round_half_up(box[0]), round_half_up(box[1])
    if not (0 <= px < flow.width and 0 <= py < flow.height):
        return ZERO
    return aggregate_displacement(sample_roi(flow, Peak(px, py), r_z))


class Tracker:
    """On-line tracker advanced one frame at a time with :meth:`step`.

    Tracks that lose their peak keep coasting along the flow while the
    windowed presence rule says the object is still there. Once it says
    otherwise the track is terminated but stays eligible for the matching
    cascade until it has gone unmatched for more than ``a_max`` frames.
    """

    def __init__(self, config: TrackerConfig | LinkerConfig | None = None):
        if config is None:
            config = LinkerConfig()
        if isinstance(config, TrackerConfig):
            config = config.linker
        self.cfg: LinkerConfig = config
        self.tracks: list[TrackState] = []
        self.frame = 0
        self._next_id = 0

    @property
    def births(self) -> int:
        return self._next_id

    def live_tracks(self) -> list[TrackState]:
        return [t for t in self.tracks if t.status is not TrackStatus.TERMINATED]

    def step(
        self, peaks: Sequence[Peak], flow: FlowField | None, frame: int | None = None
    ) -> list[DetectionRow]:
        """Advance to ``frame`` (default: next frame) and return its output rows."""
        cfg = self.cfg
        frame = self.frame + 1 if frame is None else frame
        if frame <= self.frame:
            raise ValueError(f"frame {frame} does not advance past {self.frame}")
        self.frame = frame

        predicted = [
            predict_location(t.box, flow_displacement(flow, t.box, cfg.r_z)) for t in self.tracks
        ]
        matches: dict[int, int] = {}

        live = [i for i, t in enumerate(self.tracks) if t.status is not TrackStatus.TERMINATED]
        first = associate_frame(
            [predicted[i] for i in live], [self.tracks[i].box for i in live], peaks, cfg.iou_min
        )
        for ti, pj in first.pairs:
            matches[live[ti]] = pj

        pending = [
            i
            for i, t in enumerate(self.tracks)
            if i not in matches and 1 <= t.age(frame) <= cfg.a_max
        ]
        if pending and first.unmatched_peaks:
            extra = matching_cascade(
                peaks,
                first.unmatched_peaks,
                [self.tracks[i].box for i in pending],
                [predicted[i][2:] for i in pending],
                [self.tracks[i].age(frame) for i in pending],
                cfg.iou_min,
                cfg.a_max,
            )
            for ti, pj in extra:
                matches[pending[ti]] = pj

        kept: list[TrackState] = []
        for i, track in enumerate(self.tracks):
            if i in matches:
                peak = peaks[matches[i]]
                _, _, w, h = predicted[i]
                track.box = (float(peak.cx), float(peak.cy), w, h)
                track.history.append(1)
                track.z = 1
                track.last_match_frame = frame
                track.status = TrackStatus.ACTIVE
            else:
                track.z = infer_state(track.history, cfg.l, cfg.beta)
                track.history.append(0)
                track.box = predicted[i]
                track.status = TrackStatus.COASTING if track.z else TrackStatus.TERMINATED
                if not track.z and track.age(frame) > cfg.a_max:
                    continue
            kept.append(track)

        taken = set(matches.values())
        for j, peak in enumerate(peaks):
            if j in taken:
                continue
            kept.append(
                TrackState(
                    id=self._next_id,
                    box=(float(peak.cx), float(peak.cy), float(cfg.init_w), float(cfg.init_h)),
                    history=PresenceHistory(cfg.l, [1]),
                    z=1,
                    last_match_frame=frame,
                )
            )
            self._next_id += 1
        self.tracks = kept
        return [
            t.as_row(frame)
            for t in sorted(self.tracks, key=lambda t: t.id)
            if t.status is not TrackStatus.TERMINATED
        ]


# ---------------------------------------------------------------------------
# Response -> detection mapping
# ---------------------------------------------------------------------------


@dataclass
class DetectionMapping:
    pairs: list[tuple[int, int]]
    false_alarms: list[int]
    unmatched_responses: list[int]


def attach_detections(
    responses: Sequence[tuple[float, float]],
    detections: Sequence[tuple[float, float]],
    gate_px: float,
) -> DetectionMapping:
    """Map response centers to detection centers by minimum total distance.

    Pairs farther apart than ``gate_px`` are not allowed. Detections left
    over are false alarms; responses left over keep their own box.
    """
    if gate_px <= 0:
        raise ValueError(f"gate_px must be positive, got {gate_px}")
    n, m = len(responses), len(detections)
    if n == 0 or m == 0:
        return DetectionMapping([], list(range(m)), list(range(n)))
    r = np.asarray(responses, dtype=np.float64).reshape(n, 2)
    d = np.asarray(detections, dtype=np.float64).reshape(m, 2)
    dist = np.hypot(r[:, None, 0] - d[None, :, 0], r[:, None, 1] - d[None, :, 1])
    pairs = hungarian(np.where(dist <= gate_px, dist, FORBIDDEN))
    used_r = {i for i, _ in pairs}
    used_d = {j for _, j in pairs}
    return DetectionMapping(
        pairs,
        [j for j in range(m) if j not in used_d],
        [i for i in range(n) if i not in used_r],
    )


def snap_to_detections(
    rows: Sequence[DetectionRow], detections: Sequence[DetectionRow], gate_px: float
) -> list[DetectionRow]:
    """Replace each tracker box with its attached detection box, keeping ids.

    Unattached tracker rows are returned unchanged; detections without a
    response are dropped as false alarms.
    """
    mapping = attach_detections(
        [r.center for r in rows], [d.center for d in detections], gate_px
    )
    out = list(rows)
    for i, j in mapping.pairs:
        det = detections[j]
        out[i] = replace(
            rows[i],
            bb_left=det.bb_left,
            bb_top=det.bb_top,
            bb_width=det.bb_width,
            bb_height=det.bb_height,
        )
    return out
