"""CLEAR-MOT, identity (IDF1) and trajectory-coverage metrics."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, field
from os import PathLike
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .linker import iou_matrix
from .mot_io import DetectionRow, group_by_frame, read_mot_file

_BLOCKED = 1e6


@dataclass
class FrameMatching:
    """Per-frame ``(gt id, hyp id, iou)`` correspondences."""

    pairs: dict[int, list[tuple[int, int, float]]] = field(default_factory=dict)

    def matched_frames(self) -> dict[int, int]:
        """Number of matched frames per ground-truth id."""
        out: dict[int, int] = defaultdict(int)
        for frame_pairs in self.pairs.values():
            for g, _, _ in frame_pairs:
                out[g] += 1
        return dict(out)

    @property
    def num_matches(self) -> int:
        return sum(len(p) for p in self.pairs.values())


@dataclass
class ClearResult:
    mota: float
    motp: float
    fp: int
    fn: int
    idsw: int
    frag: int
    gt_count: int
    matching: FrameMatching


@dataclass
class MetricsReport:
    mota: float
    motp: float
    idf1: float
    idp: float
    idr: float
    mt: float
    ml: float
    fp: int
    fn: int
    idsw: int
    frag: int
    gt_count: int

    def to_line(self) -> str:
        parts = []
        for key, value in asdict(self).items():
            parts.append(f"{key}={value:.4f}" if isinstance(value, float) else f"{key}={value}")
        return " ".join(parts)

    def to_table(self) -> str:
        items = asdict(self)
        head = "  ".join(f"{k.upper():>8}" for k in items)
        vals = "  ".join(
            f"{v:>8.4f}" if isinstance(v, float) else f"{v:>8d}" for v in items.values()
        )
        return f"{head}\n{vals}"


def _boxes(rows: Sequence[DetectionRow]) -> np.ndarray:
    return np.array([r.box for r in rows], dtype=np.float64).reshape(-1, 4)


def _frames(gt: Iterable[DetectionRow], hyp: Iterable[DetectionRow]):
    g = group_by_frame(gt)
    h = group_by_frame(hyp)
    for frame in sorted(set(g) | set(h)):
        yield frame, g.get(frame, []), h.get(frame, [])


def clear_mot(
    gt: Iterable[DetectionRow], hyp: Iterable[DetectionRow], iou_match: float = 0.5
) -> ClearResult:
    """CLEAR-MOT accuracy and precision.

    Correspondences from earlier frames are kept while their IOU stays at or
    above ``iou_match``; remaining boxes are matched by the Hungarian
    algorithm on ``1 - IOU``. An identity switch is a ground-truth object
    matched to a different hypothesis than at its last match; a
    fragmentation is a matched run that resumes after an interruption.
    """
    gt = list(gt)
    hyp = list(hyp)
    if not gt:
        raise ValueError("MOTA is undefined without ground-truth boxes")
    last_hyp: dict[int, int] = {}
    matching = FrameMatching()
    fp = fn = idsw = 0
    iou_sum = 0.0
    tracked: dict[int, list[bool]] = defaultdict(list)

    for frame, g_rows, h_rows in _frames(gt, hyp):
        pairs: list[tuple[int, int, float]] = []
        if g_rows and h_rows:
            ious = iou_matrix(_boxes(g_rows), _boxes(h_rows))
            h_index = {r.id: j for j, r in enumerate(h_rows)}
            used_g: set[int] = set()
            used_h: set[int] = set()
            for i, g in enumerate(g_rows):
                j = h_index.get(last_hyp.get(g.id, None), None)
                if j is not None and j not in used_h and ious[i, j] >= iou_match:
                    used_g.add(i)
                    used_h.add(j)
                    pairs.append((i, j, float(ious[i, j])))
            rest_g = [i for i in range(len(g_rows)) if i not in used_g]
            rest_h = [j for j in range(len(h_rows)) if j not in used_h]
            if rest_g and rest_h:
                sub = ious[np.ix_(rest_g, rest_h)]
                cost = np.where(sub >= iou_match, 1.0 - sub, _BLOCKED)
                for a, b in zip(*linear_sum_assignment(cost)):
                    if cost[a, b] < _BLOCKED:
                        i, j = rest_g[a], rest_h[b]
                        pairs.append((i, j, float(ious[i, j])))
        frame_pairs = []
        matched_ids = set()
        for i, j, v in pairs:
            g_id, h_id = g_rows[i].id, h_rows[j].id
            if g_id in last_hyp and last_hyp[g_id] != h_id:
                idsw += 1
            last_hyp[g_id] = h_id
            iou_sum += v
            matched_ids.add(g_id)
            frame_pairs.append((g_id, h_id, v))
        frame_pairs.sort()
        matching.pairs[frame] = frame_pairs
        fp += len(h_rows) - len(pairs)
        fn += len(g_rows) - len(pairs)
        for g in g_rows:
            tracked[g.id].append(g.id in matched_ids)

    frag = sum(max(0, count_runs(flags) - 1) for flags in tracked.values())
    n_match = matching.num_matches
    mota = 1.0 - (fp + fn + idsw) / len(gt)
    motp = iou_sum / n_match if n_match else 0.0
    return ClearResult(mota, motp, fp, fn, idsw, frag, len(gt), matching)


def count_runs(flags: Sequence[bool]) -> int:
    """Number of maximal runs of ``True``."""
    runs = 0
    prev = False
    for f in flags:
        if f and not prev:
            runs += 1
        prev = f
    return runs


def trajectory_overlaps(
    gt: Iterable[DetectionRow], hyp: Iterable[DetectionRow], iou_match: float = 0.5
) -> tuple[list[int], list[int], np.ndarray, dict[int, int], dict[int, int]]:
    """Frame counts where each (gt id, hyp id) pair overlaps at ``iou_match``.

    Returns ``(gt_ids, hyp_ids, overlap, gt_lengths, hyp_lengths)``.
    """
    gt = list(gt)
    hyp = list(hyp)
    gt_ids = sorted({r.id for r in gt})
    hyp_ids = sorted({r.id for r in hyp})
    gi = {g: k for k, g in enumerate(gt_ids)}
    hi = {h: k for k, h in enumerate(hyp_ids)}
    overlap = np.zeros((len(gt_ids), len(hyp_ids)), dtype=np.int64)
    for _, g_rows, h_rows in _frames(gt, hyp):
        if not g_rows or not h_rows:
            continue
        ious = iou_matrix(_boxes(g_rows), _boxes(h_rows))
        for a, b in zip(*np.nonzero(ious >= iou_match)):
            overlap[gi[g_rows[a].id], hi[h_rows[b].id]] += 1
    gt_len: dict[int, int] = defaultdict(int)
    hyp_len: dict[int, int] = defaultdict(int)
    for r in gt:
        gt_len[r.id] += 1
    for r in hyp:
        hyp_len[r.id] += 1
    return gt_ids, hyp_ids, overlap, dict(gt_len), dict(hyp_len)


def identity_metrics(
    gt: Iterable[DetectionRow], hyp: Iterable[DetectionRow], iou_match: float = 0.5
) -> tuple[float, float, float]:
    """``(idf1, idp, idr)`` from the best one-to-one pairing of whole trajectories.

    Minimising the boxes left unmatched by a trajectory pairing is the same as
    maximising the identity true positives it collects, which is what is
    solved here.
    """
    gt = list(gt)
    hyp = list(hyp)
    if not gt:
        raise ValueError("identity metrics are undefined without ground-truth boxes")
    _, _, overlap, _, _ = trajectory_overlaps(gt, hyp, iou_match)
    idtp = 0
    if overlap.size:
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        idtp = int(overlap[rows, cols].sum())
    n_gt, n_hyp = len(gt), len(hyp)
    idp = idtp / n_hyp if n_hyp else 0.0
    idr = idtp / n_gt
    idf1 = 2.0 * idtp / (n_gt + n_hyp)
    return idf1, idp, idr


def trajectory_stats(matching: FrameMatching, gt: Iterable[DetectionRow]) -> tuple[float, float]:
    """Fractions of ground-truth trajectories mostly tracked (>= 80 % of
    their boxes matched) and mostly lost (< 20 %)."""
    lengths: dict[int, int] = defaultdict(int)
    for r in gt:
        lengths[r.id] += 1
    if not lengths:
        return 0.0, 0.0
    matched = matching.matched_frames()
    mt = ml = 0
    for g, n in lengths.items():
        k = matched.get(g, 0)
        # integer comparisons keep the 80 % / 20 % boundaries exact
        if 10 * k >= 8 * n:
            mt += 1
        elif 10 * k < 2 * n:
            ml += 1
    return mt / len(lengths), ml / len(lengths)


def compute_report(
    gt: Iterable[DetectionRow], hyp: Iterable[DetectionRow], iou_match: float = 0.5
) -> MetricsReport:
    gt = list(gt)
    hyp = list(hyp)
    clear = clear_mot(gt, hyp, iou_match)
    idf1, idp, idr = identity_metrics(gt, hyp, iou_match)
    mt, ml = trajectory_stats(clear.matching, gt)
    return MetricsReport(
        mota=clear.mota,
        motp=clear.motp,
        idf1=idf1,
        idp=idp,
        idr=idr,
        mt=mt,
        ml=ml,
        fp=clear.fp,
        fn=clear.fn,
        idsw=clear.idsw,
        frag=clear.frag,
        gt_count=clear.gt_count,
    )


def filter_gt(
    rows: Iterable[DetectionRow],
    vis_min: float | None = None,
    min_conf: float | None = None,
    classes: Iterable[int] | None = None,
) -> list[DetectionRow]:
    """Ground-truth filter; every criterion left at ``None`` keeps all rows."""
    keep_cls = set(classes) if classes is not None else None
    out = []
    for r in rows:
        if vis_min is not None and r.visibility != -1 and r.visibility < vis_min:
            continue
        if min_conf is not None and r.conf < min_conf:
            continue
        if keep_cls is not None and r.cls not in keep_cls:
            continue
        out.append(r)
    return out


def evaluate(
    gt_path: str | PathLike,
    result_path: str | PathLike,
    iou_match: float = 0.5,
    vis_min: float | None = None,
    min_conf: float | None = None,
    classes: Iterable[int] | None = None,
) -> MetricsReport:
    gt = filter_gt(read_mot_file(gt_path).rows, vis_min, min_conf, classes)
    hyp = read_mot_file(result_path).rows
    return compute_report(gt, hyp, iou_match)
