"""Deterministic synthetic scenes: ground truth, exact flow, label maps and
corrupted observations.

Object centers follow ``c0 + v k + A sin(2 pi k / period)`` with ``k`` the
number of frames since birth, quantised to 1/64 px so that frame-to-frame
displacements are exact in single precision. Occluders are static
rectangles that only reduce visibility; flow always shows the objects'
true motion.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from os import PathLike
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from . import mot_io
from .config import NmsConfig
from .mot_io import ConfigError, DetectionRow, FlowField, SequenceInfo
from .response_map import (
    LabelPoint,
    Peak,
    ResponseMap,
    extract_peaks,
    generate_labels,
    label_rows,
    render_labels,
)
from .rng import frame_stream

QUANTUM = 64.0

TAG_DROP = 1
TAG_SPURIOUS = 2
TAG_FLOW = 3


class SceneSpecError(ConfigError):
    """Scene description violates its invariants."""


@dataclass(frozen=True)
class SceneObject:
    birth: int
    death: int
    box: tuple[float, float, float, float]  # left, top, w, h at birth
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (0.0, 0.0)
    period: float = 0.0


@dataclass(frozen=True)
class Occluder:
    left: float
    top: float
    width: float
    height: float


@dataclass(frozen=True)
class NoiseSpec:
    drop_prob: float = 0.0
    spurious_rate: float = 0.0
    flow_sigma: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.drop_prob <= 1.0:
            raise SceneSpecError(f"drop probability {self.drop_prob} outside [0, 1]")
        if self.spurious_rate < 0:
            raise SceneSpecError(f"spurious rate {self.spurious_rate} is negative")
        if self.flow_sigma < 0:
            raise SceneSpecError(f"flow sigma {self.flow_sigma} is negative")


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    frames: int
    objects: tuple[SceneObject, ...] = ()
    occluders: tuple[Occluder, ...] = ()
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    name: str = "synth"
    frame_rate: float = 30.0

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise SceneSpecError(f"bad scene size {self.width}x{self.height}")
        if self.frames < 1:
            raise SceneSpecError(f"frame count must be >= 1, got {self.frames}")
        self.noise.validate()
        for idx, obj in enumerate(self.objects):
            if not 1 <= obj.birth < obj.death <= self.frames:
                raise SceneSpecError(
                    f"object {idx}: need 1 <= birth < death <= frames, "
                    f"got birth={obj.birth} death={obj.death} frames={self.frames}"
                )
            left, top, w, h = obj.box
            if w <= 0 or h <= 0:
                raise SceneSpecError(f"object {idx}: non-positive box size {w}x{h}")
            if left < 0 or top < 0 or left + w > self.width or top + h > self.height:
                raise SceneSpecError(f"object {idx}: box {obj.box} not inside the image at birth")
            if obj.period < 0 or (obj.period == 0 and any(obj.amplitude)):
                raise SceneSpecError(f"object {idx}: sinusoid needs a positive period")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SceneSpec:
        try:
            objects = tuple(
                SceneObject(
                    birth=int(o["birth"]),
                    death=int(o["death"]),
                    box=tuple(float(x) for x in o["box"]),
                    velocity=tuple(float(x) for x in o.get("velocity", (0.0, 0.0))),
                    amplitude=tuple(float(x) for x in o.get("amplitude", (0.0, 0.0))),
                    period=float(o.get("period", 0.0)),
                )
                for o in data.get("objects", [])
            )
            occluders = tuple(Occluder(*map(float, _rect(o))) for o in data.get("occluders", []))
            noise = NoiseSpec(**data.get("noise", {}))
            spec = cls(
                width=int(data["width"]),
                height=int(data["height"]),
                frames=int(data["frames"]),
                objects=objects,
                occluders=occluders,
                noise=noise,
                seed=int(data.get("seed", 0)),
                name=str(data.get("name", "synth")),
                frame_rate=float(data.get("frame_rate", 30.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneSpecError(f"malformed scene description: {exc!r}") from None
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | PathLike) -> SceneSpec:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SceneSpecError(f"cannot read scene {path}: {exc}") from None
        return cls.from_dict(data)

    def dump(self, path: str | PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _rect(o) -> tuple:
    if isinstance(o, dict):
        return (o["left"], o["top"], o["width"], o["height"])
    return tuple(o)


def quantize(x: float) -> float:
    return math.floor(x * QUANTUM + 0.5) / QUANTUM


def object_center(obj: SceneObject, frame: int) -> tuple[float, float]:
    k = frame - obj.birth
    left, top, w, h = obj.box
    phase = math.sin(2.0 * math.pi * k / obj.period) if obj.period > 0 else 0.0
    cx = left + w / 2 + obj.velocity[0] * k + obj.amplitude[0] * phase
    cy = top + h / 2 + obj.velocity[1] * k + obj.amplitude[1] * phase
    return quantize(cx), quantize(cy)


def covered_area(box: tuple[float, float, float, float], rects: Sequence[Occluder]) -> float:
    """Exact area of ``box`` (left, top, w, h) covered by the union of ``rects``."""
    bl, bt, bw, bh = box
    br, bb = bl + bw, bt + bh
    clipped = []
    for r in rects:
        l, t = max(bl, r.left), max(bt, r.top)
        rr, rb = min(br, r.left + r.width), min(bb, r.top + r.height)
        if rr > l and rb > t:
            clipped.append((l, t, rr, rb))
    if not clipped:
        return 0.0
    xs = sorted({c[0] for c in clipped} | {c[2] for c in clipped})
    area = 0.0
    for x0, x1 in zip(xs, xs[1:]):
        spans = sorted((c[1], c[3]) for c in clipped if c[0] <= x0 and c[2] >= x1)
        covered = 0.0
        cur_lo = cur_hi = None
        for lo, hi in spans:
            if cur_hi is None or lo > cur_hi:
                if cur_hi is not None:
                    covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        if cur_hi is not None:
            covered += cur_hi - cur_lo
        area += covered * (x1 - x0)
    return area


def visibility(box: tuple[float, float, float, float], rects: Sequence[Occluder]) -> float:
    area = box[2] * box[3]
    return min(1.0, max(0.0, 1.0 - covered_area(box, rects) / area))


def _pixel_span(lo: float, size: float, limit: int) -> tuple[int, int]:
    """Pixel indices ``i`` with ``lo <= i < lo + size``, clipped to ``[0, limit)``."""
    return max(math.ceil(lo), 0), min(math.ceil(lo + size), limit)


class SceneTruth:
    """Ground truth of a generated scene.

    Rows are materialised eagerly; flow fields and label maps are computed
    per frame on demand (and cached) because a full sequence of dense flow
    does not fit comfortably in memory.
    """

    def __init__(
        self,
        spec: SceneSpec,
        l: int = 5,
        beta: float = 0.6,
        vis_min: float = 0.5,
        alpha: float = 0.7,
    ):
        spec.validate()
        self.spec = spec
        self.l, self.beta, self.vis_min, self.alpha = l, beta, vis_min, alpha
        self.centers: dict[int, dict[int, tuple[float, float]]] = {}
        rows: list[DetectionRow] = []
        for idx, obj in enumerate(spec.objects):
            track = {}
            _, _, w, h = obj.box
            for t in range(obj.birth, obj.death + 1):
                cx, cy = object_center(obj, t)
                track[t] = (cx, cy)
                box = (cx - w / 2, cy - h / 2, w, h)
                rows.append(
                    DetectionRow(
                        t, idx + 1, box[0], box[1], w, h, 1.0, visibility(box, spec.occluders), 1
                    )
                )
            self.centers[idx] = track
        rows.sort(key=lambda r: (r.frame, r.id))
        self.rows = rows
        self.labels: dict[int, list[LabelPoint]] = generate_labels(rows, l, beta, vis_min)
        self._flow = lru_cache(maxsize=4)(self._make_flow)
        self._map = lru_cache(maxsize=4)(self._make_map)

    @property
    def frames(self) -> int:
        return self.spec.frames

    @property
    def seqinfo(self) -> SequenceInfo:
        s = self.spec
        return SequenceInfo(s.name, s.frame_rate, s.frames, s.width, s.height)

    def displacement(self, idx: int, frame: int) -> tuple[float, float] | None:
        """Exact center motion of object ``idx`` from ``frame - 1`` to ``frame``."""
        track = self.centers[idx]
        if frame not in track or frame - 1 not in track:
            return None
        (x0, y0), (x1, y1) = track[frame - 1], track[frame]
        return x1 - x0, y1 - y0

    def flow(self, frame: int) -> FlowField:
        """Flow from ``frame - 1`` to ``frame`` (defined for ``frame >= 2``)."""
        if not 2 <= frame <= self.spec.frames:
            raise IndexError(f"flow defined for frames 2..{self.spec.frames}, got {frame}")
        return self._flow(frame)

    def _make_flow(self, frame: int) -> FlowField:
        spec = self.spec
        data = np.zeros((spec.height, spec.width, 2), dtype=np.float32)
        order = sorted(range(len(spec.objects)), key=lambda i: (spec.objects[i].birth, i))
        for idx in order:
            d = self.displacement(idx, frame)
            if d is None:
                continue
            cx, cy = self.centers[idx][frame - 1]
            _, _, w, h = spec.objects[idx].box
            x0, x1 = _pixel_span(cx - w / 2, w, spec.width)
            y0, y1 = _pixel_span(cy - h / 2, h, spec.height)
            data[y0:y1, x0:x1] = d
        return FlowField(data)

    def label_points(self, frame: int) -> list[LabelPoint]:
        return self.labels.get(frame, [])

    def label_map(self, frame: int) -> ResponseMap:
        if not 1 <= frame <= self.spec.frames:
            raise IndexError(f"frame {frame} outside 1..{self.spec.frames}")
        return self._map(frame)

    def _make_map(self, frame: int) -> ResponseMap:
        return render_labels(self.label_points(frame), self.spec.width, self.spec.height, self.alpha)

    def label_rows(self) -> list[DetectionRow]:
        """Ground-truth rows with the presence label in ``conf``."""
        return label_rows(self.labels)

    def present_rows(self) -> list[DetectionRow]:
        """Rows whose presence label is 1: visible or inferred present."""
        return [r for r in self.label_rows() if r.conf == 1.0]

    def true_peaks(self, frame: int, nms: NmsConfig = NmsConfig()) -> list[Peak]:
        return extract_peaks(self.label_map(frame), nms)


def generate_scene(spec: SceneSpec, **label_params) -> SceneTruth:
    return SceneTruth(spec, **label_params)


def emit_labels(
    truth: SceneTruth, l: int = 5, beta: float = 0.6, vis_min: float = 0.5
) -> tuple[list[ResponseMap], dict[int, list[int]]]:
    """Label maps for every frame plus each track's presence sequence.

    Returns ``(maps, z)`` where ``maps[t - 1]`` is frame ``t`` and ``z`` maps
    a ground-truth id to its labels in frame order.
    """
    labels = generate_labels(truth.rows, l, beta, vis_min)
    spec = truth.spec
    maps = [
        render_labels(labels.get(t, []), spec.width, spec.height, truth.alpha)
        for t in range(1, spec.frames + 1)
    ]
    z: dict[int, list[int]] = {}
    for t in sorted(labels):
        for p in labels[t]:
            z.setdefault(p.track_id, []).append(p.z)
    return maps, z


@dataclass
class Observations:
    """Corrupted peaks per frame and lazily perturbed flow."""

    truth: SceneTruth
    noise: NoiseSpec
    seed: int
    peaks: dict[int, list[Peak]] = field(default_factory=dict)

    def flow(self, frame: int) -> FlowField:
        clean = self.truth.flow(frame)
        if self.noise.flow_sigma == 0:
            return clean
        stream = frame_stream(self.seed, frame, TAG_FLOW)
        noise = stream.normal(clean.data.size).reshape(clean.data.shape) * self.noise.flow_sigma
        return FlowField((clean.data + noise).astype(np.float32))


def _peak_order(peaks: list[Peak]) -> list[Peak]:
    return sorted(peaks, key=lambda p: (-p.score, p.cy, p.cx))


def perturb_observations(
    truth: SceneTruth,
    noise: NoiseSpec | None = None,
    seed: int | None = None,
    nms: NmsConfig = NmsConfig(),
) -> Observations:
    """Drop true peaks, add spurious ones and add Gaussian flow noise.

    True peaks are those extracted from the clean label maps. Each is kept
    unless its uniform draw falls below the drop probability. The number of
    spurious peaks per frame is Poisson distributed; they land uniformly on
    the pixel grid with scores uniform in ``(score_min, 1)``.
    """
    noise = truth.spec.noise if noise is None else noise
    seed = truth.spec.seed if seed is None else seed
    noise.validate()
    spec = truth.spec
    obs = Observations(truth, noise, seed)
    for t in range(1, spec.frames + 1):
        peaks = truth.true_peaks(t, nms)
        if noise.drop_prob > 0 and peaks:
            u = frame_stream(seed, t, TAG_DROP).uniform(len(peaks))
            peaks = [p for p, ui in zip(peaks, u) if not ui < noise.drop_prob]
        if noise.spurious_rate > 0:
            stream = frame_stream(seed, t, TAG_SPURIOUS)
            count = stream.poisson(noise.spurious_rate)
            if count:
                u = stream.uniform_open(3 * count).reshape(count, 3)
                for ux, uy, us in u:
                    peaks.append(
                        Peak(
                            min(int(ux * spec.width), spec.width - 1),
                            min(int(uy * spec.height), spec.height - 1),
                            float(nms.score_min + (1.0 - nms.score_min) * us),
                        )
                    )
                peaks = _peak_order(peaks)
        obs.peaks[t] = peaks
    return obs


# ---------------------------------------------------------------------------
# Corpus export / import
# ---------------------------------------------------------------------------


def flow_name(frame: int) -> str:
    return f"{frame:06d}.flo"


def map_name(frame: int) -> str:
    return f"{frame:06d}.rmp"


def export(truth: SceneTruth, out_dir: str | PathLike) -> list[Path]:
    """Write a corpus directory and return the files written.

    Layout: ``seqinfo.ini``, ``scene.json``, ``gt/gt.txt`` (rows with
    visibility), ``gt/labels.txt`` (presence label in ``conf``),
    ``maps/NNNNNN.rmp`` for every frame and ``flow/NNNNNN.flo`` for frames
    2 onward.
    """
    out = Path(out_dir)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    (out / "maps").mkdir(exist_ok=True)
    (out / "flow").mkdir(exist_ok=True)
    written = []

    def put(path: Path, data: bytes | str) -> None:
        if isinstance(data, str):
            data = data.encode("utf-8")
        path.write_bytes(data)
        written.append(path)

    put(out / "seqinfo.ini", mot_io.write_seqinfo(truth.seqinfo))
    put(out / "scene.json", json.dumps(truth.spec.to_dict(), indent=2) + "\n")
    put(out / "gt" / "gt.txt", mot_io.write_mot_table(truth.rows))
    put(out / "gt" / "labels.txt", mot_io.write_mot_table(truth.label_rows()))
    for t in range(1, truth.frames + 1):
        put(out / "maps" / map_name(t), mot_io.encode_map(truth.label_map(t).z))
        if t >= 2:
            put(out / "flow" / flow_name(t), mot_io.encode_flow(truth.flow(t)))
    return written


class Corpus:
    """Read-side view of an exported (or externally produced) corpus."""

    def __init__(
        self,
        root: str | PathLike,
        maps_dir: str | PathLike | None = None,
        flow_dir: str | PathLike | None = None,
    ):
        self.root = Path(root)
        self.maps_dir = Path(maps_dir) if maps_dir else self.root / "maps"
        self.flow_dir = Path(flow_dir) if flow_dir else self.root / "flow"
        info = self.root / "seqinfo.ini"
        self.seqinfo = mot_io.read_seqinfo(info) if info.exists() else None

    @property
    def frames(self) -> int:
        if self.seqinfo is not None:
            return self.seqinfo.seq_length
        return len(list(self.maps_dir.glob("*.rmp")))

    def map_path(self, frame: int) -> Path:
        return self.maps_dir / map_name(frame)

    def flow_path(self, frame: int) -> Path:
        return self.flow_dir / flow_name(frame)

    def label_map(self, frame: int) -> ResponseMap:
        return ResponseMap.load(self.map_path(frame))

    def flow(self, frame: int) -> FlowField:
        return mot_io.read_flow(self.flow_path(frame))

    def gt_rows(self) -> list[DetectionRow]:
        return mot_io.read_mot_file(self.root / "gt" / "gt.txt").rows

    def label_rows(self) -> list[DetectionRow]:
        return mot_io.read_mot_file(self.root / "gt" / "labels.txt").rows

    def spec(self) -> SceneSpec:
        return SceneSpec.load(self.root / "scene.json")

    def iter_frames(self) -> Iterator[int]:
        return iter(range(1, self.frames + 1))
