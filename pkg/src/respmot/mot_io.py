"""Readers and writers for every on-disk format the toolkit touches.

* MOT tables: ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z``.
  Column ``x`` carries the class id and ``y`` the visibility of ground-truth
  rows (the MOT16/17 ``gt.txt`` convention); both are ``-1`` elsewhere.
* Flow fields: Middlebury ``.flo`` containers (little-endian).
* Response maps: a private exact container (tag ``RMP1``) plus a lossy
  8-bit raster export for eyeballing.
* Sequence metadata: INI-style ``seqinfo.ini``.
"""

from __future__ import annotations

import configparser
import io
import logging
import struct
from dataclasses import dataclass, field
from itertools import groupby
from os import PathLike
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

logger = logging.getLogger(__name__)

FLOW_MAGIC = 202021.25
MAP_TAG = b"RMP1"

_FLOW_HEADER = struct.Struct("<fii")
_MAP_HEADER = struct.Struct("<4sII")


class FormatError(ValueError):
    """Raised when a file does not follow the expected layout."""


class TruncatedFileError(FormatError):
    """Raised when a binary payload is shorter than its header promises."""


class MotParseError(ValueError):
    """Malformed MOT table row."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConfigError(ValueError):
    """Missing or invalid configuration / metadata entry."""


# ---------------------------------------------------------------------------
# MOT tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionRow:
    frame: int
    id: int
    bb_left: float
    bb_top: float
    bb_width: float
    bb_height: float
    conf: float = 1.0
    visibility: float = -1.0
    cls: int = -1

    @property
    def center(self) -> tuple[float, float]:
        return self.bb_left + self.bb_width / 2.0, self.bb_top + self.bb_height / 2.0

    @property
    def box(self) -> tuple[float, float, float, float]:
        """Box as ``(cx, cy, w, h)``."""
        cx, cy = self.center
        return cx, cy, self.bb_width, self.bb_height

    def validate(self) -> None:
        if self.frame < 1:
            raise ValueError(f"frame must be >= 1, got {self.frame}")
        if not (self.bb_width > 0 and self.bb_height > 0):
            raise ValueError(f"non-positive box size {self.bb_width}x{self.bb_height}")
        if self.visibility != -1 and not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility {self.visibility} outside [0, 1]")


@dataclass
class MotTable:
    """Parsed MOT table: rows sorted by ``(frame, id)`` plus the drop count."""

    rows: list[DetectionRow] = field(default_factory=list)
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def by_frame(self) -> dict[int, list[DetectionRow]]:
        return group_by_frame(self.rows)


def group_by_frame(rows: Iterable[DetectionRow]) -> dict[int, list[DetectionRow]]:
    ordered = sorted(rows, key=lambda r: (r.frame, r.id))
    return {frame: list(grp) for frame, grp in groupby(ordered, key=lambda r: r.frame)}


def format_real(value: float) -> str:
    """Shortest round-trip decimal with at least one fractional digit."""
    return np.format_float_positional(float(value), unique=True, trim="0")


def _parse_field(text: str, cast, lineno: int, name: str):
    try:
        value = cast(text)
    except ValueError:
        raise MotParseError(lineno, f"malformed {name} field {text!r}") from None
    if isinstance(value, float) and not np.isfinite(value):
        raise MotParseError(lineno, f"non-finite {name} field {text!r}")
    return value


def _parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(text)
    return int(value)


def parse_mot_table(stream: TextIO | str) -> MotTable:
    """Parse a MOT-challenge table.

    Args:
        stream: Open text stream or the table contents as a string.

    Returns:
        A :class:`MotTable` whose rows are sorted by ``(frame, id)``. Rows with
        a non-positive box size are skipped and counted in ``dropped``.

    Raises:
        MotParseError: A row has fewer than 7 fields or a malformed number.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows: list[DetectionRow] = []
    dropped = 0
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 7:
            raise MotParseError(lineno, f"expected at least 7 fields, got {len(parts)}")
        parts += ["-1"] * (10 - len(parts))
        frame = _parse_field(parts[0], _parse_int, lineno, "frame")
        track_id = _parse_field(parts[1], _parse_int, lineno, "id")
        left, top, w, h, conf = (
            _parse_field(p, float, lineno, name)
            for p, name in zip(parts[2:7], ("bb_left", "bb_top", "bb_width", "bb_height", "conf"))
        )
        cls = _parse_field(parts[7], _parse_int, lineno, "class")
        vis = _parse_field(parts[8], float, lineno, "visibility")
        if w <= 0 or h <= 0:
            dropped += 1
            continue
        if frame < 1:
            raise MotParseError(lineno, f"frame index {frame} < 1")
        if vis != -1 and not 0.0 <= vis <= 1.0:
            raise MotParseError(lineno, f"visibility {vis} outside [0, 1]")
        rows.append(DetectionRow(frame, track_id, left, top, w, h, conf, vis, cls))
    if dropped:
        logger.warning("dropped %d rows with non-positive box size", dropped)
    rows.sort(key=lambda r: (r.frame, r.id))
    return MotTable(rows, dropped)


def _format_row(row: DetectionRow) -> str:
    vis = "-1" if row.visibility == -1 else format_real(row.visibility)
    return ",".join(
        [
            str(row.frame),
            str(row.id),
            format_real(row.bb_left),
            format_real(row.bb_top),
            format_real(row.bb_width),
            format_real(row.bb_height),
            format_real(row.conf),
            str(row.cls),
            vis,
            "-1",
        ]
    )


def write_mot_table(rows: Iterable[DetectionRow]) -> str:
    """Serialize rows in the order given, one per line.

    Every row is validated before anything is emitted.
    """
    rows = list(rows)
    for row in rows:
        row.validate()
    return "".join(_format_row(r) + "\n" for r in rows)


def read_mot_file(path: str | PathLike) -> MotTable:
    with open(path, encoding="utf-8") as fh:
        return parse_mot_table(fh)


def write_mot_file(path: str | PathLike, rows: Iterable[DetectionRow]) -> None:
    text = write_mot_table(rows)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Flow fields (.flo)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowField:
    """Dense displacement field, ``data[y, x] = (u, v)`` in pixels per step."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 2:
            raise ValueError(f"flow data must have shape (H, W, 2), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("flow field must be at least 1x1")
        if not np.all(np.isfinite(data)):
            raise ValueError("flow field contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> FlowField:
        return cls(np.zeros((height, width, 2), dtype=np.float32))

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()

    __hash__ = None


def encode_flow(flow: FlowField) -> bytes:
    header = _FLOW_HEADER.pack(FLOW_MAGIC, flow.width, flow.height)
    return header + flow.data.astype("<f4", copy=False).tobytes(order="C")


def decode_flow(buf: bytes) -> FlowField:
    if len(buf) < _FLOW_HEADER.size:
        raise TruncatedFileError(f"flow header needs {_FLOW_HEADER.size} bytes, got {len(buf)}")
    magic, width, height = _FLOW_HEADER.unpack_from(buf)
    if magic != np.float32(FLOW_MAGIC):
        raise FormatError(f"bad flow magic {magic!r}")
    if width < 1 or height < 1:
        raise FormatError(f"bad flow dimensions {width}x{height}")
    need = _FLOW_HEADER.size + width * height * 8
    if len(buf) < need:
        raise TruncatedFileError(f"flow payload truncated: {len(buf)} of {need} bytes")
    data = np.frombuffer(buf, dtype="<f4", count=width * height * 2, offset=_FLOW_HEADER.size)
    return FlowField(data.reshape(height, width, 2).astype(np.float32))


def write_flow(path: str | PathLike, flow: FlowField) -> None:
    Path(path).write_bytes(encode_flow(flow))


def read_flow(path: str | PathLike) -> FlowField:
    return decode_flow(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Response maps (.rmp) and raster export
# ---------------------------------------------------------------------------


def encode_map(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2 or values.size == 0:
        raise ValueError(f"map must be a non-empty 2-D grid, got shape {values.shape}")
    values = values.astype(np.float32)
    if not np.all((values >= 0.0) & (values <= 1.0)):
        raise ValueError("map values must lie in [0, 1]")
    height, width = values.shape
    return _MAP_HEADER.pack(MAP_TAG, width, height) + values.astype("<f4").tobytes(order="C")


def decode_map(buf: bytes) -> np.ndarray:
    if len(buf) < _MAP_HEADER.size:
        raise TruncatedFileError(f"map header needs {_MAP_HEADER.size} bytes, got {len(buf)}")
    tag, width, height = _MAP_HEADER.unpack_from(buf)
    if tag != MAP_TAG:
        raise FormatError(f"bad map tag {tag!r}")
    need = _MAP_HEADER.size + width * height * 4
    if len(buf) < need:
        raise TruncatedFileError(f"map payload truncated: {len(buf)} of {need} bytes")
    values = np.frombuffer(buf, dtype="<f4", count=width * height, offset=_MAP_HEADER.size)
    values = values.reshape(height, width).astype(np.float32)
    if not np.all((values >= 0.0) & (values <= 1.0)):
        raise FormatError("map values outside [0, 1]")
    return values


def write_map(path: str | PathLike, values: np.ndarray) -> None:
    Path(path).write_bytes(encode_map(values))


def read_map(path: str | PathLike) -> np.ndarray:
    return decode_map(Path(path).read_bytes())


def map_to_raster(values: np.ndarray) -> np.ndarray:
    """8-bit grayscale rendering, ``round(z * 255)`` with halves rounded up."""
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def write_raster(path: str | PathLike, raster: np.ndarray) -> None:
    """Save an 8-bit grayscale raster; ``.pgm`` is written directly, other
    extensions go through Pillow."""
    raster = np.asarray(raster, dtype=np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        h, w = raster.shape
        path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + raster.tobytes())
        return
    from PIL import Image

    Image.fromarray(raster, mode="L").save(path)


# ---------------------------------------------------------------------------
# seqinfo.ini
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SequenceInfo:
    name: str
    frame_rate: float
    seq_length: int
    im_width: int
    im_height: int

    def __post_init__(self):
        if self.seq_length < 1:
            raise ConfigError(f"seqLength must be >= 1, got {self.seq_length}")
        if self.im_width < 1 or self.im_height < 1:
            raise ConfigError(f"bad image size {self.im_width}x{self.im_height}")


_SEQINFO_KEYS = {
    "name": ("name", str),
    "framerate": ("frameRate", float),
    "seqlength": ("seqLength", int),
    "imwidth": ("imWidth", int),
    "imheight": ("imHeight", int),
}


def parse_seqinfo(stream: TextIO | str) -> SequenceInfo:
    text = stream if isinstance(stream, str) else stream.read()
    parser = configparser.ConfigParser(interpolation=None)
    stripped = text.lstrip()
    if not stripped.startswith("["):
        text = "[Sequence]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable seqinfo: {exc}") from None
    values: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            values.setdefault(key.lower(), value.strip())
    out = {}
    for key, (display, cast) in _SEQINFO_KEYS.items():
        if key not in values:
            raise ConfigError(f"seqinfo missing required key {display}")
        try:
            raw = values[key]
            out[key] = int(float(raw)) if cast is int else cast(raw)
        except ValueError:
            raise ConfigError(f"seqinfo key {display} has bad value {values[key]!r}") from None
    return SequenceInfo(
        name=out["name"],
        frame_rate=out["framerate"],
        seq_length=out["seqlength"],
        im_width=out["imwidth"],
        im_height=out["imheight"],
    )


def write_seqinfo(info: SequenceInfo) -> str:
    rate = int(info.frame_rate) if float(info.frame_rate).is_integer() else info.frame_rate
    return (
        "[Sequence]\n"
        f"name={info.name}\n"
        f"frameRate={rate}\n"
        f"seqLength={info.seq_length}\n"
        f"imWidth={info.im_width}\n"
        f"imHeight={info.im_height}\n"
    )


def read_seqinfo(path: str | PathLike) -> SequenceInfo:
    return parse_seqinfo(Path(path).read_text(encoding="utf-8"))
