"""Command-line entry point: ``respmot {synth,track,eval,render}``.

Exit codes: 0 success, 2 usage / configuration / parse errors, 1 anything
unexpected.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import mot_io
from .config import TrackerConfig, load_config_file
from .linker import Tracker
from .metrics import evaluate
from .mot_io import ConfigError, FormatError, MotParseError
from .response_map import ResponseMap, extract_peaks
from .synth import Corpus, SceneSpec, SceneSpecError, export, generate_scene

log = logging.getLogger("respmot")

CORPUS_ENV = "RESPMOT_CORPUS"

# flag name -> TrackerConfig field
_CONFIG_FLAGS = {
    "l": ("--l", int),
    "beta": ("--beta", float),
    "s": ("--nms-kernel", int),
    "score_min": ("--score-min", float),
    "k": ("--max-peaks", int),
    "r_z": ("--roi-size", int),
    "iou_min": ("--iou-min", float),
    "a_max": ("--max-age", int),
    "alpha": ("--alpha", float),
    "init_w": ("--init-w", float),
    "init_h": ("--init-h", float),
}


class UsageError(Exception):
    """Bad input reported with exit status 2."""


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("tracker configuration (defaults: published settings)")
    g.add_argument("--config", type=Path, help="JSON file of config keys")
    for name, (flag, cast) in _CONFIG_FLAGS.items():
        g.add_argument(flag, dest=name, type=cast, default=None)


def resolve_config(args: argparse.Namespace) -> TrackerConfig:
    """Built-in defaults, then the config file, then command-line flags."""
    cfg = TrackerConfig()
    if args.config is not None:
        cfg = load_config_file(args.config, cfg)
    return cfg.updated({name: getattr(args, name) for name in _CONFIG_FLAGS})


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


DEMO_SPEC = Path(__file__).parent / "scenes" / "demo.json"


def cmd_synth(args: argparse.Namespace) -> int:
    path = args.spec
    if str(path) == "demo" and not path.is_file():
        path = DEMO_SPEC
    spec = SceneSpec.load(path)
    if args.seed is not None:
        spec = SceneSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    truth = generate_scene(spec)
    files = export(truth, args.out_dir)
    print(f"objects={len(spec.objects)} frames={spec.frames} files={len(files)} out={args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------


def track_corpus(
    corpus: Corpus, cfg: TrackerConfig, out_path: Path, last_frame: int | None = None
) -> int:
    """Track one corpus, appending each frame's rows to ``out_path`` as soon
    as the frame is done. Returns the number of rows written."""
    n = corpus.frames if last_frame is None else min(last_frame, corpus.frames)
    tracker = Tracker(cfg)
    nms = cfg.nms
    written = 0
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as out:
        for t in range(1, n + 1):
            map_path = corpus.map_path(t)
            if not map_path.exists():
                raise UsageError(f"frame {t}: missing response map {map_path}")
            peaks = extract_peaks(ResponseMap.load(map_path), nms)
            flow = None
            if t >= 2:
                flow_path = corpus.flow_path(t)
                if not flow_path.exists():
                    raise UsageError(f"frame {t}: missing flow field {flow_path}")
                flow = mot_io.read_flow(flow_path)
            rows = tracker.step(peaks, flow, t)
            out.write(mot_io.write_mot_table(rows))
            out.flush()
            written += len(rows)
    return written


def cmd_track(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    roots = list(args.corpus)
    if not roots:
        env = os.environ.get(CORPUS_ENV)
        if not env:
            raise UsageError(f"no corpus given and ${CORPUS_ENV} is not set")
        roots = [Path(env)]
    if len(roots) > 1 and (args.maps_dir or args.flow_dir):
        raise UsageError("--maps-dir/--flow-dir only apply to a single corpus")
    corpora = [Corpus(r, args.maps_dir, args.flow_dir) for r in roots]
    for c in corpora:
        if c.frames < 1:
            raise UsageError(f"corpus {c.root} has no frames")

    if len(corpora) == 1:
        jobs = [(corpora[0], Path(args.out))]
    else:
        out_dir = Path(args.out)
        jobs = [
            (c, out_dir / f"{c.seqinfo.name if c.seqinfo else c.root.name}.txt") for c in corpora
        ]

    def run(job):
        corpus, path = job
        n = track_corpus(corpus, cfg, path, args.last_frame)
        return corpus, path, n

    workers = max(1, min(args.jobs, len(jobs)))
    if workers == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    for corpus, path, n in results:
        print(f"tracked {corpus.root} -> {path} rows={n}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    for p in (args.gt, args.result):
        if not Path(p).is_file():
            raise UsageError(f"no such file: {p}")
    report = evaluate(
        args.gt, args.result, iou_match=args.iou, vis_min=args.vis_min, min_conf=args.min_conf
    )
    print(report.to_line())
    print(report.to_table())
    return 0


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def id_gray(track_id: int) -> int:
    """Distinct non-black gray level per id."""
    return 64 + (track_id * 37) % 192


def draw_boxes(rows: Sequence[mot_io.DetectionRow], width: int, height: int) -> np.ndarray:
    canvas = np.zeros((height, width), dtype=np.uint8)
    for r in sorted(rows, key=lambda r: r.id):
        x0 = int(np.floor(r.bb_left))
        y0 = int(np.floor(r.bb_top))
        x1 = int(np.floor(r.bb_left + r.bb_width)) - 1
        y1 = int(np.floor(r.bb_top + r.bb_height)) - 1
        level = id_gray(r.id)
        xa, xb = max(x0, 0), min(x1, width - 1)
        ya, yb = max(y0, 0), min(y1, height - 1)
        if xa > xb or ya > yb:
            continue
        for y in (y0, y1):
            if 0 <= y < height:
                canvas[y, xa : xb + 1] = level
        for x in (x0, x1):
            if 0 <= x < width:
                canvas[ya : yb + 1, x] = level
    return canvas


def cmd_render(args: argparse.Namespace) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"no such file: {src}")
    if src.suffix == ".rmp":
        raster = ResponseMap.load(src).to_raster()
    else:
        if args.seqinfo is None:
            raise UsageError("rendering a result file needs --seqinfo")
        info = mot_io.read_seqinfo(args.seqinfo)
        rows = mot_io.read_mot_file(src).by_frame().get(args.frame, [])
        raster = draw_boxes(rows, info.im_width, info.im_height)
    mot_io.write_raster(args.output, raster)
    print(f"wrote {args.output} ({raster.shape[1]}x{raster.shape[0]})")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="respmot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate and export a synthetic corpus")
    p.add_argument("spec", type=Path, help="scene description (JSON), or 'demo' for the bundled scene")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--seed", type=int, default=None, help="override the scene seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="track response maps + flow into a MOT result file")
    p.add_argument("corpus", nargs="*", type=Path, help=f"corpus directories (default ${CORPUS_ENV})")
    p.add_argument("-o", "--out", required=True, help="result file (directory for several corpora)")
    p.add_argument("--maps-dir", type=Path, default=None)
    p.add_argument("--flow-dir", type=Path, default=None)
    p.add_argument("--last-frame", type=int, default=None, help="stop after this frame")
    p.add_argument("--seed", type=int, default=None, help="accepted for symmetry; tracking is deterministic")
    p.add_argument("--jobs", type=int, default=1, help="worker threads across corpora")
    _add_config_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a result file against ground truth")
    p.add_argument("gt", type=Path)
    p.add_argument("result", type=Path)
    p.add_argument("--iou", type=float, default=0.5, help="match threshold")
    p.add_argument("--vis-min", type=float, default=None, help="drop gt rows below this visibility")
    p.add_argument("--min-conf", type=float, default=None, help="drop gt rows below this conf")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="rasterise a map or a frame of a result file")
    p.add_argument("input", type=Path, help=".rmp map or MOT result file")
    p.add_argument("output", type=Path, help=".pgm, .png, ...")
    p.add_argument("--seqinfo", type=Path, default=None)
    p.add_argument("--frame", type=int, default=1)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SceneSpecError as exc:
        print(f"error: invalid scene: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, FormatError, MotParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
