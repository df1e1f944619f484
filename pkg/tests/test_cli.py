from __future__ import annotations

import filecmp
import json
import subprocess
import sys

import numpy as np
import pytest

from respmot import mot_io
from respmot.cli import build_parser, id_gray, main, resolve_config
from respmot.config import TrackerConfig
from respmot.mot_io import DetectionRow, read_mot_file
from respmot.response_map import GaussianKernel, ResponseMap, Splat, render
from respmot.synth import SceneObject, SceneSpec, generate_scene


def steady_spec(frames: int = 30) -> SceneSpec:
    """Two slow walkers that live for the whole sequence."""
    return SceneSpec(
        width=320,
        height=200,
        frames=frames,
        objects=(
            SceneObject(1, frames, (20.0, 40.0, 40.0, 100.0), velocity=(2.0, 0.0)),
            SceneObject(1, frames, (250.0, 60.0, 40.0, 100.0), velocity=(-1.5, 0.5)),
        ),
        name="steady",
    )


@pytest.fixture
def corpus(tmp_path):
    spec_path = tmp_path / "steady.json"
    steady_spec().dump(spec_path)
    out = tmp_path / "corpus"
    assert main(["synth", str(spec_path), str(out)]) == 0
    return out


def lines(path) -> list[str]:
    return path.read_text().splitlines()


# --- synth -------------------------------------------------------------------


def test_synth_demo(tmp_path, capsys):
    assert main(["synth", "demo", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("objects=3 frames=40 files=83")
    for sub in ("gt/gt.txt", "gt/labels.txt", "seqinfo.ini", "maps/000001.rmp", "flow/000002.flo"):
        assert (tmp_path / "a" / sub).exists()
    assert main(["synth", "demo", str(tmp_path / "b")]) == 0
    for sub in ("", "gt", "maps", "flow"):
        names = sorted(p.name for p in (tmp_path / "a" / sub).iterdir() if p.is_file())
        _, bad, err = filecmp.cmpfiles(tmp_path / "a" / sub, tmp_path / "b" / sub, names, shallow=False)
        assert not bad and not err


def test_synth_invalid_spec(tmp_path, capsys):
    spec = steady_spec().to_dict()
    spec["objects"][1]["birth"] = spec["objects"][1]["death"]
    (tmp_path / "bad.json").write_text(json.dumps(spec))
    assert main(["synth", str(tmp_path / "bad.json"), str(tmp_path / "o")]) == 2
    assert "object 1" in capsys.readouterr().err


def test_synth_missing_spec(tmp_path):
    assert main(["synth", str(tmp_path / "nope.json"), str(tmp_path / "o")]) == 2


# --- track -------------------------------------------------------------------


def test_track_oracle_corpus(corpus, tmp_path, capsys):
    res = tmp_path / "res.txt"
    assert main(["track", str(corpus), "-o", str(res)]) == 0
    truth = generate_scene(steady_spec())
    rows = read_mot_file(res).rows
    assert len(rows) == len(truth.present_rows())
    assert main(["eval", str(corpus / "gt" / "labels.txt"), str(res), "--min-conf", "1"]) == 0
    assert "mota=1.0000" in capsys.readouterr().out


def test_track_empty_maps(tmp_path):
    SceneSpec(64, 48, 5, name="empty").dump(tmp_path / "e.json")
    assert main(["synth", str(tmp_path / "e.json"), str(tmp_path / "c")]) == 0
    assert main(["track", str(tmp_path / "c"), "-o", str(tmp_path / "r.txt")]) == 0
    assert (tmp_path / "r.txt").read_text() == ""


def test_track_prefix_property(corpus, tmp_path):
    full, part = tmp_path / "full.txt", tmp_path / "part.txt"
    assert main(["track", str(corpus), "-o", str(full)]) == 0
    assert main(["track", str(corpus), "-o", str(part), "--last-frame", "12"]) == 0
    prefix = [ln for ln in lines(full) if int(ln.split(",")[0]) <= 12]
    assert lines(part) == prefix


def test_track_truncated_corpus(corpus, tmp_path, capsys):
    full = tmp_path / "full.txt"
    assert main(["track", str(corpus), "-o", str(full)]) == 0
    for t in range(13, 31):
        (corpus / "maps" / f"{t:06d}.rmp").unlink()
        (corpus / "flow" / f"{t:06d}.flo").unlink()
    part = tmp_path / "part.txt"
    assert main(["track", str(corpus), "-o", str(part)]) == 2
    assert "frame 13" in capsys.readouterr().err
    assert lines(part) == [ln for ln in lines(full) if int(ln.split(",")[0]) <= 12]


def test_track_missing_flow_names_frame(corpus, tmp_path, capsys):
    (corpus / "flow" / "000007.flo").unlink()
    assert main(["track", str(corpus), "-o", str(tmp_path / "r.txt")]) == 2
    assert "frame 7" in capsys.readouterr().err


def test_track_separate_dirs(corpus, tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(["track", str(corpus), "-o", str(a)]) == 0
    assert main(
        ["track", str(corpus), "-o", str(b), "--maps-dir", str(corpus / "maps"), "--flow-dir", str(corpus / "flow")]
    ) == 0
    assert a.read_bytes() == b.read_bytes()


def test_track_config_violation(corpus, tmp_path, capsys):
    assert main(["track", str(corpus), "-o", str(tmp_path / "r.txt"), "--iou-min", "1.5"]) == 2
    assert "iou_min" in capsys.readouterr().err
    assert main(["track", str(corpus), "-o", str(tmp_path / "r.txt"), "--nms-kernel", "4"]) == 2


def test_track_env_default(corpus, tmp_path, monkeypatch):
    monkeypatch.setenv("RESPMOT_CORPUS", str(corpus))
    assert main(["track", "-o", str(tmp_path / "r.txt")]) == 0
    monkeypatch.delenv("RESPMOT_CORPUS")
    assert main(["track", "-o", str(tmp_path / "r.txt")]) == 2


def test_track_jobs(corpus, tmp_path):
    other = tmp_path / "other"
    SceneSpec.from_dict({**steady_spec(20).to_dict(), "name": "other"}).dump(tmp_path / "o.json")
    assert main(["synth", str(tmp_path / "o.json"), str(other)]) == 0
    assert main(["track", str(corpus), str(other), "-o", str(tmp_path / "seq"), "--jobs", "1"]) == 0
    assert main(["track", str(corpus), str(other), "-o", str(tmp_path / "par"), "--jobs", "2"]) == 0
    for name in ("steady.txt", "other.txt"):
        assert (tmp_path / "seq" / name).read_bytes() == (tmp_path / "par" / name).read_bytes()


def test_config_precedence(tmp_path):
    parser = build_parser()
    args = parser.parse_args(["track", "-o", "x"])
    assert resolve_config(args) == TrackerConfig()
    (tmp_path / "c.json").write_text(json.dumps({"l": 7, "beta": 0.5, "a_max": 10}))
    args = parser.parse_args(["track", "-o", "x", "--config", str(tmp_path / "c.json"), "--l", "3"])
    cfg = resolve_config(args)
    assert (cfg.l, cfg.beta, cfg.a_max, cfg.iou_min) == (3, 0.5, 10, 0.7)


def test_config_unknown_key(corpus, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"gamma": 1}))
    assert main(["track", str(corpus), "-o", str(tmp_path / "r"), "--config", str(tmp_path / "c.json")]) == 2


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["track"])
    assert exc.value.code == 2


# --- eval --------------------------------------------------------------------


def test_eval_identity_and_fixture(tmp_path, capsys):
    gt = [DetectionRow(t, g, 100.0 * g, 0.0, 10.0, 10.0) for t in (1, 2, 3) for g in (1, 2)]
    hyp = [
        DetectionRow(1, 10, 100.0, 0.0, 10.0, 10.0),
        DetectionRow(1, 20, 200.0, 0.0, 10.0, 10.0),
        DetectionRow(2, 10, 100.0, 0.0, 10.0, 10.0),
        DetectionRow(3, 10, 100.0, 0.0, 10.0, 10.0),
        DetectionRow(3, 30, 200.0, 0.0, 10.0, 10.0),
        DetectionRow(3, 40, 400.0, 0.0, 10.0, 10.0),
    ]
    mot_io.write_mot_file(tmp_path / "gt.txt", gt)
    mot_io.write_mot_file(tmp_path / "res.txt", hyp)
    assert main(["eval", str(tmp_path / "gt.txt"), str(tmp_path / "gt.txt")]) == 0
    assert capsys.readouterr().out.startswith("mota=1.0000 ")
    assert main(["eval", str(tmp_path / "gt.txt"), str(tmp_path / "res.txt")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("mota=0.5000 ")
    assert "IDSW" in out[1]


def test_eval_errors(tmp_path):
    mot_io.write_mot_file(tmp_path / "gt.txt", [DetectionRow(1, 1, 0, 0, 5, 5)])
    assert main(["eval", str(tmp_path / "gt.txt"), str(tmp_path / "missing.txt")]) == 2
    (tmp_path / "bad.txt").write_text("1,1,zz,0,5,5,1\n")
    assert main(["eval", str(tmp_path / "gt.txt"), str(tmp_path / "bad.txt")]) == 2


# --- render ------------------------------------------------------------------


def read_pgm(path) -> np.ndarray:
    data = path.read_bytes()
    header, _, rest = data.partition(b"\n255\n")
    w, h = map(int, header.split(b"\n")[1].split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


def test_render_maps(tmp_path):
    ResponseMap.zeros(16, 8).save(tmp_path / "z.rmp")
    assert main(["render", str(tmp_path / "z.rmp"), str(tmp_path / "z.pgm")]) == 0
    assert not read_pgm(tmp_path / "z.pgm").any()
    render([Splat(5, 4, GaussianKernel(3.0, 1.0))], 16, 8).save(tmp_path / "p.rmp")
    assert main(["render", str(tmp_path / "p.rmp"), str(tmp_path / "p.pgm")]) == 0
    img = read_pgm(tmp_path / "p.pgm")
    assert img[4, 5] == 255 and img.max() == 255
    assert main(["render", str(tmp_path / "p.rmp"), str(tmp_path / "q.pgm")]) == 0
    assert (tmp_path / "p.pgm").read_bytes() == (tmp_path / "q.pgm").read_bytes()


def test_render_results(tmp_path):
    (tmp_path / "seqinfo.ini").write_text(mot_io.write_seqinfo(mot_io.SequenceInfo("s", 30, 2, 40, 30)))
    rows = [DetectionRow(2, 0, 2.0, 3.0, 10.0, 8.0), DetectionRow(2, 5, 20.0, 10.0, 12.0, 15.0)]
    mot_io.write_mot_file(tmp_path / "r.txt", rows)
    argv = ["render", str(tmp_path / "r.txt"), str(tmp_path / "o.png"), "--seqinfo", str(tmp_path / "seqinfo.ini"), "--frame", "2"]
    assert main(argv) == 0
    from PIL import Image

    img = np.asarray(Image.open(tmp_path / "o.png"))
    assert img.shape == (30, 40)
    assert img[3, 2] == id_gray(0) and img[10, 6] == id_gray(0) and img[5, 5] == 0
    assert img[24, 31] == id_gray(5)
    assert id_gray(0) != id_gray(5)


def test_render_result_needs_seqinfo(tmp_path):
    mot_io.write_mot_file(tmp_path / "r.txt", [DetectionRow(1, 0, 2, 3, 4, 5)])
    assert main(["render", str(tmp_path / "r.txt"), str(tmp_path / "o.pgm")]) == 2


# --- console entry point -----------------------------------------------------


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "respmot.cli", "eval", str(tmp_path / "a"), str(tmp_path / "b")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert "no such file" in proc.stderr
