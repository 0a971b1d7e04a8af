import json
import logging

import numpy as np
import pytest

from herdtrack.cli import main
from herdtrack.formats import clip_to_json, read_json, read_tracks, tracks_to_json, write_json
from herdtrack.masks import BitMask
from herdtrack.metrics import match_identities
from herdtrack.pipeline import Clip, FrameRecord, QcFlag
from herdtrack.render import MARKER, PALETTE, identity_color, overlay
from herdtrack.tracks import Track

from conftest import rect

SMALL = ["--set", "scenario.n_clips=2", "--set", "scenario.frames_per_clip=20", "--set", "scenario.seed=5"]


def read_ppm(path):
    data = path.read_bytes()
    head, rest = data.split(b"\n", 3)[:3], data.split(b"\n", 3)[3]
    w, h = map(int, head[1].split())
    return np.frombuffer(rest, np.uint8).reshape(h, w, 3)


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(d)] + SMALL) == 0
    return d


@pytest.fixture(scope="module")
def tracked(sim, tmp_path_factory):
    out = tmp_path_factory.mktemp("track")
    assert main(["track", "--input", str(sim), "--pen", str(sim / "pen.json"), "--out", str(out)]) == 0
    return out


def test_simulate_writes_scenario(sim):
    names = sorted(p.name for p in sim.iterdir())
    assert names == ["clip_000.json", "clip_001.json", "gt.json", "images", "manifest.json", "pen.json"]
    assert len(list((sim / "images").iterdir())) == 40
    assert read_json(sim / "gt.json")["spec"]["seed"] == 5


def test_track_reproduces_ground_truth(sim, tracked):
    doc = read_json(tracked / "tracks.json")
    assert [c["path"] for c in doc["clips"]] == ["initializer", "transfer"]
    pred, _, _ = read_tracks(tracked / "tracks.json")
    gt, _, _ = read_tracks(sim / "gt.json")
    ids = match_identities(pred, gt)
    assert sorted(ids.values()) == list(range(10))
    preds = {t.identity: t for t in pred}
    assert all(preds[ids[g.identity]].entries == g.entries for g in gt)
    assert (tracked / "qc.csv").read_text() == "frame,reason,identities,value\n"


def test_track_is_byte_identical(sim, tracked, tmp_path):
    assert main(["track", "--input", str(sim), "--pen", str(sim / "pen.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "tracks.json").read_bytes() == (tracked / "tracks.json").read_bytes()


def test_evaluate_perfect(sim, tracked, tmp_path, capsys):
    assert main(["evaluate", "--input", str(tracked / "tracks.json"), "--gt", str(sim / "gt.json"),
                 "--out", str(tmp_path)]) == 0
    rep = read_json(tmp_path / "report.json")
    assert rep["tracking"]["MOTA"] == 1.0 and rep["tracking"]["IDSW"] == 0
    assert rep["segmentation"]["J"] == rep["segmentation"]["F"] == 1.0
    assert rep["detection"]["F1"] == 1.0
    for name in ("per_frame.csv", "jf_series.png", "per_id.png"):
        assert (tmp_path / name).stat().st_size > 0
    assert json.loads(capsys.readouterr().out)["tracking"]["MOTA"] == 1.0


def _write_tracks(path, tracks):
    write_json(path, tracks_to_json(tracks))


def test_evaluate_swap_and_count_fixtures(tmp_path):
    a, b = rect(30, 40, 2, 2, 8, 8), rect(30, 40, 25, 15, 8, 8)
    _write_tracks(tmp_path / "gt.json", [Track(0, {1: a, 2: a, 3: a}), Track(1, {1: b, 2: b, 3: b})])
    _write_tracks(tmp_path / "pred.json", [Track(0, {1: a, 2: b, 3: b}), Track(1, {1: b, 2: a, 3: a})])
    assert main(["evaluate", "--input", str(tmp_path / "pred.json"), "--gt", str(tmp_path / "gt.json"),
                 "--out", str(tmp_path / "swap")]) == 0
    rep = read_json(tmp_path / "swap" / "report.json")["tracking"]
    assert rep["IDSW"] == 2 and rep["MOTA"] == pytest.approx(0.6667, abs=1e-4)

    m = rect(8, 8, 2, 2, 3, 3)
    _write_tracks(tmp_path / "gt2.json", [Track(0, {t: m for t in range(1306)})])
    _write_tracks(tmp_path / "pred2.json", [Track(0, {t: m for t in range(13, 1306)})])
    assert main(["evaluate", "--input", str(tmp_path / "pred2.json"), "--gt", str(tmp_path / "gt2.json"),
                 "--out", str(tmp_path / "count")]) == 0
    rep = read_json(tmp_path / "count" / "report.json")["tracking"]
    assert (rep["GT"], rep["FN"], rep["FP"], rep["IDSW"]) == (1306, 13, 0, 0)
    assert rep["MOTA"] == pytest.approx(0.9900, abs=1e-4)


def test_sweep(sim, tmp_path):
    assert main(["sweep", "--input", str(sim), "--gt", str(sim / "gt.json"), "--out", str(tmp_path)]) == 0
    doc = read_json(tmp_path / "sweep.json")
    assert len(doc["rows"]) == 60 and doc["rows"][0][0] == 0.01 and doc["rows"][-1][0] == 0.6
    assert (tmp_path / "sweep.csv").read_text().startswith("threshold,precision,recall,F1\n")
    assert (tmp_path / "sweep.png").exists()


def test_qc_report(tmp_path):
    a = rect(30, 40, 2, 2, 8, 8)
    _write_tracks(tmp_path / "t.json", [Track(0, {0: a, 1: a}), Track(1, {0: rect(30, 40, 20, 2, 8, 8), 1: a})])
    assert main(["qc-report", "--input", str(tmp_path / "t.json"), "--out", str(tmp_path / "o")]) == 0
    doc = read_json(tmp_path / "o" / "qc.json")
    assert doc["error_spans"] == [[1, 1]] and doc["qc"][0]["reason"] == "overlap"


def test_exit_codes(sim, tmp_path, capsys):
    # missing pen
    assert main(["track", "--input", str(sim), "--out", str(tmp_path)]) == 2
    assert "pen" in capsys.readouterr().err
    # unknown config keys
    assert main(["track", "--input", str(sim), "--pen", str(sim / "pen.json"), "--out", str(tmp_path),
                 "--set", "pipeline.bogus=1"]) == 2
    write_json(tmp_path / "cfg.json", {"pipeline": {"scan_stride": 5}, "colour": "red"})
    assert main(["qc-report", "--input", str(sim / "gt.json"), "--out", str(tmp_path),
                 "--config", str(tmp_path / "cfg.json")]) == 2
    # invalid values, missing inputs, malformed files
    assert main(["track", "--input", str(sim), "--pen", str(sim / "pen.json"), "--out", str(tmp_path),
                 "--set", "pipeline.scan_stride=0"]) == 2
    assert main(["evaluate", "--input", str(tmp_path / "nope.json"), "--gt", str(sim / "gt.json"),
                 "--out", str(tmp_path)]) == 2
    (tmp_path / "bad.json").write_text("[1, 2")
    assert main(["qc-report", "--input", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--out", str(tmp_path / "s"), "--set", "scenario.n_agents=0"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_runtime_failure_exits_1(tmp_path, monkeypatch):
    import herdtrack.cli as cli

    def boom(args, cfg):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(cli.COMMANDS, "qc-report", boom)
    assert main(["qc-report", "--input", str(tmp_path)]) == 1


def test_track_logs_and_skips_degenerate_clip(sim, tmp_path, caplog):
    inputs = tmp_path / "in"
    inputs.mkdir()
    for name in ("clip_000.json", "clip_001.json"):
        doc = read_json(sim / name)
        for fr in doc["frames"]:
            fr["image"] = str(sim / fr["image"])
        write_json(inputs / name, doc)
    blank = Clip(2, 480, 360, [FrameRecord(40 + k, None, BitMask.empty(360, 480), []) for k in range(5)])
    write_json(inputs / "clip_002.json", clip_to_json(blank))
    with caplog.at_level(logging.WARNING):
        assert main(["track", "--input", str(inputs), "--pen", str(sim / "pen.json"), "--out", str(tmp_path)]) == 0
    doc = read_json(tmp_path / "tracks.json")
    assert doc["clips"][2]["status"] == "excluded"
    assert [40, 44] in doc["excluded_spans"]
    assert "clip 2" in caplog.text


def test_render_palette_and_marker(tmp_path):
    h, w = 40, 120
    masks = {k: rect(h, w, 2 + 11 * k, 5, 8, 8) for k in range(10)}
    tracks = [Track(k, {0: m, 1: m}) for k, m in masks.items()]
    frames = [FrameRecord(i, np.full((h, w), 50, np.uint8), None, []) for i in range(2)]
    write_json(tmp_path / "t.json", tracks_to_json(tracks, qc=[QcFlag(1, "overlap", (0, 1), 0.5)]))
    write_json(tmp_path / "clip_000.json", clip_to_json(Clip(0, w, h, frames)))
    from herdtrack.formats import write_pgm
    for i in range(2):
        write_pgm(tmp_path / f"f{i}.pgm", frames[i].image)
    doc = read_json(tmp_path / "clip_000.json")
    for i, fr in enumerate(doc["frames"]):
        fr["image"] = f"f{i}.pgm"
    write_json(tmp_path / "clip_000.json", doc)
    assert main(["render", "--input", str(tmp_path / "t.json"), "--frames", str(tmp_path / "clip_000.json"),
                 "--out", str(tmp_path / "r")]) == 0
    f0 = read_ppm(tmp_path / "r" / "clip_000" / "frame_000000.ppm")
    f1 = read_ppm(tmp_path / "r" / "clip_000" / "frame_000001.ppm")
    centre = [tuple(f0[9, 6 + 11 * k]) for k in range(10)]
    assert len(set(centre)) == 10
    assert centre == [tuple(f1[9, 6 + 11 * k]) for k in range(10)]
    expect = np.rint(0.4 * 50 + 0.6 * PALETTE[3].astype(float)).astype(np.uint8)
    assert tuple(f0[9, 6 + 33]) == tuple(expect)
    assert tuple(f0[0, 0]) == (50, 50, 50) and tuple(f1[0, 0]) == tuple(MARKER)


def test_overlay_empty_tracks_is_background():
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    out = overlay(img, {}, 3, 4)
    assert np.array_equal(out, np.repeat(img[..., None], 3, axis=2))
    assert identity_color(3) == identity_color(19)
