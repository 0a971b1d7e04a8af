import json
import os

import numpy as np
import pytest

from herdtrack.formats import (SchemaError, atomic_write_text, build_report, clip_from_json, clip_to_json,
                               content_hash, dumps, per_frame_csv, read_clip, read_json, read_pen, read_tracks,
                               sweep_csv, tracks_from_json, tracks_to_json, write_clip, write_json)
from herdtrack.masks import BitMask, rle_decode, rle_encode
from herdtrack.metrics import DetectionCounts, jf_series, mot_evaluate
from herdtrack.pipeline import Clip, FrameRecord, QcFlag
from herdtrack.spatial import Instance, PenRegion
from herdtrack.tracks import Track

from conftest import random_mask, rect

H, W = 30, 40


def _clip():
    frames = []
    for i in range(3):
        img = np.full((H, W), 10 * i, np.uint8)
        m = rect(H, W, 2 + i, 3, 5, 4)
        frames.append(FrameRecord(10 + i, img, m, [Instance(m, 0.75), Instance(rect(H, W, 20, 20, 3, 3), 0.125,
                                                                           embedding=np.arange(3.0))]))
    return Clip(4, W, H, frames)


def test_clip_round_trip_with_images(tmp_path):
    clip = _clip()
    write_clip(tmp_path / "clip.json", clip)
    back = read_clip(tmp_path / "clip.json")
    assert (back.index, back.width, back.height, back.frame_indices) == (4, W, H, [10, 11, 12])
    for a, b in zip(clip.frames, back.frames):
        assert a.foreground == b.foreground
        assert [d.mask for d in a.detections] == [d.mask for d in b.detections]
        assert [d.confidence for d in a.detections] == [d.confidence for d in b.detections]
        assert np.array_equal(a.image, b.get_image())
    assert np.array_equal(back.frames[0].detections[1].embedding, np.arange(3.0))
    assert back.frames[0].detections[0].embedding is None


def test_clip_json_is_stable():
    obj = clip_to_json(_clip())
    assert dumps(clip_to_json(clip_from_json(json.loads(dumps(obj))))) == dumps(obj)


@pytest.mark.parametrize("mutate, message", [
    (lambda o: o.pop("width"), "missing"),
    (lambda o: o.update(extra=1), "unknown"),
    (lambda o: o["frames"][0]["detections"][0].pop("rle"), "missing"),
    (lambda o: o["frames"][0]["detections"][0]["rle"].update(counts=[1, 2]), "bad RLE"),
    (lambda o: o["frames"][0]["detections"][0].update(rle=rle_encode(BitMask.empty(5, 5))), "mask is"),
    (lambda o: o["frames"][0]["detections"][0].update(confidence=1.5), "detections"),
    (lambda o: o["frames"].reverse(), "increasing"),
])
def test_clip_schema_errors(mutate, message):
    obj = json.loads(dumps(clip_to_json(_clip())))
    mutate(obj)
    with pytest.raises(SchemaError, match=message):
        clip_from_json(obj)


def test_tracks_round_trip_and_errors():
    a = Track(0, {0: rect(H, W, 1, 1, 4, 4), 1: BitMask.empty(H, W)})
    b = Track(3, {0: rect(H, W, 10, 10, 4, 4)})
    qc = [QcFlag(1, "near_zero_area", (0,), 3.0)]
    obj = json.loads(dumps(tracks_to_json([b, a], qc, [(5, 7)], config={"x": 1})))
    assert [t["id"] for t in obj["tracks"]] == [0, 3]
    assert obj["tracks"][0]["entries"][1]["visible"] is False
    tracks, flags, spans = tracks_from_json(obj)
    assert [t.entries for t in tracks] == [a.entries, b.entries]
    assert flags == qc and spans == [(5, 7)]

    bad = json.loads(json.dumps(obj))
    bad["tracks"][0]["entries"][1]["visible"] = True
    with pytest.raises(SchemaError, match="visible"):
        tracks_from_json(bad)
    bad = json.loads(json.dumps(obj))
    bad["tracks"][0]["entries"].append(bad["tracks"][0]["entries"][0])
    with pytest.raises(SchemaError, match="duplicate frame"):
        tracks_from_json(bad)
    bad = json.loads(json.dumps(obj))
    bad["tracks"][1]["id"] = 0
    with pytest.raises(SchemaError, match="duplicate track"):
        tracks_from_json(bad)
    with pytest.raises(SchemaError, match="unknown"):
        tracks_from_json({"tracks": [], "bogus": 1})


def test_read_json_rejects_garbage(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(SchemaError):
        read_json(p)
    with pytest.raises(SchemaError):
        read_tracks(p)


def test_pen_file(tmp_path):
    pen = PenRegion([[1, 1], [30, 1], [30, 20], [1, 20]], (W, H), "cam1")
    write_json(tmp_path / "pen.json", pen.to_json())
    back = read_pen(tmp_path / "pen.json")
    assert back.mask == pen.mask and back.camera_id == "cam1"
    write_json(tmp_path / "bad.json", {"polygon": [[0, 0], [1, 1]], "frame_size": [W, H]})
    with pytest.raises(SchemaError):
        read_pen(tmp_path / "bad.json")


def test_rle_json_round_trip_1000_masks():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        m = random_mask(rng)
        text = json.dumps(rle_encode(m))
        back = rle_decode(json.loads(text))
        assert back == m and json.dumps(rle_encode(back)) == text


def test_atomic_write_leaves_no_temporaries(tmp_path):
    atomic_write_text(tmp_path / "a.txt", "one")
    atomic_write_text(tmp_path / "a.txt", "two")
    assert os.listdir(tmp_path) == ["a.txt"] and (tmp_path / "a.txt").read_text() == "two"


def test_content_hash_depends_on_bytes_and_order(tmp_path):
    (tmp_path / "a").write_text("x")
    (tmp_path / "b").write_text("y")
    h1 = content_hash([tmp_path / "a", tmp_path / "b"])
    assert h1 == content_hash([tmp_path / "a", tmp_path / "b"])
    assert h1 != content_hash([tmp_path / "b", tmp_path / "a"])


def test_report_and_csv():
    gt = [Track(0, {0: rect(H, W, 1, 1, 5, 5), 1: rect(H, W, 2, 1, 5, 5)})]
    seg, mot = jf_series(gt, gt), mot_evaluate(gt, gt)
    rep = build_report(DetectionCounts(5867, 814, 2315), seg, mot)
    assert rep["detection"]["precision"] == pytest.approx(0.8782, abs=1e-4)
    assert rep["segmentation"]["JF"] == 1.0 and rep["segmentation"]["per_id"][0]["pred_id"] == 0
    assert rep["tracking"] == {"MOTA": 1.0, "MOTP": 1.0, "IDSW": 0, "FN": 0, "FP": 0, "GT": 2, "matches": 2}
    lines = per_frame_csv(seg, mot).splitlines()
    assert lines[0] == "frame,J,F,JF,gt,fn,fp,idsw,matches,mean_iou"
    assert lines[1] == "0,1.000000,1.000000,1.000000,1,0,0,0,1,1.000000"
    assert sweep_csv([(0.24, 0.5, 0.25, 1 / 3)]).splitlines()[1] == "0.240000,0.500000,0.250000,0.333333"
