"""JSON and CSV schemas for frames, tracks, pens and metric reports.

Every writer goes through :func:`atomic_write_text`, and JSON is dumped with
sorted keys so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .masks import MalformedRLEError, rle_decode, rle_encode
from .metrics import DetectionCounts, MotResult, SegScore, precision_recall_f1
from .pipeline.types import Clip, FrameRecord, QcFlag
from .spatial import Instance, PenRegion
from .tracks import Track


class SchemaError(ValueError):
    """Input JSON does not follow the expected layout."""


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write to a temporary sibling file, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps(obj))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc


def content_hash(paths: Iterable) -> str:
    """SHA-256 over the bytes of every file, in the given order."""
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            h.update(hashlib.sha256(fh.read()).digest())
    return h.hexdigest()


def _require(obj: dict, where: str, required: set, optional: set = frozenset()) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    missing = required - set(obj)
    if missing:
        raise SchemaError(f"{where}: missing keys {sorted(missing)}")
    unknown = set(obj) - required - set(optional)
    if unknown:
        raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")


def _decode(rle, where: str, shape: tuple[int, int]):
    try:
        mask = rle_decode(rle)
    except (MalformedRLEError, KeyError, TypeError) as exc:
        raise SchemaError(f"{where}: bad RLE ({exc})") from exc
    if mask.shape != shape:
        raise SchemaError(f"{where}: mask is {mask.shape}, frame is {shape}")
    return mask


# --------------------------------------------------------------------------
# images

def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) graymap."""
    h, w = image.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(image, np.uint8).tobytes())


def write_ppm(path, image: np.ndarray) -> None:
    """Binary (P6) pixmap from an ``h x w x 3`` uint8 array."""
    h, w, _ = image.shape
    atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(image, np.uint8).tobytes())


# --------------------------------------------------------------------------
# frames JSON (one file per clip)

def clip_to_json(clip: Clip, image_paths: dict[int, str] | None = None) -> dict:
    frames = []
    for fr in clip.frames:
        dets = []
        for d in fr.detections:
            item = {"confidence": float(d.confidence), "bbox": [int(v) for v in d.mask.bbox],
                    "rle": rle_encode(d.mask)}
            if d.embedding is not None:
                item["embedding"] = [float(v) for v in d.embedding]
            dets.append(item)
        frames.append({
            "index": fr.index,
            "image": (image_paths or {}).get(fr.index, fr.image_path),
            "foreground_rle": rle_encode(fr.foreground) if fr.foreground is not None else None,
            "detections": dets,
        })
    return {"clip_index": clip.index, "width": clip.width, "height": clip.height, "frames": frames}


def clip_from_json(obj: dict, base_dir=None) -> Clip:
    """Parse a frames document; relative image paths resolve against ``base_dir``."""
    _require(obj, "frames file", {"clip_index", "width", "height", "frames"})
    w, h = int(obj["width"]), int(obj["height"])
    base = Path(base_dir) if base_dir is not None else None
    records = []
    for k, fr in enumerate(obj["frames"]):
        where = f"frames[{k}]"
        _require(fr, where, {"index"}, {"image", "foreground_rle", "detections"})
        fg = fr.get("foreground_rle")
        fg = _decode(fg, f"{where}.foreground_rle", (h, w)) if fg is not None else None
        dets = []
        for j, d in enumerate(fr.get("detections", [])):
            dw = f"{where}.detections[{j}]"
            _require(d, dw, {"confidence", "rle"}, {"bbox", "embedding"})
            emb = np.asarray(d["embedding"], float) if d.get("embedding") is not None else None
            try:
                dets.append(Instance(_decode(d["rle"], dw, (h, w)), float(d["confidence"]), embedding=emb))
            except ValueError as exc:
                raise SchemaError(f"{dw}: {exc}") from exc
        image = fr.get("image")
        if image is not None and base is not None and not Path(image).is_absolute():
            image = str(base / image)
        records.append(FrameRecord(int(fr["index"]), None, fg, dets, image))
    try:
        return Clip(int(obj["clip_index"]), w, h, records)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def write_clip(path, clip: Clip, image_dir: str | None = "images") -> None:
    """Frames JSON at ``path``; with ``image_dir`` the frame images go next to it as PGM."""
    path = Path(path)
    paths = {}
    if image_dir is not None:
        for fr in clip.frames:
            img = fr.get_image()
            if img is None:
                continue
            rel = f"{image_dir}/clip{clip.index:03d}_{fr.index:06d}.pgm"
            write_pgm(path.parent / rel, img)
            paths[fr.index] = rel
    write_json(path, clip_to_json(clip, paths))


def read_clip(path) -> Clip:
    path = Path(path)
    return clip_from_json(read_json(path), path.parent)


# --------------------------------------------------------------------------
# tracks JSON (predictions and ground truth)

def tracks_to_json(tracks: Sequence[Track], qc: Sequence[QcFlag] = (),
                   excluded_spans: Sequence[tuple[int, int]] = (), **extra) -> dict:
    out = {
        "tracks": [{"id": t.identity,
                    "entries": [{"frame": f, "rle": rle_encode(t.entries[f]), "visible": bool(t.entries[f].area)}
                                for f in t.frames()]}
                   for t in sorted(tracks, key=lambda t: t.identity)],
        "qc": [q.to_json() for q in qc],
        "excluded_spans": [[int(a), int(b)] for a, b in excluded_spans],
    }
    out.update(extra)
    return out


def tracks_from_json(obj: dict) -> tuple[list[Track], list[QcFlag], list[tuple[int, int]]]:
    _require(obj, "tracks file", {"tracks"}, {"qc", "excluded_spans", "config", "input_hash", "clips", "spec"})
    tracks = []
    for k, t in enumerate(obj["tracks"]):
        _require(t, f"tracks[{k}]", {"id", "entries"})
        entries = {}
        for j, e in enumerate(t["entries"]):
            where = f"tracks[{k}].entries[{j}]"
            _require(e, where, {"frame", "rle"}, {"visible"})
            try:
                m = rle_decode(e["rle"])
            except (MalformedRLEError, KeyError, TypeError) as exc:
                raise SchemaError(f"{where}: bad RLE ({exc})") from exc
            if bool(e.get("visible", m.area > 0)) != (m.area > 0):
                raise SchemaError(f"{where}: visible flag disagrees with the mask")
            if int(e["frame"]) in entries:
                raise SchemaError(f"{where}: duplicate frame {e['frame']}")
            entries[int(e["frame"])] = m
        tracks.append(Track(int(t["id"]), entries))
    ids = [t.identity for t in tracks]
    if len(set(ids)) != len(ids):
        raise SchemaError("tracks file: duplicate track ids")
    qc = []
    for q in obj.get("qc", []):
        _require(q, "qc flag", {"frame", "reason", "identities", "value"})
        qc.append(QcFlag(int(q["frame"]), q["reason"], tuple(q["identities"]), float(q["value"])))
    spans = [(int(a), int(b)) for a, b in obj.get("excluded_spans", [])]
    return tracks, qc, spans


def read_tracks(path) -> tuple[list[Track], list[QcFlag], list[tuple[int, int]]]:
    return tracks_from_json(read_json(path))


def read_pen(path) -> PenRegion:
    try:
        return PenRegion.from_json(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# metric reports

def _num(x: float):
    x = float(x)
    return None if x != x else round(x, 6)


def build_report(detection: DetectionCounts, seg: SegScore | None, mot: MotResult | None) -> dict:
    p, r, f1 = precision_recall_f1(detection)
    report = {"detection": {"TP": detection.tp, "FP": detection.fp, "FN": detection.fn_,
                            "precision": _num(p), "recall": _num(r), "F1": _num(f1)}}
    if seg is not None:
        report["segmentation"] = {
            "J": _num(seg.j), "F": _num(seg.f), "JF": _num(seg.jf),
            "per_id": [{"id": k, "pred_id": seg.id_map.get(k), "J": _num(v[0]), "F": _num(v[1])}
                       for k, v in sorted(seg.per_id.items())],
        }
    if mot is not None:
        t = mot.totals
        report["tracking"] = {"MOTA": _num(mot.mota), "MOTP": _num(mot.motp), "IDSW": t.idsw,
                              "FN": t.fn_, "FP": t.fp, "GT": t.gt, "matches": t.matches}
    return report


def per_frame_csv(seg: SegScore | None, mot: MotResult | None) -> str:
    rows = {}
    if seg is not None:
        for f, (j, fm) in seg.per_frame.items():
            rows.setdefault(f, {})["J"], rows[f]["F"] = j, fm
            rows[f]["JF"] = (j + fm) / 2
    if mot is not None:
        for c in mot.per_frame:
            rows.setdefault(c.frame, {}).update(
                gt=c.gt, fn=c.fn_, fp=c.fp, idsw=c.idsw, matches=c.matches,
                mean_iou=c.matched_iou_sum / c.matches if c.matches else "")
    cols = ["frame", "J", "F", "JF", "gt", "fn", "fp", "idsw", "matches", "mean_iou"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for f in sorted(rows):
        vals = rows[f]
        w.writerow([f] + [_cell(vals.get(c, "")) for c in cols[1:]])
    return buf.getvalue()


def sweep_csv(rows: Sequence[tuple[float, float, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "precision", "recall", "F1"])
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    return f"{v:.6f}" if isinstance(v, float) else v
