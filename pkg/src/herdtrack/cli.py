"""Command-line entry point: ``herdtrack <command> [options]``.

Commands: track, evaluate, sweep, simulate, render, qc-report.  Settings come
from one JSON config file (``--config``) with ``--set section.key=value``
overrides; unknown keys are rejected.  Exit codes: 0 ok, 1 runtime failure,
2 usage or schema error.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import formats
from .formats import SchemaError
from .metrics import detection_counts_from_tracks, jf_series, mot_evaluate, sweep_thresholds
from .pipeline import (PipelineConfig, ReferenceDetector, ReferencePropagator, post_qc, run_long_term)
from .refine import RefineConfig
from .reid import ReidConfig
from .tracks import all_frames

log = logging.getLogger("herdtrack")


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


def _fields(cls) -> dict:
    return {f.name: f.default for f in dataclasses.fields(cls)}


DEFAULTS = {
    "pipeline": _fields(PipelineConfig),
    "refine": _fields(RefineConfig),
    "reid": _fields(ReidConfig),
    "metrics": {"iou_threshold": 0.5, "boundary_tolerance": None,
                "sweep_start": 0.01, "sweep_stop": 0.60, "sweep_step": 0.01},
    "render": {"alpha": 0.6},
    "simulate": {"images": True},
    "pen": None,
    "scenario": {},
}


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: list(o) if isinstance(o, tuple) else str(o)))


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise UsageError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict) and key != "scenario":
            if not isinstance(val, dict):
                raise UsageError(f"config section {where}{key} must be an object")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> dict:
    cfg = _jsonable(DEFAULTS)
    if args.config:
        try:
            loaded = formats.read_json(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = _merge(cfg, loaded)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        section, name = key.split(".", 1)
        if section == "scenario":
            cfg["scenario"][name] = _parse_value(raw)
        elif isinstance(cfg.get(section), dict):
            cfg = _merge(cfg, {section: {name: _parse_value(raw)}})
        else:
            raise UsageError(f"unknown config section {section!r}")
    if getattr(args, "threshold", None) is not None:
        cfg["pipeline"]["detection_threshold"] = args.threshold
    if getattr(args, "seed", None) is not None:
        cfg["scenario"]["seed"] = args.seed
    if getattr(args, "pen", None):
        try:
            cfg["pen"] = formats.read_json(args.pen)
        except OSError as exc:
            raise UsageError(f"cannot read pen file: {exc}") from exc
    return cfg


def _build(cls, section: dict):
    kw = {}
    for f in dataclasses.fields(cls):
        v = section[f.name]
        kw[f.name] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {cls.__name__}: {exc}") from exc


def _input_files(paths) -> list[Path]:
    out = []
    for p in paths or []:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(p.glob("clip_*.json")))
        elif p.exists():
            out.append(p)
        else:
            raise UsageError(f"input not found: {p}")
    if not out:
        raise UsageError("no input files")
    return out


def _load_clips(paths):
    clips = [formats.read_clip(p) for p in paths]
    clips.sort(key=lambda c: c.index)
    return clips


def _meta(cfg: dict, inputs) -> dict:
    return {"config": cfg, "input_hash": formats.content_hash(inputs)}


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands

def cmd_track(args, cfg) -> int:
    if cfg["pen"] is None:
        raise UsageError("a pen region is required (--pen or the config's \"pen\" section)")
    from .spatial import PenRegion

    try:
        pen = PenRegion.from_json(cfg["pen"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid pen config: {exc}") from exc
    inputs = _input_files(args.input)
    clips = _load_clips(inputs)
    pcfg = _build(PipelineConfig, cfg["pipeline"])
    result = run_long_term(clips, ReferenceDetector(pcfg.detection_threshold), ReferencePropagator(), pen,
                           pcfg, _build(RefineConfig, cfg["refine"]), _build(ReidConfig, cfg["reid"]))
    out = _out_dir(args)
    doc = formats.tracks_to_json(result.tracks, result.qc, result.excluded_spans,
                                 clips=[c.to_json() for c in result.clips], **_meta(cfg, inputs))
    formats.write_json(out / "tracks.json", doc)
    formats.atomic_write_text(out / "qc.csv", _qc_csv(result.qc))
    for c in result.clips:
        if c.status == "excluded":
            log.warning("clip %d excluded: %s", c.clip, c.message)
    log.info("tracked %d clips, %d identities, %d QC flags", len(clips), len(result.tracks), len(result.qc))
    return 0


def _qc_csv(flags) -> str:
    lines = ["frame,reason,identities,value"]
    for f in flags:
        lines.append(f"{f.frame},{f.reason},{' '.join(map(str, f.identities))},{f.value:.6f}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args, cfg) -> int:
    if not args.gt:
        raise UsageError("--gt is required")
    inputs = _input_files(args.input) + [Path(args.gt)]
    pred, _, _ = formats.read_tracks(inputs[0])
    gt, _, _ = formats.read_tracks(args.gt)
    m = cfg["metrics"]
    frames = all_frames(gt)
    seg = jf_series(pred, gt, frames, m["boundary_tolerance"]) if gt else None
    mot = mot_evaluate(pred, gt, m["iou_threshold"], frames)
    det = detection_counts_from_tracks(pred, gt, m["iou_threshold"], frames)
    report = formats.build_report(det, seg, mot)
    report.update(_meta(cfg, inputs))
    out = _out_dir(args)
    formats.write_json(out / "report.json", report)
    formats.atomic_write_text(out / "per_frame.csv", formats.per_frame_csv(seg, mot))
    if seg is not None and seg.per_frame:
        from .plotting import plot_jf_series, plot_per_id

        plot_jf_series(seg, out / "jf_series.png")
        plot_per_id(seg, out / "per_id.png")
    print(json.dumps({k: report[k] for k in ("detection", "tracking")}, sort_keys=True))
    return 0


def cmd_sweep(args, cfg) -> int:
    if not args.gt:
        raise UsageError("--gt is required")
    inputs = _input_files(args.input)
    clips = _load_clips(inputs)
    gt, _, _ = formats.read_tracks(args.gt)
    m = cfg["metrics"]
    n = int(round((m["sweep_stop"] - m["sweep_start"]) / m["sweep_step"])) + 1
    if n <= 0:
        raise UsageError("empty sweep range")
    thresholds = [round(m["sweep_start"] + k * m["sweep_step"], 10) for k in range(n)]
    preds, gts = [], []
    for clip in clips:
        for fr in clip.frames:
            preds.append(fr.detections)
            gts.append([g.entries[fr.index].bbox for g in gt if g.visible(fr.index)])
    res = sweep_thresholds(preds, gts, thresholds, m["iou_threshold"])
    out = _out_dir(args)
    formats.atomic_write_text(out / "sweep.csv", formats.sweep_csv(res.rows))
    doc = {"best_threshold": res.best_threshold, "best_f1": round(res.best_f1, 6),
           "rows": [[round(v, 6) for v in r] for r in res.rows]}
    doc.update(_meta(cfg, inputs + [Path(args.gt)]))
    formats.write_json(out / "sweep.json", doc)
    from .plotting import plot_sweep

    plot_sweep(res.rows, res.best_threshold, out / "sweep.png")
    print(f"best threshold {res.best_threshold:g} (F1 {res.best_f1:.4f})")
    return 0


def cmd_simulate(args, cfg) -> int:
    from .simgen import generate_scenario, save_scenario, spec_from_json

    try:
        spec = spec_from_json(cfg["scenario"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid scenario: {exc}") from exc
    out = _out_dir(args)
    scenario = generate_scenario(spec)
    written = save_scenario(scenario, out, images=cfg["simulate"]["images"])
    formats.write_json(out / "manifest.json", {"config": cfg, "files": written})
    log.info("wrote %d clips to %s", len(written["clips"]), out)
    return 0


def cmd_render(args, cfg) -> int:
    from .render import render_clip

    if not args.frames:
        raise UsageError("--frames is required")
    inputs = _input_files(args.input)
    frames = _input_files(args.frames)
    tracks, qc, _ = formats.read_tracks(inputs[0])
    flagged = {f.frame for f in qc}
    out = _out_dir(args)
    for clip in _load_clips(frames):
        render_clip(clip, tracks, out / f"clip_{clip.index:03d}", flagged, cfg["render"]["alpha"])
    formats.write_json(out / "manifest.json", _meta(cfg, inputs + frames))
    return 0


def cmd_qc_report(args, cfg) -> int:
    inputs = _input_files(args.input)
    tracks, _, _ = formats.read_tracks(inputs[0])
    flags, spans = post_qc(tracks, _build(PipelineConfig, cfg["pipeline"]))
    out = _out_dir(args)
    doc = {"qc": [f.to_json() for f in flags], "error_spans": [list(s) for s in spans]}
    doc.update(_meta(cfg, inputs))
    formats.write_json(out / "qc.json", doc)
    formats.atomic_write_text(out / "qc.csv", _qc_csv(flags))
    print(f"{len(flags)} flags in {len(spans)} spans")
    return 0


COMMANDS = {"track": cmd_track, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
            "simulate": cmd_simulate, "render": cmd_render, "qc-report": cmd_qc_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable; value parsed as JSON)")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="herdtrack", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("track", parents=[common], help="track clips into identity-consistent masks")
    s.add_argument("--input", nargs="+", required=True, help="frames JSON files or a directory of clip_*.json")
    s.add_argument("--pen", help="pen region JSON")
    s.add_argument("--threshold", type=float, help="detection confidence threshold")
    s = sub.add_parser("evaluate", parents=[common], help="score predicted tracks against ground truth")
    s.add_argument("--input", nargs=1, required=True, help="predicted tracks JSON")
    s.add_argument("--gt", help="ground-truth tracks JSON")
    s = sub.add_parser("sweep", parents=[common], help="precision/recall/F1 over confidence thresholds")
    s.add_argument("--input", nargs="+", required=True, help="frames JSON files holding detections")
    s.add_argument("--gt", help="ground-truth tracks JSON")
    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic scenario")
    s.add_argument("--seed", type=int)
    s = sub.add_parser("render", parents=[common], help="write colour overlays as PPM files")
    s.add_argument("--input", nargs=1, required=True, help="tracks JSON")
    s.add_argument("--frames", nargs="+", help="frames JSON files or directory")
    s = sub.add_parser("qc-report", parents=[common], help="run quality control on a tracks file")
    s.add_argument("--input", nargs=1, required=True, help="tracks JSON")
    return p


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("HERDTRACK_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, SchemaError) as exc:
        print(f"herdtrack {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("traceback", exc_info=True)
        print(f"herdtrack {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
