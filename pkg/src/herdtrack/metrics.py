"""Detection, segmentation and CLEAR-MOT evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, Decimal
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .assignment import hungarian
from .masks import BitMask, contour, mask_iou
from .tracks import Track, all_frames, tracks_by_id


@dataclass
class DetectionCounts:
    tp: int = 0
    fp: int = 0
    fn_: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn_) < 0:
            raise ValueError("detection counts must be non-negative")

    def __add__(self, other: "DetectionCounts") -> "DetectionCounts":
        return DetectionCounts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)


@dataclass
class FrameMotCounts:
    frame: int = -1
    gt: int = 0
    fn_: int = 0
    fp: int = 0
    idsw: int = 0
    matched_iou_sum: float = 0.0
    matches: int = 0

    def __post_init__(self):
        if self.matches > self.gt or self.idsw > self.matches:
            raise ValueError("need matches <= gt and idsw <= matches")


@dataclass
class MotResult:
    mota: float
    motp: float
    totals: FrameMotCounts
    per_frame: list[FrameMotCounts]


@dataclass
class SegScore:
    j: float
    f: float
    jf: float
    per_id: dict[int, tuple[float, float]] = field(default_factory=dict)
    per_frame: dict[int, tuple[float, float]] = field(default_factory=dict)
    id_map: dict[int, int] = field(default_factory=dict)


def format_metric(value: float, places: int = 2) -> str:
    """Render a score truncated (never rounded up) to ``places`` decimals."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    # shed float noise before truncating, so 0.87 stored as 0.86999... stays 0.87
    d = Decimal(repr(round(value, 9)))
    return str(d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_DOWN))


# --------------------------------------------------------------------------
# detection

def box_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def _box_of(obj):
    return obj.bbox if hasattr(obj, "bbox") else tuple(obj)


def gated_matching(iou: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """One-to-one pairs with IoU >= threshold: most pairs first, then most total IoU."""
    if iou.size == 0:
        return []
    eligible = iou >= threshold
    if not eligible.any():
        return []
    bonus = min(iou.shape) + 1.0
    weight = np.where(eligible, bonus + iou, 0.0)
    res = hungarian(-weight)
    return sorted((i, j) for i, j in res.mapping.items() if eligible[i, j])


def match_detections(preds: Sequence, gts: Sequence, iou_threshold: float = 0.5) -> DetectionCounts:
    iou = np.array([[box_iou(_box_of(p), _box_of(g)) for g in gts] for p in preds]).reshape(len(preds), len(gts))
    tp = len(gated_matching(iou, iou_threshold))
    return DetectionCounts(tp, len(preds) - tp, len(gts) - tp)


def precision_recall_f1(c: DetectionCounts) -> tuple[float, float, float]:
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    r = c.tp / (c.tp + c.fn_) if c.tp + c.fn_ else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


@dataclass
class SweepResult:
    rows: list[tuple[float, float, float, float]]  # (threshold, P, R, F1)
    counts: list[DetectionCounts]
    best_threshold: float
    best_f1: float


def sweep_thresholds(scored_preds: Sequence[Sequence], gts: Sequence[Sequence],
                     thresholds: Sequence[float], iou_threshold: float = 0.5) -> SweepResult:
    """Evaluate per-image detections kept at ``confidence >= t`` for every threshold.

    ``scored_preds[k]`` and ``gts[k]`` belong to image ``k``; predictions need a
    ``confidence`` attribute.  Ties in F1 resolve to the lowest threshold.
    """
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    if len(scored_preds) != len(gts):
        raise ValueError("need one prediction list per ground-truth image")
    rows, all_counts = [], []
    for t in thresholds:
        total = DetectionCounts()
        for preds, gt in zip(scored_preds, gts):
            total = total + match_detections([p for p in preds if p.confidence >= t], gt, iou_threshold)
        p, r, f1 = precision_recall_f1(total)
        rows.append((float(t), p, r, f1))
        all_counts.append(total)
    if not rows:
        return SweepResult([], [], float("nan"), float("nan"))
    best = max(range(len(rows)), key=lambda k: (rows[k][3], -k))
    return SweepResult(rows, all_counts, rows[best][0], rows[best][3])


# --------------------------------------------------------------------------
# segmentation

def jaccard(pred: BitMask, gt: BitMask) -> float:
    return mask_iou(pred, gt)


def default_boundary_tolerance(height: int, width: int) -> int:
    return math.ceil(0.008 * math.hypot(height, width))


def boundary_f(pred: BitMask, gt: BitMask, tolerance: float | None = None) -> float:
    if pred.shape != gt.shape:
        raise ValueError(f"mask dimensions differ: {pred.shape} vs {gt.shape}")
    if tolerance is None:
        tolerance = default_boundary_tolerance(*pred.shape)
    cp, cg = contour(pred), contour(gt)
    if not len(cp) and not len(cg):
        return 1.0
    if not len(cp) or not len(cg):
        return 0.0
    d_pg, _ = cKDTree(cg).query(cp, k=1)
    d_gp, _ = cKDTree(cp).query(cg, k=1)
    precision = float(np.mean(d_pg <= tolerance))
    recall = float(np.mean(d_gp <= tolerance))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def jf_mean(j: float, f: float) -> float:
    return 0.5 * (j + f)


def match_identities(pred_tracks: Sequence[Track], gt_tracks: Sequence[Track],
                     frames: Sequence[int] | None = None) -> dict[int, int]:
    """Pair predicted with ground-truth identities by maximal summed mask IoU.

    Returns ``{gt_id: pred_id}``; only pairs with some overlap are reported.
    """
    preds, gts = list(pred_tracks), list(gt_tracks)
    if frames is None:
        frames = all_frames(gts)
    score = np.zeros((len(gts), len(preds)))
    for gi, g in enumerate(gts):
        for pi, p in enumerate(preds):
            s = 0.0
            for t in frames:
                gm, pm = g.entries.get(t), p.entries.get(t)
                if gm is not None and pm is not None and gm.area and pm.area:
                    s += mask_iou(gm, pm)
            score[gi, pi] = s
    res = hungarian(-score)
    return {gts[i].identity: preds[j].identity for i, j in res.mapping.items() if score[i, j] > 0}


def jf_series(pred_tracks: Sequence[Track], gt_tracks: Sequence[Track],
              frames: Sequence[int] | None = None, tolerance: float | None = None,
              id_map: dict[int, int] | None = None) -> SegScore:
    """Per-frame, per-identity J and F on the annotated frames.

    ``frames`` defaults to every frame that appears in the ground truth.  A
    ground-truth identity without a matching prediction (or a missing
    predicted frame) scores J = F = 0 there.
    """
    if frames is None:
        frames = all_frames(gt_tracks)
    frames = sorted(frames)
    if id_map is None:
        id_map = match_identities(pred_tracks, gt_tracks, frames)
    preds = tracks_by_id(pred_tracks)
    samples: list[tuple[int, int, float, float]] = []
    for g in gt_tracks:
        p = preds.get(id_map.get(g.identity))
        for t in frames:
            gm = g.entries.get(t)
            if gm is None:
                continue
            pm = p.entries.get(t) if p is not None else None
            if pm is None:
                samples.append((g.identity, t, 0.0, 0.0))
            else:
                samples.append((g.identity, t, jaccard(pm, gm), boundary_f(pm, gm, tolerance)))
    if not samples:
        return SegScore(float("nan"), float("nan"), float("nan"), id_map=id_map)

    def means(rows):
        return (float(np.mean([r[2] for r in rows])), float(np.mean([r[3] for r in rows])))

    per_id = {gid: means([s for s in samples if s[0] == gid]) for gid in sorted({s[0] for s in samples})}
    per_frame = {t: means([s for s in samples if s[1] == t]) for t in sorted({s[1] for s in samples})}
    j, f = means(samples)
    return SegScore(j, f, jf_mean(j, f), per_id, per_frame, dict(id_map))


# --------------------------------------------------------------------------
# CLEAR-MOT

def clear_mot_scores(counts: Sequence[FrameMotCounts]) -> tuple[float, float, FrameMotCounts]:
    tot = FrameMotCounts(
        gt=sum(c.gt for c in counts), fn_=sum(c.fn_ for c in counts), fp=sum(c.fp for c in counts),
        idsw=sum(c.idsw for c in counts), matched_iou_sum=sum(c.matched_iou_sum for c in counts),
        matches=sum(c.matches for c in counts))
    mota = 1.0 - (tot.fn_ + tot.fp + tot.idsw) / tot.gt if tot.gt else float("nan")
    motp = tot.matched_iou_sum / tot.matches if tot.matches else 0.0
    return mota, motp, tot


def mot_evaluate(pred_tracks: Sequence[Track], gt_tracks: Sequence[Track],
                 iou_threshold: float = 0.5, frames: Sequence[int] | None = None) -> MotResult:
    """CLEAR-MOT with sticky correspondences.

    Each frame first keeps last frame's gt/prediction pairs that still reach
    the IoU threshold, then matches the rest by optimal assignment.  An
    identity switch is a ground-truth object whose matched prediction differs
    from the one it was last matched to.
    """
    if frames is None:
        frames = all_frames(gt_tracks)
    last: dict[int, int] = {}
    per_frame = []
    for t in sorted(frames):
        gts = {g.identity: g.entries[t] for g in gt_tracks if g.visible(t)}
        preds = {p.identity: p.entries[t] for p in pred_tracks if p.visible(t)}
        matched: dict[int, tuple[int, float]] = {}
        used = set()
        for gid in sorted(gts):
            pid = last.get(gid)
            if pid in preds and pid not in used:
                iou = mask_iou(preds[pid], gts[gid])
                if iou >= iou_threshold:
                    matched[gid] = (pid, iou)
                    used.add(pid)
        rest_g = [g for g in sorted(gts) if g not in matched]
        rest_p = [p for p in sorted(preds) if p not in used]
        iou = np.array([[mask_iou(preds[p], gts[g]) for p in rest_p] for g in rest_g]).reshape(len(rest_g), len(rest_p))
        for gi, pi in gated_matching(iou, iou_threshold):
            matched[rest_g[gi]] = (rest_p[pi], float(iou[gi, pi]))
        idsw = 0
        for gid, (pid, _) in matched.items():
            if gid in last and last[gid] != pid:
                idsw += 1
            last[gid] = pid
        n = len(matched)
        per_frame.append(FrameMotCounts(
            frame=t, gt=len(gts), fn_=len(gts) - n, fp=len(preds) - n, idsw=idsw,
            matched_iou_sum=float(sum(v[1] for v in matched.values())), matches=n))
    mota, motp, totals = clear_mot_scores(per_frame)
    return MotResult(mota, motp, totals, per_frame)


def detection_counts_from_tracks(pred_tracks: Sequence[Track], gt_tracks: Sequence[Track],
                                 iou_threshold: float = 0.5, frames: Sequence[int] | None = None) -> DetectionCounts:
    """Box-level detection counts between visible track masks, pooled over frames."""
    if frames is None:
        frames = all_frames(gt_tracks)
    total = DetectionCounts()
    for t in frames:
        preds = [p.entries[t].bbox for p in pred_tracks if p.visible(t)]
        gts = [g.entries[t].bbox for g in gt_tracks if g.visible(t)]
        total = total + match_detections(preds, gts, iou_threshold)
    return total
