"""Clip initialization: anchor search, cross-clip matching and adaptive head count."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from ..assignment import AssignmentResult
from ..masks import mask_iou
from ..reid import Embedder, ReferenceEmbedder, ReidConfig, embed_instances, reidentify
from ..spatial import Instance, PenRegion, mask_nms, pen_filter, pen_inside_fraction, select_top_k
from ..tracks import Track, all_frames
from .tracker import Detector, Propagator
from .types import Anchor, Clip, FrameRecord, InitializationError, PipelineConfig

log = logging.getLogger(__name__)


def clean_detections(frame: FrameRecord, detector: Detector, pen: PenRegion,
                     cfg: PipelineConfig, expected: int) -> list[Instance]:
    dets = [d for d in detector(frame) if d.mask is not None and d.mask.area]
    dets = select_top_k(dets, expected, cfg.top_k_trigger)
    dets = pen_filter(dets, pen, cfg.pen_min_fraction)
    return mask_nms(dets, cfg.nms_overlap, cfg.nms_mode)


def _pairwise_clean(masks: Sequence, threshold: float) -> bool:
    return all(mask_iou(masks[i], masks[j]) <= threshold
               for i in range(len(masks)) for j in range(i + 1, len(masks)))


def is_clean_anchor(instances: Sequence[Instance], pen: PenRegion, cfg: PipelineConfig, expected: int) -> bool:
    if len(instances) != expected:
        return False
    if any(pen_inside_fraction(d.mask, pen) < 1.0 for d in instances):
        return False
    return _pairwise_clean([d.mask for d in instances], cfg.qc_overlap_threshold)


def reading_order(instances: Sequence[Instance]) -> list[Instance]:
    return sorted(instances, key=lambda d: (d.bbox[1], d.bbox[0], -d.confidence))


def find_reference_frame(clip: Clip, detector: Detector, pen: PenRegion,
                         cfg: PipelineConfig = PipelineConfig(), expected: int | None = None,
                         positions: Sequence[int] | None = None) -> Anchor | None:
    """First scanned frame holding exactly ``expected`` clean detections.

    Frames ``0, stride, 2*stride, ...`` are scanned unless ``positions`` says
    otherwise.  Detections pass top-k selection, the pen filter and mask NMS;
    the survivors must all lie fully inside the pen and not overlap.
    """
    if not len(clip):
        raise ValueError("cannot search an empty clip")
    expected = cfg.expected_count if expected is None else expected
    if positions is None:
        positions = range(0, len(clip), cfg.scan_stride)
    for pos in positions:
        frame = clip.frames[pos]
        dets = clean_detections(frame, detector, pen, cfg, expected)
        if is_clean_anchor(dets, pen, cfg, expected):
            return Anchor(pos, frame.index, reading_order(dets))
    return None


def adaptive_count(prev: Sequence[Track], window: int) -> tuple[int, list[int]]:
    """Drop identities that stayed invisible over the trailing ``window`` frames."""
    frames = all_frames(prev)[-window:] if window > 0 else []
    excluded = sorted(t.identity for t in prev if not any(t.visible(f) for f in frames))
    return len(prev) - len(excluded), excluded


@dataclass
class ClipInit:
    anchor: Anchor
    path: str  # "transfer" | "detect" | "adaptive-transfer" | "adaptive-detect"
    expected: int
    excluded: list[int] = field(default_factory=list)
    assignment: AssignmentResult | None = None
    source_frame: int | None = None


def _clean_prev_frame(prev: dict[int, Track], ids: Sequence[int], frame: int, cfg: PipelineConfig):
    masks = []
    for ident in ids:
        tr = prev.get(ident)
        m = tr.entries.get(frame) if tr is not None else None
        if m is None or m.area < cfg.qc_min_area:
            return None
        masks.append(m)
    return masks if _pairwise_clean(masks, cfg.qc_overlap_threshold) else None


def _try_transfer(prev: dict[int, Track], prev_frames: list[int], next_clip: Clip,
                  propagator: Propagator, ids: Sequence[int], cfg: PipelineConfig):
    for f in reversed(prev_frames[-cfg.anchor_window:]):
        masks = _clean_prev_frame(prev, ids, f, cfg)
        if masks is None:
            continue
        try:
            moved = propagator(dict(zip(ids, masks)), next_clip.frames[0])
        except Exception as exc:
            log.warning("transfer from frame %d failed: %s", f, exc)
            continue
        if all(moved.get(i) is not None and moved[i].area for i in ids):
            insts = [Instance(moved[i], 1.0, i) for i in ids]
            return Anchor(0, next_clip.frames[0].index, insts), f
    return None


def _best_prev_frame(prev: dict[int, Track], ids: Sequence[int], prev_frames: list[int],
                     cfg: PipelineConfig) -> tuple[int | None, list[int]]:
    best, best_key, best_ids = None, None, []
    for f in prev_frames:
        vis = [i for i in ids if i in prev and prev[i].entries.get(f) is not None
               and prev[i].entries[f].area >= cfg.qc_min_area]
        clean = _pairwise_clean([prev[i].entries[f] for i in vis], cfg.qc_overlap_threshold)
        key = (len(vis), clean, f)
        if best_key is None or key > best_key:
            best, best_key, best_ids = f, key, vis
    return best, best_ids


def _try_detect(prev: dict[int, Track], prev_clip: Clip | None, next_clip: Clip, detector: Detector,
                pen: PenRegion, ids: Sequence[int], reid_cfg: ReidConfig, cfg: PipelineConfig,
                memory: dict[int, Instance], embedder: Embedder, next_identity: int):
    anchor = find_reference_frame(next_clip, detector, pen, cfg, expected=len(ids))
    if anchor is None:
        return None
    prev_frames = prev_clip.frame_indices if prev_clip is not None else all_frames(prev.values())
    ref, vis = _best_prev_frame(prev, ids, prev_frames, cfg)
    old = []
    if ref is not None and vis:
        image = None
        if prev_clip is not None:
            image = prev_clip.frames[prev_clip.position(ref)].get_image()
        old = embed_instances([Instance(prev[i].entries[ref], 1.0, i) for i in vis], image, reid_cfg, embedder)
    for i in ids:
        if i not in vis and i in memory:
            old.append(memory[i])
    if not old:
        return None
    image = next_clip.frames[anchor.position].get_image()
    labelled, result = reidentify(anchor.instances, old, (image, None), reid_cfg, embedder,
                                  next_identity=next_identity)
    return Anchor(anchor.position, anchor.frame, labelled), result, ref


def match_clips(prev: Sequence[Track], next_clip: Clip, detector: Detector, propagator: Propagator,
                reid_cfg: ReidConfig = ReidConfig(), cfg: PipelineConfig = PipelineConfig(), *,
                pen: PenRegion, prev_clip: Clip | None = None, roster: Sequence[int] | None = None,
                memory: dict[int, Instance] | None = None, history: Sequence[Track] | None = None,
                embedder: Embedder | None = None) -> ClipInit:
    """Initialise ``next_clip`` so its identities continue those of ``prev``.

    Tried in order: (a) transfer masks from a clean frame among the last
    ``anchor_window`` frames of the previous clip; (b) find a clean frame of
    the full head count in the new clip and restore identities with
    re-identification; (c) shrink the expected count by dropping identities
    that were invisible for ``visibility_window`` frames, then retry (a) and
    (b) with the reduced set.  ``memory`` holds the last seen, embedded
    appearance of each identity and backs up the gallery in (b).

    Raises :class:`InitializationError` when every path fails.
    """
    prev_by_id = {t.identity: t for t in prev}
    if not prev_by_id:
        raise ValueError("match_clips needs previous tracks")
    roster = sorted(roster if roster is not None else prev_by_id)
    memory = memory or {}
    embedder = embedder or ReferenceEmbedder()
    prev_frames = prev_clip.frame_indices if prev_clip is not None else all_frames(prev)
    next_identity = max(roster) + 1

    def attempt(ids, tag):
        got = _try_transfer(prev_by_id, prev_frames, next_clip, propagator, ids, cfg)
        if got is not None:
            anchor, src = got
            return ClipInit(anchor, f"{tag}transfer", len(ids), source_frame=src)
        got = _try_detect(prev_by_id, prev_clip, next_clip, detector, pen, ids, reid_cfg, cfg,
                          memory, embedder, next_identity)
        if got is not None:
            anchor, result, ref = got
            return ClipInit(anchor, f"{tag}detect", len(ids), assignment=result, source_frame=ref)
        return None

    init = attempt(roster, "")
    if init is not None:
        return init
    _, excluded = adaptive_count(history if history is not None else prev, cfg.visibility_window)
    excluded = [i for i in excluded if i in roster]
    active = [i for i in roster if i not in excluded]
    if excluded and active:
        log.info("clip %d: expected count reduced to %d, excluding %s", next_clip.index, len(active), excluded)
        init = attempt(active, "adaptive-")
        if init is not None:
            init.excluded = excluded
            return init
    raise InitializationError(f"clip {next_clip.index}: no initialization found")
