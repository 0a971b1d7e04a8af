"""Frame-to-frame mask propagation inside one clip."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

from ..masks import BitMask, connected_components, intersection_area, union_all
from ..refine import RefineConfig, RefineState, refine_mask
from ..spatial import Instance, PenRegion
from ..tracks import Track
from .types import Anchor, Clip, FrameRecord

log = logging.getLogger(__name__)


class Detector(Protocol):
    def __call__(self, frame: FrameRecord) -> list[Instance]: ...


class Propagator(Protocol):
    def __call__(self, prev_masks: dict[int, BitMask], frame: FrameRecord) -> dict[int, BitMask]: ...


class ReferenceDetector:
    """Replays the detections stored with each frame, dropping those under ``threshold``."""

    def __init__(self, threshold: float = 0.24):
        self.threshold = threshold

    def __call__(self, frame: FrameRecord) -> list[Instance]:
        return [d for d in frame.detections if d.confidence >= self.threshold]


def frame_foreground(frame: FrameRecord, height: int, width: int) -> BitMask:
    if frame.foreground is not None:
        return frame.foreground
    return union_all((d.mask for d in frame.detections if d.mask is not None), height, width)


class ReferencePropagator:
    """Greedy IoU propagation over the connected components of the foreground.

    Identities are served largest previous mask first; each takes the
    still-unclaimed component with the highest IoU against its previous mask
    (IoU must be positive), so a component goes to at most one identity.
    """

    def __init__(self, connectivity: int = 8):
        self.connectivity = connectivity

    def __call__(self, prev_masks: dict[int, BitMask], frame: FrameRecord) -> dict[int, BitMask]:
        if not prev_masks:
            return {}
        h, w = next(iter(prev_masks.values())).shape
        comps = [b.mask for b in connected_components(frame_foreground(frame, h, w), self.connectivity)]
        claimed = [False] * len(comps)
        out = {}
        order = sorted(prev_masks, key=lambda k: (-prev_masks[k].area, k))
        for ident in order:
            prev = prev_masks[ident]
            best, best_iou = None, 0.0
            if prev.area:
                for ci, comp in enumerate(comps):
                    if claimed[ci]:
                        continue
                    inter = intersection_area(prev, comp)
                    if not inter:
                        continue
                    iou = inter / (prev.area + comp.area - inter)
                    if iou > best_iou:
                        best, best_iou = ci, iou
            if best is None:
                out[ident] = BitMask.empty(h, w)
            else:
                claimed[best] = True
                out[ident] = comps[best]
        return out


@dataclass
class Refiner:
    pen: PenRegion
    cfg: RefineConfig = field(default_factory=RefineConfig)


@dataclass
class PropagationResult:
    masks: dict[int, dict[int, BitMask]]  # identity -> global frame -> mask
    failed_frames: list[int] = field(default_factory=list)
    states: dict[int, RefineState] = field(default_factory=dict)


def propagate(anchor_instances: list[Instance], clip: Clip, anchor_pos: int, direction: str,
              propagator: Propagator, refiner: Refiner | None = None,
              states: dict[int, RefineState] | None = None) -> PropagationResult:
    """Carry the anchor masks through the clip in one direction.

    The anchor frame itself is included with the anchor masks.  Each
    propagator call sees the last non-empty mask of every identity, so an
    identity that vanished can be picked up again once it overlaps its last
    known position.  With a ``refiner`` every emitted mask goes through
    :func:`refine_mask` with per-identity state before it is stored.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', not {direction!r}")
    if not 0 <= anchor_pos < len(clip):
        raise ValueError(f"anchor position {anchor_pos} outside clip of {len(clip)} frames")
    if any(inst.identity is None for inst in anchor_instances):
        raise ValueError("anchor instances need identities")
    states = dict(states or {})
    anchor_frame = clip.frames[anchor_pos].index
    memory = {inst.identity: inst.mask for inst in anchor_instances}
    result = PropagationResult({k: {anchor_frame: m} for k, m in memory.items()})
    memory = {k: m for k, m in memory.items() if m.area}

    step = 1 if direction == "forward" else -1
    pos = anchor_pos + step
    while 0 <= pos < len(clip):
        frame = clip.frames[pos]
        h, w = clip.height, clip.width
        try:
            emitted = propagator(dict(memory), frame)
        except Exception as exc:  # a backend failure costs one frame, never the clip
            log.warning("propagation failed on frame %d: %s", frame.index, exc)
            result.failed_frames.append(frame.index)
            emitted = {}
        for ident in result.masks:
            mask = emitted.get(ident, BitMask.empty(h, w))
            if refiner is not None:
                mask, states[ident] = refine_mask(mask, refiner.pen, states.get(ident, RefineState()), refiner.cfg)
            result.masks[ident][frame.index] = mask
            if mask.area:
                memory[ident] = mask
        pos += step
    result.states = states
    return result


@dataclass
class TrackingResult:
    tracks: list[Track]
    failed_frames: list[int]


def track_clip(clip: Clip, anchor: Anchor, propagator: Propagator,
               pen: PenRegion | None = None, refine_cfg: RefineConfig | None = None) -> TrackingResult:
    refiner = Refiner(pen, refine_cfg or RefineConfig()) if pen is not None else None
    seeds, states = [], {}
    for inst in anchor.instances:
        mask = inst.mask
        if refiner is not None:
            mask, states[inst.identity] = refine_mask(mask, pen, RefineState(), refiner.cfg)
        seeds.append(Instance(mask, inst.confidence, inst.identity))

    fwd = propagate(seeds, clip, anchor.position, "forward", propagator, refiner, states)
    entries = {k: dict(v) for k, v in fwd.masks.items()}
    failed = list(fwd.failed_frames)
    if anchor.position > 0:
        bwd = propagate(seeds, clip, anchor.position, "backward", propagator, refiner, states)
        for k, v in bwd.masks.items():
            for f, m in v.items():
                entries[k].setdefault(f, m)
        failed.extend(bwd.failed_frames)
    tracks = [Track(k, dict(sorted(entries[k].items())),
                    refine_state=fwd.states.get(k)) for k in sorted(entries)]
    return TrackingResult(tracks, sorted(failed))


def bidirectional_track(clip: Clip, anchor: Anchor, propagator: Propagator,
                        pen: PenRegion | None = None, refine_cfg: RefineConfig | None = None) -> list[Track]:
    """Forward from the anchor to the clip end and backward to its start, merged.

    An anchor at position 0 reduces to forward-only propagation.
    """
    return track_clip(clip, anchor, propagator, pen, refine_cfg).tracks
