"""Long-run orchestration across consecutive clips."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from ..masks import BitMask
from ..refine import RefineConfig
from ..reid import Embedder, ReferenceEmbedder, ReidConfig, embed_instances, reidentify
from ..spatial import Instance, PenRegion
from ..tracks import Track
from .matcher import clean_detections, find_reference_frame, is_clean_anchor, match_clips, reading_order
from .qc import post_qc
from .tracker import Detector, Propagator, track_clip
from .types import Anchor, Clip, InitializationError, PipelineConfig, QcFlag

log = logging.getLogger(__name__)


@dataclass
class ClipReport:
    clip: int
    status: str  # "tracked" | "excluded"
    path: str | None = None
    expected: int = 0
    excluded_ids: list[int] = field(default_factory=list)
    anchor_frame: int | None = None
    fresh_ids: list[int] = field(default_factory=list)
    missing_ids: list[int] = field(default_factory=list)
    retracked_spans: list[tuple[int, int]] = field(default_factory=list)
    failed_frames: list[int] = field(default_factory=list)
    message: str = ""

    def to_json(self) -> dict:
        return {"clip": self.clip, "status": self.status, "path": self.path, "expected": self.expected,
                "excluded_ids": self.excluded_ids, "anchor_frame": self.anchor_frame,
                "fresh_ids": self.fresh_ids, "missing_ids": self.missing_ids,
                "retracked_spans": [list(s) for s in self.retracked_spans],
                "failed_frames": self.failed_frames, "message": self.message}


@dataclass
class LongTermResult:
    tracks: list[Track]
    qc: list[QcFlag]
    excluded_spans: list[tuple[int, int]]
    clips: list[ClipReport]


def _nearest_clean_anchor(clip: Clip, span: tuple[int, int], detector: Detector, pen: PenRegion,
                          cfg: PipelineConfig, expected: int, flagged: set[int]) -> Anchor | None:
    s, e = clip.position(span[0]), clip.position(span[1])
    order = []
    for dist in range(1, len(clip)):
        for pos in (e + dist, s - dist):
            if 0 <= pos < len(clip) and clip.frames[pos].index not in flagged:
                order.append(pos)
    for pos in order:
        frame = clip.frames[pos]
        dets = clean_detections(frame, detector, pen, cfg, expected)
        if is_clean_anchor(dets, pen, cfg, expected):
            return Anchor(pos, frame.index, reading_order(dets))
    return None


def _instances_at(tracks: dict[int, Track], frame: int) -> list[Instance]:
    return [Instance(t.entries[frame], 1.0, k) for k, t in sorted(tracks.items()) if t.visible(frame)]


class LongTermTracker:
    """Stateful driver; :func:`run_long_term` is the one-call entry point."""

    def __init__(self, detector: Detector, propagator: Propagator, pen: PenRegion,
                 cfg: PipelineConfig = PipelineConfig(), refine_cfg: RefineConfig = RefineConfig(),
                 reid_cfg: ReidConfig = ReidConfig(), embedder: Embedder | None = None):
        self.detector = detector
        self.propagator = propagator
        self.pen = pen
        self.cfg = cfg
        self.refine_cfg = refine_cfg
        self.reid_cfg = reid_cfg
        self.embedder = embedder or ReferenceEmbedder()
        self.tracks: dict[int, Track] = {}
        self.roster: list[int] = []
        self.memory: dict[int, Instance] = {}
        self.qc: list[QcFlag] = []
        self.excluded_spans: list[tuple[int, int]] = []
        self.reports: list[ClipReport] = []
        self._prev: tuple[Clip, dict[int, Track]] | None = None

    def _initialize(self, clip: Clip, report: ClipReport) -> Anchor:
        if not self.roster:
            anchor = find_reference_frame(clip, self.detector, self.pen, self.cfg)
            if anchor is None:
                raise InitializationError(f"clip {clip.index}: no clean reference frame")
            anchor.instances = [Instance(d.mask, d.confidence, k) for k, d in enumerate(anchor.instances)]
            self.roster = list(range(len(anchor.instances)))
            report.path, report.expected = "initializer", len(anchor.instances)
            return anchor
        prev_clip, prev_tracks = self._prev
        init = match_clips(list(prev_tracks.values()), clip, self.detector, self.propagator,
                           self.reid_cfg, self.cfg, pen=self.pen, prev_clip=prev_clip,
                           roster=self.roster, memory=self.memory,
                           history=list(self.tracks.values()), embedder=self.embedder)
        report.path, report.expected, report.excluded_ids = init.path, init.expected, init.excluded
        if init.assignment is not None:
            report.fresh_ids = [init.assignment.mapping[i] for i in init.assignment.fresh]
            report.missing_ids = init.assignment.missing
            self.roster.extend(i for i in report.fresh_ids if i not in self.roster)
        return init.anchor

    def _retrack(self, clip: Clip, clip_tracks: dict[int, Track], report: ClipReport) -> dict[int, Track]:
        flags, spans = post_qc(list(clip_tracks.values()), self.cfg, clip.frame_indices)
        self.qc.extend(flags)
        if not spans:
            return clip_tracks
        flagged = {f.frame for f in flags}
        expected = len(clip_tracks)
        for span in spans:
            fixed = self._retrack_span(clip, clip_tracks, span, flagged, expected)
            if fixed is not None:
                _, recheck = post_qc(list(fixed.values()), self.cfg, clip.frame_indices)
                if not any(a <= span[1] and b >= span[0] for a, b in recheck):
                    clip_tracks = fixed
                    report.retracked_spans.append(span)
                    continue
            log.info("clip %d: excluding frames %d-%d after failed re-tracking", clip.index, *span)
            self.excluded_spans.append(span)
            for t in clip_tracks.values():
                for f in t.frames():
                    if span[0] <= f <= span[1]:
                        t.entries[f] = BitMask.empty(clip.height, clip.width)
        return clip_tracks

    def _retrack_span(self, clip, clip_tracks, span, flagged, expected):
        anchor = _nearest_clean_anchor(clip, span, self.detector, self.pen, self.cfg, expected, flagged)
        if anchor is None:
            return None
        # align the new anchor with the current identities at the nearest unflagged frame
        candidates = sorted((f for f in clip.frame_indices if f not in flagged),
                            key=lambda f: (abs(f - anchor.frame), f))
        ref = next((f for f in candidates if len(_instances_at(clip_tracks, f)) == expected), None)
        if ref is None:
            return None
        old = embed_instances(_instances_at(clip_tracks, ref),
                              clip.frames[clip.position(ref)].get_image(), self.reid_cfg, self.embedder)
        labelled, result = reidentify(anchor.instances, old,
                                      (clip.frames[anchor.position].get_image(), None),
                                      self.reid_cfg, self.embedder)
        if result.fresh:
            return None
        redo = track_clip(clip, Anchor(anchor.position, anchor.frame, labelled), self.propagator,
                          self.pen, self.refine_cfg).tracks
        start = min(span[0], anchor.frame)
        out = {}
        for k, t in clip_tracks.items():
            entries = dict(t.entries)
            new = next((r for r in redo if r.identity == k), None)
            if new is not None:
                entries.update({f: m for f, m in new.entries.items() if f >= start})
            out[k] = Track(k, entries, t.refine_state)
        return out

    def _remember(self, clip: Clip, clip_tracks: dict[int, Track]) -> None:
        for k, t in clip_tracks.items():
            vis = t.visible_frames()
            if not vis:
                continue
            f = vis[-1]
            image = clip.frames[clip.position(f)].get_image()
            self.memory[k] = embed_instances([Instance(t.entries[f], 1.0, k)], image,
                                             self.reid_cfg, self.embedder)[0]

    def process(self, clip: Clip) -> ClipReport:
        report = ClipReport(clip.index, "tracked")
        try:
            anchor = self._initialize(clip, report)
        except InitializationError as exc:
            log.warning("%s; clip excluded", exc)
            report.status, report.message = "excluded", str(exc)
            if clip.frames:
                self.excluded_spans.append((clip.frames[0].index, clip.frames[-1].index))
            for k in self.roster:
                t = self.tracks.setdefault(k, Track(k))
                for f in clip.frame_indices:
                    t.entries[f] = BitMask.empty(clip.height, clip.width)
            self.reports.append(report)
            return report

        report.anchor_frame = anchor.frame
        result = track_clip(clip, anchor, self.propagator, self.pen, self.refine_cfg)
        report.failed_frames = result.failed_frames
        clip_tracks = {t.identity: t for t in result.tracks}
        for k in self.roster:
            if k not in clip_tracks:
                clip_tracks[k] = Track(k, {f: BitMask.empty(clip.height, clip.width)
                                           for f in clip.frame_indices})
        clip_tracks = self._retrack(clip, clip_tracks, report)

        for k, t in clip_tracks.items():
            g = self.tracks.setdefault(k, Track(k))
            g.entries.update(t.entries)
            g.refine_state = t.refine_state
        self._remember(clip, clip_tracks)
        self._prev = (clip, clip_tracks)
        self.reports.append(report)
        return report

    def result(self) -> LongTermResult:
        tracks = [Track(k, dict(sorted(t.entries.items())), t.refine_state)
                  for k, t in sorted(self.tracks.items())]
        qc = sorted(self.qc, key=lambda f: (f.frame, f.reason, f.identities))
        return LongTermResult(tracks, qc, sorted(self.excluded_spans), list(self.reports))


def run_long_term(clips: Sequence[Clip], detector: Detector, propagator: Propagator, pen: PenRegion,
                  cfg: PipelineConfig = PipelineConfig(), refine_cfg: RefineConfig = RefineConfig(),
                  reid_cfg: ReidConfig = ReidConfig(), embedder: Embedder | None = None) -> LongTermResult:
    """Track every clip in order and chain identities across clip boundaries.

    Clip 0 is initialised from a clean reference frame, later clips through
    :func:`match_clips`.  Each clip is quality-checked; every flagged span is
    re-tracked once from the nearest clean anchor and excluded if it stays
    flagged.  A clip with no usable initialization is logged and skipped.
    """
    driver = LongTermTracker(detector, propagator, pen, cfg, refine_cfg, reid_cfg, embedder)
    for clip in clips:
        driver.process(clip)
    return driver.result()
