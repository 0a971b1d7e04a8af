"""Automated quality control over finished tracks."""

from __future__ import annotations

import math
from typing import Sequence

from ..masks import centroid, mask_iou
from ..tracks import Track, all_frames
from .types import PipelineConfig, QcFlag


def coalesce(frames: Sequence[int], timeline: Sequence[int]) -> list[tuple[int, int]]:
    """Group flagged frames into ``(first, last)`` runs that are consecutive on ``timeline``."""
    flagged = set(frames)
    spans, start, prev = [], None, None
    for f in timeline:
        if f in flagged:
            if start is None:
                start = f
            prev = f
        elif start is not None:
            spans.append((start, prev))
            start = None
    if start is not None:
        spans.append((start, prev))
    return spans


def post_qc(tracks: Sequence[Track], cfg: PipelineConfig = PipelineConfig(),
            frames: Sequence[int] | None = None) -> tuple[list[QcFlag], list[tuple[int, int]]]:
    """Flag overlapping, near-empty and teleporting masks.

    Returns the flags sorted by frame plus the flagged frames coalesced into
    inclusive spans.
    """
    timeline = sorted(frames) if frames is not None else all_frames(tracks)
    ordered = sorted(tracks, key=lambda t: t.identity)
    flags: list[QcFlag] = []
    last_seen = {}
    for t in timeline:
        visible = [(tr.identity, tr.entries[t]) for tr in ordered if tr.visible(t)]
        for i in range(len(visible)):
            for j in range(i + 1, len(visible)):
                iou = mask_iou(visible[i][1], visible[j][1])
                if iou > cfg.qc_overlap_threshold:
                    flags.append(QcFlag(t, "overlap", (visible[i][0], visible[j][0]), iou))
        for ident, mask in visible:
            if mask.area < cfg.qc_min_area:
                flags.append(QcFlag(t, "near_zero_area", (ident,), mask.area))
            c = centroid(mask)
            if ident in last_seen:
                px, py = last_seen[ident]
                jump = math.hypot(c.x - px, c.y - py)
                if jump > cfg.qc_teleport_dist:
                    flags.append(QcFlag(t, "teleport", (ident,), jump))
            last_seen[ident] = (c.x, c.y)
    spans = coalesce([f.frame for f in flags], timeline)
    return flags, spans
