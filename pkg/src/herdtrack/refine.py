"""Rule-based per-frame mask refinement.

Each tracked mask is clipped to the pen, split into blobs, and only the blobs
that plausibly belong to the animal are kept: the main blob (nearest to the
previous centroid, or the largest when there is no history) plus any blob
that is big enough, close enough to the main blob and close enough to where
the animal was last seen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .masks import BitMask, Point, centroid, connected_components, contour_distance, union_all
from .spatial import PenRegion, clip_mask_to_pen


@dataclass(frozen=True)
class RefineConfig:
    min_area_ratio: float = 0.30
    max_distance_ratios: tuple[float, float] = (0.5, 1.5)
    max_prev_dist: float = 200.0
    large_blob_cutoff: float = 1000.0
    # "centroid": blob centroid to previous centroid; "contour": nearest blob boundary pixel
    prev_distance_mode: str = "centroid"
    connectivity: int = 8

    def __post_init__(self):
        small, large = self.max_distance_ratios
        if min(self.min_area_ratio, small, large, self.max_prev_dist, self.large_blob_cutoff) <= 0:
            raise ValueError("refinement parameters must be positive")
        if small > large:
            raise ValueError("max_distance_ratios must be ordered (small, large)")
        if self.prev_distance_mode not in ("centroid", "contour"):
            raise ValueError(f"unknown prev_distance_mode {self.prev_distance_mode!r}")
        object.__setattr__(self, "max_distance_ratios", (float(small), float(large)))


@dataclass(frozen=True)
class RefineState:
    prev_centroid: Point | None = None
    is_first_frame: bool = True


def _prev_distance(blob, prev: Point, mode: str) -> float:
    if mode == "centroid":
        c = blob.centroid
        return math.hypot(c.x - prev.x, c.y - prev.y)
    pts = blob.contour
    return float(np.min(np.hypot(pts[:, 0] - prev.x, pts[:, 1] - prev.y)))


def refine_mask(mask: BitMask, pen: PenRegion, state: RefineState,
                cfg: RefineConfig = RefineConfig()) -> tuple[BitMask, RefineState]:
    if mask.shape != pen.mask.shape:
        raise ValueError(f"mask {mask.shape} and pen {pen.mask.shape} differ in size")
    blobs = connected_components(clip_mask_to_pen(mask, pen), cfg.connectivity)
    prev = state.prev_centroid

    kept = []
    if blobs:
        if prev is not None:
            main = min(blobs, key=lambda b: math.hypot(b.centroid.x - prev.x, b.centroid.y - prev.y))
        else:
            main = blobs[0]
        a_main = main.area
        radius = math.sqrt(a_main / math.pi)
        a_min = cfg.min_area_ratio * a_main
        small, large = cfg.max_distance_ratios
        d_max = (small if a_main >= cfg.large_blob_cutoff else large) * radius

        for blob in blobs:
            if blob is main:
                kept.append(blob)
                continue
            if blob.area < a_min:
                continue
            if contour_distance(blob, main) > d_max:
                continue
            # with no history the previous-centroid bound cannot be evaluated
            if prev is not None and _prev_distance(blob, prev, cfg.prev_distance_mode) > cfg.max_prev_dist:
                continue
            kept.append(blob)

    if kept:
        cleaned = union_all((b.mask for b in kept), mask.height, mask.width)
    elif state.is_first_frame:
        cleaned = mask
    else:
        cleaned = BitMask.empty(mask.height, mask.width)

    new_state = replace(state, is_first_frame=False)
    if cleaned.area:
        new_state = replace(new_state, prev_centroid=centroid(cleaned))
    return cleaned, new_state
