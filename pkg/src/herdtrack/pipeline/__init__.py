"""Long-term tracking: anchors, propagation, cross-clip matching, QC and the run driver."""

from .driver import ClipReport, LongTermResult, LongTermTracker, run_long_term
from .matcher import ClipInit, adaptive_count, find_reference_frame, match_clips
from .qc import coalesce, post_qc
from .tracker import (Detector, Propagator, ReferenceDetector, ReferencePropagator,
                      bidirectional_track, propagate, track_clip)
from .types import Anchor, Clip, FrameRecord, InitializationError, PipelineConfig, QcFlag

__all__ = [
    "Anchor", "Clip", "ClipInit", "ClipReport", "Detector", "FrameRecord", "InitializationError",
    "LongTermResult", "LongTermTracker", "PipelineConfig", "Propagator", "QcFlag",
    "ReferenceDetector", "ReferencePropagator", "adaptive_count", "bidirectional_track",
    "coalesce", "find_reference_frame", "match_clips", "post_qc", "propagate", "run_long_term",
    "track_clip",
]
