from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..masks import BitMask
from ..spatial import Instance


class InitializationError(RuntimeError):
    """No clean anchor could be found for a clip by any initialization path."""


@dataclass
class FrameRecord:
    index: int
    image: np.ndarray | None = None
    foreground: BitMask | None = None
    detections: list[Instance] = field(default_factory=list)
    image_path: str | None = None

    def get_image(self) -> np.ndarray | None:
        if self.image is None and self.image_path is not None:
            from PIL import Image

            with Image.open(self.image_path) as im:
                self.image = np.asarray(im.convert("L"))
        return self.image


@dataclass
class Clip:
    index: int
    width: int
    height: int
    frames: list[FrameRecord]

    def __post_init__(self):
        idx = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"clip {self.index}: frame indices must be strictly increasing")
        for f in self.frames:
            if f.foreground is not None and f.foreground.shape != (self.height, self.width):
                raise ValueError(f"clip {self.index}: frame {f.index} has mismatched dimensions")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_indices(self) -> list[int]:
        return [f.index for f in self.frames]

    def position(self, frame_index: int) -> int:
        for pos, f in enumerate(self.frames):
            if f.index == frame_index:
                return pos
        raise KeyError(f"frame {frame_index} not in clip {self.index}")


@dataclass
class Anchor:
    position: int  # offset within the clip
    frame: int  # global frame index
    instances: list[Instance]


@dataclass(frozen=True)
class PipelineConfig:
    scan_stride: int = 10
    expected_count: int = 10
    anchor_window: int = 10
    detection_threshold: float = 0.24
    qc_overlap_threshold: float = 0.08
    qc_min_area: int = 25
    qc_teleport_dist: float = 200.0
    visibility_window: int = 600
    pen_min_fraction: float = 0.40
    nms_overlap: float = 0.08
    nms_mode: str = "iou"
    top_k_trigger: int = 15

    def __post_init__(self):
        for name in ("scan_stride", "expected_count", "anchor_window", "detection_threshold",
                     "qc_overlap_threshold", "qc_min_area", "qc_teleport_dist", "visibility_window",
                     "pen_min_fraction", "nms_overlap", "top_k_trigger"):
            if getattr(self, name) <= 0:
                raise ValueError(f"pipeline setting {name} must be positive")
        if self.nms_mode not in ("iou", "min"):
            raise ValueError(f"unknown nms_mode {self.nms_mode!r}")


@dataclass
class QcFlag:
    frame: int
    reason: str  # "overlap" | "near_zero_area" | "teleport"
    identities: tuple[int, ...]
    value: float

    def __post_init__(self):
        if not self.identities:
            raise ValueError("a QC flag must cite at least one identity")

    def to_json(self) -> dict:
        return {"frame": self.frame, "reason": self.reason,
                "identities": list(self.identities), "value": round(float(self.value), 6)}

