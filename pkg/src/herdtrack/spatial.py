"""Pen-boundary filtering, mask-level NMS and top-k detection selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .masks import BitMask, EmptyMaskError, Point, centroid, intersection_area, mask_iou


@dataclass
class Instance:
    """One detected or segmented object in one frame.

    ``box`` is only consulted when no mask is available; otherwise the box
    is the mask's tight bounding box.
    """

    mask: BitMask | None
    confidence: float = 1.0
    identity: int | None = None
    box: tuple[float, float, float, float] | None = None
    embedding: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        if self.mask is not None and self.mask.area:
            return self.mask.bbox
        if self.box is None:
            raise ValueError("instance has neither a mask nor a box")
        return tuple(self.box)

    @property
    def centroid(self) -> Point:
        if self.mask is not None and self.mask.area:
            return centroid(self.mask)
        x, y, w, h = self.bbox
        return Point(x + (w - 1) / 2.0, y + (h - 1) / 2.0)


def _polygon_is_simple(pts: np.ndarray) -> bool:
    def orient(p, q, r):
        v = float((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
        return (v > 0) - (v < 0)

    def on_seg(p, q, r):
        return min(p[0], r[0]) <= q[0] <= max(p[0], r[0]) and min(p[1], r[1]) <= q[1] <= max(p[1], r[1])

    def crosses(p1, p2, p3, p4):
        o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
        o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
        if o1 != o2 and o3 != o4:
            return True
        return ((o1 == 0 and on_seg(p1, p3, p2)) or (o2 == 0 and on_seg(p1, p4, p2))
                or (o3 == 0 and on_seg(p3, p1, p4)) or (o4 == 0 and on_seg(p3, p2, p4)))

    n = len(pts)
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if crosses(*edges[i], *edges[j]):
                return False
    return True


def rasterize_polygon(polygon, width: int, height: int) -> np.ndarray:
    """Even-odd fill sampled at integer pixel centres."""
    pts = np.asarray(polygon, dtype=float)
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    inside = np.zeros((height, width), dtype=bool)
    n = len(pts)
    for i in range(n):
        (xi, yi), (xj, yj) = pts[i], pts[i - 1]
        if yi == yj:
            continue
        straddles = (yi > ys) != (yj > ys)
        x_cross = (xj - xi) * (ys - yi) / (yj - yi) + xi
        inside ^= straddles & (xs < x_cross)
    return inside


class PenRegion:
    """Enclosure polygon plus its rasterisation at frame resolution."""

    def __init__(self, polygon, frame_size: tuple[int, int], camera_id: str = ""):
        pts = np.asarray(polygon, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ValueError("pen polygon needs at least 3 (x, y) vertices")
        if not np.isfinite(pts).all():
            raise ValueError("pen polygon has non-finite vertices")
        if not _polygon_is_simple(pts):
            raise ValueError("pen polygon is self-intersecting")
        self.polygon = [tuple(map(float, p)) for p in pts]
        self.width, self.height = (int(v) for v in frame_size)
        self.camera_id = camera_id
        self.mask = BitMask.from_array(rasterize_polygon(pts, self.width, self.height))
        if not self.mask.area:
            raise ValueError("pen polygon covers no pixel centres")

    @property
    def frame_size(self) -> tuple[int, int]:
        return (self.width, self.height)

    @classmethod
    def full_frame(cls, width: int, height: int, margin: int = 0) -> "PenRegion":
        m = margin
        return cls([[m, m], [width - m, m], [width - m, height - m], [m, height - m]],
                   (width, height))

    def to_json(self) -> dict:
        return {"camera_id": self.camera_id, "polygon": [list(p) for p in self.polygon],
                "frame_size": [self.width, self.height]}

    @classmethod
    def from_json(cls, obj: dict) -> "PenRegion":
        unknown = set(obj) - {"camera_id", "polygon", "frame_size"}
        if unknown:
            raise ValueError(f"unknown pen config keys: {sorted(unknown)}")
        return cls(obj["polygon"], tuple(obj["frame_size"]), obj.get("camera_id", ""))


def pen_inside_fraction(mask: BitMask, pen: PenRegion) -> float:
    if mask.shape != pen.mask.shape:
        raise ValueError(f"mask {mask.shape} and pen {pen.mask.shape} differ in size")
    if not mask.area:
        raise EmptyMaskError("inside fraction of an empty mask is undefined")
    return intersection_area(mask, pen.mask) / mask.area


def pen_filter(instances: list[Instance], pen: PenRegion, min_fraction: float = 0.40) -> list[Instance]:
    return [inst for inst in instances
            if inst.mask is not None and inst.mask.area
            and pen_inside_fraction(inst.mask, pen) >= min_fraction]


def clip_mask_to_pen(mask: BitMask, pen: PenRegion) -> BitMask:
    return mask & pen.mask


def overlap_ratio(a: BitMask, b: BitMask, mode: str = "iou") -> float:
    """Pairwise overlap used by NMS: ``"iou"`` or ``"min"`` (intersection over the smaller mask)."""
    if mode == "iou":
        return mask_iou(a, b)
    if mode == "min":
        smaller = min(a.area, b.area)
        return intersection_area(a, b) / smaller if smaller else 0.0
    raise ValueError(f"unknown overlap mode {mode!r}")


def _confidence_order(instances: list[Instance]) -> list[int]:
    # stable sort keeps earlier list position first among equal confidences
    return sorted(range(len(instances)), key=lambda i: -instances[i].confidence)


def mask_nms(instances: list[Instance], overlap_threshold: float = 0.08,
             mode: str = "iou") -> list[Instance]:
    """Greedy mask suppression, highest confidence first.

    An instance is dropped when its overlap with an already kept one is
    strictly greater than ``overlap_threshold``.  Survivors come back in
    confidence-descending order.
    """
    kept: list[Instance] = []
    for i in _confidence_order(instances):
        cand = instances[i]
        if all(overlap_ratio(cand.mask, k.mask, mode) <= overlap_threshold for k in kept):
            kept.append(cand)
    return kept


def select_top_k(detections: list[Instance], expected: int = 10, trigger: int = 15) -> list[Instance]:
    if len(detections) <= trigger:
        return list(detections)
    keep = sorted(_confidence_order(detections)[:expected])
    return [detections[i] for i in keep]
