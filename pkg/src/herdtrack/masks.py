"""Binary instance masks and the geometric primitives built on them.

A :class:`BitMask` stores only the tight bounding-box crop of its pixels plus
the frame size, so thousands of per-frame masks stay cheap to hold in memory.
Pixel coordinates are integers with ``x`` along columns and ``y`` along rows.
"""

from __future__ import annotations

from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree


class MalformedRLEError(ValueError):
    pass


class EmptyMaskError(ValueError):
    pass


class Point(NamedTuple):
    x: float
    y: float


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


class BitMask:
    """Binary raster of one instance inside a ``height`` x ``width`` frame."""

    __slots__ = ("height", "width", "y0", "x0", "data", "area")

    def __init__(self, height: int, width: int, y0: int = 0, x0: int = 0, data=None):
        if height <= 0 or width <= 0:
            raise ValueError(f"mask dimensions must be positive, got {height}x{width}")
        self.height = int(height)
        self.width = int(width)
        if data is None or data.size == 0 or not data.any():
            self.y0 = self.x0 = 0
            self.data = np.zeros((0, 0), dtype=bool)
            self.area = 0
            return
        data = np.asarray(data, dtype=bool)
        rows = np.flatnonzero(data.any(axis=1))
        cols = np.flatnonzero(data.any(axis=0))
        r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
        y0, x0 = int(y0) + int(r0), int(x0) + int(c0)
        if y0 < 0 or x0 < 0 or y0 + (r1 - r0) > height or x0 + (c1 - c0) > width:
            raise ValueError("mask pixels fall outside the frame")
        self.y0, self.x0 = y0, x0
        self.data = np.ascontiguousarray(data[r0:r1, c0:c1])
        self.data.setflags(write=False)
        self.area = int(self.data.sum())

    @classmethod
    def from_array(cls, arr) -> "BitMask":
        arr = np.asarray(arr, dtype=bool)
        if arr.ndim != 2:
            raise ValueError("mask array must be 2-D")
        return cls(arr.shape[0], arr.shape[1], 0, 0, arr)

    @classmethod
    def empty(cls, height: int, width: int) -> "BitMask":
        return cls(height, width)

    @classmethod
    def from_pixels(cls, height: int, width: int, xs, ys) -> "BitMask":
        arr = np.zeros((height, width), dtype=bool)
        arr[np.asarray(ys, dtype=int), np.asarray(xs, dtype=int)] = True
        return cls.from_array(arr)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def is_empty(self) -> bool:
        return self.area == 0

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """Tight box as ``(x, y, w, h)``; all zeros for an empty mask."""
        h, w = self.data.shape
        return (self.x0, self.y0, w, h)

    def to_array(self) -> np.ndarray:
        out = np.zeros((self.height, self.width), dtype=bool)
        if self.area:
            h, w = self.data.shape
            out[self.y0:self.y0 + h, self.x0:self.x0 + w] = self.data
        return out

    def window(self, y0: int, x0: int, y1: int, x1: int) -> np.ndarray:
        """Dense copy of the mask restricted to rows ``[y0, y1)`` and cols ``[x0, x1)``."""
        out = np.zeros((y1 - y0, x1 - x0), dtype=bool)
        if not self.area:
            return out
        h, w = self.data.shape
        ys0, xs0 = max(y0, self.y0), max(x0, self.x0)
        ys1, xs1 = min(y1, self.y0 + h), min(x1, self.x0 + w)
        if ys0 < ys1 and xs0 < xs1:
            out[ys0 - y0:ys1 - y0, xs0 - x0:xs1 - x0] = \
                self.data[ys0 - self.y0:ys1 - self.y0, xs0 - self.x0:xs1 - self.x0]
        return out

    def pixels(self) -> np.ndarray:
        """Set pixels as an ``(n, 2)`` integer array of ``(x, y)``, row-major order."""
        ys, xs = np.nonzero(self.data)
        return np.column_stack([xs + self.x0, ys + self.y0])

    def translate(self, dx: int, dy: int) -> "BitMask":
        """Shift by whole pixels, dropping whatever leaves the frame."""
        if not self.area:
            return self
        h, w = self.data.shape
        arr = np.zeros((self.height, self.width), dtype=bool)
        ys0, xs0 = self.y0 + dy, self.x0 + dx
        sy0, sx0 = max(0, -ys0), max(0, -xs0)
        dy0, dx0 = max(0, ys0), max(0, xs0)
        dy1, dx1 = min(self.height, ys0 + h), min(self.width, xs0 + w)
        if dy0 < dy1 and dx0 < dx1:
            arr[dy0:dy1, dx0:dx1] = self.data[sy0:sy0 + dy1 - dy0, sx0:sx0 + dx1 - dx0]
        return BitMask.from_array(arr)

    def _combine(self, other: "BitMask", op) -> "BitMask":
        _check_same_shape(self, other)
        boxes = [m for m in (self, other) if m.area]
        if not boxes:
            return BitMask.empty(self.height, self.width)
        y0 = min(m.y0 for m in boxes)
        x0 = min(m.x0 for m in boxes)
        y1 = max(m.y0 + m.data.shape[0] for m in boxes)
        x1 = max(m.x0 + m.data.shape[1] for m in boxes)
        region = op(self.window(y0, x0, y1, x1), other.window(y0, x0, y1, x1))
        return BitMask(self.height, self.width, y0, x0, region)

    def __and__(self, other: "BitMask") -> "BitMask":
        return self._combine(other, np.logical_and)

    def __or__(self, other: "BitMask") -> "BitMask":
        return self._combine(other, np.logical_or)

    def __sub__(self, other: "BitMask") -> "BitMask":
        return self._combine(other, lambda a, b: a & ~b)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitMask):
            return NotImplemented
        return (self.shape == other.shape and self.y0 == other.y0 and self.x0 == other.x0
                and self.data.shape == other.data.shape
                and bool(np.array_equal(self.data, other.data)))

    def __hash__(self):
        return hash((self.shape, self.y0, self.x0, self.data.tobytes()))

    def __repr__(self) -> str:
        return f"BitMask({self.height}x{self.width}, area={self.area}, bbox={self.bbox})"


def _check_same_shape(a: BitMask, b: BitMask) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def union_all(masks, height: int, width: int) -> BitMask:
    arr = np.zeros((height, width), dtype=bool)
    for m in masks:
        if m.area:
            h, w = m.data.shape
            arr[m.y0:m.y0 + h, m.x0:m.x0 + w] |= m.data
    return BitMask.from_array(arr)


# --------------------------------------------------------------------------
# run-length encoding (column-major, zero-run first)

def _runs(flat: np.ndarray) -> list[int]:
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_encode(mask: BitMask) -> dict:
    h, w = mask.height, mask.width
    if not mask.area:
        return {"size": [h, w], "counts": [h * w]}
    ch, cw = mask.data.shape
    cols = np.zeros((cw, h), dtype=bool)
    cols[:, mask.y0:mask.y0 + ch] = mask.data.T
    counts = _runs(cols.ravel())
    counts[0] += mask.x0 * h
    suffix = (w - mask.x0 - cw) * h
    if suffix:
        if len(counts) % 2:
            counts[-1] += suffix
        else:
            counts.append(suffix)
    return {"size": [h, w], "counts": counts}


def rle_decode(rle: dict) -> BitMask:
    try:
        h, w = (int(v) for v in rle["size"])
        counts = np.asarray(rle["counts"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRLEError(f"unreadable RLE object: {exc}") from exc
    if counts.ndim != 1 or (counts < 0).any():
        raise MalformedRLEError("RLE counts must be a flat list of non-negative ints")
    if int(counts.sum()) != h * w:
        raise MalformedRLEError(f"RLE counts sum to {int(counts.sum())}, expected {h * w}")
    values = np.arange(counts.size) % 2 == 1
    flat = np.repeat(values, counts)
    return BitMask.from_array(flat.reshape(w, h).T)


# --------------------------------------------------------------------------
# geometry

def mask_iou(a: BitMask, b: BitMask) -> float:
    """Intersection over union; two empty masks compare as identical (1.0)."""
    _check_same_shape(a, b)
    if not a.area and not b.area:
        return 1.0
    inter = intersection_area(a, b)
    return inter / (a.area + b.area - inter)


def intersection_area(a: BitMask, b: BitMask) -> int:
    if not a.area or not b.area:
        return 0
    ah, aw = a.data.shape
    bh, bw = b.data.shape
    y0, x0 = max(a.y0, b.y0), max(a.x0, b.x0)
    y1, x1 = min(a.y0 + ah, b.y0 + bh), min(a.x0 + aw, b.x0 + bw)
    if y0 >= y1 or x0 >= x1:
        return 0
    pa = a.data[y0 - a.y0:y1 - a.y0, x0 - a.x0:x1 - a.x0]
    pb = b.data[y0 - b.y0:y1 - b.y0, x0 - b.x0:x1 - b.x0]
    return int(np.count_nonzero(pa & pb))


def centroid(mask: BitMask) -> Point:
    """Centroid from raw image moments, ``(M10/M00, M01/M00)``."""
    if not mask.area:
        raise EmptyMaskError("centroid of an empty mask is undefined")
    ys, xs = np.nonzero(mask.data)
    return Point(float(xs.mean() + mask.x0), float(ys.mean() + mask.y0))


def contour(mask: BitMask) -> np.ndarray:
    """Boundary pixels as an ``(n, 2)`` array of ``(x, y)`` in row-major order.

    A set pixel is on the boundary when one of its 4-neighbours is unset or
    lies outside the image.
    """
    if not mask.area:
        return np.zeros((0, 2), dtype=int)
    padded = np.pad(mask.data, 1)
    interior = (padded[1:-1, 1:-1] & padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    edge = mask.data & ~interior
    ys, xs = np.nonzero(edge)
    return np.column_stack([xs + mask.x0, ys + mask.y0])


class Blob:
    """One connected component of a mask."""

    def __init__(self, mask: BitMask):
        self.mask = mask
        self.area = mask.area

    @cached_property
    def centroid(self) -> Point:
        return centroid(self.mask)

    @cached_property
    def contour(self) -> np.ndarray:
        return contour(self.mask)

    def __repr__(self) -> str:
        return f"Blob(area={self.area}, bbox={self.mask.bbox})"


def connected_components(mask: BitMask, connectivity: int = 8) -> list[Blob]:
    """Split into blobs, largest first; ties go to the topmost, then leftmost box."""
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 4 or 8")
    if not mask.area:
        return []
    labels, n = ndimage.label(mask.data, structure=_STRUCTURES[connectivity])
    blobs = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        piece = labels[sl] == idx
        blobs.append(Blob(BitMask(mask.height, mask.width,
                                  mask.y0 + sl[0].start, mask.x0 + sl[1].start, piece)))
    blobs.sort(key=lambda b: (-b.area, b.mask.y0, b.mask.x0))
    return blobs


def _as_contour(obj) -> np.ndarray:
    if isinstance(obj, Blob):
        return obj.contour
    if isinstance(obj, BitMask):
        return contour(obj)
    return np.asarray(obj, dtype=float).reshape(-1, 2)


def contour_distance(a, b) -> float:
    """Smallest Euclidean gap between two boundaries.

    Boundaries closer than one pixel (touching or overlapping shapes) count as
    distance 0.  Accepts blobs, masks or ``(n, 2)`` point arrays.
    """
    ca, cb = _as_contour(a), _as_contour(b)
    if not len(ca) or not len(cb):
        raise EmptyMaskError("contour distance needs two non-empty shapes")
    if isinstance(a, (Blob, BitMask)) and isinstance(b, (Blob, BitMask)):
        ma = a.mask if isinstance(a, Blob) else a
        mb = b.mask if isinstance(b, Blob) else b
        if intersection_area(ma, mb):
            return 0.0
    d, _ = cKDTree(cb).query(ca, k=1)
    dmin = float(d.min())
    return 0.0 if dmin <= 1.0 else dmin


def crop(image: np.ndarray, mask: BitMask, pad: int = 0) -> np.ndarray:
    """Padded bounding-box cut-out of ``image`` with pixels outside the mask zeroed."""
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape} differ in size")
    if not mask.area:
        raise EmptyMaskError("cannot crop around an empty mask")
    x, y, w, h = mask.bbox
    y0, x0 = max(0, y - pad), max(0, x - pad)
    y1, x1 = min(mask.height, y + h + pad), min(mask.width, x + w + pad)
    out = image[y0:y1, x0:x1].copy()
    out[~mask.window(y0, x0, y1, x1)] = 0
    return out
