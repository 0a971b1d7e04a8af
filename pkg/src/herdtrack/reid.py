"""Feature- and location-aware re-identification across clip boundaries.

Each instance is cropped, contrast-enhanced and embedded; new and old
instances are then compared on appearance (cosine), overlap (mask IoU) and
position (normalised centroid distance).  The weighted cost matrix is solved
with the Hungarian method and the new instances inherit the old identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Protocol, Sequence

import numpy as np

from .assignment import AssignmentResult, hungarian
from .masks import Point, crop, mask_iou
from .spatial import Instance


@dataclass(frozen=True)
class ReidConfig:
    alpha: float = 0.5
    beta: float = 0.3
    gamma_w: float = 0.2
    d_max: float | None = None  # None: diagonal of the frame
    gamma_correction: float = 0.6
    crop_pad: int = 4

    def __post_init__(self):
        weights = (self.alpha, self.beta, self.gamma_w)
        if min(weights) < 0 or sum(weights) <= 0:
            raise ValueError("similarity weights must be non-negative and not all zero")
        total = sum(weights)
        object.__setattr__(self, "alpha", self.alpha / total)
        object.__setattr__(self, "beta", self.beta / total)
        object.__setattr__(self, "gamma_w", self.gamma_w / total)
        if self.d_max is not None and self.d_max <= 0:
            raise ValueError("d_max must be positive")
        if self.gamma_correction <= 0:
            raise ValueError("gamma_correction must be positive")
        if self.crop_pad < 0:
            raise ValueError("crop_pad must be non-negative")


class Embedder(Protocol):
    dim: int

    def __call__(self, crop: np.ndarray) -> np.ndarray: ...


def _to_unit(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if np.issubdtype(img.dtype, np.integer):
        return img.astype(float) / 255.0
    return np.clip(img.astype(float), 0.0, 1.0)


def gamma_correct(img: np.ndarray, gamma: float) -> np.ndarray:
    return _to_unit(img) ** gamma


def equalize_nonzero(img: np.ndarray, levels: int = 256) -> np.ndarray:
    """Histogram equalisation over the non-zero (in-mask) pixels only.

    Zero pixels are background and stay zero.  A crop whose in-mask pixels
    all share one level is returned unchanged.
    """
    img = _to_unit(img)
    inside = img > 0
    if not inside.any():
        return img.copy()
    q = np.rint(img[inside] * (levels - 1)).astype(int)
    hist = np.bincount(q, minlength=levels)
    if np.count_nonzero(hist) < 2:
        return img.copy()
    cdf = np.cumsum(hist)
    cdf_min = cdf[q.min()]
    out = np.zeros_like(img)
    out[inside] = (cdf[q] - cdf_min) / (q.size - cdf_min)
    return out


def enhance_crop(crop_img: np.ndarray, cfg: ReidConfig = ReidConfig()) -> np.ndarray:
    if crop_img.size == 0:
        raise ValueError("cannot enhance an empty crop")
    return equalize_nonzero(gamma_correct(crop_img, cfg.gamma_correction))


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    # row k spreads output pixel k over the input interval [k*s, (k+1)*s)
    edges = np.linspace(0.0, n_in, n_out + 1)
    w = np.zeros((n_out, n_in))
    for k in range(n_out):
        lo, hi = edges[k], edges[k + 1]
        for i in range(int(math.floor(lo)), min(n_in, int(math.ceil(hi)))):
            w[k, i] = min(hi, i + 1) - max(lo, i)
    return w / w.sum(axis=1, keepdims=True)


def resize_area(img: np.ndarray, height: int, width: int) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    return _area_weights(img.shape[0], height) @ img @ _area_weights(img.shape[1], width).T


class ReferenceEmbedder:
    """Deterministic stand-in for a frozen image encoder.

    The crop is resized to 32x32 by area averaging; the feature is the 1024
    resized intensities followed by a 16-bin histogram of the in-mask
    (non-zero) pixels of the original crop, scaled to sum to 1024 so it
    carries most of the vector's weight.  A crop without any non-zero pixel
    is histogrammed whole.
    """

    def __init__(self, size: int = 32, bins: int = 16):
        self.size = size
        self.bins = bins
        self.dim = size * size + bins

    def __call__(self, crop_img: np.ndarray) -> np.ndarray:
        crop_img = np.asarray(crop_img)
        if crop_img.size == 0:
            raise ValueError("cannot embed an empty crop")
        unit = _to_unit(crop_img)
        small = np.clip(resize_area(unit, self.size, self.size), 0.0, 1.0)
        vals = unit[unit > 0] if (unit > 0).any() else unit.ravel()
        hist, _ = np.histogram(vals, bins=self.bins, range=(0.0, 1.0))
        hist = hist * (self.size * self.size / vals.size)
        return np.concatenate([small.ravel(), hist])


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"feature lengths differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero-norm feature vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def centroid_similarity(c_new: Point, c_old: Point, d_max: float) -> float:
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    d = math.hypot(c_new[0] - c_old[0], c_new[1] - c_old[1])
    return max(0.0, 1.0 - d / d_max)


def embed_instances(instances: Sequence[Instance], image: np.ndarray | None,
                    cfg: ReidConfig, embedder: Embedder) -> list[Instance]:
    """Fill in missing embeddings from ``image``; instances that already carry one are kept as is.

    Without an image the mask itself is cropped (255 inside, 0 outside), so
    the embedding carries shape only.
    """
    out = []
    for inst in instances:
        if inst.embedding is None:
            src = image if image is not None else inst.mask.to_array().astype(np.uint8) * 255
            feat = embedder(enhance_crop(crop(src, inst.mask, cfg.crop_pad), cfg))
            inst = replace(inst, embedding=np.asarray(feat, dtype=float))
        out.append(inst)
    return out


def build_cost_matrix(new: Sequence[Instance], old: Sequence[Instance],
                      cfg: ReidConfig = ReidConfig()) -> np.ndarray:
    """``1 - (alpha*S_cos + beta*S_iou + gamma*S_centroid)``, clamped to [0, 1].

    Every instance must carry an embedding (see :func:`embed_instances`).
    """
    cost = np.ones((len(new), len(old)))
    if not len(new) or not len(old):
        return cost
    h, w = new[0].mask.shape
    d_max = cfg.d_max if cfg.d_max is not None else math.hypot(w, h)
    old_c = [o.centroid for o in old]
    for i, n in enumerate(new):
        nc = n.centroid
        for j, o in enumerate(old):
            s_cos = cosine_similarity(n.embedding, o.embedding)
            s_iou = mask_iou(n.mask, o.mask)
            s_cent = centroid_similarity(nc, old_c[j], d_max)
            cost[i, j] = 1.0 - (cfg.alpha * s_cos + cfg.beta * s_iou + cfg.gamma_w * s_cent)
    return np.clip(cost, 0.0, 1.0)


def reidentify(new_frame: Sequence[Instance], old_frame: Sequence[Instance],
               images: tuple[np.ndarray | None, np.ndarray | None] = (None, None),
               cfg: ReidConfig = ReidConfig(), embedder: Embedder | None = None,
               next_identity: int | None = None) -> tuple[list[Instance], AssignmentResult]:
    """Relabel ``new_frame`` with the identities of ``old_frame``.

    Returns the relabelled instances (input order) and the assignment, whose
    ``mapping`` goes new index -> old identity.  Unmatched new instances get
    fresh identities starting at ``next_identity`` (default: one past the
    largest old identity); unmatched old identities land in ``missing``.
    """
    if any(o.identity is None for o in old_frame):
        raise ValueError("old instances must carry identities")
    embedder = embedder or ReferenceEmbedder()
    new_e = embed_instances(new_frame, images[0], cfg, embedder)
    old_e = embed_instances(old_frame, images[1], cfg, embedder)
    cost = build_cost_matrix(new_e, old_e, cfg)
    raw = hungarian(cost)

    mapping = {i: old_frame[j].identity for i, j in raw.mapping.items()}
    if next_identity is None:
        next_identity = max((o.identity for o in old_frame), default=-1) + 1
    fresh = []
    for i in range(len(new_frame)):
        if i not in mapping:
            mapping[i] = next_identity
            fresh.append(i)
            next_identity += 1
    matched_old = {old_frame[j].identity for j in raw.mapping.values()}
    missing = sorted(o.identity for o in old_frame if o.identity not in matched_old)
    relabelled = [replace(inst, identity=mapping[i]) for i, inst in enumerate(new_e)]
    result = AssignmentResult(dict(sorted(mapping.items())), raw.total_cost, raw.pair_costs,
                              fresh=fresh, missing=missing)
    return relabelled, result
