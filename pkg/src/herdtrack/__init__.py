"""Identity-preserving long-term segmentation tracking of group-housed animals."""

from .masks import BitMask, MalformedRLEError, mask_iou, rle_decode, rle_encode
from .refine import RefineConfig, RefineState, refine_mask
from .reid import ReferenceEmbedder, ReidConfig, reidentify
from .spatial import Instance, PenRegion
from .tracks import Track

__version__ = "0.1.0"

__all__ = [
    "BitMask", "Instance", "MalformedRLEError", "PenRegion", "RefineConfig", "RefineState",
    "ReferenceEmbedder", "ReidConfig", "Track", "mask_iou", "refine_mask", "reidentify",
    "rle_decode", "rle_encode",
]
