"""Colour overlays of tracked masks on the source frames."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .formats import write_ppm
from .pipeline.types import Clip
from .tracks import Track

# 16 well-separated colours; identity k uses entry k mod 16
PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48), (145, 30, 180),
    (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
], dtype=np.uint8)
MARKER = np.array((255, 0, 0), dtype=np.uint8)


def identity_color(identity: int) -> tuple[int, int, int]:
    return tuple(int(v) for v in PALETTE[identity % len(PALETTE)])


def overlay(image: np.ndarray | None, masks: dict[int, object], height: int, width: int,
            alpha: float = 0.6, flagged: bool = False, border: int = 3) -> np.ndarray:
    """Blend each identity's mask onto the frame; flagged frames get a red border."""
    if image is None:
        base = np.zeros((height, width, 3), np.float64)
    else:
        img = np.asarray(image, np.float64)
        base = np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img[..., :3].copy()
    for ident in sorted(masks):
        m = masks[ident]
        if not m.area:
            continue
        sel = m.to_array()
        base[sel] = (1 - alpha) * base[sel] + alpha * PALETTE[ident % len(PALETTE)]
    out = np.clip(np.rint(base), 0, 255).astype(np.uint8)
    if flagged:
        out[:border], out[-border:], out[:, :border], out[:, -border:] = MARKER, MARKER, MARKER, MARKER
    return out


def render_clip(clip: Clip, tracks: Sequence[Track], outdir, flagged_frames: Iterable[int] = (),
                alpha: float = 0.6) -> list[Path]:
    """One PPM per frame of ``clip`` under ``outdir``; returns the written paths."""
    outdir = Path(outdir)
    flagged = set(flagged_frames)
    written = []
    for fr in clip.frames:
        masks = {t.identity: t.entries[fr.index] for t in tracks if fr.index in t.entries}
        img = overlay(fr.get_image(), masks, clip.height, clip.width, alpha, fr.index in flagged)
        path = outdir / f"frame_{fr.index:06d}.ppm"
        write_ppm(path, img)
        written.append(path)
    return written
