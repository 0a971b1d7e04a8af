"""Report figures: threshold sweep curves and per-frame / per-identity segmentation scores."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import SegScore  # noqa: E402

_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence[tuple[float, float, float, float]], best_threshold: float, path) -> Path:
    """Precision, recall and F1 against the confidence threshold, best F1 marked."""
    t = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, [r[1] for r in rows], "o-", ms=3, label="precision")
    ax.plot(t, [r[2] for r in rows], "s-", ms=3, label="recall")
    ax.plot(t, [r[3] for r in rows], "^-", ms=3, label="F1")
    if best_threshold == best_threshold:
        ax.axvline(best_threshold, color="0.4", ls="--", lw=1, label=f"best = {best_threshold:g}")
    ax.set_xlabel("confidence threshold")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, path)


def plot_jf_series(seg: SegScore, path) -> Path:
    frames = sorted(seg.per_frame)
    j = [seg.per_frame[f][0] for f in frames]
    f = [seg.per_frame[k][1] for k in frames]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(frames, j, lw=1, label="J")
    ax.plot(frames, f, lw=1, label="F")
    ax.plot(frames, [(a + b) / 2 for a, b in zip(j, f)], lw=1.5, color="k", label="J&F")
    ax.set_xlabel("frame")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False, fontsize=8, ncol=3)
    return _finish(fig, path)


def plot_per_id(seg: SegScore, path) -> Path:
    ids = sorted(seg.per_id)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = range(len(ids))
    ax.bar([i - 0.2 for i in x], [seg.per_id[k][0] for k in ids], width=0.4, label="J")
    ax.bar([i + 0.2 for i in x], [seg.per_id[k][1] for k in ids], width=0.4, label="F")
    ax.set_xticks(list(x))
    ax.set_xticklabels([str(k) for k in ids])
    ax.set_xlabel("ground-truth identity")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, path)
