from __future__ import annotations

from dataclasses import dataclass, field

from .masks import BitMask


@dataclass
class Track:
    """One identity's masks keyed by global frame index; an empty mask means not visible."""

    identity: int
    entries: dict[int, BitMask] = field(default_factory=dict)
    refine_state: object | None = None

    def frames(self) -> list[int]:
        return sorted(self.entries)

    def mask_at(self, frame: int) -> BitMask | None:
        return self.entries.get(frame)

    def visible(self, frame: int) -> bool:
        m = self.entries.get(frame)
        return m is not None and m.area > 0

    def visible_frames(self) -> list[int]:
        return [f for f in self.frames() if self.entries[f].area > 0]

    def restricted(self, frames) -> "Track":
        keep = set(frames)
        return Track(self.identity, {f: m for f, m in self.entries.items() if f in keep})


def tracks_by_id(tracks) -> dict[int, Track]:
    out = {}
    for t in tracks:
        if t.identity in out:
            raise ValueError(f"duplicate track identity {t.identity}")
        out[t.identity] = t
    return out


def all_frames(tracks) -> list[int]:
    frames = set()
    for t in tracks:
        frames.update(t.entries)
    return sorted(frames)
