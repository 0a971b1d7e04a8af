"""Seeded synthetic pen scenes with exact ground truth.

Agents are filled ellipses with a distinct gray level each, wandering on
waypoint paths inside their own cell of a grid laid over the pen.  Scripted
events hide agents, pile them up, or walk them out of the pen, and degrade the
stored detections the way a real detector fails in those situations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .masks import BitMask, connected_components, union_all
from .pipeline.types import Clip, FrameRecord
from .spatial import Instance, PenRegion
from .tracks import Track

EVENT_KINDS = ("occlusion", "disappearance", "pile_up", "exit_pen")
BACKGROUND = 30


@dataclass(frozen=True)
class AgentSpec:
    """Explicit agent: start centre, semi-axes, orientation (radians), constant velocity (px/frame)."""

    x: float
    y: float
    a: float
    b: float
    angle: float = 0.0
    velocity: tuple[float, float] = (0.0, 0.0)
    gray: int | None = None


@dataclass(frozen=True)
class EventSpec:
    """Scripted event over global frames ``[start, start + length)``.

    * ``occlusion``: ``agents=(a, b)``; b is hidden and its detection is folded into a's.
    * ``disappearance``: every listed agent is hidden and its detection dropped.
    * ``pile_up``: listed agents converge on their common mean over ``approach`` frames,
      hold for ``length`` frames, then return over ``depart`` frames.
    * ``exit_pen``: listed agents walk to the strip right of the pen and back, same timing.
    """

    kind: str
    agents: tuple[int, ...]
    start: int
    length: int
    approach: int = 12
    depart: int = 12

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.start < 0 or self.length <= 0 or self.approach < 0 or self.depart < 0:
            raise ValueError("event timing must be non-negative with positive length")
        if not self.agents or len(set(self.agents)) != len(self.agents):
            raise ValueError("event needs distinct agents")
        if self.kind == "occlusion" and len(self.agents) != 2:
            raise ValueError("occlusion takes exactly two agents (occluder, hidden)")
        if self.kind == "pile_up" and len(self.agents) < 2:
            raise ValueError("pile_up needs at least two agents")
        object.__setattr__(self, "agents", tuple(int(a) for a in self.agents))

    @property
    def span(self) -> tuple[int, int]:
        """First and last frame affected, including approach and departure."""
        if self.kind in ("pile_up", "exit_pen"):
            return self.start, self.start + self.approach + self.length + self.depart - 1
        return self.start, self.start + self.length - 1

    def weight(self, t: int) -> float:
        """Blend factor toward the event target: ramps 0 -> 1, holds, ramps back to 0."""
        s, e = self.span
        if t < s or t > e:
            return 0.0
        k = t - s
        if k < self.approach:
            return (k + 1) / (self.approach + 1)
        k -= self.approach
        if k < self.length:
            return 1.0
        k -= self.length
        return 1.0 - (k + 1) / (self.depart + 1)


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    n_agents: int = 10
    frame_size: tuple[int, int] = (480, 360)  # (width, height)
    n_clips: int = 1
    frames_per_clip: int = 200
    semi_axes: tuple[tuple[float, float], tuple[float, float]] = ((12.0, 18.0), (7.0, 11.0))
    speed: tuple[float, float] = (0.5, 2.0)
    events: tuple[EventSpec, ...] = ()
    agents: tuple[AgentSpec, ...] | None = None
    pen_polygon: tuple[tuple[float, float], ...] | None = None
    outside_strip: int = 40  # pixels right of the pen kept free for exit_pen
    spurious_per_frame: float = 0.0
    grid_rows: int | None = None

    def __post_init__(self):
        w, h = self.frame_size
        if w <= 0 or h <= 0:
            raise ValueError("frame size must be positive")
        if self.n_clips <= 0 or self.frames_per_clip <= 0:
            raise ValueError("need at least one clip of at least one frame")
        if self.agents is not None:
            object.__setattr__(self, "n_agents", len(self.agents))
        if self.n_agents <= 0:
            raise ValueError("need at least one agent")
        (a0, a1), (b0, b1) = self.semi_axes
        if not (0 < a0 <= a1 and 0 < b0 <= b1):
            raise ValueError("semi-axis ranges must be positive and ordered")
        if not 0 < self.speed[0] <= self.speed[1]:
            raise ValueError("speed range must be positive and ordered")
        if self.spurious_per_frame < 0:
            raise ValueError("spurious_per_frame must be non-negative")
        object.__setattr__(self, "events", tuple(self.events))
        total = self.n_clips * self.frames_per_clip
        for ev in self.events:
            if max(ev.agents) >= self.n_agents:
                raise ValueError(f"event {ev.kind} names agent {max(ev.agents)} of {self.n_agents}")
            if ev.span[1] >= total:
                raise ValueError(f"event {ev.kind} runs past the last frame {total - 1}")

    @property
    def n_frames(self) -> int:
        return self.n_clips * self.frames_per_clip

    def pen(self) -> PenRegion:
        w, h = self.frame_size
        poly = self.pen_polygon
        if poly is None:
            right = w - self.outside_strip - 3
            poly = ((2, 2), (right, 2), (right, h - 3), (2, h - 3))
        return PenRegion([list(p) for p in poly], (w, h), camera_id="sim")


@dataclass
class Scenario:
    spec: ScenarioSpec
    clips: list[Clip]
    gt_tracks: list[Track]
    pen: PenRegion
    gray_levels: list[int]


@dataclass
class _Agent:
    a: float
    b: float
    angle: float
    gray: int
    pos: np.ndarray
    cell: tuple[float, float, float, float] | None = None  # x0, y0, x1, y1 waypoint box
    velocity: np.ndarray | None = None
    target: np.ndarray | None = None
    speed: float = 0.0
    speed_range: tuple[float, float] = (0.5, 2.0)
    rng: np.random.Generator | None = None

    def step(self):
        if self.velocity is not None:
            self.pos = self.pos + self.velocity
            return
        d = self.target - self.pos
        dist = float(np.hypot(*d))
        if dist <= self.speed:
            self.pos = self.target.copy()
            self._new_target()
        else:
            self.pos = self.pos + d / dist * self.speed

    def _new_target(self):
        x0, y0, x1, y1 = self.cell
        self.target = np.array([self.rng.uniform(x0, x1), self.rng.uniform(y0, y1)])
        self.speed = float(self.rng.uniform(*self.speed_range))


def ellipse_mask(cx: float, cy: float, a: float, b: float, angle: float, width: int, height: int) -> BitMask:
    """Pixels whose centres fall inside the rotated ellipse, cut to the frame."""
    r = math.ceil(max(a, b)) + 1
    x0, x1 = max(0, int(math.floor(cx)) - r), min(width, int(math.ceil(cx)) + r + 1)
    y0, y1 = max(0, int(math.floor(cy)) - r), min(height, int(math.ceil(cy)) + r + 1)
    if x0 >= x1 or y0 >= y1:
        return BitMask.empty(height, width)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx, dy = xs - cx, ys - cy
    c, s = math.cos(angle), math.sin(angle)
    u, v = dx * c + dy * s, -dx * s + dy * c
    inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return BitMask(height, width, y0, x0, inside)


def _grid(spec: ScenarioSpec, pen_box) -> list[tuple[float, float, float, float]]:
    n = spec.n_agents
    rows = spec.grid_rows or (1 if n <= 5 else math.ceil(n / 5))
    cols = math.ceil(n / rows)
    px0, py0, px1, py1 = pen_box
    cw, ch = (px1 - px0) / cols, (py1 - py0) / rows
    margin = spec.semi_axes[0][1] + 6
    if cw < 2 * margin + 1 or ch < 2 * margin + 1:
        raise ValueError(f"{n} agents do not fit the pen at these sizes")
    cells = []
    for k in range(n):
        r, c = divmod(k, cols)
        cells.append((px0 + c * cw + margin, py0 + r * ch + margin,
                      px0 + (c + 1) * cw - margin, py0 + (r + 1) * ch - margin))
    return cells


def _gray_levels(n: int, rng: np.random.Generator) -> list[int]:
    levels = np.linspace(80, 250, n).round().astype(int) if n > 1 else np.array([200])
    return [int(v) for v in rng.permutation(levels)]


def _make_agents(spec: ScenarioSpec, pen: PenRegion, seeds) -> list[_Agent]:
    w, h = spec.frame_size
    grays = _gray_levels(spec.n_agents, np.random.default_rng(seeds[0]))
    agents = []
    if spec.agents is not None:
        for k, a in enumerate(spec.agents):
            agents.append(_Agent(a.a, a.b, a.angle, a.gray if a.gray is not None else grays[k],
                                 np.array([a.x, a.y], float), velocity=np.array(a.velocity, float)))
    else:
        ys, xs = np.nonzero(pen.mask.to_array())
        cells = _grid(spec, (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1))
        (a0, a1), (b0, b1) = spec.semi_axes
        for k, cell in enumerate(cells):
            rng = np.random.default_rng(seeds[k + 1])
            ag = _Agent(float(rng.uniform(a0, a1)), float(rng.uniform(b0, b1)),
                        float(rng.uniform(0, math.pi)), grays[k],
                        np.array([rng.uniform(cell[0], cell[2]), rng.uniform(cell[1], cell[3])]),
                        cell=cell, speed_range=spec.speed, rng=rng)
            ag._new_target()
            agents.append(ag)
    masks = [ellipse_mask(*ag.pos, ag.a, ag.b, ag.angle, w, h) for ag in agents]
    for k, m in enumerate(masks):
        if m.area == 0 or (m - pen.mask).area:
            raise ValueError(f"agent {k} does not start fully inside the pen")
        for j in range(k):
            if (m & masks[j]).area:
                raise ValueError(f"agents {j} and {k} overlap at frame 0")
    return agents


def _hidden(spec: ScenarioSpec, t: int) -> set[int]:
    out = set()
    for ev in spec.events:
        s, e = ev.span
        if s <= t <= e:
            if ev.kind == "occlusion":
                out.add(ev.agents[1])
            elif ev.kind == "disappearance":
                out.update(ev.agents)
    return out


def _frozen(spec: ScenarioSpec, t: int) -> set[int]:
    """Agents whose wander is paused at frame ``t`` (hidden or taking part in a move event)."""
    out = _hidden(spec, t)
    for ev in spec.events:
        s, e = ev.span
        if ev.kind in ("pile_up", "exit_pen") and s <= t <= e:
            out.update(ev.agents)
    return out


def _displayed(spec: ScenarioSpec, base: np.ndarray, t: int, width: int) -> np.ndarray:
    """Apply pile-up and exit offsets on top of the wander positions (n x 2)."""
    pos = base.copy()
    for ev in spec.events:
        wgt = ev.weight(t)
        if wgt == 0.0:
            continue
        idx = list(ev.agents)
        if ev.kind == "pile_up":
            # wander is paused for the whole event, so ``base`` holds the start positions
            mean = base[idx].mean(axis=0)
            for slot, k in enumerate(idx):
                off = np.array([min(4.0, 3.0 * (slot - (len(idx) - 1) / 2)), 2.0 * (slot % 2)])
                target = mean + np.clip(off, -4, 4)
                pos[k] = (1 - wgt) * base[k] + wgt * target
        elif ev.kind == "exit_pen":
            out_x = width - spec.outside_strip / 2
            for k in idx:
                pos[k] = ((1 - wgt) * base[k][0] + wgt * out_x, base[k][1])
    return pos


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    """Render every frame, the stored detections and the ground-truth tracks.

    Ground truth is the visible part of each agent: agents drawn later cover
    earlier ones, and hidden agents have empty masks.  The foreground of each
    frame is the union of the ground-truth masks.
    """
    w, h = spec.frame_size
    pen = spec.pen()
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_agents + 2)
    agents = _make_agents(spec, pen, seeds)
    det_rng = np.random.default_rng(seeds[-1])
    n = len(agents)
    base = np.array([ag.pos for ag in agents])
    gt = [Track(k) for k in range(n)]
    last_full: dict[int, BitMask] = {}
    frames: list[FrameRecord] = []

    for t in range(spec.n_frames):
        if t > 0:
            frozen = _frozen(spec, t)
            for k, ag in enumerate(agents):
                if k not in frozen:
                    ag.step()
                base[k] = ag.pos
        hidden = _hidden(spec, t)
        pos = _displayed(spec, base, t, w)
        full = {k: ellipse_mask(pos[k][0], pos[k][1], agents[k].a, agents[k].b, agents[k].angle, w, h)
                for k in range(n) if k not in hidden}
        # larger agents are drawn last so they end up on top
        order = sorted(full, key=lambda k: (agents[k].a * agents[k].b, k))
        image = np.full((h, w), BACKGROUND, dtype=np.uint8)
        covered = BitMask.empty(h, w)
        visible = {}
        for k in reversed(order):
            visible[k] = full[k] - covered
            covered = covered | full[k]
        for k in order:
            m = full[k]
            if m.area:
                y, x = m.y0, m.x0
                region = image[y:y + m.data.shape[0], x:x + m.data.shape[1]]
                region[m.data] = agents[k].gray
        for k in range(n):
            gt[k].entries[t] = visible.get(k, BitMask.empty(h, w))
        for k, m in full.items():
            last_full[k] = m

        conf = det_rng.uniform(0.5, 1.0, size=n)
        dets = _detections(spec, t, visible, full, last_full, conf, hidden, h, w)
        if spec.spurious_per_frame:
            dets.extend(_spurious(det_rng, spec.spurious_per_frame, h, w))
        fg = union_all(visible.values(), h, w)
        frames.append(FrameRecord(t, image, fg, dets))

    clips = [Clip(c, w, h, frames[c * spec.frames_per_clip:(c + 1) * spec.frames_per_clip])
             for c in range(spec.n_clips)]
    return Scenario(spec, clips, gt, pen, [ag.gray for ag in agents])


def _detections(spec, t, visible, full, last_full, conf, hidden, h, w) -> list[Instance]:
    masks = {k: m for k, m in visible.items() if m.area}
    score = {k: float(conf[k]) for k in masks}
    # agents whose visible parts touch collapse into one detection
    piled = set()
    for ev in spec.events:
        if ev.kind == "pile_up" and ev.weight(t) > 0:
            piled.update(k for k in ev.agents if k in masks)
    if piled:
        blob_of = {}
        for bi, blob in enumerate(connected_components(union_all((full[k] for k in piled), h, w))):
            for k in piled:
                if (full[k] & blob.mask).area:
                    blob_of[k] = bi
        groups: dict[int, list[int]] = {}
        for k in sorted(piled):
            groups.setdefault(blob_of[k], []).append(k)
        for members in groups.values():
            if len(members) > 1:
                lead = members[0]
                masks[lead] = union_all((masks[k] for k in members), h, w)
                score[lead] = max(score[k] for k in members)
                for k in members[1:]:
                    del masks[k]
    for ev in spec.events:
        s, e = ev.span
        if ev.kind == "occlusion" and s <= t <= e:
            a, b = ev.agents
            if a in masks and b in last_full:
                masks[a] = masks[a] | last_full[b]
    return [Instance(masks[k], score[k]) for k in sorted(masks)]


def _spurious(rng: np.random.Generator, rate: float, h: int, w: int) -> list[Instance]:
    out = []
    for _ in range(int(rng.poisson(rate))):
        cx, cy = rng.uniform(10, w - 10), rng.uniform(10, h - 10)
        m = ellipse_mask(cx, cy, rng.uniform(3, 8), rng.uniform(3, 8), 0.0, w, h)
        if m.area:
            out.append(Instance(m, float(rng.uniform(0.02, 0.2))))
    return out


# --------------------------------------------------------------------------
# spec documents and scenario files

_SPEC_KEYS = {"seed", "n_agents", "frame_size", "n_clips", "frames_per_clip", "semi_axes", "speed",
              "events", "agents", "pen_polygon", "outside_strip", "spurious_per_frame", "grid_rows"}
_EVENT_KEYS = {"kind", "agents", "start", "length", "approach", "depart"}
_AGENT_KEYS = {"x", "y", "a", "b", "angle", "velocity", "gray"}


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, (list, tuple)) else v


def spec_from_json(obj: dict) -> ScenarioSpec:
    """Build a spec from a plain dict; unknown keys are rejected."""
    unknown = set(obj) - _SPEC_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    kw = {k: _tuplify(v) for k, v in obj.items() if k not in ("events", "agents")}
    events = []
    for ev in obj.get("events") or []:
        bad = set(ev) - _EVENT_KEYS
        if bad:
            raise ValueError(f"unknown event keys: {sorted(bad)}")
        events.append(EventSpec(**{k: _tuplify(v) for k, v in ev.items()}))
    kw["events"] = tuple(events)
    if obj.get("agents") is not None:
        agents = []
        for ag in obj["agents"]:
            bad = set(ag) - _AGENT_KEYS
            if bad:
                raise ValueError(f"unknown agent keys: {sorted(bad)}")
            agents.append(AgentSpec(**{k: _tuplify(v) for k, v in ag.items()}))
        kw["agents"] = tuple(agents)
    return ScenarioSpec(**kw)


def spec_to_json(spec: ScenarioSpec) -> dict:
    out = {k: getattr(spec, k) for k in sorted(_SPEC_KEYS - {"events", "agents"})}
    out["events"] = [{k: getattr(ev, k) for k in sorted(_EVENT_KEYS)} for ev in spec.events]
    out["agents"] = None if spec.agents is None else [
        {k: getattr(ag, k) for k in sorted(_AGENT_KEYS)} for ag in spec.agents]
    return json.loads(json.dumps(out))


def save_scenario(scenario: Scenario, outdir, images: bool = True) -> dict[str, list[str]]:
    """Write ``clip_NNN.json`` frames files, ``gt.json`` and ``pen.json`` under ``outdir``."""
    from .formats import tracks_to_json, write_clip, write_json

    outdir = Path(outdir)
    clips = []
    for clip in scenario.clips:
        path = outdir / f"clip_{clip.index:03d}.json"
        write_clip(path, clip, "images" if images else None)
        clips.append(str(path))
    spec = spec_to_json(scenario.spec)
    write_json(outdir / "gt.json", tracks_to_json(scenario.gt_tracks, spec=spec))
    write_json(outdir / "pen.json", scenario.pen.to_json())
    return {"clips": clips, "gt": [str(outdir / "gt.json")], "pen": [str(outdir / "pen.json")]}
