"""Synthetic multi-object scenes with known ground truth.

Agents move with one of three motion models (static, constant velocity,
constant turn rate), detections are noisy copies of the GT boxes with
dropouts, and Poisson clutter adds false positives.  Everything is driven
by one Generator, so a seed fully determines the scene.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .loss import DEFAULT_MAX_SPEED, speed_for
from .types import (Box3D, DetectionFrame, SceneDB, Track, TrackStatus,
                    tracks_from_labels, wrap_angle)
from .utils import rng_for

# nominal (l, w, h) per class
AGENT_SIZES = {
    "car": (4.5, 1.9, 1.6),
    "pedestrian": (0.8, 0.7, 1.7),
    "bicycle": (1.8, 0.6, 1.4),
}

DEFAULT_SPEEDS = {
    "car": (3.0, 15.0),
    "pedestrian": (0.7, 2.0),
    "bicycle": (2.0, 7.0),
}


@dataclass
class SynthConfig:
    class_names: tuple[str, ...] = ("car", "pedestrian", "bicycle")
    n_agents: dict[str, int] = field(
        default_factory=lambda: {"car": 6, "pedestrian": 4, "bicycle": 2})
    speed_range: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_SPEEDS))
    motion_mix: tuple[float, float, float] = (0.2, 0.6, 0.2)  # static, cv, ctr
    turn_rate_max: float = 0.4          # rad/s for constant-turn agents
    n_frames: int = 40
    frequency_hz: float = 10.0
    arena: float = 50.0                 # half-extent of the spawn square
    center_noise: float = 0.15          # m std on x/y (z quarter of that)
    size_noise: float = 0.04            # relative std on w/l/h
    yaw_noise: float = 0.04             # rad std
    vel_noise: float = 0.2              # m/s std per axis
    miss_prob: float = 0.1
    clutter_rate: float = 2.0           # Poisson mean FP boxes per frame
    det_score_range: tuple[float, float] = (0.55, 0.95)
    clutter_score_range: tuple[float, float] = (0.1, 0.5)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.frequency_hz <= 0:
            raise ValueError("frequency_hz must be positive")
        if not 0.0 <= self.miss_prob < 1.0:
            raise ValueError("miss_prob must be in [0, 1)")
        if self.clutter_rate < 0:
            raise ValueError("clutter_rate must be >= 0")
        if abs(sum(self.motion_mix) - 1.0) > 1e-9 or min(self.motion_mix) < 0:
            raise ValueError("motion_mix must be a distribution")
        for name in self.class_names:
            if name not in AGENT_SIZES:
                raise ValueError(f"no agent template for class {name!r}")
            # GT motion must stay supervisable under the reachability mask
            cap = speed_for(name, DEFAULT_MAX_SPEED)
            if self.speed_range[name][1] >= cap:
                raise ValueError(
                    f"{name} speed range exceeds the {cap} m/s linking cap")


@dataclass
class _Agent:
    track_id: int
    class_id: int
    size: tuple[float, float, float]    # (l, w, h)
    kind: str                           # static | cv | ctr
    x0: float
    y0: float
    heading: float
    speed: float
    turn_rate: float

    def pose(self, t: float) -> tuple[float, float, float, float, float]:
        """(x, y, yaw, vx, vy) at time t (t=0 is the agent's spawn pose)."""
        if self.kind == "static":
            return self.x0, self.y0, self.heading, 0.0, 0.0
        if self.kind == "cv":
            vx = self.speed * math.cos(self.heading)
            vy = self.speed * math.sin(self.heading)
            return self.x0 + vx * t, self.y0 + vy * t, self.heading, vx, vy
        # constant turn rate
        w = self.turn_rate
        th = self.heading + w * t
        x = self.x0 + self.speed / w * (math.sin(th) - math.sin(self.heading))
        y = self.y0 - self.speed / w * (math.cos(th) - math.cos(self.heading))
        return x, y, wrap_angle(th), self.speed * math.cos(th), self.speed * math.sin(th)


def _spawn_agents(cfg: SynthConfig, rng: np.random.Generator) -> list[_Agent]:
    agents = []
    tid = 0
    for ci, name in enumerate(cfg.class_names):
        for _ in range(cfg.n_agents.get(name, 0)):
            base = AGENT_SIZES[name]
            size = tuple(float(s * rng.uniform(0.9, 1.1)) for s in base)
            kind = ("static", "cv", "ctr")[int(rng.choice(3, p=cfg.motion_mix))]
            lo, hi = cfg.speed_range[name]
            speed = float(rng.uniform(lo, hi))
            turn = float(rng.uniform(0.05, cfg.turn_rate_max))
            turn *= 1 if rng.random() < 0.5 else -1
            agents.append(_Agent(
                track_id=tid, class_id=ci, size=size, kind=kind,
                x0=float(rng.uniform(-cfg.arena, cfg.arena)),
                y0=float(rng.uniform(-cfg.arena, cfg.arena)),
                heading=wrap_angle(float(rng.uniform(-math.pi, math.pi))),
                speed=0.0 if kind == "static" else speed,
                turn_rate=turn))
            tid += 1
    return agents


def _one_hot(ci: int, n: int, score: float) -> tuple[float, ...]:
    return tuple(score if i == ci else 0.0 for i in range(n))


def gen_scene(cfg: SynthConfig, rng: np.random.Generator,
              scene_id: str = "synth-0000") -> SceneDB:
    """One scene: GT tracks plus noisy labeled detections at every frame."""
    n_classes = len(cfg.class_names)
    agents = _spawn_agents(cfg, rng)
    period = 1.0 / cfg.frequency_hz
    scene = SceneDB(scene_id=scene_id, frequency_hz=cfg.frequency_hz,
                    class_names=cfg.class_names)
    gt_tracks = {a.track_id: Track(a.track_id, a.class_id, TrackStatus.CONFIRMED)
                 for a in agents}
    next_box_id = 0
    for fi in range(cfg.n_frames):
        t = fi * period
        dets: list[Box3D] = []
        for a in agents:
            x, y, yaw, vx, vy = a.pose(t)
            l, w, h = a.size
            gt_box = Box3D(
                x=x, y=y, z=h / 2, w=w, l=l, h=h, yaw=yaw, t=t, frame_idx=fi,
                class_scores=_one_hot(a.class_id, n_classes, 1.0),
                box_id=1_000_000 + next_box_id, velocity=(vx, vy),
                gt_track_id=a.track_id)
            next_box_id += 1
            gt_tracks[a.track_id].append(fi, gt_box)
            if rng.random() < cfg.miss_prob:
                continue
            score = float(rng.uniform(*cfg.det_score_range))
            dets.append(Box3D(
                x=x + float(rng.normal(0, cfg.center_noise)),
                y=y + float(rng.normal(0, cfg.center_noise)),
                z=h / 2 + float(rng.normal(0, cfg.center_noise / 4)),
                w=max(0.05, w * (1 + float(rng.normal(0, cfg.size_noise)))),
                l=max(0.05, l * (1 + float(rng.normal(0, cfg.size_noise)))),
                h=max(0.05, h * (1 + float(rng.normal(0, cfg.size_noise)))),
                yaw=wrap_angle(yaw + float(rng.normal(0, cfg.yaw_noise))),
                t=t, frame_idx=fi,
                class_scores=_one_hot(a.class_id, n_classes, score),
                box_id=next_box_id - 1,
                det_score=score,
                velocity=(vx + float(rng.normal(0, cfg.vel_noise)),
                          vy + float(rng.normal(0, cfg.vel_noise))),
                gt_track_id=a.track_id))
        for _ in range(int(rng.poisson(cfg.clutter_rate))):
            ci = int(rng.integers(n_classes))
            base = AGENT_SIZES[cfg.class_names[ci]]
            score = float(rng.uniform(*cfg.clutter_score_range))
            l, w, h = (float(s * rng.uniform(0.8, 1.2)) for s in base)
            dets.append(Box3D(
                x=float(rng.uniform(-cfg.arena, cfg.arena)),
                y=float(rng.uniform(-cfg.arena, cfg.arena)),
                z=h / 2, w=w, l=l, h=h,
                yaw=wrap_angle(float(rng.uniform(-math.pi, math.pi))),
                t=t, frame_idx=fi,
                class_scores=_one_hot(ci, n_classes, score),
                box_id=next_box_id + 2_000_000,
                det_score=score,
                velocity=(float(rng.normal(0, 0.3)), float(rng.normal(0, 0.3))),
                gt_track_id=-1))
            next_box_id += 1
        scene.frames.append(DetectionFrame(fi, t, tuple(dets)))
    scene.gt_tracks = [gt_tracks[tid] for tid in sorted(gt_tracks)]
    return scene


def make_scenes(cfg: SynthConfig, n_scenes: int, seed: int | None = None,
                prefix: str = "synth") -> list[SceneDB]:
    """n independent scenes; scene i is a pure function of (seed, i)."""
    seed = cfg.seed if seed is None else seed
    return [gen_scene(cfg, rng_for(seed, 11, i), scene_id=f"{prefix}-{i:04d}")
            for i in range(n_scenes)]


def split_for_dbgen(scene: SceneDB, gt_stride: int = 1,
                    ) -> tuple[SceneDB, SceneDB]:
    """(unlabeled detections, GT-boxes scene) pair from a labeled scene.

    Feeds the detection-labeling pipeline: labels are stripped from the
    detections, and the GT tracks become their own scene, optionally
    subsampled to a lower rate (gt_stride frames apart).
    """
    dets = SceneDB(scene.scene_id, scene.frequency_hz, scene.class_names)
    for f in scene.frames:
        dets.frames.append(DetectionFrame(
            f.frame_idx, f.t, tuple(b.replace(gt_track_id=None) for b in f.boxes)))
    gt = SceneDB(scene.scene_id, scene.frequency_hz / gt_stride, scene.class_names)
    by_frame: dict[int, list[Box3D]] = {}
    for tr in scene.gt_tracks:
        for fi, b in tr.boxes:
            if fi % gt_stride == 0:
                by_frame.setdefault(fi, []).append(b)
    for fi in sorted(by_frame):
        boxes = by_frame[fi]
        gt.frames.append(DetectionFrame(fi // gt_stride, boxes[0].t,
                                        tuple(b.replace(frame_idx=fi // gt_stride)
                                              for b in boxes)))
    gt.gt_tracks = tracks_from_labels(gt.frames)
    return dets, gt
