"""Online tracking: per-frame association against windowed link scores.

Each step appends the new frame to a K-frame buffer, runs the network once
on the whole window, and builds a detection-to-track affinity: the maximum
gated linking score between the detection and any earlier box of the track
still inside the window.  Assignment is optimal on 1 - affinity, with per
class minimum-score rejection.  No motion model anywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import hungarian
from .types import Box3D, DetectionFrame, SceneDB, SlidingWindow, Track, TrackStatus

DEFAULT_GATE_SPEED = {"bicycle": 20.0, "pedestrian": 10.0, "other": 35.0}
DEFAULT_DISTANCE_FLOOR = {"bicycle": 2.0, "pedestrian": 1.5, "other": 3.0}
DEFAULT_MIN_LINK_SCORE = {"bicycle": 0.6, "car": 0.4, "other": 0.5}


def _lookup(table: dict[str, float], name: str) -> float:
    if name in table:
        return float(table[name])
    if "other" in table:
        return float(table["other"])
    raise ValueError(f"class {name!r} missing from gate table and no 'other' entry")


@dataclass
class OnlineConfig:
    k: int = 16
    n_birth: int = 1
    t_term: float = 2.0
    max_speed: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_GATE_SPEED))
    distance_floor: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_DISTANCE_FLOOR))
    min_link_score: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_MIN_LINK_SCORE))
    static_speed_thresh: float = 0.5
    static_max_dist: float = 2.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_birth < 1:
            raise ValueError("n_birth must be >= 1")
        if self.t_term <= 0:
            raise ValueError("t_term must be positive")


def _is_static(box: Box3D, cfg: OnlineConfig) -> bool:
    s = box.speed
    return s is not None and s < cfg.static_speed_thresh


def gate(b_new: Box3D, b_old: Box3D, cfg: OnlineConfig,
         class_names: tuple[str, ...]) -> bool:
    """May these two boxes belong to one object?

    Same class, center distance within max(max_speed * dt, floor), and a
    static-flagged box (reported speed below threshold) may not move more
    than static_max_dist.
    """
    if b_new.class_id != b_old.class_id:
        return False
    name = class_names[b_new.class_id]
    dt = abs(b_new.t - b_old.t)
    dist = math.hypot(b_new.x - b_old.x, b_new.y - b_old.y)
    cap = max(_lookup(cfg.max_speed, name) * dt, _lookup(cfg.distance_floor, name))
    if dist > cap:
        return False
    if (_is_static(b_new, cfg) or _is_static(b_old, cfg)) and dist > cfg.static_max_dist:
        return False
    return True


def gate_matrix(news: list[Box3D], olds: list[Box3D], cfg: OnlineConfig,
                class_names: tuple[str, ...]) -> np.ndarray:
    """Vectorized gate() for all pairs; (len(news), len(olds)) bool."""
    if not news or not olds:
        return np.zeros((len(news), len(olds)), dtype=bool)
    def cols(boxes, f):
        return np.array([f(b) for b in boxes])
    cn, co = cols(news, lambda b: b.class_id), cols(olds, lambda b: b.class_id)
    xn, xo = cols(news, lambda b: b.x), cols(olds, lambda b: b.x)
    yn, yo = cols(news, lambda b: b.y), cols(olds, lambda b: b.y)
    tn, to = cols(news, lambda b: b.t), cols(olds, lambda b: b.t)
    sn = cols(news, lambda b: _is_static(b, cfg))
    so = cols(olds, lambda b: _is_static(b, cfg))
    speeds = np.array([_lookup(cfg.max_speed, class_names[c]) for c in cn])
    floors = np.array([_lookup(cfg.distance_floor, class_names[c]) for c in cn])
    ok = cn[:, None] == co[None, :]
    dist = np.hypot(xn[:, None] - xo[None, :], yn[:, None] - yo[None, :])
    dt = np.abs(tn[:, None] - to[None, :])
    cap = np.maximum(speeds[:, None] * dt, floors[:, None])
    ok &= dist <= cap
    either_static = sn[:, None] | so[None, :]
    ok &= ~(either_static & (dist > cfg.static_max_dist))
    return ok


class OnlineTracker:
    """Streaming multi-object tracker around a window link scorer.

    scorer is called exactly once per step (on the current window); track
    birth, confirmation, termination and publishing follow the n_birth /
    t_term lifecycle.  Track ids are never reused.
    """

    def __init__(self, scorer, cfg: OnlineConfig, class_names: tuple[str, ...]):
        self.scorer = scorer
        self.cfg = cfg
        self.class_names = tuple(class_names)
        self.tracks: list[Track] = []
        self.buffer: list[DetectionFrame] = []
        self.next_track_id = 0
        self.last_t: float | None = None

    def live_tracks(self) -> list[Track]:
        return [tr for tr in self.tracks if tr.status is not TrackStatus.TERMINATED]

    def step(self, frame: DetectionFrame) -> list[tuple[int, Box3D]]:
        """Consume one frame; return the (track_id, box) rows to publish."""
        if self.last_t is not None and frame.t <= self.last_t:
            raise ValueError(f"frame at t={frame.t} not after t={self.last_t}")
        self.last_t = frame.t
        self.buffer.append(frame)
        if len(self.buffer) > self.cfg.k:
            self.buffer.pop(0)

        matches: list[tuple[Box3D, Track]] = []
        unmatched = list(frame.boxes)
        window = SlidingWindow(tuple(self.buffer))
        if window.n_boxes > 0 and frame.boxes:
            ls, feats = self.scorer(window)
            matches, unmatched = self._associate(frame, ls, feats)
        elif window.n_boxes > 0 and len(self.buffer) > 1:
            # keep the one-forward-per-step cadence even on empty frames
            self.scorer(window)

        for det, tr in matches:
            tr.append(frame.frame_idx, det)
            if tr.status is TrackStatus.UNCONFIRMED and len(tr) >= self.cfg.n_birth:
                tr.confirm()
        for det in unmatched:
            tr = Track(self.next_track_id, det.class_id)
            self.next_track_id += 1
            tr.append(frame.frame_idx, det)
            if len(tr) >= self.cfg.n_birth:
                tr.confirm()
            self.tracks.append(tr)
        for tr in self.live_tracks():
            if frame.t - tr.last_update_t > self.cfg.t_term:
                tr.terminate()

        return [(tr.track_id, tr.tail[1])
                for tr in self.tracks
                if tr.status is TrackStatus.CONFIRMED and tr.tail[0] == frame.frame_idx]

    def _associate(self, frame: DetectionFrame, ls: np.ndarray, feats):
        dets = list(frame.boxes)
        row_of = {int(b): i for i, b in enumerate(feats.box_ids)}
        det_rows = np.array([row_of[b.box_id] for b in dets])
        first_fi = self.buffer[0].frame_idx

        live = self.live_tracks()
        hist_boxes: list[Box3D] = []
        owner: list[int] = []
        for j, tr in enumerate(live):
            for fi, b in reversed(tr.boxes):
                if fi < first_fi:
                    break
                if fi >= frame.frame_idx:
                    continue
                if b.box_id in row_of:
                    hist_boxes.append(b)
                    owner.append(j)
        if not hist_boxes:
            return [], dets

        hist_rows = np.array([row_of[b.box_id] for b in hist_boxes])
        gm = gate_matrix(dets, hist_boxes, self.cfg, self.class_names)
        scores = np.where(gm, ls[np.ix_(det_rows, hist_rows)], 0.0)
        owner = np.asarray(owner)
        affinity = np.zeros((len(dets), len(live)))
        for j in range(len(live)):
            cols = owner == j
            if cols.any():
                affinity[:, j] = scores[:, cols].max(axis=1)

        thr = np.array([_lookup(self.cfg.min_link_score, self.class_names[b.class_id])
                        for b in dets])
        matches = []
        taken = set()
        for i, j in hungarian(1.0 - affinity):
            if affinity[i, j] >= thr[i] and affinity[i, j] > 0.0:
                matches.append((dets[i], live[j]))
                taken.add(i)
        unmatched = [b for i, b in enumerate(dets) if i not in taken]
        return matches, unmatched


def run_online(scene: SceneDB, scorer, cfg: OnlineConfig,
               ) -> tuple[list[tuple[int, Box3D]], OnlineTracker]:
    """Track a whole scene; rows are every published (track_id, box)."""
    tracker = OnlineTracker(scorer, cfg, scene.class_names)
    rows: list[tuple[int, Box3D]] = []
    for frame in scene.frames:
        rows.extend(tracker.step(frame))
    return rows, tracker
