"""Turn a sliding window of boxes into the per-box feature matrix.

Each box becomes (x - x_min, y - y_min, z - z_min, w, l, h, sin yaw,
cos yaw, dt, c_1..c_C): mins taken over the whole window so the features
are translation invariant, dt the box timestamp minus the mean of the
first and last frame timestamps, and c_* the per-class scores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .types import Box3D, DetectionFrame, SlidingWindow, wrap_angle

N_GEOM_FEATURES = 9


@dataclass
class RawFeatureMatrix:
    """Window features plus the bookkeeping to map rows back to boxes."""

    values: np.ndarray          # (N, 9 + C) float64
    frame_of: np.ndarray        # (N,) window-local frame index per row
    frame_idx_of: np.ndarray    # (N,) scene frame index per row
    box_ids: np.ndarray         # (N,) box_id per row
    class_of: np.ndarray        # (N,) argmax class per row

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def feature_dim(n_classes: int) -> int:
    return N_GEOM_FEATURES + n_classes


def featurize(window: SlidingWindow, n_classes: int) -> RawFeatureMatrix:
    boxes = window.boxes()
    if not boxes:
        raise ValueError("window has no boxes")
    n = len(boxes)
    for b in boxes:
        if len(b.class_scores) != n_classes:
            raise ValueError(
                f"box {b.box_id} has {len(b.class_scores)} class scores, expected {n_classes}")
    t_mid = 0.5 * (window.frames[0].t + window.frames[-1].t)
    x_min = min(b.x for b in boxes)
    y_min = min(b.y for b in boxes)
    z_min = min(b.z for b in boxes)

    values = np.empty((n, feature_dim(n_classes)), dtype=np.float64)
    frame_of = np.empty(n, dtype=np.int64)
    frame_idx_of = np.empty(n, dtype=np.int64)
    box_ids = np.empty(n, dtype=np.int64)
    class_of = np.empty(n, dtype=np.int64)

    row = 0
    for wi, frame in enumerate(window.frames):
        for b in frame.boxes:
            values[row, 0] = b.x - x_min
            values[row, 1] = b.y - y_min
            values[row, 2] = b.z - z_min
            values[row, 3] = b.w
            values[row, 4] = b.l
            values[row, 5] = b.h
            values[row, 6] = math.sin(b.yaw)
            values[row, 7] = math.cos(b.yaw)
            values[row, 8] = b.t - t_mid
            values[row, N_GEOM_FEATURES:] = b.class_scores
            frame_of[row] = wi
            frame_idx_of[row] = b.frame_idx
            box_ids[row] = b.box_id
            class_of[row] = b.class_id
            row += 1
    return RawFeatureMatrix(values, frame_of, frame_idx_of, box_ids, class_of)


@dataclass
class AugmentConfig:
    """Training-time window augmentation.

    flip_x / flip_y are the probabilities of mirroring across the x and y
    axis; yaw_range is the half-width of the uniform scene rotation in
    radians; drop_track_prob removes whole GT tracks (and FP boxes at the
    same rate).  Windows bigger than max_boxes are thinned the same way.
    """

    max_boxes: int = 3000
    flip_x: float = 0.5
    flip_y: float = 0.5
    yaw_range: float = math.pi / 2
    drop_track_prob: float = 0.1

    def __post_init__(self) -> None:
        if self.max_boxes < 1:
            raise ValueError("max_boxes must be >= 1")
        for name in ("flip_x", "flip_y", "drop_track_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        if not 0.0 <= self.yaw_range <= math.pi:
            raise ValueError(f"yaw_range must be in [0, pi], got {self.yaw_range}")


def _flip_across_x(b: Box3D) -> Box3D:
    vel = (b.velocity[0], -b.velocity[1]) if b.velocity is not None else None
    return b.replace(y=-b.y, yaw=wrap_angle(-b.yaw), velocity=vel)


def _flip_across_y(b: Box3D) -> Box3D:
    vel = (-b.velocity[0], b.velocity[1]) if b.velocity is not None else None
    return b.replace(x=-b.x, yaw=wrap_angle(math.pi - b.yaw), velocity=vel)


def _rotate(b: Box3D, delta: float) -> Box3D:
    c, s = math.cos(delta), math.sin(delta)
    vel = None
    if b.velocity is not None:
        vel = (c * b.velocity[0] - s * b.velocity[1],
               s * b.velocity[0] + c * b.velocity[1])
    return b.replace(x=c * b.x - s * b.y, y=s * b.x + c * b.y,
                     yaw=wrap_angle(b.yaw + delta), velocity=vel)


def _shift(b: Box3D, dx: float, dy: float) -> Box3D:
    return b.replace(x=b.x + dx, y=b.y + dy)


def _drop_boxes(frames: list[list[Box3D]], rate: float,
                rng: np.random.Generator) -> list[list[Box3D]]:
    # whole GT tracks go together; FP/unlabeled boxes drop independently
    track_ids = sorted({b.gt_track_id for fr in frames for b in fr
                        if b.gt_track_id is not None and b.gt_track_id >= 0})
    dropped = {tid for tid in track_ids if rng.random() < rate}
    out = []
    for fr in frames:
        kept = []
        for b in fr:
            if b.gt_track_id is not None and b.gt_track_id >= 0:
                if b.gt_track_id not in dropped:
                    kept.append(b)
            elif not rng.random() < rate:
                kept.append(b)
        out.append(kept)
    return out


def _drop_one_track(frames: list[list[Box3D]],
                    rng: np.random.Generator) -> list[list[Box3D]]:
    track_ids = sorted({b.gt_track_id for fr in frames for b in fr
                        if b.gt_track_id is not None and b.gt_track_id >= 0})
    if track_ids:
        victim = track_ids[int(rng.integers(len(track_ids)))]
        return [[b for b in fr if b.gt_track_id != victim] for fr in frames]
    # only FP/unlabeled boxes left: remove one of those instead
    flat = [(fi, b.box_id) for fi, fr in enumerate(frames) for b in fr]
    fi, bid = flat[int(rng.integers(len(flat)))]
    return [[b for b in fr if not (i == fi and b.box_id == bid)]
            for i, fr in enumerate(frames)]


def augment(window: SlidingWindow, cfg: AugmentConfig,
            rng: np.random.Generator) -> SlidingWindow:
    """Randomized drop / recenter / flip / rotate, structure-preserving.

    GT link structure (shared gt_track_id) survives: tracks are dropped
    whole or not at all.  Sizes, class scores, timestamps and labels of
    surviving boxes are untouched.  The draw order is fixed, so one rng
    seed gives one augmentation.
    """
    frames = [list(f.boxes) for f in window.frames]
    if cfg.drop_track_prob > 0.0:
        frames = _drop_boxes(frames, cfg.drop_track_prob, rng)
    total = sum(len(fr) for fr in frames)
    while total > cfg.max_boxes:
        frames = _drop_boxes(frames, 1.0 - cfg.max_boxes / total, rng)
        new_total = sum(len(fr) for fr in frames)
        if new_total == total:
            # unlucky round: force one uniformly chosen track out
            frames = _drop_one_track(frames, rng)
            new_total = sum(len(fr) for fr in frames)
        total = new_total

    boxes = [b for fr in frames for b in fr]
    if boxes:
        cx = 0.5 * (max(b.x for b in boxes) + min(b.x for b in boxes))
        cy = 0.5 * (max(b.y for b in boxes) + min(b.y for b in boxes))
        frames = [[_shift(b, -cx, -cy) for b in fr] for fr in frames]

    if rng.random() < cfg.flip_x:
        frames = [[_flip_across_x(b) for b in fr] for fr in frames]
    if rng.random() < cfg.flip_y:
        frames = [[_flip_across_y(b) for b in fr] for fr in frames]
    delta = rng.uniform(-cfg.yaw_range, cfg.yaw_range)
    if delta != 0.0:
        frames = [[_rotate(b, delta) for b in fr] for fr in frames]

    new_frames = tuple(
        DetectionFrame(frame_idx=f.frame_idx, t=f.t, boxes=tuple(fr))
        for f, fr in zip(window.frames, frames))
    return SlidingWindow(new_frames)
