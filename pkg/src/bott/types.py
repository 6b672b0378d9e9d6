"""Core data types for box-level 3D multi-object tracking.

Everything downstream (featurization, linking, tracking, metrics) works in
terms of these containers.  Boxes are immutable value objects; tracks are
mutable because they grow online.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a > math.pi:
        a -= TWO_PI
    elif a <= -math.pi:
        a += TWO_PI
    return a


class TrackStatus(enum.Enum):
    UNCONFIRMED = "unconfirmed"
    CONFIRMED = "confirmed"
    TERMINATED = "terminated"


@dataclass(frozen=True, slots=True)
class Box3D:
    """An upright 3D bounding box with scores and optional GT annotation.

    (x, y, z) is the box center in scene coordinates, (w, l, h) its size
    with l along the heading axis, yaw the heading in (-pi, pi].  t is the
    capture timestamp in seconds and frame_idx the frame it belongs to.
    class_scores holds one confidence per class; the argmax is the box
    class.  velocity is the (vx, vy) ground velocity estimate if the
    detector provides one.  gt_track_id is None when unlabeled, -1 for a
    confirmed false positive, and a GT identity otherwise.
    """

    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    yaw: float
    t: float
    frame_idx: int
    class_scores: tuple[float, ...]
    box_id: int
    det_score: float = 1.0
    velocity: tuple[float, float] | None = None
    gt_track_id: int | None = None
    interpolated: bool = False

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.l > 0 and self.h > 0):
            raise ValueError(f"box {self.box_id}: non-positive size {(self.w, self.l, self.h)}")
        if not (-math.pi < self.yaw <= math.pi):
            raise ValueError(f"box {self.box_id}: yaw {self.yaw} outside (-pi, pi]")
        if not self.class_scores:
            raise ValueError(f"box {self.box_id}: empty class_scores")
        if any(s < 0 for s in self.class_scores):
            raise ValueError(f"box {self.box_id}: negative class score")

    @property
    def class_id(self) -> int:
        scores = self.class_scores
        best = 0
        for i in range(1, len(scores)):
            if scores[i] > scores[best]:
                best = i
        return best

    @property
    def is_false_positive(self) -> bool:
        return self.gt_track_id is not None and self.gt_track_id < 0

    @property
    def is_labeled(self) -> bool:
        return self.gt_track_id is not None

    @property
    def speed(self) -> float | None:
        if self.velocity is None:
            return None
        return math.hypot(self.velocity[0], self.velocity[1])

    def replace(self, **changes) -> "Box3D":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class DetectionFrame:
    """All boxes captured at one timestamp."""

    frame_idx: int
    t: float
    boxes: tuple[Box3D, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        seen = set()
        for b in self.boxes:
            if b.frame_idx != self.frame_idx or b.t != self.t:
                raise ValueError(
                    f"box {b.box_id} stamped ({b.frame_idx}, {b.t}) in frame "
                    f"({self.frame_idx}, {self.t})"
                )
            if b.box_id in seen:
                raise ValueError(f"duplicate box_id {b.box_id} in frame {self.frame_idx}")
            seen.add(b.box_id)

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class SlidingWindow:
    """K consecutive frames presented to the linking network at once.

    Canonical box order is frames in time order, boxes within a frame in
    stored order; every matrix the network produces is indexed that way.
    """

    frames: tuple[DetectionFrame, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError("empty window")
        for a, b in zip(self.frames, self.frames[1:]):
            if not b.t > a.t:
                raise ValueError(f"frame timestamps not increasing: {a.t} -> {b.t}")

    @property
    def k(self) -> int:
        return len(self.frames)

    @property
    def n_boxes(self) -> int:
        return sum(len(f) for f in self.frames)

    def boxes(self) -> list[Box3D]:
        out: list[Box3D] = []
        for f in self.frames:
            out.extend(f.boxes)
        return out


class Track:
    """A single object hypothesis: an ordered run of boxes plus lifecycle."""

    __slots__ = ("track_id", "boxes", "status", "last_update_t", "class_id")

    def __init__(self, track_id: int, class_id: int,
                 status: TrackStatus = TrackStatus.UNCONFIRMED):
        self.track_id = track_id
        self.class_id = class_id
        self.status = status
        self.boxes: list[tuple[int, Box3D]] = []
        self.last_update_t = -math.inf

    def append(self, frame_idx: int, box: Box3D) -> None:
        if self.status is TrackStatus.TERMINATED:
            raise ValueError(f"track {self.track_id}: append after termination")
        if self.boxes and frame_idx <= self.boxes[-1][0]:
            raise ValueError(
                f"track {self.track_id}: frame {frame_idx} not after {self.boxes[-1][0]}"
            )
        self.boxes.append((frame_idx, box))
        self.last_update_t = box.t

    def confirm(self) -> None:
        if self.status is not TrackStatus.UNCONFIRMED:
            raise ValueError(f"track {self.track_id}: confirm from {self.status}")
        self.status = TrackStatus.CONFIRMED

    def terminate(self) -> None:
        if self.status is TrackStatus.TERMINATED:
            raise ValueError(f"track {self.track_id}: already terminated")
        self.status = TrackStatus.TERMINATED

    @property
    def tail(self) -> tuple[int, Box3D]:
        if not self.boxes:
            raise ValueError(f"track {self.track_id} is empty")
        return self.boxes[-1]

    @property
    def frame_indices(self) -> list[int]:
        return [f for f, _ in self.boxes]

    def __len__(self) -> int:
        return len(self.boxes)

    def __repr__(self) -> str:
        return (f"Track(id={self.track_id}, class={self.class_id}, "
                f"n={len(self.boxes)}, {self.status.value})")


@dataclass
class SceneDB:
    """One scene: detection frames at a fixed rate plus GT tracks.

    frames are time ordered and evenly spaced at frequency_hz.  gt_tracks
    group the gt_track_id-labeled boxes; a scene without labels has an
    empty list.
    """

    scene_id: str
    frequency_hz: float
    class_names: tuple[str, ...]
    frames: list[DetectionFrame] = field(default_factory=list)
    gt_tracks: list[Track] = field(default_factory=list)

    @property
    def n_boxes(self) -> int:
        return sum(len(f) for f in self.frames)

    def frame_at(self, frame_idx: int) -> DetectionFrame:
        for f in self.frames:
            if f.frame_idx == frame_idx:
                return f
        raise KeyError(frame_idx)


def tracks_from_labels(frames: list[DetectionFrame], class_names: tuple[str, ...] | None = None,
                       ) -> list[Track]:
    """Group gt_track_id-labeled boxes (id >= 0) into Track objects."""
    by_id: dict[int, list[tuple[int, Box3D]]] = {}
    for f in frames:
        for b in f.boxes:
            if b.gt_track_id is not None and b.gt_track_id >= 0:
                by_id.setdefault(b.gt_track_id, []).append((f.frame_idx, b))
    tracks = []
    for tid in sorted(by_id):
        entries = sorted(by_id[tid], key=lambda e: e[0])
        tr = Track(tid, entries[0][1].class_id, status=TrackStatus.CONFIRMED)
        for fi, b in entries:
            tr.append(fi, b)
        tracks.append(tr)
    return tracks
