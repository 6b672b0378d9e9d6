"""Turn raw detections + GT into a labeled track database.

Pipeline per scene: per-class score filter and greedy BEV NMS on the
detections, GT tracks interpolated up to the detection rate, then a
class-aware per-frame assignment of detections to GT boxes (cost 1 - IoU).
Matched detections inherit the GT track id, the rest get -1 (FP).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .assignment import hungarian
from .geometry import bev_iou
from .types import (Box3D, DetectionFrame, SceneDB, SlidingWindow, Track,
                    TrackStatus, wrap_angle)

# per class name with an "other" fallback
DEFAULT_NMS_IOU = {"car": 0.1, "pedestrian": 0.25, "other": 0.1}
DEFAULT_SCORE_MIN = {"car": 0.2, "pedestrian": 0.2, "vehicle": 0.2, "other": 0.1}


def _per_class(table: dict[str, float], name: str, what: str) -> float:
    if name in table:
        return float(table[name])
    if "other" in table:
        return float(table["other"])
    raise ValueError(f"no {what} configured for class {name!r}")


@dataclass
class DbGenConfig:
    nms_iou: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_NMS_IOU))
    score_min: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SCORE_MIN))
    match_iou_min: float = 1e-4
    target_hz: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 < self.match_iou_min < 1.0:
            raise ValueError("match_iou_min must be in (0, 1)")
        if self.target_hz <= 0:
            raise ValueError("target_hz must be positive")


def nms_filter(frame: DetectionFrame, cfg: DbGenConfig,
               class_names: tuple[str, ...]) -> DetectionFrame:
    """Score floor + greedy per-class NMS, strongest detection first.

    A detection is suppressed when its BEV IoU with an already-kept box of
    the same class exceeds the class threshold.  Ties in score break on
    box_id so the result is deterministic.
    """
    keep: list[Box3D] = []
    for ci in sorted(set(b.class_id for b in frame.boxes)):
        name = class_names[ci]
        floor = _per_class(cfg.score_min, name, "score floor")
        thresh = _per_class(cfg.nms_iou, name, "NMS IoU")
        cand = [b for b in frame.boxes if b.class_id == ci and b.det_score >= floor]
        cand.sort(key=lambda b: (-b.det_score, b.box_id))
        kept_c: list[Box3D] = []
        for b in cand:
            if all(bev_iou(b, k) <= thresh for k in kept_c):
                kept_c.append(b)
        keep.extend(kept_c)
    keep.sort(key=lambda b: b.box_id)
    return DetectionFrame(frame.frame_idx, frame.t, tuple(keep))


def _lerp_box(a: Box3D, b: Box3D, frame_idx: int, ts: float,
              box_id: int) -> Box3D:
    u = (ts - a.t) / (b.t - a.t)
    dyaw = wrap_angle(b.yaw - a.yaw)
    return Box3D(
        x=a.x + u * (b.x - a.x), y=a.y + u * (b.y - a.y), z=a.z + u * (b.z - a.z),
        w=a.w + u * (b.w - a.w), l=a.l + u * (b.l - a.l), h=a.h + u * (b.h - a.h),
        yaw=wrap_angle(a.yaw + u * dyaw),
        t=ts, frame_idx=frame_idx,
        class_scores=a.class_scores,
        box_id=box_id,
        det_score=a.det_score + u * (b.det_score - a.det_score),
        velocity=None,
        gt_track_id=a.gt_track_id,
        interpolated=True,
    )


def interpolate_track(track: Track, source_hz: float, target_hz: float,
                      t0: float, id_alloc: "itertools.count") -> Track:
    """Densify one GT track onto the target-rate frame grid.

    Original boxes pass through exactly; new boxes interpolate center and
    size linearly and yaw along the shortest arc, and get central
    difference velocities.  Frame indices are recomputed on the grid.
    """
    if target_hz < source_hz:
        raise ValueError(f"target rate {target_hz} below source {source_hz}")
    period = 1.0 / target_hz
    tol = 0.25 * period
    orig = [b for _, b in track.boxes]
    entries: list[Box3D] = []
    for a, b in zip(orig, orig[1:]):
        fi_a = round((a.t - t0) * target_hz)
        entries.append(a.replace(frame_idx=fi_a))
        k = fi_a + 1
        while True:
            ts = t0 + k * period
            if ts >= b.t - tol:
                break
            entries.append(_lerp_box(a, b, k, ts, next(id_alloc)))
            k += 1
    last = orig[-1]
    entries.append(last.replace(frame_idx=round((last.t - t0) * target_hz)))

    # central-difference velocities for the synthesized boxes
    out = Track(track.track_id, track.class_id, status=TrackStatus.CONFIRMED)
    for i, b in enumerate(entries):
        if b.interpolated:
            lo = entries[max(0, i - 1)]
            hi = entries[min(len(entries) - 1, i + 1)]
            dt = hi.t - lo.t
            vel = ((hi.x - lo.x) / dt, (hi.y - lo.y) / dt) if dt > 0 else None
            b = b.replace(velocity=vel)
        out.append(b.frame_idx, b)
    return out


def interpolate_gt(tracks: list[Track], source_hz: float, target_hz: float,
                   t0: float | None = None, id_start: int = 0) -> list[Track]:
    if not tracks:
        return []
    if t0 is None:
        t0 = min(tr.boxes[0][1].t for tr in tracks)
    alloc = itertools.count(id_start)
    return [interpolate_track(tr, source_hz, target_hz, t0, alloc) for tr in tracks]


def associate_gt(dets: DetectionFrame, gts: list[Box3D], cfg: DbGenConfig,
                 ) -> DetectionFrame:
    """Label detections with GT identities via class-aware optimal matching.

    Cost is 1 - BEV IoU; pairs at or below match_iou_min never match.
    Unmatched detections are labeled -1 (false positive).
    """
    labels: dict[int, int] = {}
    classes = sorted({b.class_id for b in dets.boxes} | {g.class_id for g in gts})
    for ci in classes:
        d = [b for b in dets.boxes if b.class_id == ci]
        g = [b for b in gts if b.class_id == ci]
        if not d or not g:
            continue
        iou = np.zeros((len(d), len(g)))
        for i, db in enumerate(d):
            for j, gb in enumerate(g):
                iou[i, j] = bev_iou(db, gb)
        for i, j in hungarian(1.0 - iou):
            if iou[i, j] > cfg.match_iou_min:
                labels[d[i].box_id] = g[j].gt_track_id if g[j].gt_track_id is not None else -1
    boxes = tuple(
        b.replace(gt_track_id=labels.get(b.box_id, -1)) for b in dets.boxes)
    return DetectionFrame(dets.frame_idx, dets.t, boxes)


def build_windows(scene: SceneDB, k: int, stride: int = 1) -> list[SlidingWindow]:
    """All length-k windows at the given stride; [] when the scene is short."""
    if k < 1 or stride < 1:
        raise ValueError("k and stride must be >= 1")
    frames = scene.frames
    return [SlidingWindow(tuple(frames[i:i + k]))
            for i in range(0, len(frames) - k + 1, stride)]


def generate_scene_db(dets: SceneDB, gt: SceneDB, cfg: DbGenConfig) -> SceneDB:
    """Filter + label one scene of raw detections against its GT scene."""
    if dets.class_names != gt.class_names:
        raise ValueError("detection and GT scenes disagree on class names")
    class_names = dets.class_names
    max_id = max((b.box_id for f in gt.frames for b in f.boxes), default=0)
    t0 = dets.frames[0].t if dets.frames else None
    gt_tracks = interpolate_gt(gt.gt_tracks, gt.frequency_hz, cfg.target_hz,
                               t0=t0, id_start=max_id + 1)
    by_frame: dict[int, list[Box3D]] = {}
    for tr in gt_tracks:
        for fi, b in tr.boxes:
            by_frame.setdefault(fi, []).append(b)
    period = 1.0 / cfg.target_hz
    out = SceneDB(scene_id=dets.scene_id, frequency_hz=cfg.target_hz,
                  class_names=class_names)
    t_start = dets.frames[0].t if dets.frames else 0.0
    for frame in dets.frames:
        filtered = nms_filter(frame, cfg, class_names)
        # reindex onto the target-rate grid so detections and GT agree
        fi = round((frame.t - t_start) * cfg.target_hz)
        if fi != frame.frame_idx:
            filtered = DetectionFrame(
                fi, frame.t, tuple(b.replace(frame_idx=fi) for b in filtered.boxes))
        gts = [g for g in by_frame.get(fi, [])
               if abs(g.t - frame.t) <= 0.5 * period]
        labeled = associate_gt(filtered, gts, cfg)
        out.frames.append(labeled)
    out.gt_tracks = gt_tracks
    return out
