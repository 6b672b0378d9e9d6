"""Gated nearest-neighbor greedy tracker, the classical reference.

Same gates and lifecycle as the learned tracker, but association is
greedy on center distance to each live track's last box.  Serves as the
floor the learned linker has to beat.
"""
from __future__ import annotations

from .geometry import center_distance
from .online import OnlineConfig, gate
from .types import Box3D, DetectionFrame, SceneDB, Track, TrackStatus


class GreedyNNTracker:
    def __init__(self, cfg: OnlineConfig, class_names: tuple[str, ...]):
        self.cfg = cfg
        self.class_names = tuple(class_names)
        self.tracks: list[Track] = []
        self.next_track_id = 0
        self.last_t: float | None = None

    def live_tracks(self) -> list[Track]:
        return [tr for tr in self.tracks if tr.status is not TrackStatus.TERMINATED]

    def step(self, frame: DetectionFrame) -> list[tuple[int, Box3D]]:
        if self.last_t is not None and frame.t <= self.last_t:
            raise ValueError(f"frame at t={frame.t} not after t={self.last_t}")
        self.last_t = frame.t

        dets = list(frame.boxes)
        live = self.live_tracks()
        pairs = []
        for i, det in enumerate(dets):
            for j, tr in enumerate(live):
                tail = tr.tail[1]
                if gate(det, tail, self.cfg, self.class_names):
                    pairs.append((center_distance(det, tail), i, j))
        pairs.sort()
        used_d: set[int] = set()
        used_t: set[int] = set()
        for _, i, j in pairs:
            if i in used_d or j in used_t:
                continue
            used_d.add(i)
            used_t.add(j)
            tr = live[j]
            tr.append(frame.frame_idx, dets[i])
            if tr.status is TrackStatus.UNCONFIRMED and len(tr) >= self.cfg.n_birth:
                tr.confirm()
        for i, det in enumerate(dets):
            if i in used_d:
                continue
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


def run_baseline(scene: SceneDB, cfg: OnlineConfig,
                 ) -> tuple[list[tuple[int, Box3D]], GreedyNNTracker]:
    tracker = GreedyNNTracker(cfg, scene.class_names)
    rows: list[tuple[int, Box3D]] = []
    for frame in scene.frames:
        rows.extend(tracker.step(frame))
    return rows, tracker
