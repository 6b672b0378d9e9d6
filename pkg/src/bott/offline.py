"""Offline tracking: aggregate link scores over all windows, then build
tracks globally.

Every stride-1 window scores its box pairs; a pair's final score is the
maximum it ever got.  Candidate links are filtered per class, thinned with
a link NMS (a box takes at most one link per opposing frame), merged into
consistent groups (at most one box per frame per track), and the frame
gaps inside each track are filled by interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .online import OnlineConfig, _lookup, gate_matrix
from .trackdb import build_windows
from .types import Box3D, SceneDB, Track, TrackStatus, wrap_angle


@dataclass(frozen=True)
class LinkCandidate:
    box_i: int          # earlier box id
    box_j: int          # later box id
    frame_i: int
    frame_j: int
    class_id: int
    score: float


def aggregate_links(scene: SceneDB, scorer, k: int, cfg: OnlineConfig,
                    ) -> list[LinkCandidate]:
    """Max link score per gated cross-frame pair over all k-windows."""
    best: dict[tuple[int, int], tuple[float, int, int, int]] = {}
    windows = build_windows(scene, k, stride=1)
    if not windows:
        raise ValueError(f"scene {scene.scene_id}: shorter than k={k}")
    for window in windows:
        if window.n_boxes == 0:
            continue
        ls, feats = scorer(window)
        boxes = window.boxes()
        gm = gate_matrix(boxes, boxes, cfg, scene.class_names)
        fis = feats.frame_idx_of
        gm &= fis[:, None] != fis[None, :]
        rows, cols = np.nonzero(np.triu(gm, k=1))
        if rows.size == 0:
            continue
        # orient every pair earlier -> later
        swap = fis[rows] > fis[cols]
        lo = np.where(swap, cols, rows)
        hi = np.where(swap, rows, cols)
        bids = feats.box_ids
        classes = feats.class_of
        scores = ls[rows, cols]
        for a, b, s in zip(lo, hi, scores):
            key = (int(bids[a]), int(bids[b]))
            s = float(s)
            prev = best.get(key)
            if prev is None or s > prev[0]:
                best[key] = (s, int(fis[a]), int(fis[b]), int(classes[a]))
    return [LinkCandidate(box_i=k2[0], box_j=k2[1], frame_i=v[1], frame_j=v[2],
                          class_id=v[3], score=v[0])
            for k2, v in sorted(best.items())]


def select_links(cands: list[LinkCandidate], cfg: OnlineConfig,
                 class_names: tuple[str, ...]) -> list[LinkCandidate]:
    """Per-class score floor, then greedy link NMS in score order.

    Accepting a link (i@f1, j@f2) blocks any other link of i into f2 and
    of j into f1, so each box links to at most one box per opposing frame.
    """
    kept: list[LinkCandidate] = []
    blocked: set[tuple[int, int]] = set()
    order = sorted(cands, key=lambda c: (-c.score, c.box_i, c.box_j))
    for c in order:
        if c.score < _lookup(cfg.min_link_score, class_names[c.class_id]):
            continue
        if (c.box_i, c.frame_j) in blocked or (c.box_j, c.frame_i) in blocked:
            continue
        kept.append(c)
        blocked.add((c.box_i, c.frame_j))
        blocked.add((c.box_j, c.frame_i))
    return kept


class _UnionFind:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, a: int) -> int:
        p = self.parent.setdefault(a, a)
        if p != a:
            p = self.parent[a] = self.find(p)
        return p

    def union(self, a: int, b: int) -> None:
        self.parent[self.find(b)] = self.find(a)


def build_tracks(selected: list[LinkCandidate], scene: SceneDB) -> list[Track]:
    """Merge links into tracks, strongest first, one box per frame.

    A link whose union would put two different boxes into one frame is
    dropped: earlier (higher-scoring) links win.
    """
    box_by_id: dict[int, Box3D] = {}
    frame_of: dict[int, int] = {}
    for f in scene.frames:
        for b in f.boxes:
            box_by_id[b.box_id] = b
            frame_of[b.box_id] = f.frame_idx
    uf = _UnionFind()
    members: dict[int, dict[int, int]] = {}   # root -> frame -> box_id

    def group(bid: int) -> dict[int, int]:
        return members.setdefault(uf.find(bid), {frame_of[bid]: bid})

    for c in sorted(selected, key=lambda c: (-c.score, c.box_i, c.box_j)):
        ri, rj = uf.find(c.box_i), uf.find(c.box_j)
        if ri == rj:
            continue
        gi, gj = group(c.box_i), group(c.box_j)
        conflict = False
        for fi, bid in gj.items():
            if gi.get(fi, bid) != bid:
                conflict = True
                break
        if conflict:
            continue
        uf.union(c.box_i, c.box_j)
        merged = dict(gi)
        merged.update(gj)
        members.pop(ri, None)
        members.pop(rj, None)
        members[uf.find(c.box_i)] = merged

    # every detection tracks: boxes no link touched become singletons
    grouped = {bid for g in members.values() for bid in g.values()}
    all_groups = list(members.values())
    for f in scene.frames:
        for b in f.boxes:
            if b.box_id not in grouped:
                all_groups.append({f.frame_idx: b.box_id})

    all_groups.sort(key=lambda g: (min(g), g[min(g)]))
    tracks = []
    for tid, g in enumerate(all_groups):
        first_box = box_by_id[g[min(g)]]
        tr = Track(tid, first_box.class_id, status=TrackStatus.CONFIRMED)
        for fi in sorted(g):
            tr.append(fi, box_by_id[g[fi]])
        tracks.append(tr)
    return tracks


def interpolate_tracks(tracks: list[Track], frequency_hz: float,
                       id_start: int) -> list[Track]:
    """Fill frame gaps with linearly interpolated, flagged boxes."""
    out = []
    next_id = id_start
    for tr in tracks:
        filled = Track(tr.track_id, tr.class_id, status=TrackStatus.CONFIRMED)
        for (f1, a), (f2, b) in zip(tr.boxes, tr.boxes[1:]):
            filled_boxes = [(f1, a)]
            span = f2 - f1
            dyaw = wrap_angle(b.yaw - a.yaw)
            for f in range(f1 + 1, f2):
                u = (f - f1) / span
                vel = None
                if a.velocity is not None and b.velocity is not None:
                    vel = (a.velocity[0] + u * (b.velocity[0] - a.velocity[0]),
                           a.velocity[1] + u * (b.velocity[1] - a.velocity[1]))
                filled_boxes.append((f, Box3D(
                    x=a.x + u * (b.x - a.x), y=a.y + u * (b.y - a.y),
                    z=a.z + u * (b.z - a.z),
                    w=a.w + u * (b.w - a.w), l=a.l + u * (b.l - a.l),
                    h=a.h + u * (b.h - a.h),
                    yaw=wrap_angle(a.yaw + u * dyaw),
                    t=a.t + u * (b.t - a.t),
                    frame_idx=f,
                    class_scores=tuple(
                        sa + u * (sb - sa)
                        for sa, sb in zip(a.class_scores, b.class_scores)),
                    box_id=next_id + (f - f1 - 1),
                    det_score=a.det_score + u * (b.det_score - a.det_score),
                    velocity=vel,
                    gt_track_id=None,
                    interpolated=True)))
            next_id += max(0, span - 1)
            for fi, bx in filled_boxes:
                filled.append(fi, bx)
        if not tr.boxes:
            out.append(filled)
            continue
        f_last, b_last = tr.boxes[-1]
        filled.append(f_last, b_last)
        out.append(filled)
    return out


def run_offline(scene: SceneDB, scorer, k: int, cfg: OnlineConfig,
                interpolate: bool = True) -> list[Track]:
    """Whole-scene offline tracking; confirmed tracks, gaps filled."""
    cands = aggregate_links(scene, scorer, k, cfg)
    selected = select_links(cands, cfg, scene.class_names)
    tracks = build_tracks(selected, scene)
    if interpolate:
        max_id = max((b.box_id for f in scene.frames for b in f.boxes), default=0)
        tracks = interpolate_tracks(tracks, scene.frequency_hz, max_id + 1)
    return tracks
