"""CLEAR-style tracking metrics on xy center distance.

Per frame and per class, predictions match GT boxes by optimal assignment
under a 2 m center-distance radius.  MOTA = 1 - (FN + FP + IDS) / GT; an
identity switch is counted when a GT identity's matched track id differs
from the previous matched frame.  samota averages MOTA (clamped at 0)
over 40 evenly spaced detection-score thresholds, re-filtering tracks by
their mean detection score at each point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment import hungarian
from .types import Box3D, Track

MATCH_RADIUS = 2.0
SAMOTA_POINTS = 40


@dataclass
class ClassStats:
    gt: int = 0
    matches: int = 0
    fp: int = 0
    fn: int = 0
    ids: int = 0

    @property
    def mota(self) -> float:
        if self.gt == 0:
            raise ValueError("MOTA undefined without GT boxes")
        return 1.0 - (self.fn + self.fp + self.ids) / self.gt

    @property
    def recall(self) -> float:
        return self.matches / self.gt if self.gt else 0.0

    @property
    def mismatch_ratio(self) -> float:
        return self.ids / self.matches if self.matches else 0.0

    def add(self, other: "ClassStats") -> None:
        self.gt += other.gt
        self.matches += other.matches
        self.fp += other.fp
        self.fn += other.fn
        self.ids += other.ids

    def to_dict(self) -> dict:
        out = {"gt": self.gt, "matches": self.matches, "fp": self.fp,
               "fn": self.fn, "ids": self.ids,
               "recall": self.recall, "mismatch_ratio": self.mismatch_ratio}
        out["mota"] = self.mota if self.gt else None
        return out


@dataclass
class EvalResult:
    overall: ClassStats
    per_class: dict[str, ClassStats]
    samota: float | None = None
    samota_per_class: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"overall": self.overall.to_dict(),
               "per_class": {k: v.to_dict() for k, v in self.per_class.items()}}
        out["overall"]["samota"] = self.samota
        for name, v in self.samota_per_class.items():
            out["per_class"][name]["samota"] = v
        return out


def match_frame(preds: list[tuple[int, Box3D]], gts: list[tuple[int, Box3D]],
                radius: float = MATCH_RADIUS) -> list[tuple[int, int]]:
    """Optimal per-class matching; (pred index, gt index) pairs within radius."""
    out: list[tuple[int, int]] = []
    classes = sorted({b.class_id for _, b in preds} | {b.class_id for _, b in gts})
    for ci in classes:
        pi = [i for i, (_, b) in enumerate(preds) if b.class_id == ci]
        gi = [j for j, (_, b) in enumerate(gts) if b.class_id == ci]
        if not pi or not gi:
            continue
        cost = np.zeros((len(pi), len(gi)))
        for a, i in enumerate(pi):
            pb = preds[i][1]
            for b, j in enumerate(gi):
                gb = gts[j][1]
                cost[a, b] = np.hypot(pb.x - gb.x, pb.y - gb.y)
        for a, b in hungarian(cost):
            if cost[a, b] <= radius:
                out.append((pi[a], gi[b]))
    return out


def _frame_rows(tracks: list[Track]) -> dict[int, list[tuple[int, Box3D]]]:
    rows: dict[int, list[tuple[int, Box3D]]] = {}
    for tr in tracks:
        for fi, b in tr.boxes:
            rows.setdefault(fi, []).append((tr.track_id, b))
    return rows


def _accumulate(pred_tracks: list[Track], gt_tracks: list[Track],
                class_names: tuple[str, ...], radius: float,
                per_class: dict[str, ClassStats],
                last_match: dict[int, int]) -> None:
    preds_by_frame = _frame_rows(pred_tracks)
    gts_by_frame = _frame_rows(gt_tracks)
    for fi in sorted(set(preds_by_frame) | set(gts_by_frame)):
        preds = preds_by_frame.get(fi, [])
        gts = gts_by_frame.get(fi, [])
        pairs = match_frame(preds, gts, radius)
        matched_p = {i for i, _ in pairs}
        matched_g = {j for _, j in pairs}
        for i, j in pairs:
            tid = preds[i][0]
            gid = gts[j][0]
            cname = class_names[gts[j][1].class_id]
            st = per_class.setdefault(cname, ClassStats())
            st.gt += 1
            st.matches += 1
            if gid in last_match and last_match[gid] != tid:
                st.ids += 1
            last_match[gid] = tid
        for j, (_, gb) in enumerate(gts):
            if j not in matched_g:
                st = per_class.setdefault(class_names[gb.class_id], ClassStats())
                st.gt += 1
                st.fn += 1
        for i, (_, pb) in enumerate(preds):
            if i not in matched_p:
                st = per_class.setdefault(class_names[pb.class_id], ClassStats())
                st.fp += 1


def track_score(track: Track) -> float:
    """Mean detection score over the track's boxes."""
    return float(np.mean([b.det_score for _, b in track.boxes]))


def _overall(per_class: dict[str, ClassStats]) -> ClassStats:
    total = ClassStats()
    for st in per_class.values():
        total.add(st)
    return total


def evaluate_scenes(pairs: list[tuple[list[Track], list[Track]]],
                    class_names: tuple[str, ...], radius: float = MATCH_RADIUS,
                    samota: bool = True) -> EvalResult:
    """Aggregate CLEAR metrics over (pred tracks, gt tracks) scene pairs."""
    per_class: dict[str, ClassStats] = {}
    for preds, gts in pairs:
        # identity context must not leak across scenes
        _accumulate(preds, gts, class_names, radius, per_class, last_match={})
    overall = _overall(per_class)
    if overall.gt == 0:
        raise ValueError("no GT boxes anywhere; metrics undefined")
    result = EvalResult(overall=overall,
                        per_class={k: per_class[k] for k in sorted(per_class)})
    if samota:
        grid = [k / SAMOTA_POINTS for k in range(SAMOTA_POINTS)]
        sums: dict[str, float] = {}
        overall_sum = 0.0
        for thr in grid:
            sub: dict[str, ClassStats] = {}
            for preds, gts in pairs:
                kept = [tr for tr in preds if track_score(tr) >= thr]
                _accumulate(kept, gts, class_names, radius, sub, last_match={})
            tot = _overall(sub)
            overall_sum += max(0.0, tot.mota) if tot.gt else 0.0
            for name, st in sub.items():
                if st.gt:
                    sums[name] = sums.get(name, 0.0) + max(0.0, st.mota)
        result.samota = overall_sum / SAMOTA_POINTS
        result.samota_per_class = {
            name: sums.get(name, 0.0) / SAMOTA_POINTS
            for name in result.per_class}
    return result


def evaluate(pred_tracks: list[Track], gt_tracks: list[Track],
             class_names: tuple[str, ...], radius: float = MATCH_RADIUS,
             samota: bool = True) -> EvalResult:
    return evaluate_scenes([(pred_tracks, gt_tracks)], class_names,
                           radius=radius, samota=samota)
