import numpy as np
import pytest

from bott.featurizer import featurize
from bott.online import (OnlineConfig, OnlineTracker, gate, gate_matrix,
                         run_online)
from bott.synth import SynthConfig, gen_scene
from bott.types import Box3D, DetectionFrame, TrackStatus
from bott.utils import rng_for

CAR = (1.0, 0.0)
BIKE = (0.0, 1.0)
NAMES = ("car", "bicycle")


def box(bid, frame, t, x, y, scores=CAR, gt=None, velocity=None):
    return Box3D(x=x, y=y, z=0.0, w=1.9, l=4.5, h=1.6, yaw=0.0, t=t,
                 frame_idx=frame, class_scores=scores, box_id=bid,
                 velocity=velocity, gt_track_id=gt)


class OracleScorer:
    """Perfect-identity scorer for exercising the association machinery.

    Pairs sharing a GT id score `hit`, everything else `miss`; individual
    (box_id, box_id) pairs can be pinned through `overrides`.
    """

    def __init__(self, n_classes=2, hit=1.0, miss=0.05):
        self.n_classes = n_classes
        self.hit = hit
        self.miss = miss
        self.overrides: dict[tuple[int, int], float] = {}
        self.n_forwards = 0

    def __call__(self, window, attn_sink=None):
        feats = featurize(window, self.n_classes)
        boxes = window.boxes()
        n = len(boxes)
        ls = np.full((n, n), self.miss)
        for i in range(n):
            for j in range(n):
                gi, gj = boxes[i].gt_track_id, boxes[j].gt_track_id
                if gi is not None and gi >= 0 and gi == gj:
                    ls[i, j] = self.hit
        row = {b.box_id: i for i, b in enumerate(boxes)}
        for (a, b), s in self.overrides.items():
            if a in row and b in row:
                ls[row[a], row[b]] = ls[row[b], row[a]] = s
        np.fill_diagonal(ls, 1.0)
        self.n_forwards += 1
        return ls, feats


# ------------------------------------------------------------------ gates


def test_gate_class_and_distance():
    cfg = OnlineConfig()
    a = box(0, 1, 0.1, 0.0, 0.0)
    assert gate(box(1, 2, 0.2, 3.0, 0.0), a, cfg, NAMES)       # 3 m in 0.1 s
    assert not gate(box(1, 2, 0.2, 0.0, 0.0, BIKE), a, cfg, NAMES)
    # 35 m/s * 0.1 s = 3.5 m cap for cars
    assert not gate(box(1, 2, 0.2, 3.6, 0.0), a, cfg, NAMES)
    assert gate(box(1, 2, 0.2, 3.4, 0.0), a, cfg, NAMES)


def test_gate_distance_floor():
    # at tiny dt the floor keeps nearby boxes linkable: max(speed*dt, floor)
    cfg = OnlineConfig()
    a = box(0, 1, 0.10, 0.0, 0.0)
    b = box(1, 2, 0.11, 2.9, 0.0)   # 2.9 m in 10 ms beats 0.35 m speed cap
    assert gate(b, a, cfg, NAMES)   # but sits under the 3.0 m car floor
    b2 = box(1, 2, 0.11, 3.1, 0.0)
    assert not gate(b2, a, cfg, NAMES)
    # bicycles have a 2.0 m floor
    a3 = box(0, 1, 0.10, 0.0, 0.0, BIKE)
    assert gate(box(1, 2, 0.11, 1.9, 0.0, BIKE), a3, cfg, NAMES)
    assert not gate(box(1, 2, 0.11, 2.1, 0.0, BIKE), a3, cfg, NAMES)


def test_gate_static_constraint():
    cfg = OnlineConfig()
    still = box(0, 1, 0.0, 0.0, 0.0, velocity=(0.1, 0.0))
    moved = box(1, 2, 0.1, 2.5, 0.0)
    # 2.5 m is inside the 3.0 m floor, but a static box may not jump > 2 m
    assert gate(moved, box(0, 1, 0.0, 0.0, 0.0), cfg, NAMES)
    assert not gate(moved, still, cfg, NAMES)
    near = box(1, 2, 0.1, 1.5, 0.0)
    assert gate(near, still, cfg, NAMES)
    # the flag matters on either side
    assert not gate(box(1, 2, 0.1, 2.5, 0.0, velocity=(0.0, 0.0)),
                    box(0, 1, 0.0, 0.0, 0.0), cfg, NAMES)


def test_gate_matrix_matches_scalar_gate():
    cfg = OnlineConfig()
    rng = rng_for(0)
    news, olds = [], []
    for i in range(12):
        scores = CAR if rng.random() < 0.5 else BIKE
        vel = (float(rng.normal()), float(rng.normal())) if rng.random() < 0.5 else None
        news.append(box(i, 5, 0.5, float(rng.uniform(-9, 9)),
                        float(rng.uniform(-9, 9)), scores, velocity=vel))
    for i in range(9):
        scores = CAR if rng.random() < 0.5 else BIKE
        vel = (0.0, 0.0) if rng.random() < 0.3 else None
        olds.append(box(100 + i, int(rng.integers(0, 5)),
                        float(rng.uniform(0.0, 0.4)), float(rng.uniform(-9, 9)),
                        float(rng.uniform(-9, 9)), scores, velocity=vel))
    gm = gate_matrix(news, olds, cfg, NAMES)
    for i, bn in enumerate(news):
        for j, bo in enumerate(olds):
            assert gm[i, j] == gate(bn, bo, cfg, NAMES)
    assert gate_matrix([], olds, cfg, NAMES).shape == (0, 9)


# ---------------------------------------------------------------- stepping


def frames_two_cars(n=6, hz=10.0, skip=()):
    """Two well-separated GT cars; frames in `skip` have no detections."""
    out = []
    bid = 0
    for fi in range(n):
        t = fi / hz
        boxes = []
        if fi not in skip:
            boxes = [box(bid, fi, t, 2.0 * t, 0.0, gt=1),
                     box(bid + 1, fi, t, 2.0 * t, 30.0, gt=2)]
            bid += 2
        out.append(DetectionFrame(fi, t, tuple(boxes)))
    return out


def test_one_forward_per_step():
    scorer = OracleScorer()
    tracker = OnlineTracker(scorer, OnlineConfig(k=4), NAMES)
    for i, f in enumerate(frames_two_cars(6, skip=(3,))):
        tracker.step(f)
        assert scorer.n_forwards == i + 1


def test_tracks_follow_identities():
    scorer = OracleScorer()
    tracker = OnlineTracker(scorer, OnlineConfig(k=4), NAMES)
    rows = []
    for f in frames_two_cars(6):
        rows.extend(tracker.step(f))
    assert len(tracker.tracks) == 2
    assert len(rows) == 12
    by_tid = {}
    for tid, b in rows:
        by_tid.setdefault(tid, set()).add(b.gt_track_id)
    # each track sticks to one GT identity
    assert sorted(map(len, by_tid.values())) == [1, 1]
    assert {g for s in by_tid.values() for g in s} == {1, 2}


def test_association_bridges_a_missed_frame():
    scorer = OracleScorer()
    tracker = OnlineTracker(scorer, OnlineConfig(k=6), NAMES)
    for f in frames_two_cars(6, skip=(2,)):
        tracker.step(f)
    # the gap does not split the tracks: still exactly two
    assert len(tracker.tracks) == 2
    assert all(len(tr) == 5 for tr in tracker.tracks)


def test_min_link_score_is_per_class():
    # identical geometry, affinity 0.45: cars pass (0.4), bicycles fail (0.6)
    for scores, expected_tracks in ((CAR, 1), (BIKE, 2)):
        scorer = OracleScorer(hit=0.45)
        tracker = OnlineTracker(scorer, OnlineConfig(k=4), NAMES)
        for fi in range(2):
            t = fi / 10.0
            f = DetectionFrame(fi, t, (box(fi, fi, t, 2.0 * t, 0.0, scores,
                                           gt=1),))
            tracker.step(f)
        assert len(tracker.tracks) == expected_tracks


def test_zero_affinity_never_matches():
    # the only history box is gated away (too far), so affinity is 0 and
    # the detection must start a new track even though hungarian pairs them
    scorer = OracleScorer(hit=1.0)
    tracker = OnlineTracker(scorer, OnlineConfig(k=4), NAMES)
    t0 = DetectionFrame(0, 0.0, (box(0, 0, 0.0, 0.0, 0.0, gt=1),))
    t1 = DetectionFrame(1, 0.1, (box(1, 1, 0.1, 30.0, 0.0, gt=1),))
    tracker.step(t0)
    tracker.step(t1)
    assert len(tracker.tracks) == 2


def test_birth_confirmation_threshold():
    scorer = OracleScorer()
    cfg = OnlineConfig(k=4, n_birth=2)
    tracker = OnlineTracker(scorer, cfg, NAMES)
    frames = frames_two_cars(3)
    assert tracker.step(frames[0]) == []          # unconfirmed, no rows
    assert all(tr.status is TrackStatus.UNCONFIRMED for tr in tracker.tracks)
    rows1 = tracker.step(frames[1])
    assert len(rows1) == 2                         # confirmed on 2nd hit
    assert all(tr.status is TrackStatus.CONFIRMED for tr in tracker.tracks)
    rows2 = tracker.step(frames[2])
    assert len(rows2) == 2


def test_termination_is_strictly_after_t_term():
    scorer = OracleScorer()
    tracker = OnlineTracker(scorer, OnlineConfig(k=64, t_term=2.0), NAMES)
    tracker.step(DetectionFrame(0, 0.0, (box(0, 0, 0.0, 0.0, 0.0, gt=1),)))
    for fi, t in ((1, 0.5), (2, 1.0), (3, 1.5), (4, 2.0)):
        tracker.step(DetectionFrame(fi, t, ()))
    # gap is exactly t_term: still alive
    assert tracker.tracks[0].status is TrackStatus.CONFIRMED
    tracker.step(DetectionFrame(5, 2.5, ()))
    assert tracker.tracks[0].status is TrackStatus.TERMINATED


def test_track_ids_are_never_reused():
    scorer = OracleScorer()
    tracker = OnlineTracker(scorer, OnlineConfig(k=4, t_term=0.3), NAMES)
    tracker.step(DetectionFrame(0, 0.0, (box(0, 0, 0.0, 0.0, 0.0, gt=1),)))
    tracker.step(DetectionFrame(1, 0.5, ()))      # 0.5 > 0.3: terminates
    tracker.step(DetectionFrame(2, 1.0, (box(1, 2, 1.0, 0.5, 0.0, gt=1),)))
    ids = [tr.track_id for tr in tracker.tracks]
    assert len(ids) == len(set(ids)) == 2
    assert tracker.tracks[0].status is TrackStatus.TERMINATED
    assert tracker.tracks[1].status is TrackStatus.CONFIRMED


def test_step_requires_increasing_time():
    scorer = OracleScorer()
    tracker = OnlineTracker(scorer, OnlineConfig(k=4), NAMES)
    tracker.step(DetectionFrame(0, 0.0, ()))
    with pytest.raises(ValueError):
        tracker.step(DetectionFrame(1, 0.0, ()))


def test_run_online_recovers_clean_synthetic_scene():
    cfg = SynthConfig(n_agents={"car": 4, "pedestrian": 2, "bicycle": 1},
                      n_frames=25, miss_prob=0.15, clutter_rate=0.0, seed=0)
    scene = gen_scene(cfg, rng_for(42), "s")
    scorer = OracleScorer(n_classes=3)
    rows, tracker = run_online(scene, scorer, OnlineConfig(k=8))
    n_dets = sum(len(f.boxes) for f in scene.frames)
    assert len(rows) == n_dets
    assert scorer.n_forwards == len(scene.frames)
    # purity: no published track mixes GT identities
    by_tid = {}
    for tid, b in rows:
        by_tid.setdefault(tid, set()).add(b.gt_track_id)
    assert all(len(gids) == 1 for gids in by_tid.values())


def test_online_config_validation():
    with pytest.raises(ValueError):
        OnlineConfig(k=0)
    with pytest.raises(ValueError):
        OnlineConfig(n_birth=0)
    with pytest.raises(ValueError):
        OnlineConfig(t_term=0.0)
