import math

import numpy as np
import pytest

from bott import diff_engine as de
from bott.loss import (DEFAULT_MAX_SPEED, LossConfig, bce_sum_node,
                       build_mask, build_targets, hard_negative_mine,
                       masked_bce, speed_for, window_loss)
from bott.types import Box3D, DetectionFrame, SlidingWindow

CAR = (1.0, 0.0)
PED = (0.0, 1.0)
NAMES = ("car", "pedestrian")


def box(bid, frame, t, x, y, scores, gt):
    return Box3D(x=x, y=y, z=0.0, w=2.0, l=4.0, h=1.5, yaw=0.0, t=t,
                 frame_idx=frame, class_scores=scores, box_id=bid,
                 gt_track_id=gt)


def hand_window():
    """Two frames 0.5 s apart, covering every mask rule.

    car cap falls back to "other" (35 m/s -> 17.5 m), pedestrian cap is
    10 m/s -> 5 m.  Row order: A B D | C E F G.
    """
    f0 = DetectionFrame(0, 0.0, (
        box(0, 0, 0.0, 0.0, 0.0, CAR, 1),     # A
        box(1, 0, 0.0, 0.0, 10.0, PED, 2),    # B
        box(2, 0, 0.0, 5.0, 0.0, CAR, -1),    # D, false positive
    ))
    f1 = DetectionFrame(1, 0.5, (
        box(3, 1, 0.5, 50.0, 0.0, CAR, 3),    # C, unreachable from A
        box(4, 1, 0.5, 2.0, 0.0, CAR, 1),     # E, continues A
        box(5, 1, 0.5, 0.0, 12.0, PED, 2),    # F, continues B
        box(6, 1, 0.5, 6.0, 0.0, CAR, None),  # G, unlabeled -> FP bucket
    ))
    return SlidingWindow((f0, f1))


A, B, D, C, E, F, G = range(7)


def test_speed_for_fallback():
    assert speed_for("bicycle", DEFAULT_MAX_SPEED) == 20.0
    assert speed_for("car", DEFAULT_MAX_SPEED) == 35.0  # falls to "other"
    with pytest.raises(ValueError):
        speed_for("car", {"bicycle": 20.0})


def test_loss_config_defaults_and_validation():
    cfg = LossConfig()
    assert cfg.kappa == 4
    assert cfg.beta == pytest.approx(0.8)
    cfg2 = LossConfig(kappa=3)
    assert cfg2.beta == pytest.approx(0.75)
    with pytest.raises(ValueError):
        LossConfig(kappa=0)
    with pytest.raises(ValueError):
        LossConfig(beta=1.0)
    with pytest.raises(ValueError):
        LossConfig(clamp_eps=0.5)


def test_targets_from_gt_ids():
    t = build_targets(hand_window())
    assert t[A, E] and t[E, A]
    assert t[B, F]
    assert not t[A, C]
    assert not t[D, G]      # FPs never form positives
    assert not t[G, G]      # unlabeled not even with itself
    assert t[A, A]          # same labeled box trivially shares its id


def test_mask_rules():
    m = build_mask(hand_window(), LossConfig(), NAMES)
    assert m[A, E] and m[E, A]     # same class, cross frame, reachable
    assert m[B, F]
    assert not m[A, B]             # class mismatch
    assert not m[A, D]             # same frame
    assert not m[A, C]             # 50 m in 0.5 s beats the 35 m/s cap
    assert not m[D, G]             # both false positives
    assert m[A, G]                 # one FP is supervisable (as negative)
    assert m[D, E]
    assert not m[B, B]             # zero diagonal
    assert np.array_equal(m, m.T)
    # pedestrians get the tighter 5 m budget: B -> a ped 6 m away fails
    far = DetectionFrame(1, 0.5, (box(9, 1, 0.5, 0.0, 16.0, PED, 2),))
    w2 = SlidingWindow((hand_window().frames[0], far))
    m2 = build_mask(w2, LossConfig(), NAMES)
    assert not m2[1, 3]


def test_mask_rejects_unknown_class_id():
    w = SlidingWindow((
        DetectionFrame(0, 0.0, (box(0, 0, 0.0, 0, 0, (0.0, 1.0), 1),)),
        DetectionFrame(1, 0.5, (box(1, 1, 0.5, 0, 0, (0.0, 1.0), 1),)),
    ))
    with pytest.raises(ValueError):
        build_mask(w, LossConfig(), ("car",))


def all_pairs_mask(n):
    m = np.ones((n, n), dtype=bool)
    np.fill_diagonal(m, False)
    return m


def test_mining_keeps_positives_and_bounds_negatives():
    n = 6
    rng = np.random.default_rng(0)
    ls = rng.uniform(size=(n, n))
    ls = (ls + ls.T) / 2
    targets = np.zeros((n, n), dtype=bool)
    targets[0, 1] = targets[1, 0] = True
    targets[2, 3] = targets[3, 2] = True
    mask = all_pairs_mask(n)
    for kappa in (1, 2, 4, 100):
        active = hard_negative_mine(ls, targets, mask, kappa)
        upper = np.triu(np.ones((n, n), dtype=bool), 1)
        assert np.array_equal(active, active.T)
        assert active[0, 1] and active[2, 3]
        n_pos = 2
        n_neg = int((active & upper & ~targets).sum())
        assert n_neg <= kappa * n_pos
        assert n_neg == min(kappa * n_pos, int((upper & mask & ~targets).sum()))


def test_mining_selects_highest_scores_with_lex_tiebreak():
    n = 4
    ls = np.full((n, n), 0.1)
    targets = np.zeros((n, n), dtype=bool)
    targets[0, 1] = targets[1, 0] = True
    mask = all_pairs_mask(n)
    for i, j in ((0, 2), (0, 3), (1, 2)):
        ls[i, j] = ls[j, i] = 0.9

    def selected(kappa):
        act = hard_negative_mine(ls, targets, mask, kappa)
        up = np.triu(act & ~targets, 1)
        return sorted(zip(*np.nonzero(up)))

    assert selected(1) == [(0, 2)]
    assert selected(2) == [(0, 2), (0, 3)]
    assert selected(3) == [(0, 2), (0, 3), (1, 2)]
    # fourth pick: both leftovers score 0.1, (1, 3) wins on (row, col)
    assert selected(4) == [(0, 2), (0, 3), (1, 2), (1, 3)]


def test_mining_respects_mask():
    n = 4
    ls = np.full((n, n), 0.99)
    targets = np.zeros((n, n), dtype=bool)
    targets[0, 1] = targets[1, 0] = True
    mask = all_pairs_mask(n)
    mask[2, 3] = mask[3, 2] = False
    active = hard_negative_mine(ls, targets, mask, kappa=100)
    assert not active[2, 3] and not active[3, 2]


def test_bce_hand_values():
    # one active positive scored 0.5: -0.8 ln 0.5
    ls = np.array([[1.0, 0.5], [0.5, 1.0]])
    targets = np.array([[True, True], [True, True]])
    active = np.array([[False, True], [True, False]])
    loss, grad = masked_bce(ls, targets, active, beta=0.8)
    assert loss == pytest.approx(0.8 * math.log(2.0), rel=1e-12)
    assert loss == pytest.approx(0.5545177444479562, rel=1e-9)
    # d/ds of -0.8 ln s at 0.5 is -1.6, averaged over 2 active cells
    assert grad[0, 1] == pytest.approx(-1.6 / 2)

    # one active negative scored 0.5: -0.2 ln 0.5
    targets0 = np.zeros((2, 2), dtype=bool)
    loss0, grad0 = masked_bce(ls, targets0, active, beta=0.8)
    assert loss0 == pytest.approx(0.2 * math.log(2.0), rel=1e-12)
    assert grad0[0, 1] == pytest.approx((0.2 / 0.5) / 2)


def test_bce_raises_without_active_pairs():
    z = np.zeros((2, 2))
    with pytest.raises(ValueError):
        masked_bce(z, z.astype(bool), z.astype(bool))


def test_bce_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    n = 5
    ls = rng.uniform(0.05, 0.95, size=(n, n))
    targets = rng.uniform(size=(n, n)) < 0.3
    active = rng.uniform(size=(n, n)) < 0.7
    if not active.any():
        active[0, 1] = True
    _, grad = masked_bce(ls, targets, active, beta=0.8)
    h = 1e-7
    for i in range(n):
        for j in range(n):
            bumped = ls.copy()
            bumped[i, j] += h
            hi, _ = masked_bce(bumped, targets, active, beta=0.8)
            bumped[i, j] -= 2 * h
            lo, _ = masked_bce(bumped, targets, active, beta=0.8)
            fd = (hi - lo) / (2 * h)
            assert grad[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_bce_gradient_zero_outside_clamp_and_inactive():
    ls = np.array([[1.0, 0.0], [1.0, 1.0]])
    targets = np.array([[False, True], [False, False]])
    active = np.array([[False, True], [True, False]])
    loss, grad = masked_bce(ls, targets, active, beta=0.8, clamp_eps=1e-7)
    # (0,1): positive clamped at eps; (1,0): negative clamped at 1-eps
    assert np.isfinite(loss)
    assert loss == pytest.approx((0.8 + 0.2) * -math.log(1e-7) / 2, rel=1e-6)
    assert grad[0, 1] == 0.0
    assert grad[1, 0] == 0.0
    assert grad[0, 0] == 0.0  # inactive
    assert grad[1, 1] == 0.0


def test_bce_sum_node_grafts_into_tape():
    ls_data = np.array([[1.0, 0.4], [0.4, 1.0]], dtype=np.float32)
    targets = np.array([[False, True], [True, False]])
    active = targets.copy()
    ls = de.tensor(ls_data)
    with de.Tape() as tape:
        s, count = bce_sum_node(ls, targets, active, beta=0.8)
        total = de.scale(s, 1.0 / count)
    tape.backward(total)
    assert count == 2
    expected_sum = 2 * (-0.8 * math.log(0.4))
    assert float(s.data) == pytest.approx(expected_sum, rel=1e-6)
    # matches the normalized closed-form gradient
    _, grad = masked_bce(ls_data.astype(np.float64), targets, active, beta=0.8)
    assert np.allclose(ls.grad, grad, atol=1e-6)


def test_window_loss_pipeline():
    w = hand_window()
    n = w.n_boxes
    rng = np.random.default_rng(2)
    ls = rng.uniform(0.1, 0.9, size=(n, n))
    ls = (ls + ls.T) / 2
    np.fill_diagonal(ls, 1.0)
    loss, grad, stats = window_loss(ls, w, LossConfig(), NAMES)
    assert stats["n_pos"] == 2          # (A,E) and (B,F)
    assert np.isfinite(loss) and loss > 0
    assert grad.shape == (n, n)
    # gradient only on active pairs
    mask = build_mask(w, LossConfig(), NAMES)
    assert np.all(grad[~mask] == 0.0)
