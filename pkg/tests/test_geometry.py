import math

import numpy as np
import pytest

from bott.geometry import bev_iou, center_distance, footprint
from bott.types import Box3D


def box(x=0.0, y=0.0, w=2.0, l=4.0, yaw=0.0, **kw):
    defaults = dict(z=0.0, h=1.5, t=0.0, frame_idx=0, class_scores=(1.0,),
                    box_id=kw.pop("box_id", 0))
    defaults.update(kw)
    return Box3D(x=x, y=y, w=w, l=l, yaw=yaw, **defaults)


def mc_iou(a, b, n=200_000, seed=0):
    """Monte Carlo IoU oracle: sample the joint bounding rectangle."""
    rng = np.random.default_rng(seed)
    ca = np.array(footprint(a))
    cb = np.array(footprint(b))
    allc = np.vstack([ca, cb])
    lo, hi = allc.min(axis=0), allc.max(axis=0)
    pts = rng.uniform(lo, hi, size=(n, 2))

    def inside(box_, pts_):
        c, s = math.cos(box_.yaw), math.sin(box_.yaw)
        dx = pts_[:, 0] - box_.x
        dy = pts_[:, 1] - box_.y
        u = c * dx + s * dy        # along heading (l)
        v = -s * dx + c * dy       # lateral (w)
        return (np.abs(u) <= box_.l / 2) & (np.abs(v) <= box_.w / 2)

    ia = inside(a, pts)
    ib = inside(b, pts)
    union = (ia | ib).sum()
    return (ia & ib).sum() / union if union else 0.0


def test_identical_boxes_are_exactly_one():
    b = box(x=3.0, y=-2.0, yaw=0.7)
    assert bev_iou(b, b) == 1.0


def test_disjoint_boxes_are_zero():
    assert bev_iou(box(), box(x=100.0)) == 0.0


def test_axis_aligned_half_overlap():
    # 2x4 boxes shifted by half the length: inter 2*2=4, union 8+8-4=12
    a = box(w=2.0, l=4.0)
    b = box(x=2.0, w=2.0, l=4.0)
    assert bev_iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_rotated_iou_against_monte_carlo():
    cases = [
        (box(), box(x=1.0, y=0.5, yaw=0.6)),
        (box(yaw=0.3), box(x=0.5, y=-0.8, yaw=-1.2, w=1.5, l=3.0)),
        (box(w=1.0, l=1.0, yaw=math.pi / 4), box(w=1.0, l=1.0)),
        (box(yaw=1.5), box(x=2.5, yaw=1.5)),
    ]
    for a, b in cases:
        exact = bev_iou(a, b)
        approx = mc_iou(a, b)
        assert exact == pytest.approx(approx, abs=5e-3)


def test_rigid_transform_invariance():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a = box(x=rng.uniform(-5, 5), y=rng.uniform(-5, 5),
                yaw=rng.uniform(-math.pi, math.pi) * 0.999,
                w=rng.uniform(0.5, 3), l=rng.uniform(0.5, 5))
        b = box(x=rng.uniform(-5, 5), y=rng.uniform(-5, 5),
                yaw=rng.uniform(-math.pi, math.pi) * 0.999,
                w=rng.uniform(0.5, 3), l=rng.uniform(0.5, 5), box_id=1)
        base = bev_iou(a, b)
        th = rng.uniform(-math.pi, math.pi)
        tx, ty = rng.uniform(-100, 100, size=2)
        c, s = math.cos(th), math.sin(th)

        def moved(bb):
            from bott.types import wrap_angle
            return bb.replace(x=c * bb.x - s * bb.y + tx,
                              y=s * bb.x + c * bb.y + ty,
                              yaw=wrap_angle(bb.yaw + th))

        assert bev_iou(moved(a), moved(b)) == pytest.approx(base, abs=1e-9)


def test_symmetry():
    a = box(yaw=0.4)
    b = box(x=1.2, y=0.3, yaw=-0.9, box_id=1)
    assert bev_iou(a, b) == pytest.approx(bev_iou(b, a), abs=1e-12)


def test_containment():
    big = box(w=10.0, l=10.0)
    small = box(w=2.0, l=2.0, yaw=0.5, box_id=1)
    assert bev_iou(big, small) == pytest.approx(4.0 / 100.0, rel=1e-9)


def test_center_distance_ignores_z():
    a = box(x=0.0, y=0.0, z=0.0)
    b = box(x=3.0, y=4.0, z=50.0, box_id=1)
    assert center_distance(a, b) == pytest.approx(5.0)


def test_footprint_is_counter_clockwise():
    f = footprint(box(yaw=0.8))
    area2 = 0.0
    for i in range(4):
        x1, y1 = f[i]
        x2, y2 = f[(i + 1) % 4]
        area2 += x1 * y2 - x2 * y1
    assert area2 > 0
