"""Training targets, pair masking, hard negative mining, masked BCE.

A pair (i, j) is supervised only when the mask allows it: different boxes
from different frames of the same class, not both false positives, and
physically reachable (center distance <= class max speed * |dt|).  Mining
then keeps all positive pairs and the kappa * P highest-scoring negative
pairs, each symmetric pair counted once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diff_engine as de
from .types import SlidingWindow

# per class name; "other" is the fallback bucket
DEFAULT_MAX_SPEED = {"bicycle": 20.0, "pedestrian": 10.0, "other": 35.0}


def speed_for(name: str, table: dict[str, float]) -> float:
    if name in table:
        return float(table[name])
    if "other" in table:
        return float(table["other"])
    raise ValueError(f"no max speed configured for class {name!r}")


@dataclass
class LossConfig:
    kappa: int = 4
    beta: float | None = None          # None -> kappa / (kappa + 1)
    clamp_eps: float = 1e-7
    max_speed: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MAX_SPEED))

    def __post_init__(self) -> None:
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.beta is None:
            self.beta = self.kappa / (self.kappa + 1.0)
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must be in (0, 0.5)")


def _box_arrays(window: SlidingWindow):
    boxes = window.boxes()
    n = len(boxes)
    x = np.fromiter((b.x for b in boxes), dtype=np.float64, count=n)
    y = np.fromiter((b.y for b in boxes), dtype=np.float64, count=n)
    t = np.fromiter((b.t for b in boxes), dtype=np.float64, count=n)
    cls = np.fromiter((b.class_id for b in boxes), dtype=np.int64, count=n)
    frame = np.fromiter((b.frame_idx for b in boxes), dtype=np.int64, count=n)
    # unlabeled boxes carry no identity; fold them into the FP bucket
    gid = np.fromiter(
        (b.gt_track_id if b.gt_track_id is not None else -1 for b in boxes),
        dtype=np.int64, count=n)
    return x, y, t, cls, frame, gid


def build_targets(window: SlidingWindow) -> np.ndarray:
    """(N, N) bool: True where both boxes carry the same GT identity."""
    *_, gid = _box_arrays(window)
    return (gid[:, None] == gid[None, :]) & (gid[:, None] >= 0)


def build_mask(window: SlidingWindow, cfg: LossConfig,
               class_names: tuple[str, ...]) -> np.ndarray:
    """(N, N) bool of supervisable pairs; symmetric, zero diagonal."""
    x, y, t, cls, frame, gid = _box_arrays(window)
    if cls.size and int(cls.max()) >= len(class_names):
        raise ValueError(f"class id {int(cls.max())} outside {class_names}")
    n = len(x)
    m = cls[:, None] == cls[None, :]
    m &= frame[:, None] != frame[None, :]
    fp = gid < 0
    m &= ~(fp[:, None] & fp[None, :])
    # reachability per class
    dist = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
    dt = np.abs(t[:, None] - t[None, :])
    caps = np.fromiter((speed_for(class_names[c], cfg.max_speed) for c in cls),
                       dtype=np.float64, count=n)
    m &= dist <= np.minimum(caps[:, None], caps[None, :]) * dt
    np.fill_diagonal(m, False)
    return m


def hard_negative_mine(ls: np.ndarray, targets: np.ndarray, mask: np.ndarray,
                       kappa: int) -> np.ndarray:
    """Active-pair matrix: every positive plus the kappa*P hardest negatives.

    Pairs are counted once (upper triangle); the result is mirrored back to
    a symmetric matrix.  Hardness is the current linking score; ties break
    on (row, col) ascending so the selection is deterministic.
    """
    n = ls.shape[0]
    if ls.shape != (n, n) or targets.shape != (n, n) or mask.shape != (n, n):
        raise ValueError("ls/targets/mask must be square and same shape")
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    pos = upper & mask & targets
    neg = upper & mask & ~targets
    n_pos = int(pos.sum())
    n_keep = min(kappa * n_pos, int(neg.sum()))
    active = pos.copy()
    if n_keep > 0:
        rows, cols = np.nonzero(neg)
        scores = ls[rows, cols]
        order = np.lexsort((cols, rows, -scores))[:n_keep]
        active[rows[order], cols[order]] = True
    return active | active.T


def masked_bce(ls: np.ndarray, targets: np.ndarray, active: np.ndarray,
               beta: float = 0.8, clamp_eps: float = 1e-7,
               ) -> tuple[float, np.ndarray]:
    """Mean weighted BCE over active pairs and its gradient wrt ls.

    Scores are clamped to [eps, 1-eps] before the logs; the gradient is
    zero outside the clamp range and wherever the pair is inactive.
    """
    s, grad, count = _bce_sum(ls, targets, active, beta, clamp_eps)
    if count == 0:
        raise ValueError("no active pairs; nothing to supervise")
    return s / count, grad / count


def _bce_sum(ls, targets, active, beta, clamp_eps):
    y = targets.astype(np.float64)
    a = active.astype(np.float64)
    c = np.clip(ls, clamp_eps, 1.0 - clamp_eps)
    term = -(beta * y * np.log(c) + (1.0 - beta) * (1.0 - y) * np.log(1.0 - c))
    s = float((term * a).sum())
    inside = (ls > clamp_eps) & (ls < 1.0 - clamp_eps)
    dterm = -(beta * y / c - (1.0 - beta) * (1.0 - y) / (1.0 - c))
    grad = a * dterm * inside
    return s, grad, int(active.sum())


def bce_sum_node(ls: de.Tensor, targets: np.ndarray, active: np.ndarray,
                 beta: float = 0.8, clamp_eps: float = 1e-7,
                 ) -> tuple[de.Tensor, int]:
    """Unnormalized BCE sum as a tape node; returns (sum tensor, pair count).

    Batch code adds the sums of several windows and divides once by the
    total count, so all windows in a batch share one normalizer.
    """
    s, grad, count = _bce_sum(np.asarray(ls.data, dtype=np.float64),
                              targets, active, beta, clamp_eps)
    out = de.custom(s, (ls,),
                    lambda g, grad=grad: (np.asarray(g, np.float64) * grad,),
                    op="bce_sum")
    return out, count


def window_loss(ls: np.ndarray, window: SlidingWindow, cfg: LossConfig,
                class_names: tuple[str, ...]) -> tuple[float, np.ndarray, dict]:
    """Full mask -> mine -> BCE pipeline for one scored window."""
    targets = build_targets(window)
    mask = build_mask(window, cfg, class_names)
    active = hard_negative_mine(ls, targets, mask, cfg.kappa)
    loss, grad = masked_bce(ls, targets, active, cfg.beta, cfg.clamp_eps)
    upper = np.triu(np.ones_like(mask), k=1)
    stats = {
        "n_pos": int((upper & mask & targets).sum()),
        "n_active": int(active.sum()) // 2,
    }
    return loss, grad, stats
