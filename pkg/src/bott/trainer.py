"""Training loop: batched windows, hard negative mining, Adam + 1cycle."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import diff_engine as de
from .featurizer import AugmentConfig, augment, featurize
from .loss import LossConfig, bce_sum_node, build_mask, build_targets, hard_negative_mine
from .network import (NetworkConfig, forward_features, init_params, load_tensors,
                      param_shapes, save_checkpoint, save_tensors)
from .types import SceneDB, SlidingWindow
from .utils import rng_for

_SHUFFLE_SALT = 101
_AUGMENT_SALT = 202
_INIT_SALT = 303


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    k: int = 16
    stride: int = 1
    lr_max: float = 1e-3
    warmup_frac: float = 0.3
    start_div: float = 25.0
    final_div: float = 1e4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.k < 1 or self.stride < 1:
            raise ValueError("epochs, batch_size, k, stride must be >= 1")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must be in [0, 1)")
        if self.lr_max <= 0 or self.start_div <= 1 or self.final_div <= 1:
            raise ValueError("bad learning-rate shape")


def one_cycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine ramp lr_max/start_div -> lr_max, cosine anneal -> lr_max/final_div."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warmup = int(round(cfg.warmup_frac * total_steps))
    lo = cfg.lr_max / cfg.start_div
    end = cfg.lr_max / cfg.final_div
    if step < warmup:
        u = step / warmup
        return lo + (cfg.lr_max - lo) * 0.5 * (1.0 - math.cos(math.pi * u))
    span = max(1, total_steps - 1 - warmup)
    u = (step - warmup) / span
    return end + (cfg.lr_max - end) * 0.5 * (1.0 + math.cos(math.pi * u))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, de.Tensor]) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all grads in place to a global L2 norm cap; returns the norm."""
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                          for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        f = max_norm / total
        for g in grads.values():
            g *= f
    return total


def adam_step(params: dict[str, de.Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """One Adam update in place.  Rejects non-finite grads untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name}")
    t = state.step + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    state.step = t


@dataclass
class WindowItem:
    features: np.ndarray     # (n_pad, D), zero rows past n_real
    valid: np.ndarray        # (n_pad,) bool
    n_real: int
    targets: np.ndarray      # (n_real, n_real)
    mask: np.ndarray
    n_pos: int


@dataclass
class Batch:
    items: list[WindowItem]


def enumerate_windows(scenes: list[SceneDB], k: int, stride: int):
    """(scene index, start frame position) for every full window."""
    out = []
    for si, scene in enumerate(scenes):
        n = len(scene.frames)
        for start in range(0, n - k + 1, stride):
            out.append((si, start))
    return out


def make_batches(scenes: list[SceneDB], cfg: TrainConfig, loss_cfg: LossConfig,
                 aug_cfg: AugmentConfig | None, epoch: int, skipped: list):
    """Yield padded batches for one epoch, shuffled deterministically.

    Windows that end up with no positive pair (after masking/augmentation)
    cannot be supervised; they are skipped and noted in `skipped`.
    """
    index = enumerate_windows(scenes, cfg.k, cfg.stride)
    if not index:
        raise ValueError(f"no windows of k={cfg.k} in {len(scenes)} scenes")
    class_names = scenes[0].class_names
    n_classes = len(class_names)
    order = rng_for(cfg.seed, _SHUFFLE_SALT, epoch).permutation(len(index))
    pending: list[WindowItem] = []
    for pos in order:
        si, start = index[int(pos)]
        scene = scenes[si]
        window = SlidingWindow(tuple(scene.frames[start:start + cfg.k]))
        if aug_cfg is not None:
            rng = rng_for(cfg.seed, _AUGMENT_SALT, epoch, int(pos))
            window = augment(window, aug_cfg, rng)
        if window.n_boxes == 0:
            skipped.append((scene.scene_id, start, "empty"))
            continue
        targets = build_targets(window)
        mask = build_mask(window, loss_cfg, class_names)
        n_pos = int((np.triu(mask, k=1) & targets).sum())
        if n_pos == 0:
            skipped.append((scene.scene_id, start, "no positive pairs"))
            continue
        feats = featurize(window, n_classes)
        pending.append(WindowItem(feats.values, np.ones(feats.n, dtype=bool),
                                  feats.n, targets, mask, n_pos))
        if len(pending) == cfg.batch_size:
            yield _pad_batch(pending)
            pending = []
    if pending:
        yield _pad_batch(pending)


def _pad_batch(items: list[WindowItem]) -> Batch:
    n_max = max(it.n_real for it in items)
    out = []
    for it in items:
        n = it.n_real
        if n < n_max:
            feats = np.zeros((n_max, it.features.shape[1]), dtype=it.features.dtype)
            feats[:n] = it.features
            valid = np.zeros(n_max, dtype=bool)
            valid[:n] = True
            it = WindowItem(feats, valid, n, it.targets, it.mask, it.n_pos)
        out.append(it)
    return Batch(out)


@dataclass
class TrainResult:
    params: dict[str, de.Tensor]
    net_cfg: NetworkConfig
    history: list[dict] = field(default_factory=list)
    n_skipped_windows: int = 0
    n_rejected_batches: int = 0
    checkpoint: str | None = None


def _train_state_paths(out_dir: str) -> tuple[str, str]:
    return os.path.join(out_dir, "last.bott"), os.path.join(out_dir, "trainstate.bott")


def save_train_state(path: str, state: AdamState, epoch_next: int,
                     lr_step: int) -> None:
    tensors = {f"adam.m/{k}": v for k, v in state.m.items()}
    tensors.update({f"adam.v/{k}": v for k, v in state.v.items()})
    tensors["meta/step"] = np.array([state.step], dtype=np.float32)
    tensors["meta/epoch_next"] = np.array([epoch_next], dtype=np.float32)
    tensors["meta/lr_step"] = np.array([lr_step], dtype=np.float32)
    save_tensors(path, tensors)


def load_train_state(path: str, params: dict[str, de.Tensor],
                     ) -> tuple[AdamState, int, int]:
    raw = load_tensors(path)
    state = AdamState.zeros_like(params)
    for k in state.m:
        state.m[k] = raw[f"adam.m/{k}"].copy()
        state.v[k] = raw[f"adam.v/{k}"].copy()
    state.step = int(raw["meta/step"][0])
    return state, int(raw["meta/epoch_next"][0]), int(raw["meta/lr_step"][0])


def train(scenes: list[SceneDB], net_cfg: NetworkConfig, cfg: TrainConfig,
          loss_cfg: LossConfig | None = None, aug_cfg: AugmentConfig | None = None,
          out_dir: str | None = None, resume: str | None = None,
          log_every: int = 25, quiet: bool = False) -> TrainResult:
    """Fit the linking network on labeled scenes.

    Deterministic for a fixed (scenes, configs, seed): shuffling and
    augmentation use per-(seed, epoch, window) streams, so a resumed run
    continues bit-identically.
    """
    if not scenes:
        raise ValueError("no training scenes")
    loss_cfg = loss_cfg or LossConfig()
    class_names = scenes[0].class_names
    for s in scenes:
        if s.class_names != class_names:
            raise ValueError(f"scene {s.scene_id}: class names differ")
    if len(class_names) != net_cfg.n_classes:
        raise ValueError(f"network expects {net_cfg.n_classes} classes, "
                         f"scenes have {len(class_names)}")

    n_windows = len(enumerate_windows(scenes, cfg.k, cfg.stride))
    if n_windows == 0:
        raise ValueError(f"no windows of k={cfg.k}; scenes too short")
    steps_per_epoch = math.ceil(n_windows / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    params = init_params(net_cfg, rng_for(cfg.seed, _INIT_SALT))
    state = AdamState.zeros_like(params)
    epoch_start = 0
    lr_step = 0
    if resume is not None:
        last, st = _train_state_paths(resume)
        raw = load_tensors(last)
        expected = param_shapes(net_cfg)
        if (set(raw) != set(expected)
                or any(raw[k].shape != expected[k] for k in expected)):
            raise ValueError(f"{last}: checkpoint does not match network config")
        params = {k: de.tensor(v) for k, v in raw.items()}
        state, epoch_start, lr_step = load_train_state(st, params)

    result = TrainResult(params=params, net_cfg=net_cfg)
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.jsonl"),
                      "a" if resume else "w")
    step = lr_step
    try:
        for epoch in range(epoch_start, cfg.epochs):
            skipped: list = []
            for batch in make_batches(scenes, cfg, loss_cfg, aug_cfg, epoch, skipped):
                lr = one_cycle_lr(min(step, total_steps - 1), total_steps, cfg)
                rec = _train_step(batch, params, net_cfg, loss_cfg, cfg, state, lr)
                rec.update(step=step, epoch=epoch, lr=lr)
                if rec.pop("rejected", False):
                    result.n_rejected_batches += 1
                result.history.append(rec)
                if log_fh and (step % log_every == 0 or step == total_steps - 1):
                    log_fh.write(json.dumps(rec) + "\n")
                    log_fh.flush()
                if not quiet and step % (log_every * 4) == 0:
                    print(f"epoch {epoch} step {step}/{total_steps} "
                          f"lr {lr:.2e} loss {rec.get('loss'):.4f}")
                step += 1
            result.n_skipped_windows += len(skipped)
            if out_dir is not None:
                last, st = _train_state_paths(out_dir)
                save_tensors(last, {k: p.data for k, p in params.items()})
                save_train_state(st, state, epoch + 1, step)
    finally:
        if log_fh:
            log_fh.close()
    if out_dir is not None:
        final = os.path.join(out_dir, "model.bott")
        save_checkpoint(final, params, net_cfg)
        result.checkpoint = final
    return result


def _train_step(batch: Batch, params, net_cfg, loss_cfg, cfg, state, lr) -> dict:
    sums = []
    total_count = 0
    total_pos = 0
    with de.Tape() as tape:
        for it in batch.items:
            ls = forward_features(it.features, params, net_cfg,
                                  valid=it.valid, n_real=it.n_real)
            active = hard_negative_mine(np.asarray(ls.data, dtype=np.float64),
                                        it.targets, it.mask, loss_cfg.kappa)
            s, count = bce_sum_node(ls, it.targets, active,
                                    loss_cfg.beta, loss_cfg.clamp_eps)
            if count:
                sums.append(s)
                total_count += count
                total_pos += it.n_pos
        if not sums:
            return {"loss": float("nan"), "n_windows": 0, "n_pairs": 0,
                    "rejected": True}
        total = sums[0]
        for s in sums[1:]:
            total = de.add(total, s)
        loss_t = de.scale(total, 1.0 / total_count)
    tape.backward(loss_t)

    grads = {}
    finite = True
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            finite = False
        grads[name] = g
        p.grad = None
    rec = {"loss": float(loss_t.data), "n_windows": len(sums),
           "n_pairs": total_count // 2, "n_pos": total_pos}
    if not finite:
        rec["rejected"] = True
        return rec
    norm = clip_grads(grads, cfg.grad_clip)
    adam_step(params, grads, state, lr, cfg)
    rec["grad_norm"] = norm
    return rec
