"""Minimal reverse-mode autodiff on numpy arrays.

Only what the linking network needs: 2-D tensors, a handful of primitives,
and a tape.  Recording is explicit (`with Tape() as tape:`), backward walks
the records once in reverse, and a consumed tape refuses to run again.
Default storage is float32; `precision(np.float64)` switches a scope to
float64, which is what grad_check uses.

Masking is additive with -1e9 rather than -inf so that fully-masked rows
degrade to a uniform distribution instead of NaN.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_DTYPE = np.dtype(np.float32)
_DEBUG_CHECKS = False

MASK_FILL = -1e9


def current_dtype() -> np.dtype:
    return _DTYPE


@contextmanager
def precision(dtype):
    """Run a scope under a different default dtype (float64 for checks)."""
    global _DTYPE
    old = _DTYPE
    _DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        _DTYPE = old


def enable_debug_checks(on: bool = True) -> None:
    """When on, every op output is scanned for NaN/Inf and raises early."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = on


class Tensor:
    """An array plus the gradient accumulated for it by Tape.backward."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.array(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def tensor(data) -> Tensor:
    return Tensor(data)


class Tape:
    """Records op closures; single-use, non-nesting."""

    _active: "Tape | None" = None

    def __init__(self):
        self._nodes: list[Callable[[], None]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("tapes do not nest")
        Tape._active = self
        return self

    def __exit__(self, *exc) -> None:
        Tape._active = None

    def backward(self, root: Tensor, seed=None) -> None:
        """Accumulate d(root)/d(leaf) into .grad of every recorded tensor.

        root must be scalar unless a seed of root's shape is given.
        """
        if self._used:
            raise RuntimeError("tape already consumed; record a new one")
        self._used = True
        if seed is None:
            if root.data.shape != ():
                raise ValueError("non-scalar root requires an explicit seed")
            seed = np.ones((), dtype=root.data.dtype)
        root.grad = np.array(np.broadcast_to(np.asarray(seed, root.data.dtype),
                                             root.data.shape))
        for node in reversed(self._nodes):
            node()


def _wrap(data: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    return out


def _make(data: np.ndarray, parents: Sequence[Tensor],
          vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
          op: str) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output of {op}")
    out = _wrap(data)
    tape = Tape._active
    if tape is not None:
        def node(out=out, parents=parents, vjp=vjp):
            g = out.grad
            if g is None:
                return
            for p, gp in zip(parents, vjp(g)):
                if gp is None:
                    continue
                if p.grad is None:
                    p.grad = np.array(gp, dtype=p.data.dtype)
                else:
                    p.grad += gp
        tape._nodes.append(node)
    return out


def _check_2d(name: str, *tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 2:
            raise ValueError(f"{name}: expected 2-D tensor, got shape {t.data.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d("matmul", a, b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: {a.data.shape} @ {b.data.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T without materializing the transpose on the tape."""
    _check_2d("matmul_nt", a, b)
    if a.data.shape[1] != b.data.shape[1]:
        raise ValueError(f"matmul_nt: {a.data.shape} x {b.data.shape}^T")
    return _make(a.data @ b.data.T, (a, b),
                 lambda g: (g @ b.data, g.T @ a.data), "matmul_nt")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    _check_2d("add_bias", x)
    if b.data.shape != (x.data.shape[1],):
        raise ValueError(f"add_bias: bias {b.data.shape} for input {x.data.shape}")
    return _make(x.data + b.data[None, :], (x, b),
                 lambda g: (g, g.sum(axis=0)), "add_bias")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data + c, (x,), lambda g: (g,), "add_scalar")


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant (not differentiated) array."""
    c = np.asarray(c, dtype=x.data.dtype)
    if c.shape != x.data.shape:
        raise ValueError(f"mul_const: {c.shape} vs {x.data.shape}")
    return _make(x.data * c, (x,), lambda g: (g * c,), "mul_const")


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is taken as 0
    return _make(np.maximum(x.data, 0), (x,),
                 lambda g: (g * (x.data > 0),), "relu")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add_bias(matmul(x, w), b)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with learned gain and shift."""
    _check_2d("layer_norm", x)
    d = x.data.shape[1]
    if gain.data.shape != (d,) or shift.data.shape != (d,):
        raise ValueError("layer_norm: gain/shift must match the feature width")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        dgain = (g * xhat).sum(axis=0)
        dshift = g.sum(axis=0)
        dxhat = g * gain.data
        inner = (dxhat * xhat).sum(axis=1, keepdims=True)
        dx = (inv / d) * (d * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * inner)
        return dx, dgain, dshift

    return _make(xhat * gain.data + shift.data, (x, gain, shift), vjp, "layer_norm")


def softmax_rows(x: Tensor, additive: np.ndarray | None = None) -> Tensor:
    """Row softmax of x (+ an optional constant additive mask)."""
    _check_2d("softmax_rows", x)
    z = x.data
    if additive is not None:
        z = z + np.asarray(additive, dtype=x.data.dtype)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (x,), vjp, "softmax_rows")


def l2_normalize_rows(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Row-wise x / max(||x||, eps).

    The floor keeps degenerate rows (a fully ReLU-dead box embedding, which
    the encoder-free network can produce) finite: they map to ~zero rows
    instead of raising mid-training.
    """
    _check_2d("l2_normalize_rows", x)
    n = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    n = np.maximum(n, eps)
    y = x.data / n

    def vjp(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / n,)

    return _make(y, (x,), vjp, "l2_normalize_rows")


def slice_rows(x: Tensor, i0: int, i1: int) -> Tensor:
    _check_2d("slice_rows", x)

    def vjp(g):
        full = np.zeros_like(x.data)
        full[i0:i1] = g
        return (full,)

    return _make(x.data[i0:i1].copy(), (x,), vjp, "slice_rows")


def slice_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    _check_2d("slice_cols", x)

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, j0:j1] = g
        return (full,)

    return _make(x.data[:, j0:j1].copy(), (x,), vjp, "slice_cols")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_cols: no parts")
    _check_2d("concat_cols", *parts)
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1),
                 tuple(parts), vjp, "concat_cols")


def sum_all(x: Tensor) -> Tensor:
    def vjp(g):
        return (np.full_like(x.data, g),)

    return _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), vjp, "sum_all")


def custom(data, parents: Sequence[Tensor],
           vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
           op: str = "custom") -> Tensor:
    """Graft an externally computed value + vector-Jacobian product in."""
    return _make(np.asarray(data, dtype=_DTYPE), tuple(parents), vjp, op)


def multi_head_attention(x: Tensor, wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor,
                         wv: Tensor, bv: Tensor, wo: Tensor, bo: Tensor,
                         n_heads: int, key_valid: np.ndarray | None = None,
                         attn_sink: list | None = None) -> Tensor:
    """Standard multi-head self-attention over box rows.

    key_valid marks real rows; padded keys get -1e9 added to their logits.
    Residual connections are the caller's business.  When attn_sink is a
    list, each head's post-softmax weight matrix is appended to it.
    """
    _check_2d("multi_head_attention", x)
    n, d = x.data.shape
    if d % n_heads != 0:
        raise ValueError(f"model width {d} not divisible by {n_heads} heads")
    additive = None
    if key_valid is not None:
        key_valid = np.asarray(key_valid, dtype=bool)
        if key_valid.shape != (n,):
            raise ValueError(f"key_valid shape {key_valid.shape}, expected ({n},)")
        if not key_valid.any():
            raise ValueError("all keys masked")
        additive = np.where(key_valid, 0.0, MASK_FILL)[None, :]
    q = linear(x, wq, bq)
    k = linear(x, wk, bk)
    v = linear(x, wv, bv)
    dh = d // n_heads
    inv_sqrt = 1.0 / math.sqrt(dh)
    heads = []
    for h in range(n_heads):
        j0, j1 = h * dh, (h + 1) * dh
        qh = slice_cols(q, j0, j1)
        kh = slice_cols(k, j0, j1)
        vh = slice_cols(v, j0, j1)
        logits = scale(matmul_nt(qh, kh), inv_sqrt)
        attn = softmax_rows(logits, additive)
        if attn_sink is not None:
            attn_sink.append(np.array(attn.data))
        heads.append(matmul(attn, vh))
    return linear(concat_cols(heads), wo, bo)


def grad_check(fn: Callable[[list[Tensor]], Tensor], inputs: Sequence[np.ndarray],
               h: float = 1e-6) -> float:
    """Worst relative error between tape and central-difference gradients.

    Runs entirely in float64.  fn must map the leaf list to a scalar Tensor
    and be pure.  The finite-difference denominator uses the actually
    stored x+h / x-h to cancel representation error.
    """
    with precision(np.float64):
        leaves = [Tensor(np.asarray(x, dtype=np.float64)) for x in inputs]
        with Tape() as tape:
            out = fn(leaves)
        if out.data.shape != ():
            raise ValueError("grad_check needs a scalar-valued fn")
        tape.backward(out)
        worst = 0.0
        for leaf in leaves:
            analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            flat = leaf.data.reshape(-1)
            aflat = np.asarray(analytic).reshape(-1)
            for i in range(flat.size):
                x0 = flat[i]
                flat[i] = x0 + h
                x_hi = float(flat[i])
                f_hi = float(fn(leaves).data)
                flat[i] = x0 - h
                x_lo = float(flat[i])
                f_lo = float(fn(leaves).data)
                flat[i] = x0
                numeric = (f_hi - f_lo) / (x_hi - x_lo)
                denom = max(1.0, abs(float(aflat[i])), abs(numeric))
                worst = max(worst, abs(float(aflat[i]) - numeric) / denom)
        return worst
