"""The box-linking network: shared MLP, encoder stack, linking scores.

Architecture: every box feature row goes through the same 4-layer MLP
(Linear+ReLU), then through n_enc identical post-norm self-attention
blocks (x1 = LN(x + MHA(x)); x2 = LN(x1 + FFN(x1)), FFN = 2x Linear+ReLU).
No positional encodings, no dropout.  Embeddings are L2-normalized and
the pairwise linking score matrix is (E En^T + 1) / 2, so scores live in
[0, 1], the matrix is symmetric, and the diagonal is 1.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import diff_engine as de
from .featurizer import RawFeatureMatrix, featurize, feature_dim
from .types import SlidingWindow

CHECKPOINT_MAGIC = b"BOTT1"


@dataclass(frozen=True)
class NetworkConfig:
    n_classes: int
    mlp_dims: tuple[int, ...] = (1024, 1024, 1024, 512)
    n_enc: int = 3
    n_heads: int = 8
    ffn_dims: tuple[int, ...] = (1024, 512)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mlp_dims", tuple(int(d) for d in self.mlp_dims))
        object.__setattr__(self, "ffn_dims", tuple(int(d) for d in self.ffn_dims))
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if len(self.mlp_dims) < 1 or any(d < 1 for d in self.mlp_dims):
            raise ValueError(f"bad mlp_dims {self.mlp_dims}")
        if len(self.ffn_dims) != 2:
            raise ValueError("ffn_dims must have exactly 2 entries")
        if self.ffn_dims[-1] != self.d:
            raise ValueError(
                f"ffn output {self.ffn_dims[-1]} must equal model width {self.d}")
        if self.n_enc < 0:
            raise ValueError("n_enc must be >= 0")
        if self.n_heads < 1 or self.d % self.n_heads != 0:
            raise ValueError(
                f"model width {self.d} not divisible by {self.n_heads} heads")

    @property
    def d(self) -> int:
        return self.mlp_dims[-1]

    @property
    def input_dim(self) -> int:
        return feature_dim(self.n_classes)

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "mlp_dims": list(self.mlp_dims),
            "n_enc": self.n_enc,
            "n_heads": self.n_heads,
            "ffn_dims": list(self.ffn_dims),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {"n_classes", "mlp_dims", "n_enc", "n_heads", "ffn_dims"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        if "n_classes" not in d:
            raise ValueError("network config needs n_classes")
        kw = dict(d)
        for key in ("mlp_dims", "ffn_dims"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


def param_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape, in canonical (sorted-name) order."""
    shapes: dict[str, tuple[int, ...]] = {}
    d_in = cfg.input_dim
    for i, d_out in enumerate(cfg.mlp_dims):
        shapes[f"mlp.{i}.w"] = (d_in, d_out)
        shapes[f"mlp.{i}.b"] = (d_out,)
        d_in = d_out
    d = cfg.d
    for i in range(cfg.n_enc):
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"enc.{i}.attn.{name}"] = (d, d)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[f"enc.{i}.attn.{name}"] = (d,)
        shapes[f"enc.{i}.ln1.gain"] = (d,)
        shapes[f"enc.{i}.ln1.shift"] = (d,)
        shapes[f"enc.{i}.ffn.0.w"] = (d, cfg.ffn_dims[0])
        shapes[f"enc.{i}.ffn.0.b"] = (cfg.ffn_dims[0],)
        shapes[f"enc.{i}.ffn.1.w"] = (cfg.ffn_dims[0], cfg.ffn_dims[1])
        shapes[f"enc.{i}.ffn.1.b"] = (cfg.ffn_dims[1],)
        shapes[f"enc.{i}.ln2.gain"] = (d,)
        shapes[f"enc.{i}.ln2.shift"] = (d,)
    return dict(sorted(shapes.items()))


def init_params(cfg: NetworkConfig, rng: np.random.Generator) -> dict[str, de.Tensor]:
    """Xavier-uniform weights, zero biases, unit LN gains."""
    params: dict[str, de.Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".w") or ".attn.w" in name:
            fan_in, fan_out = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gain"):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = de.tensor(arr)
    return params


def encode_boxes(features: np.ndarray, params: dict[str, de.Tensor],
                 cfg: NetworkConfig, valid: np.ndarray | None = None,
                 attn_sink: list | None = None) -> de.Tensor:
    """Per-box embeddings for an (N, input_dim) feature matrix.

    valid masks padded rows out of attention keys; padded rows still get
    (meaningless) embedding rows, callers slice them away.
    """
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != cfg.input_dim:
        raise ValueError(
            f"features shape {features.shape}, expected (N, {cfg.input_dim})")
    if features.shape[0] == 0:
        raise ValueError("no boxes to encode")
    x = de.tensor(features)
    for i in range(len(cfg.mlp_dims)):
        x = de.relu(de.linear(x, params[f"mlp.{i}.w"], params[f"mlp.{i}.b"]))
    for i in range(cfg.n_enc):
        p = f"enc.{i}"
        attn = de.multi_head_attention(
            x,
            params[f"{p}.attn.wq"], params[f"{p}.attn.bq"],
            params[f"{p}.attn.wk"], params[f"{p}.attn.bk"],
            params[f"{p}.attn.wv"], params[f"{p}.attn.bv"],
            params[f"{p}.attn.wo"], params[f"{p}.attn.bo"],
            cfg.n_heads, key_valid=valid, attn_sink=attn_sink)
        x = de.layer_norm(de.add(x, attn),
                          params[f"{p}.ln1.gain"], params[f"{p}.ln1.shift"])
        f = de.relu(de.linear(x, params[f"{p}.ffn.0.w"], params[f"{p}.ffn.0.b"]))
        f = de.relu(de.linear(f, params[f"{p}.ffn.1.w"], params[f"{p}.ffn.1.b"]))
        x = de.layer_norm(de.add(x, f),
                          params[f"{p}.ln2.gain"], params[f"{p}.ln2.shift"])
    return x


def linking_scores(embeddings: de.Tensor) -> de.Tensor:
    """(E_n E_n^T + 1) / 2 over L2-normalized embedding rows."""
    en = de.l2_normalize_rows(embeddings)
    return de.add_scalar(de.scale(de.matmul_nt(en, en), 0.5), 0.5)


def forward_features(features: np.ndarray, params: dict[str, de.Tensor],
                     cfg: NetworkConfig, valid: np.ndarray | None = None,
                     n_real: int | None = None,
                     attn_sink: list | None = None) -> de.Tensor:
    """Embeddings -> linking scores, dropping padded rows before normalizing."""
    emb = encode_boxes(features, params, cfg, valid=valid, attn_sink=attn_sink)
    if n_real is not None and n_real != emb.data.shape[0]:
        emb = de.slice_rows(emb, 0, n_real)
    return linking_scores(emb)


class LinkScorer:
    """Callable window -> linking score matrix, counting its forwards."""

    def __init__(self, params: dict[str, de.Tensor], cfg: NetworkConfig):
        self.params = params
        self.cfg = cfg
        self.n_forwards = 0

    def __call__(self, window: SlidingWindow,
                 attn_sink: list | None = None) -> tuple[np.ndarray, RawFeatureMatrix]:
        feats = featurize(window, self.cfg.n_classes)
        ls = forward_features(feats.values, self.params, self.cfg,
                              attn_sink=attn_sink)
        self.n_forwards += 1
        return np.asarray(ls.data), feats


def _write_u32(fh, value: int) -> None:
    fh.write(struct.pack("<I", value))


def save_tensors(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Little-endian container: magic, manifest, float32 payloads."""
    names = sorted(tensors)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        _write_u32(fh, len(names))
        for name in names:
            raw = name.encode("utf-8")
            _write_u32(fh, len(raw))
            fh.write(raw)
            arr = np.asarray(tensors[name])
            _write_u32(fh, arr.ndim)
            for dim in arr.shape:
                _write_u32(fh, dim)
        for name in names:
            arr = np.ascontiguousarray(np.asarray(tensors[name]), dtype="<f4")
            fh.write(arr.tobytes())


def load_tensors(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    off = len(CHECKPOINT_MAGIC)

    def u32():
        nonlocal off
        if off + 4 > len(blob):
            raise ValueError(f"{path}: truncated checkpoint manifest")
        (v,) = struct.unpack_from("<I", blob, off)
        off += 4
        return v

    count = u32()
    entries = []
    for _ in range(count):
        name_len = u32()
        if off + name_len > len(blob):
            raise ValueError(f"{path}: truncated checkpoint manifest")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        rank = u32()
        shape = tuple(u32() for _ in range(rank))
        entries.append((name, shape))
    out: dict[str, np.ndarray] = {}
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        nbytes = 4 * n
        if off + nbytes > len(blob):
            raise ValueError(f"{path}: truncated payload for {name}")
        arr = np.frombuffer(blob[off:off + nbytes], dtype="<f4").reshape(shape)
        out[name] = arr.astype(np.float32)
        off += nbytes
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return out


def config_path(checkpoint_path: str) -> str:
    return checkpoint_path + ".json"


def save_checkpoint(path: str, params: dict[str, de.Tensor],
                    cfg: NetworkConfig) -> None:
    save_tensors(path, {k: v.data for k, v in params.items()})
    with open(config_path(path), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> tuple[dict[str, de.Tensor], NetworkConfig]:
    arrays = load_tensors(path)
    try:
        with open(config_path(path)) as fh:
            cfg = NetworkConfig.from_dict(json.load(fh))
    except FileNotFoundError as e:
        raise ValueError(f"{path}: missing config sidecar {config_path(path)}") from e
    expected = param_shapes(cfg)
    if set(arrays) != set(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise ValueError(f"{path}: parameter names mismatch "
                         f"(missing {missing}, extra {extra})")
    params = {}
    for name, arr in arrays.items():
        if arr.shape != expected[name]:
            raise ValueError(f"{path}: {name} has shape {arr.shape}, "
                             f"expected {expected[name]}")
        params[name] = de.tensor(arr)
    return params, cfg
