"""Network layers on top of the tensor engine.

Everything takes and returns batched token tensors (B, T, D) unless noted.
Modules own their parameters as Tensors with requires_grad=True and expose
them through `parameters()` as a flat {dotted.name: Tensor} dict, which is
what the optimizer and the checkpoint code consume.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tz
from .tensor import Tensor


class Module:
    """Base with recursive parameter discovery over attributes."""

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        self._collect("", out)
        return out

    def _collect(self, prefix: str, out: dict[str, Tensor]) -> None:
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out[key] = val
            elif isinstance(val, Module):
                val._collect(f"{key}.", out)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        item._collect(f"{key}.{i}.", out)
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{key}.{i}"] = item

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in params.items():
            arr = arrays[name]
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}


def _param(rng: np.random.Generator, shape, std: float, dtype) -> Tensor:
    if std == 0.0:
        data = np.zeros(shape, dtype=dtype)
    else:
        data = rng.normal(0.0, std, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 std: float | None = None, zero_init: bool = False,
                 dtype=np.float32):
        if std is None:
            std = 1.0 / math.sqrt(d_in)
        self.weight = _param(rng, (d_in, d_out), 0.0 if zero_init else std, dtype)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return tz.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return tz.standardize(x, eps=self.eps) * self.gamma + self.beta


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, std: float = 0.02,
                 dtype=np.float32):
        self.table = _param(rng, (num, dim), std, dtype)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return tz.embedding(self.table, ids)


class MultiHeadAttention(Module):
    """Self- or cross-attention; queries from `x`, keys/values from `context`.

    Softmax rows over keys sum to 1 by construction. `last_weights` keeps the
    most recent (B, H, Tq, Tk) attention map for offline inspection.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.wq = Linear(dim, dim, rng, dtype=dtype)
        self.wk = Linear(dim, dim, rng, dtype=dtype)
        self.wv = Linear(dim, dim, rng, dtype=dtype)
        self.wo = Linear(dim, dim, rng, dtype=dtype)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return tz.transpose(tz.reshape(x, (b, t, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, context: Tensor | None = None,
                 keep_weights: bool = False) -> Tensor:
        ctx = x if context is None else context
        # scale folded into q while it is still small
        q = self._split(self.wq(x)) * (1.0 / math.sqrt(self.head_dim))
        k = self._split(self.wk(ctx))
        v = self._split(self.wv(ctx))
        scores = tz.matmul(q, tz.swapaxes(k, -1, -2))
        weights = tz.softmax(scores, axis=-1)
        if keep_weights:
            self.last_weights = weights.data.copy()
        out = tz.matmul(weights, v)
        b, h, t, hd = out.shape
        out = tz.reshape(tz.transpose(out, (0, 2, 1, 3)), (b, t, h * hd))
        return self.wo(out)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(tz.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: self-attention, optional cross-attention, MLP."""

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator,
                 mlp_ratio: int = 4, cross: bool = False, dtype=np.float32):
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, num_heads, rng, dtype=dtype)
        self.cross_ln = LayerNorm(dim, dtype=dtype) if cross else None
        self.cross_attn = MultiHeadAttention(dim, num_heads, rng, dtype=dtype) if cross else None
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.mlp = MLP(dim, mlp_ratio * dim, rng, dtype=dtype)

    def __call__(self, x: Tensor, context: Tensor | None = None,
                 keep_weights: bool = False) -> Tensor:
        x = x + self.attn(self.ln1(x))
        if self.cross_attn is not None:
            if context is None:
                raise ValueError("cross block called without context")
            x = x + self.cross_attn(self.cross_ln(x), context, keep_weights=keep_weights)
        x = x + self.mlp(self.ln2(x))
        return x


def time_features(n: np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal features of a diffusion time n in [0, 1]; shape (..., dim)."""
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, math.log(1000.0), half))
    ang = np.asarray(n, dtype=np.float64)[..., None] * freqs
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    if feats.shape[-1] < dim:
        feats = np.concatenate([feats, np.zeros(feats.shape[:-1] + (dim - feats.shape[-1],))], axis=-1)
    return feats.astype(dtype)
