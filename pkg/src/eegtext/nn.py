"""Transformer building blocks: attention, encoder/decoder layers, positions.

All blocks are pre-norm residual and operate on single sequences shaped
[T, d_model]; batching happens one sample at a time in the training loops.
Multi-head attention folds the head axis into a batched 3-D matmul so the
recorded graph stays small.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=np.float64) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Named-parameter container; names mirror attribute paths."""

    def named_parameters(self, prefix: str = "") -> dict:
        out = {}
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
                    elif isinstance(item, Tensor):
                        out[f"{key}.{i}"] = item
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def trainable_parameters(self) -> list:
        return [p for p in self.parameters() if p.requires_grad]

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
        return self


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = Tensor(xavier_uniform(rng, d_in, d_out, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_bias(T.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self._eps)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, dtype=np.float64):
        if d_model % n_heads != 0:
            raise ShapeError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.wq = Linear(d_model, d_model, rng, dtype)
        self.wk = Linear(d_model, d_model, rng, dtype)
        self.wv = Linear(d_model, d_model, rng, dtype)
        self.wo = Linear(d_model, d_model, rng, dtype)
        self._heads = n_heads
        self._d_model = d_model

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, key_padding_mask=None, causal: bool = False) -> Tensor:
        h = self._heads
        d = self._d_model
        hd = d // h
        tq, tk = q.shape[0], k.shape[0]

        qh = T.transpose(T.reshape(self.wq(q), (tq, h, hd)), (1, 0, 2))
        kh = T.transpose(T.reshape(self.wk(k), (tk, h, hd)), (1, 0, 2))
        vh = T.transpose(T.reshape(self.wv(v), (tk, h, hd)), (1, 0, 2))

        scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(hd))

        blocked = np.zeros((tq, tk), dtype=bool)
        if key_padding_mask is not None:
            blocked |= np.asarray(key_padding_mask, dtype=bool)[None, :]
        if causal:
            blocked |= np.triu(np.ones((tq, tk), dtype=bool), k=1)
        if blocked.any():
            if blocked.all(axis=1).any():
                raise ContractError("attention: some query has every key masked")
            additive = np.where(blocked, T.NEG_INF, 0.0).astype(scores.dtype)
            scores = T.add(scores, Tensor(np.broadcast_to(additive, (h, tq, tk)).copy()))

        att = T.softmax(scores)
        ctx = T.matmul(att, vh)
        return self.wo(T.reshape(T.transpose(ctx, (1, 0, 2)), (tq, d)))


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator, dtype=np.float64):
        self.w1 = Linear(d_model, d_ff, rng, dtype)
        self.w2 = Linear(d_ff, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(T.gelu(self.w1(x)))


class EncoderLayer(Module):
    """Pre-norm: x + Attn(LN(x)), then + FFN(LN(.))."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng: np.random.Generator, dtype=np.float64):
        self.ln1 = LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln2 = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, d_ff, rng, dtype)

    def __call__(self, x: Tensor, key_padding_mask=None) -> Tensor:
        h = self.ln1(x)
        x = T.add(x, self.attn(h, h, h, key_padding_mask=key_padding_mask))
        return T.add(x, self.ffn(self.ln2(x)))


class DecoderLayer(Module):
    """Causal self-attention, cross-attention over memory, FFN; all pre-norm."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng: np.random.Generator, dtype=np.float64):
        self.ln1 = LayerNorm(d_model, dtype=dtype)
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln2 = LayerNorm(d_model, dtype=dtype)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln3 = LayerNorm(d_model, dtype=dtype)
        self.ffn = FeedForward(d_model, d_ff, rng, dtype)

    def __call__(self, y: Tensor, memory: Tensor, memory_padding_mask=None) -> Tensor:
        h = self.ln1(y)
        y = T.add(y, self.self_attn(h, h, h, causal=True))
        h = self.ln2(y)
        y = T.add(y, self.cross_attn(h, memory, memory, key_padding_mask=memory_padding_mask))
        return T.add(y, self.ffn(self.ln3(y)))


def sinusoidal_table(max_len: int, d_model: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


class PositionalEncoding(Module):
    """Fixed sinusoidal table, or a zero-initialized learned table."""

    def __init__(self, mode: str, max_len: int, d_model: int, dtype=np.float64):
        if mode not in ("sinusoidal", "learned"):
            raise ContractError(f"unknown positional mode {mode!r}")
        self._mode = mode
        self._max_len = max_len
        if mode == "learned":
            self.table = Tensor(np.zeros((max_len, d_model), dtype=dtype), requires_grad=True)
        else:
            self._table = sinusoidal_table(max_len, d_model, dtype)

    def add_to(self, x: Tensor) -> Tensor:
        t = x.shape[0]
        if t > self._max_len:
            raise ContractError(f"sequence length {t} exceeds positional capacity {self._max_len}")
        if self._mode == "learned":
            return T.add(x, T.take_rows(self.table, np.arange(t)))
        return T.add(x, Tensor(self._table[:t].copy()))
