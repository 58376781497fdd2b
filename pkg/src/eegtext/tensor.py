"""Dense tensors with reverse-mode automatic differentiation.

Everything the transformers, losses, and optimizers need lives here:
a numpy-backed Tensor, a small set of recorded operations with hand-written
backward rules, topological replay, and a central-difference gradient
checker that serves as the independent oracle for every backward rule.

Broadcasting is deliberately restricted to two patterns (bias-add over the
last axis, multiply-by-python-scalar) so each backward rule stays small and
individually testable. 64-bit floats are the default; 32-bit is accepted
for faster training but finite differences are only reliable at 64-bit.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, EmptyMaskError, ShapeError

DEFAULT_DTYPE = np.float64

# Additive attention-mask value: large enough that exp() underflows to an
# exact 0.0 after max-subtraction, small enough to stay finite.
NEG_INF = -1e30


class Tensor:
    """A dense array plus an optional gradient accumulator.

    Tensors created by operations remember their parents and a backward
    rule; leaves (parameters, inputs) have neither. Gradients accumulate
    across backward() calls until explicitly zeroed, which is what lets the
    multi-stream encoder share one weight set across three passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype != np.float32:
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar (python scalars only on the right of *)
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad = t.grad + g


def _record(data: np.ndarray, parents, backward_fn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def linearize(root: Tensor) -> list:
    """Topologically ordered list of the graph reachable from ``root``.

    Producers appear before consumers; each node exactly once.
    """
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate dLoss/dLeaf on every requires_grad leaf under ``loss``.

    Intermediate gradients are reset per call; leaf gradients accumulate,
    so two calls without zeroing give exactly twice the one-call gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = linearize(loss)
    for t in tape:
        if t._backward is not None:
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for t in reversed(tape):
        if t._backward is not None:
            t._backward(t.grad)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra operations
# ---------------------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes differ: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def back(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _record(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def back(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _record(a.data - b.data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        _accumulate(a, -g)

    return _record(-a.data, (a,), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def back(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _record(a.data * b.data, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    def back(g):
        _accumulate(a, g * s)

    return _record(a.data * s, (a,), back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[..., d] + b[d], the one broadcast pattern beyond scalars."""
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: {x.data.shape} vs bias {b.data.shape}")

    def back(g):
        _accumulate(x, g)
        _accumulate(b, g.reshape(-1, b.data.shape[0]).sum(axis=0))

    return _record(x.data + b.data, (x, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product, or batched over an equal leading axis for 3-D."""
    ad, bd = a.data, b.data
    ok = (
        (ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0])
        or (ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] == bd.shape[0] and ad.shape[2] == bd.shape[1])
    )
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} x {bd.shape}")

    def back(g):
        _accumulate(a, np.matmul(g, np.swapaxes(bd, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(ad, -1, -2), g))

    return _record(np.matmul(ad, bd), (a, b), back)


def transpose(a: Tensor, axes) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def back(g):
        _accumulate(a, np.transpose(g, inverse))

    return _record(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def back(g):
        _accumulate(a, g.reshape(old))

    return _record(np.ascontiguousarray(a.data.reshape(shape)), (a,), back)


def concat_rows(parts) -> Tensor:
    """Concatenate 2-D tensors along axis 0."""
    parts = list(parts)
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[lo:hi])

    return _record(np.concatenate([p.data for p in parts], axis=0), parts, back)


def stack_rows(vectors) -> Tensor:
    """Stack 1-D tensors into a 2-D tensor, one row each."""
    vectors = list(vectors)

    def back(g):
        for i, v in enumerate(vectors):
            _accumulate(v, g[i])

    return _record(np.stack([v.data for v in vectors], axis=0), vectors, back)


def take_rows(x: Tensor, idx) -> Tensor:
    """Row gather: out[i] = x[idx[i]]. Also serves as embedding lookup."""
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accumulate(x, gx)

    return _record(x.data[idx], (x,), back)


def sum_all(a: Tensor) -> Tensor:
    def back(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _record(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), back)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def back(g):
        _accumulate(a, np.full_like(a.data, float(g) / n))

    return _record(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), back)


def mean_rows(x: Tensor, row_mask) -> Tensor:
    """Average of the selected rows of a 2-D tensor (global average pooling)."""
    row_mask = np.asarray(row_mask, dtype=bool)
    if row_mask.shape != (x.data.shape[0],):
        raise ShapeError(f"mean_rows: mask {row_mask.shape} vs rows {x.data.shape[0]}")
    if not row_mask.any():
        raise EmptyMaskError("mean_rows: no rows selected")
    m = int(row_mask.sum())

    def back(g):
        gx = np.zeros_like(x.data)
        gx[row_mask] = g / m
        _accumulate(x, gx)

    return _record(x.data[row_mask].mean(axis=0), (x,), back)


def square(a: Tensor) -> Tensor:
    def back(g):
        _accumulate(a, g * 2.0 * a.data)

    return _record(a.data * a.data, (a,), back)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def back(g):
        _accumulate(a, g * out_data)

    return _record(out_data, (a,), back)


def log(a: Tensor) -> Tensor:
    def back(g):
        _accumulate(a, g / a.data)

    return _record(np.log(a.data), (a,), back)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def back(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _record(out_data, (a,), back)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU: 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    xd = x.data
    inner = _GELU_C * (xd + _GELU_A * xd**3)
    t = np.tanh(inner)

    def back(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
        dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
        _accumulate(x, g * dx)

    return _record(0.5 * xd * (1.0 + t), (x,), back)


# ---------------------------------------------------------------------------
# normalization and fused losses
# ---------------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    if not np.isfinite(x.data).all():
        raise ContractError("softmax: non-finite input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(x, y * (g - dot))

    return _record(y, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance over the last axis, then elementwise affine."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(f"layer_norm: affine params {gamma.data.shape}/{beta.data.shape} vs width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        _accumulate(beta, g.reshape(-1, d).sum(axis=0))
        _accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (gx - m1 - xhat * m2))

    return _record(xhat * gamma.data + beta.data, (x, gamma, beta), back)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit L2 norm."""
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True) + eps)
    y = x.data / norms

    def back(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(x, (g - y * dot) / norms)

    return _record(y, (x,), back)


def masked_cross_entropy(logits: Tensor, targets, position_mask) -> Tensor:
    """Mean NLL over flagged rows of a [T, V] logit matrix."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(position_mask, dtype=bool)
    t, v = logits.data.shape
    if targets.shape != (t,) or mask.shape != (t,):
        raise ShapeError(f"masked_cross_entropy: logits {logits.data.shape}, targets {targets.shape}, mask {mask.shape}")
    if not mask.any():
        raise EmptyMaskError("masked_cross_entropy: no flagged positions")
    if targets[mask].min() < 0 or targets[mask].max() >= v:
        raise ContractError("masked_cross_entropy: target id outside vocabulary")
    m = int(mask.sum())
    rows = logits.data[mask]
    shifted = rows - rows.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + rows.max(axis=-1)
    picked = rows[np.arange(m), targets[mask]]
    loss = (lse - picked).sum() / m

    def back(g):
        p = np.exp(shifted)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(m), targets[mask]] -= 1.0
        gl = np.zeros_like(logits.data)
        gl[mask] = p * (float(g) / m)
        _accumulate(logits, gl)

    return _record(np.asarray(loss, dtype=logits.data.dtype), (logits,), back)


def masked_mse(pred: Tensor, target: Tensor, position_mask) -> Tensor:
    """Mean squared difference over flagged rows and the feature axis."""
    _same_shape(pred, target, "masked_mse")
    mask = np.asarray(position_mask, dtype=bool)
    if mask.shape != (pred.data.shape[0],):
        raise ShapeError(f"masked_mse: mask {mask.shape} vs rows {pred.data.shape[0]}")
    if not mask.any():
        raise EmptyMaskError("masked_mse: no flagged positions")
    m = int(mask.sum())
    d = pred.data.shape[1]
    diff = pred.data[mask] - target.data[mask]
    loss = (diff * diff).sum() / (m * d)

    def back(g):
        gp = np.zeros_like(pred.data)
        gp[mask] = 2.0 * diff * (float(g) / (m * d))
        _accumulate(pred, gp)
        _accumulate(target, -gp)

    return _record(np.asarray(loss, dtype=pred.data.dtype), (pred, target), back)


# ---------------------------------------------------------------------------
# gradient-check oracle
# ---------------------------------------------------------------------------

def finite_difference_check(f, x: Tensor, h: float = 1e-5, indices=None) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``f`` maps the current value of ``x`` to a scalar Tensor. All entries of
    ``x`` are checked unless ``indices`` limits them (flat indices), which the
    end-to-end suite uses to keep large parameter tensors affordable. Error
    metric per entry: |a - n| / max(1e-8, |a| + |n|).
    """
    if x.data.dtype != np.float64:
        raise ContractError("finite_difference_check requires 64-bit tensors")
    x.grad = None
    loss = f(x)
    backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(x).data)
        flat[i] = orig - h
        down = float(f(x).data)
        flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst
