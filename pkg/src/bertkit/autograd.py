"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records the backward closure and its parents on the output tensor;
creation order doubles as a topological order of the graph, so backward walks
tensors in reverse creation order and visits each exactly once. Gradients
accumulate additively and are reset explicitly (zero_grads), never implicitly.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_creation_counter = itertools.count()

_checked = False


def set_checked(flag: bool) -> None:
    """Enable per-op NaN/Inf detection (off by default; slows the forward pass)."""
    global _checked
    _checked = bool(flag)


class Tensor:
    """A float64 ndarray plus an optional gradient buffer and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward_fn",
                 "_seq", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._seq = next(_creation_counter)
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _result(data: np.ndarray, parents: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], None], op: str) -> Tensor:
    if _checked and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op {op!r}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
        out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    a = _as_tensor(a)
    c = float(c)
    data = a.data * c

    def backward(g):
        _accumulate(a, g * c)

    return _result(data, (a,), backward, "scale")


def matmul(a, b) -> Tensor:
    """Matrix product; extra leading axes follow numpy stacked-matmul rules."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _result(data, (a, b), backward, "matmul")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    in_shape = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(in_shape))

    return _result(data, (a,), backward, "reshape")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _result(data, (a,), backward, "transpose")


def sum_all(a) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    a = _as_tensor(a)
    data = np.asarray(a.data.sum())

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _result(data, (a,), backward, "sum_all")


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    if a.data.shape[axis] == 0:
        raise ValueError(f"softmax over empty axis {axis} of shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _result(out, (a,), backward, "softmax")


def layer_norm(a, gain, bias, epsilon: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then gain*x + bias."""
    if epsilon <= 0:
        raise ValueError(f"layer_norm epsilon must be > 0, got {epsilon}")
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    n = a.data.shape[-1]
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            _accumulate(gain, _unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            _accumulate(bias, _unbroadcast(g, bias.data.shape))
        if a.requires_grad:
            dxhat = g * gain.data
            term = n * dxhat - dxhat.sum(axis=-1, keepdims=True) \
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            _accumulate(a, inv_std / n * term)

    return _result(out, (a, gain, bias), backward, "layer_norm")


# GELU tanh approximation constants: sqrt(2/pi) and the cubic coefficient.
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def gelu(a) -> Tensor:
    """GELU activation, tanh approximation: 0.5*x*(1 + tanh(c*(x + k*x^3)))."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_K * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_K * x ** 2)
        _accumulate(a, g * d)

    return _result(out, (a,), backward, "gelu")


def embedding_lookup(table, ids) -> Tensor:
    """Select rows of a [n, dim] table by integer ids of any shape."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ValueError(f"embedding table must be 2-d, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"id out of range: table has {table.shape[0]} rows, "
            f"ids span [{ids.min()}, {ids.max()}]"
        )
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _result(data, (table,), backward, "embedding_lookup")


def gather_rows(a, batch_index, position_index) -> Tensor:
    """Select [batch, position] rows of a [B, S, H] tensor into [n, H]."""
    a = _as_tensor(a)
    batch_index = np.asarray(batch_index, dtype=np.int64)
    position_index = np.asarray(position_index, dtype=np.int64)
    data = a.data[batch_index, position_index]

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, (batch_index, position_index), g)

    return _result(data, (a,), backward, "gather_rows")


def cross_entropy(logits, target_ids) -> Tensor:
    """Mean negative log-likelihood of target_ids under row-wise softmax(logits)."""
    logits = _as_tensor(logits)
    targets = np.asarray(target_ids, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects [n, classes] logits, got {logits.shape}")
    n, classes = logits.shape
    if n == 0 or classes == 0:
        raise ValueError(f"cross_entropy on empty axis: logits shape {logits.shape}")
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} does not match {n} logit rows")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    nll = -np.log(probs[np.arange(n), targets])
    data = np.asarray(nll.mean())

    def backward(g):
        d = probs.copy()
        d[np.arange(n), targets] -= 1.0
        _accumulate(logits, float(g) * d / n)

    return _result(data, (logits,), backward, "cross_entropy")


def dropout(a, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero entries with probability rate, rescale the rest."""
    a = _as_tensor(a)
    if rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    data = a.data * keep

    def backward(g):
        _accumulate(a, g * keep)

    return _result(data, (a,), backward, "dropout")


def backward(loss: Tensor) -> None:
    """Populate .grad of every tracked tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward_done:
        raise RuntimeError("backward already ran for this loss; rebuild the graph "
                           "and reset gradients before differentiating again")
    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    loss.grad = np.ones_like(loss.data)
    for t in nodes:
        if t._backward_fn is not None and t.grad is not None:
            t._backward_fn(t.grad)
    loss._backward_done = True


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               step: float = 1e-4) -> float:
    """Max relative error between analytic gradients of f() and central differences.

    f must rebuild its graph from the given parameter tensors on every call and
    be deterministic (checked by evaluating it twice up front). The relative
    error at each entry is |analytic - numeric| / max(1, |analytic| + |numeric|).
    """
    if not 1e-6 <= step <= 1e-3:
        raise ValueError(f"step must lie in [1e-6, 1e-3], got {step}")
    first, second = float(f().data), float(f().data)
    if first != second:
        raise RuntimeError(f"f is not deterministic: {first} != {second}")

    zero_grads(params)
    backward(f())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            f_plus = float(f().data)
            flat[i] = original - step
            f_minus = float(f().data)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = flat_grad[i]
            err = abs(a - numeric) / max(1.0, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst


def dump_tensor(t: Tensor) -> str:
    """Debug dump: shape header then row-major decimal values."""
    values = " ".join(repr(v) for v in t.data.reshape(-1))
    return f"shape {' '.join(map(str, t.data.shape))}\n{values}\n"
