"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors are evaluated eagerly: every operation computes its value immediately
and, when gradients are enabled, records a closure that propagates the
upstream gradient to its inputs.  ``backward`` walks the recorded graph in
reverse topological order.

The op set is closed: arithmetic with broadcasting, matmul (2-D and batched),
tanh, sigmoid, exp, log, softmax, sum, concat, stack, indexing, reshape,
embedding lookup and negative log-likelihood at an index.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class NumericError(FloatingPointError):
    """An operation produced NaN or Inf."""


class _Mode:
    grad_enabled = True
    check_finite = True


_mode = _Mode()


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording a graph."""
    prev = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    prev = _mode.check_finite
    _mode.check_finite = enabled
    try:
        yield
    finally:
        _mode.check_finite = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fiub":
            raise TypeError(f"unsupported dtype {arr.dtype}")
        if arr.dtype.kind in "iub" and requires_grad:
            raise TypeError("integer tensors cannot require grad")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _label(t: Tensor) -> str:
    return t.name or t.op


def _ensure(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None and like.dtype.kind == "f" else None
    return Tensor(np.asarray(x, dtype=dtype))


# ops that map finite inputs to finite outputs skip the scan
_FINITE_SAFE = frozenset({"neg", "tanh", "sigmoid", "softmax", "reshape", "concat", "stack", "getitem", "embedding", "nll"})


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if _mode.check_finite and op not in _FINITE_SAFE and data.dtype.kind == "f" and not np.isfinite(data).all():
        names = ", ".join(_label(p) for p in parents)
        raise NumericError(f"{op} produced non-finite values (inputs: {names})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    if _mode.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _shape_guard(op: str, *operands: Tensor):
    shapes = ", ".join(f"{_label(t)}{t.shape}" for t in operands)
    return ShapeError(f"{op}: incompatible operand shapes {shapes}")


def _accum(t: Tensor, g: np.ndarray, idx=None) -> None:
    if not t.requires_grad:
        return
    if idx is None:
        if t.grad is None:
            t.grad = np.array(g, dtype=t.dtype, copy=True)
        else:
            t.grad += g
        return
    if t.grad is None:
        t.grad = np.zeros(t.shape, dtype=t.dtype)
    if _is_basic_index(idx):
        t.grad[idx] += g
    else:
        np.add.at(t.grad, idx, g)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice, type(None), type(Ellipsis))) for i in items)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _ensure(a, b if isinstance(b, Tensor) else None), _ensure(b, a if isinstance(a, Tensor) else None)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_guard("add", a, b) from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _ensure(a, b if isinstance(b, Tensor) else None), _ensure(b, a if isinstance(a, Tensor) else None)
    try:
        data = a.data - b.data
    except ValueError:
        raise _shape_guard("sub", a, b) from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _ensure(a, b if isinstance(b, Tensor) else None), _ensure(b, a if isinstance(a, Tensor) else None)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_guard("mul", a, b) from None

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _ensure(a, b if isinstance(b, Tensor) else None), _ensure(b, a if isinstance(a, Tensor) else None)
    try:
        data = a.data / b.data
    except ValueError:
        raise _shape_guard("div", a, b) from None

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * data / b.data, b.shape))

    return _make(data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: _accum(a, -g), "neg")


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _make(data, (a,), lambda g: _accum(a, g * (1.0 - data * data)), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form avoids overflow in exp for large |x|
    data = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(data, (a,), lambda g: _accum(a, g * data * (1.0 - data)), "sigmoid")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _make(data, (a,), lambda g: _accum(a, g * data), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _make(data, (a,), lambda g: _accum(a, g / a.data), "log")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(a, data * (g - (g * data).sum(axis=axis, keepdims=True)))

    return _make(data, (a,), backward, "softmax")


# ---------------------------------------------------------------- linear algebra


def _mm(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # numpy's stacked matmul is slow for outer products; broadcasting is not
    if x.shape[-1] == 1 and y.shape[-2] == 1:
        return x * y
    return np.matmul(x, y)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise _shape_guard("matmul", a, b)
    try:
        data = _mm(a.data, b.data)
    except ValueError:
        raise _shape_guard("matmul", a, b) from None

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(_mm(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(_mm(np.swapaxes(a.data, -1, -2), g), b.shape)
            _accum(b, gb)

    return _make(data, (a, b), backward, "matmul")


# ---------------------------------------------------------------- structure


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(data, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {_label(a)}{a.shape} to {tuple(shape)}") from None
    return _make(data, (a,), lambda g: _accum(a, g.reshape(a.shape)), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise _shape_guard("concat", *tensors) from None
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _make(data, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise _shape_guard("stack", *tensors) from None
    ax = axis % data.ndim

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, np.take(g, i, axis=ax))

    return _make(data, tuple(tensors), backward, "stack")


def getitem(a: Tensor, idx) -> Tensor:
    try:
        data = a.data[idx]
    except IndexError:
        raise ShapeError(f"getitem: bad index for {_label(a)}{a.shape}") from None
    data = np.asarray(data)
    return _make(data, (a,), lambda g: _accum(a, g, idx), "getitem")


def embedding(table: Tensor, indices) -> Tensor:
    """Rows of ``table`` selected by an integer index array."""
    idx = np.asarray(indices.data if isinstance(indices, Tensor) else indices)
    if idx.dtype.kind not in "iu":
        raise TypeError("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding: index out of range for {_label(table)}{table.shape}")
    data = table.data[idx]

    def backward(g):
        _accum(table, g.reshape(-1, table.shape[1]), idx.reshape(-1))

    return _make(data, (table,), backward, "embedding")


_TINY = {np.dtype(np.float32): 1e-30, np.dtype(np.float64): 1e-300}


def nll(probs: Tensor, target) -> Tensor:
    """-log probs[..., target] elementwise over the leading axes."""
    tgt = np.asarray(target)
    if tgt.shape != probs.shape[:-1]:
        raise ShapeError(f"nll: target shape {tgt.shape} does not match {_label(probs)}{probs.shape}")
    lead = np.indices(tgt.shape, sparse=True)
    idx = tuple(lead) + (tgt,)
    picked = np.maximum(probs.data[idx], _TINY.get(probs.dtype, 1e-300))
    data = -np.log(picked)

    def backward(g):
        _accum(probs, -g / picked, idx)

    return _make(data, (probs,), backward, "nll")


# ---------------------------------------------------------------- backward pass


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into ``.grad`` of every reachable trainable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones(loss.shape, dtype=loss.dtype)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node._parents:
                # free intermediate buffers as soon as they are consumed
                node.grad = None


def grad(loss: Tensor, leaves: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for named leaves; unreachable leaves get zeros."""
    for t in leaves.values():
        t.grad = None
    backward(loss)
    out = {}
    for name, t in leaves.items():
        out[name] = t.grad if t.grad is not None else np.zeros(t.shape, dtype=t.dtype)
    return out


def leaves_from(params: Mapping[str, np.ndarray], trainable: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=trainable, name=k) for k, v in params.items()}


# ---------------------------------------------------------------- optimisation


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients jointly so their L2 norm is at most ``max_norm``."""
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not self.lr > 0 or not self.eps > 0:
            raise ValueError("learning rate and epsilon must be positive")


def adam_step(
    params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"adam_step: gradient {name}{g.shape} vs parameter {params[name].shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p -= step.astype(p.dtype, copy=False)
    return params, state


def numerical_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` with respect to ``arr`` (perturbed in place)."""
    out = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + eps
        fp = f()
        arr[i] = orig - eps
        fm = f()
        arr[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - b| / max(|a| + |b|, floor), elementwise.

    The floor keeps exact-zero gradients from turning finite-difference
    rounding noise (about 1e-11 at step 1e-5) into a large ratio.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor))) if a.size else 0.0


def forward(root: Tensor) -> np.ndarray:
    """Value of an evaluated graph's root node."""
    return root.data


__all__ = [
    "AdamState", "NumericError", "ShapeError", "Tensor", "adam_step", "add", "backward",
    "clip_global_norm", "concat", "div", "embedding", "exp", "finite_checks", "forward",
    "getitem", "global_norm", "grad", "leaves_from", "log", "matmul", "max_relative_error",
    "mean", "mul", "neg", "nll", "no_grad", "numerical_grad", "reshape", "sigmoid", "softmax",
    "stack", "sub", "tanh", "tsum",
]

