"""Dense tensors on numpy storage with tape-based reverse-mode differentiation.

Two precision profiles exist: "test" (float64, the default; gradient checks
and bit-exactness oracles need it) and "fast" (float32). A profile only
selects the default dtype of newly created tensors; every operation keeps
the dtype of its operands.

Gradients are computed by tracing the operation graph from a scalar loss
into a `Tape` (reverse topological order) and replaying hand-written VJPs.
All reductions use numpy's deterministic kernels, so two backward runs over
identical tapes produce bit-identical gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError

PROFILES = {"test": np.float64, "fast": np.float32}

_active_profile = "test"


def set_profile(name: str) -> None:
    global _active_profile
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    _active_profile = name


def get_profile() -> str:
    return _active_profile


def profile_dtype(name: Optional[str] = None) -> np.dtype:
    if name is None:
        name = _active_profile
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    return np.dtype(PROFILES[name])


@contextlib.contextmanager
def use_profile(name: str):
    global _active_profile
    prev = _active_profile
    set_profile(name)
    try:
        yield
    finally:
        _active_profile = prev


class Tensor:
    """N-dimensional real array, optionally connected to a differentiation tape.

    `data` is a row-major numpy array. Tensors are immutable after
    construction except for gradient accumulation into `.grad`; a tensor
    created by an operation keeps references to its parents and a VJP
    closure so `backward` can replay the chain rule.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _vjp: Optional[Callable] = None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = profile_dtype()
        self.data = np.asarray(data, dtype=dtype)
        track = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.requires_grad = track
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(_parents) if track else ()
        self._vjp = _vjp if track else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Constant view of this tensor, cut off from any tape."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def detach_copy(self) -> np.ndarray:
        """Plain array copy owning its memory; shares nothing with the tape."""
        return np.array(self.data, copy=True)

    def is_leaf(self) -> bool:
        return not self._parents

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic lives in the module-level functions
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.data.dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tape:
    """Ordered record of the operations reaching a root tensor.

    `nodes` is a topological order (parents before children); replaying it
    reversed visits each node exactly once and realizes reverse-mode
    differentiation.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires_grad tensor reachable from `loss`.

    `loss` must be scalar. Gradients from an earlier backward run over the
    same subgraph are reset first, so repeated calls are idempotent and
    bit-identical.
    """
    if not isinstance(loss, Tensor):
        raise ShapeError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ShapeError("loss is not connected to any differentiable input")
    tape = Tape.trace(loss)
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._vjp is None or node.grad is None:
            continue
        for parent, pgrad in zip(node._parents, node._vjp(node.grad)):
            if pgrad is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = pgrad.copy() if pgrad.base is not None else pgrad
            else:
                parent.grad = parent.grad + pgrad


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _promote(a, b)
    out_data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


def sub(a, b) -> Tensor:
    a, b = _promote(a, b)
    out_data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


def mul(a, b) -> Tensor:
    a, b = _promote(a, b)
    out_data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


def div(a, b) -> Tensor:
    a, b = _promote(a, b)
    out_data = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


def neg(a) -> Tensor:
    if not isinstance(a, Tensor):
        a = Tensor(a)

    def vjp(g):
        return (-g,)

    return Tensor(-a.data, _parents=(a,), _vjp=vjp)


def _promote(a, b):
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    if isinstance(b, Tensor):
        return _as_tensor(a, b), b
    a = Tensor(a)
    return a, _as_tensor(b, a)


def matmul(a, b) -> Tensor:
    """Batched matrix product of [..., m, k] by [..., k, r]."""
    a, b = _promote(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} x {b.shape}") from exc

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return Tensor(out_data, _parents=(x,), _vjp=vjp)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.shape[i] for i in axis]))
    else:
        count = x.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return Tensor(out_data, _parents=(x,), _vjp=vjp)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out_data = np.swapaxes(x.data, a, b)

    def vjp(g):
        return (np.swapaxes(g, a, b),)

    return Tensor(out_data, _parents=(x,), _vjp=vjp)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    out_data = np.transpose(x.data, axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return Tensor(out_data, _parents=(x,), _vjp=vjp)


def getitem(x: Tensor, idx) -> Tensor:
    out_data = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] += g
        return (gx,)

    return Tensor(out_data, _parents=(x,), _vjp=vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return Tensor(out_data, _parents=tuple(parts), _vjp=vjp)


def repeat_interleave(x: Tensor, k: int, axis: int) -> Tensor:
    """Repeat each slice along `axis` k times (nearest-neighbor upsampling)."""
    out_data = np.repeat(x.data, k, axis=axis)

    def vjp(g):
        shape = list(x.shape)
        shape.insert(axis + 1, k)
        return (g.reshape(shape).sum(axis=axis + 1),)

    return Tensor(out_data, _parents=(x,), _vjp=vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return Tensor(y, _parents=(x,), _vjp=vjp)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def vjp(g):
        return (g * y,)

    return Tensor(y, _parents=(x,), _vjp=vjp)


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)

    def vjp(g):
        return (g / (2.0 * y),)

    return Tensor(y, _parents=(x,), _vjp=vjp)


def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction for stability.

    Each output row sums to 1 and every entry is strictly positive.
    """
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return Tensor(y, _parents=(x,), _vjp=vjp)


def cosine_loss(a: Tensor, b: Tensor) -> Tensor:
    """Negative cosine similarity -<a,b>/(|a||b|), differentiable in both.

    Raises DegenerateInputError when either argument is all-zero (the
    cosine is undefined there).
    """
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_loss operands differ in shape: {a.shape} vs {b.shape}")
    af = reshape(a, (-1,))
    bf = reshape(b, (-1,))
    na2 = tsum(mul(af, af))
    nb2 = tsum(mul(bf, bf))
    if float(na2.data) == 0.0 or float(nb2.data) == 0.0:
        raise DegenerateInputError("cosine undefined: zero-norm input")
    dot = tsum(mul(af, bf))
    return neg(div(dot, sqrt(mul(na2, nb2))))


def finite_diff_grad(f: Callable[[Tensor], "Tensor | float"], x: Tensor,
                     step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element.

    Test oracle only: O(2*size) evaluations of `f`.
    """
    if step <= 0:
        raise ConfigError("finite_diff_grad step must be positive")
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        hi = base.copy()
        hi[idx] += step
        lo = base.copy()
        lo[idx] -= step
        fhi = f(Tensor(hi, dtype=x.dtype))
        flo = f(Tensor(lo, dtype=x.dtype))
        fhi = float(fhi.data) if isinstance(fhi, Tensor) else float(fhi)
        flo = float(flo.data) if isinstance(flo, Tensor) else float(flo)
        grad[idx] = (fhi - flo) / (2.0 * step)
    return grad
