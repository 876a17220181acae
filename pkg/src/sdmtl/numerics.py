"""Dense float64 tensors with reverse-mode differentiation.

Every op builds a node that remembers its inputs and a closure mapping the
output gradient to input gradients.  ``backward`` walks the reachable nodes in
reverse creation order, which is a valid reverse topological order because a
node can only be created after its inputs.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LN_EPS = 1e-5
BCE_CLAMP = 1e-12

_seq = itertools.count()
_local = threading.local()


def _state():
    if not hasattr(_local, "grad_enabled"):
        _local.grad_enabled = True
        _local.flops = None
        _local.clamp_count = 0
    return _local


@contextmanager
def no_grad():
    st = _state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


class FlopCounter:
    def __init__(self):
        self.count = 0


@contextmanager
def count_flops():
    """Count arithmetic work done by ops inside the block (matmul = 2mnk)."""
    st = _state()
    prev = st.flops
    counter = FlopCounter()
    st.flops = counter
    try:
        yield counter
    finally:
        st.flops = prev


def _add_flops(n: int) -> None:
    c = _state().flops
    if c is not None:
        c.count += int(n)


def clamp_count() -> int:
    """Number of probabilities clamped by ``bce`` in this thread so far."""
    return _state().clamp_count


class Tensor:
    """A float64 array that can take part in a recorded computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "seq", "name", "op")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.seq = next(_seq)
        self.name = name
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.value.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __matmul__ = lambda a, b: matmul(a, b)
    __neg__ = lambda a: neg(a)
    __getitem__ = lambda a, key: index(a, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(value)
    out.op = op
    if _state().grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value
    _add_flops(out.size)
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value - b.value
    _add_flops(out.size)
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value
    _add_flops(out.size)
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
        "mul",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    _add_flops(a.value.size)
    return _make(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    _add_flops(out.size)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    _add_flops(a.value.size)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    _add_flops(4 * out.size)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    _add_flops(a.value.size)
    return _make(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def smooth_step(a, gamma: float) -> Tensor:
    """Cubic smooth step: 0 below -gamma/2, 1 above gamma/2, C1 in between."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    a = as_tensor(a)
    z = a.value
    half = gamma / 2.0
    inside = (z > -half) & (z < half)
    cubic = -2.0 / gamma**3 * z**3 + 1.5 / gamma * z + 0.5
    out = np.where(z >= half, 1.0, np.where(inside, cubic, 0.0))
    _add_flops(6 * z.size)

    def bw(g):
        d = np.where(inside, -6.0 / gamma**3 * z**2 + 1.5 / gamma, 0.0)
        return (g * d,)

    return _make(out, (a,), bw, "smooth_step")


# --- reductions and shape --------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.sum(a.value, axis=axis, keepdims=keepdims)
    _add_flops(a.value.size)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(items: Sequence[Tensor], axis: int = -1) -> Tensor:
    items = [as_tensor(t) for t in items]
    out = np.concatenate([t.value for t in items], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in items])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, items, bw, "concat")


def stack(items: Sequence[Tensor], axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]
    out = np.stack([t.value for t in items], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return _make(out, items, bw, "stack")


def index(a, key) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, key, g)
        return (ga,)

    return _make(a.value[key], (a,), bw, "index")


def take_rows(table, ids: np.ndarray) -> Tensor:
    """Gather rows ``table[ids]``; repeated ids accumulate gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range [0, {table.shape[0]})")

    def bw(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(table.value[ids], (table,), bw, "take_rows")


# --- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if b.value.ndim == 2 and a.value.ndim > 2:
        # batched activations times a weight matrix: fold batch dims into one GEMM
        lead = a.shape[:-1]
        a2 = a.value.reshape(-1, a.shape[-1])
        out = (a2 @ b.value).reshape(*lead, b.shape[-1])
        _add_flops(2 * out.size * a.shape[-1])

        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.value.T).reshape(a.shape), a2.T @ g2

        return _make(out, (a, b), bw, "matmul")

    out = np.matmul(a.value, b.value)
    _add_flops(2 * out.size * a.shape[-1])

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(out, (a, b), bw, "matmul")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not np.all(np.isfinite(a.value)):
        raise ValueError("softmax input contains non-finite entries")
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    _add_flops(4 * out.size)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def softmax_rows(x) -> Tensor:
    return softmax(x, axis=-1)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis with population variance, then ``gain * xhat + bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm over zero-length rows")
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.value + bias.value
    _add_flops(8 * out.size)

    def bw(g):
        gx_hat = g * gain.value
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), bw, "layer_norm")


def bce(p, y) -> Tensor:
    """Elementwise binary cross-entropy on probabilities.

    Probabilities outside [1e-12, 1 - 1e-12] are clamped; each clamped entry
    bumps the thread's clamp counter and gets zero gradient.
    """
    p = as_tensor(p)
    y = np.asarray(y.value if isinstance(y, Tensor) else y, dtype=np.float64)
    clipped = np.clip(p.value, BCE_CLAMP, 1.0 - BCE_CLAMP)
    inside = clipped == p.value
    n_clamped = int(p.value.size - inside.sum())
    if n_clamped:
        _state().clamp_count += n_clamped
    out = -(y * np.log(clipped) + (1.0 - y) * np.log1p(-clipped))
    _add_flops(6 * out.size)

    def bw(g):
        d = (clipped - y) / (clipped * (1.0 - clipped))
        return (g * d * inside,)

    return _make(out, (p,), bw, "bce")


# --- backward --------------------------------------------------------------

@dataclass
class Tape:
    """Ops reachable from an output, ordered by creation (topological)."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack_ = [out]
        while stack_:
            t = stack_.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack_.extend(t.parents)
        nodes.sort(key=lambda t: t.seq)
        return cls(nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate dloss/dt into ``t.grad`` for every requires_grad tensor reachable from loss."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_output(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg
    return tape


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_diff_check(f: Callable[[], Tensor], params, eps: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``f`` recomputes a scalar loss from the current values of ``params``
    (a dict or sequence of leaf tensors); values are perturbed in place and
    restored.  Error per entry is |a - n| / max(1, |a|, |n|).
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    zero_grads(plist)
    backward(f())
    worst = 0.0
    with no_grad():
        for p in plist:
            analytic = np.zeros_like(p.value) if p.grad is None else p.grad
            for i in np.ndindex(p.value.shape):
                orig = p.value[i]
                p.value[i] = orig + eps
                up = f().item()
                p.value[i] = orig - eps
                down = f().item()
                p.value[i] = orig
                num = (up - down) / (2.0 * eps)
                a = analytic[i]
                err = abs(a - num) / max(1.0, abs(a), abs(num))
                worst = max(worst, err)
    zero_grads(plist)
    return worst
