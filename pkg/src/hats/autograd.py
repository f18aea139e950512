"""Dense float64 tensors with reverse-mode differentiation and Adam.

Every op appends a node (its parents plus a backward closure) when any input
requires a gradient.  Nodes carry a global creation sequence number, so
``backward`` can replay them in strict reverse creation order without a
separate topological sort.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "NumericError", "ContractError",
    "tensor", "parameter", "no_grad", "matmul", "add", "sub", "mul", "neg",
    "concat", "stack", "sigmoid", "tanh", "relu", "exp", "log", "softmax",
    "masked_softmax", "mean", "sum", "sum_unordered", "reshape", "swapaxes", "take", "getitem",
    "cross_entropy_with_logits", "dropout", "backward", "grad",
    "AdamState", "adam_step", "finite_diff_check",
]

_seq = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""


class NumericError(ArithmeticError):
    """An op produced NaN or Inf."""


class ContractError(ValueError):
    """A caller broke an API precondition."""


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._seq = next(_seq)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad, name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    # one reduction is cheaper than an elementwise test; overflowing sums fall through to it
    if not math.isfinite(np.add.reduce(data, axis=None)) and not np.isfinite(data).all():
        raise NumericError(f"non-finite output from op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    out._op = op
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
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


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make("mul", ad * bd, (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's batching rules; 1-D operands are promoted."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    k_a = a.shape[-1]
    k_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if k_a != k_b:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    A = a.data[None, :] if a.ndim == 1 else a.data
    B = b.data[:, None] if b.ndim == 1 else b.data
    try:
        out = np.matmul(A, B)
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ, shapes {a.shape} and {b.shape}") from None
    out_full = out
    if a.ndim == 1:
        out = out[..., 0, :]
    if b.ndim == 1:
        out = out[..., 0]

    def bw(g):
        G = g.reshape(out_full.shape)
        gA = np.matmul(G, np.swapaxes(B, -1, -2))
        gB = np.matmul(np.swapaxes(A, -1, -2), G)
        gA = _unbroadcast(gA, A.shape).reshape(a.shape)
        gB = _unbroadcast(gB, B.shape).reshape(b.shape)
        return gA, gB

    return _make("matmul", out, (a, b), bw)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(src),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    return _make("swapaxes", np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no operands")
    nd = ts[0].ndim
    ax = axis % nd if nd else 0
    for t in ts[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeError(f"concat: shapes {[t.shape for t in ts]} do not conform on axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        return [np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=ax) for k in range(len(ts))]

    return _make("concat", out, ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {[t.shape for t in ts]}")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def bw(g):
        return [np.take(g, k, axis=ax) for k in range(len(ts))]

    return _make("stack", out, ts, bw)


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, np.integer)) or k is Ellipsis or k is None for k in parts)


def getitem(a, key) -> Tensor:
    a = _as_tensor(a)
    out = a.data[key]
    src = a.shape

    basic = _is_basic_index(key)

    def bw(g):
        full = np.zeros(src)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _make("getitem", np.asarray(out, dtype=np.float64), (a,), bw)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array of any shape."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[ax]):
        raise ShapeError(f"take: index out of range for axis {axis} of shape {a.shape}")
    out = np.take(a.data, idx, axis=ax)
    src = a.shape

    def bw(g):
        # move gathered axes to the front, then scatter-add along axis 0
        gm = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
        gm = gm.reshape((idx.size,) + gm.shape[idx.ndim:])
        full = np.zeros((src[ax],) + src[:ax] + src[ax + 1:])
        np.add.at(full, idx.reshape(-1), gm)
        return (np.moveaxis(full, 0, ax),)

    return _make("take", out, (a,), bw)


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    src = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make("sum", np.asarray(out, dtype=np.float64), (a,), bw)


def sum_unordered(a, axis: int) -> Tensor:
    """Sum along ``axis`` after sorting, so the result depends only on the multiset of terms.

    Reordering the summed entries (for example relabeling graph neighbors)
    then leaves the output bit-identical.
    """
    a = _as_tensor(a)
    out = np.sort(a.data, axis=axis).sum(axis=axis)
    src = a.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _make("sum_unordered", np.asarray(out, dtype=np.float64), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    src = a.shape
    count = a.data.size if axis is None else np.prod([src[x] for x in np.atleast_1d(axis)])

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, src).copy(),)

    return _make("mean", np.asarray(out, dtype=np.float64), (a,), bw)


# ---------------------------------------------------------------- elementwise

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = _sigmoid(a.data)
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    return _make("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    return _make("exp", y, (a,), lambda g: (g * y,))


def log(a, floor: float = 0.0) -> Tensor:
    """Natural log; values below ``floor`` are clamped (their gradient is zero)."""
    a = _as_tensor(a)
    x = a.data
    clamped = x < floor
    xs = np.where(clamped, floor, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xs)
    return _make("log", y, (a,), lambda g: (np.where(clamped, 0.0, g / xs),))


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    a = _as_tensor(a)
    y = _softmax_np(a.data)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (a,), bw)


def masked_softmax(a, mask) -> Tensor:
    """Softmax over the last axis restricted to entries where ``mask`` is true.

    Masked entries get probability exactly 0; rows with no valid entry come out
    all-zero rather than NaN.
    """
    a = _as_tensor(a)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    x = np.where(m, a.data, -np.inf)
    row_max = x.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(m, np.exp(np.where(m, a.data, 0.0) - row_max), 0.0)
    s = np.sort(e, axis=-1).sum(axis=-1, keepdims=True)  # independent of entry order
    y = e / np.where(s > 0, s, 1.0)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("masked_softmax", y, (a,), bw)


def cross_entropy_with_logits(logits, labels, reduction: str = "sum") -> Tensor:
    """-sum_c y_c log softmax(logits)_c with integer labels over the last axis."""
    logits = _as_tensor(logits)
    lab = np.asarray(labels, dtype=np.intp)
    if lab.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: labels {lab.shape} vs logits {logits.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, lab[..., None], axis=-1)[..., 0]
    total = -picked.sum()
    count = max(lab.size, 1)
    if reduction == "mean":
        total = total / count
    elif reduction != "sum":
        raise ContractError(f"unknown reduction {reduction!r}")
    p = np.exp(logp)

    def bw(g):
        d = p.copy()
        np.put_along_axis(d, lab[..., None], np.take_along_axis(d, lab[..., None], axis=-1) - 1.0, axis=-1)
        if reduction == "mean":
            d /= count
        return (g * d,)

    return _make("cross_entropy", np.asarray(total, dtype=np.float64), (logits,), bw)


def dropout(a, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout: a fresh keep-mask per call, identity at evaluation."""
    a = _as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in training mode needs a generator")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make("dropout", a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    # collect reachable nodes, replay in reverse creation order
    nodes: dict[int, Tensor] = {}
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        k = id(t)
        if k in nodes:
            continue
        nodes[k] = t
        stack_.extend(p for p in t._parents if p.requires_grad)
    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in order:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            prev = grads.get(k)
            grads[k] = pg if prev is None else prev + pg


def grad(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of ``loss`` for each named parameter; unreached ones get zeros."""
    for p in params.values():
        p.grad = None
    backward(loss)
    out = {}
    for k, p in params.items():
        out[k] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
    return out


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place; L2 decay is added to the gradient."""
    missing = set(params) - set(grads)
    if missing:
        raise ContractError(f"no gradient for parameters {sorted(missing)}")
    extra = set(grads) - set(params)
    if extra:
        raise ContractError(f"gradients for unknown parameters {sorted(extra)}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k in sorted(params):
        p = params[k]
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"adam: gradient {g.shape} vs parameter {p.shape} for {k}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# ---------------------------------------------------------------- checks

def finite_diff_check(f: Callable[[], Tensor], params: Mapping[str, Tensor] | Iterable[Tensor],
                      h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` takes no arguments and reads the parameters' current data, so it must
    be deterministic (no dropout).
    """
    if not isinstance(params, Mapping):
        params = {str(i): p for i, p in enumerate(params)}
    analytic = grad(f(), params)
    worst = 0.0
    with no_grad():
        for k, p in params.items():
            p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            ga = analytic[k].reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + h
                fp = f().item()
                flat[idx] = orig - h
                fm = f().item()
                flat[idx] = orig
                num = (fp - fm) / (2 * h)
                err = abs(ga[idx] - num) / max(1.0, abs(ga[idx]))
                if not np.isfinite(err):
                    raise NumericError(f"finite difference for {k}[{idx}] is not finite")
                worst = max(worst, err)
    return worst
