"""Dense float64 tensors with reverse-mode differentiation.

Values are stored as numpy arrays; the graph, the chain rule and every
backward rule live here. Shapes are checked on every op, there is no
implicit broadcasting: use :func:`expand` when a value must be repeated.
"""
from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, SAM bookkeeping)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward", "id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Tensor | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar; all delegate to the checked functions below
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, float(x)))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=requires_grad)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], bw) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.id = next(_ids)
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out.op = op
        out.parents = tuple(parents)
        out._backward = bw
    else:
        out.op = "const"
        out.parents = ()
        out._backward = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: np.ndarray | float) -> Tensor:
    """Add a non-differentiated constant of identical shape (or a scalar)."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and c.shape != a.shape:
        raise DimensionError(f"add_const: shape mismatch {list(a.shape)} vs {list(c.shape)}")
    return _make(a.data + c, "add_const", (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, "relu", (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth, so finite differences never straddle a kink."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, "gelu", (a,), bw)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != a.data.size:
        raise DimensionError(f"reshape: cannot view {list(a.shape)} as {list(shape)}")
    src = a.shape
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inv),))


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat size-1 axes to ``shape``; rank must already match."""
    shape = tuple(shape)
    if a.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise DimensionError(f"expand: cannot expand {list(a.shape)} to {list(shape)}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)
    return _make(
        np.broadcast_to(a.data, shape).copy(),
        "expand",
        (a,),
        lambda g: (g.sum(axis=axes, keepdims=True),),
    )


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or any(
            s != t for i, (s, t) in enumerate(zip(p.shape, ref)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: incompatible shapes {list(ref)} vs {list(p.shape)}")
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _make(
        np.concatenate([p.data for p in parts], axis=axis),
        "concat",
        parts,
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def slice_flat(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice ``a[start:stop]`` of a 1-D tensor."""
    if a.ndim != 1 or not 0 <= start <= stop <= a.shape[0]:
        raise DimensionError(f"slice_flat: [{start}:{stop}] invalid for shape {list(a.shape)}")
    n = a.shape[0]

    def bw(g):
        out = np.zeros(n)
        out[start:stop] = g
        return (out,)

    return _make(a.data[start:stop].copy(), "slice", (a,), bw)


def index_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table (embedding lookup); output shape idx.shape + (dim,)."""
    if table.ndim != 2:
        raise DimensionError(f"index_rows: table must be 2-D, got {list(table.shape)}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"index_rows: index out of range for {table.shape[0]} rows")
    n = table.shape[0]

    def bw(g):
        out = np.zeros((n, g.shape[-1]))
        np.add.at(out, idx.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (out,)

    return _make(table.data[idx], "index_rows", (table,), bw)


# ---------------------------------------------------------------- reductions

def sum_all(a: Tensor) -> Tensor:
    shp = a.shape
    return _make(np.array(a.data.sum()), "sum", (a,), lambda g: (np.full(shp, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    shp, n = a.shape, a.data.size
    return _make(np.array(a.data.mean()), "mean", (a,), lambda g: (np.full(shp, float(g) / n),))


def dot(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("dot", a, b)
    ad, bd = a.data, b.data
    return _make(np.array(np.sum(ad * bd)), "dot", (a, b), lambda g: (g * bd, g * ad))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of the last two axes; leading (batch) axes must be identical."""
    if (
        a.ndim < 2
        or b.ndim < 2
        or a.shape[-1] != b.shape[-2]
        or a.shape[:-2] != b.shape[:-2]
    ):
        raise DimensionError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return _make(ad @ bd, "matmul", (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x[..., i] @ w[i, o] + b[o]`` with the weight shared over leading axes."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {list(x.shape)} vs weight {list(w.shape)}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {list(b.shape)} vs weight {list(w.shape)}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2
        if b is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=lead))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, "linear", parents, bw)


# ---------------------------------------------------------------- softmax & losses

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, "softmax", (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"log_softmax: axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _make(out, "log_softmax", (x,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean negative log-likelihood.

    ``logits`` is ``[V]`` with an integer target, or ``[N, V]`` with ``N``
    integer targets (the result is the mean over rows).
    """
    single = logits.ndim == 1
    lg = reshape(logits, (1, logits.shape[0])) if single else logits
    if lg.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be [V] or [N, V], got {list(logits.shape)}")
    n, v = lg.shape
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if t.shape != (n,):
        raise DimensionError(f"cross_entropy: {n} rows but {t.size} targets")
    if t.size and (t.min() < 0 or t.max() >= v):
        raise IndexError(f"cross_entropy: target out of range [0, {v})")
    logp = log_softmax(lg, axis=1)
    rows = np.arange(n)
    lp = logp.data

    def bw(g):
        out = np.zeros_like(lp)
        out[rows, t] = -float(g) / n
        return (out,)

    return _make(np.array(-lp[rows, t].mean()), "nll", (logp,), bw)


def weighted_nll(logits: Tensor, rows: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """``sum_j weights[j] * -log softmax(logits[rows[j]])[targets[j]]`` for 2-D logits."""
    if logits.ndim != 2:
        raise DimensionError(f"weighted_nll: logits must be 2-D, got {list(logits.shape)}")
    rows = np.asarray(rows, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if not rows.shape == targets.shape == weights.shape:
        raise DimensionError("weighted_nll: rows, targets and weights must align")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise IndexError(f"weighted_nll: target out of range [0, {logits.shape[1]})")
    logp = log_softmax(logits, axis=1)
    lp = logp.data

    def bw(g):
        out = np.zeros(lp.shape)
        np.add.at(out, (rows, targets), -float(g) * weights)
        return (out,)

    return _make(np.array(-(weights * lp[rows, targets]).sum()), "weighted_nll", (logp,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: params must be [{d}]")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(-1, keepdims=True) - xhat * (gx_hat * xhat).mean(-1, keepdims=True))
        return (gx, (g * xhat).sum(axis=lead), g.sum(axis=lead))

    return _make(xhat * gain.data + bias.data, "layer_norm", (x, gain, bias), bw)


# ---------------------------------------------------------------- convolution

def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``[C,H,W]`` (or batched ``[N,C,H,W]``) with ``[F,C,kh,kw]``."""
    single = x.ndim == 3
    if x.ndim not in (3, 4) or kernels.ndim != 4:
        raise DimensionError(f"conv2d: input {list(x.shape)}, kernels {list(kernels.shape)}")
    xd = x.data[None] if single else x.data
    n, c, h, w = xd.shape
    f, kc, kh, kw = kernels.shape
    if kc != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernels expect {kc}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = _pad(xd, padding)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]  # n,c,ho,wo,kh,kw
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kd = kernels.data
    out = (cols @ kd.reshape(f, -1).T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    if single:
        out = out[0]

    def bw(g):
        g4 = g[None] if single else g
        g2 = g4.transpose(0, 2, 3, 1).reshape(-1, f)
        gk = (g2.T @ cols).reshape(kd.shape)
        gcols = (g2 @ kd.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return (gx[0] if single else gx, gk)

    return _make(np.ascontiguousarray(out), "conv2d", (x, kernels), bw)


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add ``bias[C]`` to every location of ``[C,H,W]`` or ``[N,C,H,W]``."""
    caxis = x.ndim - 3
    if x.ndim not in (3, 4) or bias.shape != (x.shape[caxis],):
        raise DimensionError(f"add_channel_bias: {list(x.shape)} vs bias {list(bias.shape)}")
    shp = [1] * x.ndim
    shp[caxis] = bias.shape[0]
    axes = tuple(i for i in range(x.ndim) if i != caxis)
    return _make(
        x.data + bias.data.reshape(shp), "channel_bias", (x, bias), lambda g: (g, g.sum(axis=axes))
    )


# ---------------------------------------------------------------- autodiff driver

def computation_record(root: Tensor) -> list[tuple[str, tuple[int, ...], int]]:
    """Topologically ordered ``(op, input ids, output id)`` triples reaching ``root``."""
    return [(t.op, tuple(p.id for p in t.parents), t.id) for t in _topo(root)]


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise DimensionError(f"backward: loss must be a scalar, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = Tensor(g.copy())
            else:
                node.grad.data = node.grad.data + g
            continue
        for p, pg in zip(node.parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p.id in grads:
                grads[p.id] = grads[p.id] + pg
            else:
                grads[p.id] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_diff_check(
    fn: Callable[[Tensor], Tensor],
    point: Tensor,
    epsilon: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative error between backward() and central differences.

    ``coords`` restricts the comparison to a subset of flat coordinates
    (all of them by default).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = Tensor(point.data.copy(), requires_grad=True)
    loss = fn(x)
    backward(loss)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.data
    base = point.data.reshape(-1).copy()
    idx = range(base.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            probe = base.copy()
            probe[i] = base[i] + epsilon
            fp = fn(Tensor(probe.reshape(point.shape))).item()
            probe[i] = base[i] - epsilon
            fm = fn(Tensor(probe.reshape(point.shape))).item()
            num = (fp - fm) / (2 * epsilon)
            an = analytic.reshape(-1)[i]
            err = abs(an - num) / max(abs(an), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
