"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the operations that produced it; ``backward`` walks
the graph and accumulates gradients into parameter leaves.  Only the ops
needed by the score-matching losses are provided: elementwise arithmetic with
broadcasting, linear maps, two-operand einsum contractions, reductions, the
SoftPlus activation family, and a few shape utilities.

Everything is float64.  Subgraphs in which no parameter participates are
pruned at construction time, so evaluating a network on constant inputs
carries no tape overhead worth speaking of.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "backward",
    "softplus_derivs",
]


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """Node in the computation graph.

    ``parents`` is a tuple of ``(parent, pull)`` pairs where ``pull`` maps the
    gradient at this node to the gradient contribution at ``parent``.
    """

    __slots__ = ("data", "parents", "requires_grad", "grad", "name")

    def __init__(self, data, parents=(), requires_grad=False, name=None):
        self.data = _as_array(data)
        self.parents = parents
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __getitem__(self, idx):
        return take(self, idx)


def tensor(x) -> Tensor:
    """Wrap data as a constant (no gradient tracked)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def parameter(x, name=None) -> Tensor:
    """Wrap data as a trainable leaf."""
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True, name=name)


_grad_enabled = True


class no_grad:
    """Context manager that skips tape construction (evaluation passes)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _node(data, parents_and_pulls) -> Tensor:
    if not _grad_enabled:
        return Tensor(data)
    live = tuple((p, f) for p, f in parents_and_pulls if p.requires_grad)
    if not live:
        return Tensor(data)
    return Tensor(data, parents=live, requires_grad=True)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce gradient ``g`` to ``shape`` by summing broadcast axes."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    data = a.data + b.data
    return _node(data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    data = a.data - b.data
    return _node(data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    data = a.data * b.data
    return _node(data, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    data = a.data / b.data
    return _node(data, [
        (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
    ])


def neg(a) -> Tensor:
    a = tensor(a)
    return _node(-a.data, [(a, lambda g: -g)])


def square(a) -> Tensor:
    a = tensor(a)
    return _node(a.data * a.data, [(a, lambda g: 2.0 * a.data * g)])


def sqrt(a) -> Tensor:
    a = tensor(a)
    root = np.sqrt(a.data)
    return _node(root, [(a, lambda g: 0.5 * g / root)])


def exp(a) -> Tensor:
    a = tensor(a)
    e = np.exp(a.data)
    return _node(e, [(a, lambda g: g * e)])


def log(a) -> Tensor:
    a = tensor(a)
    return _node(np.log(a.data), [(a, lambda g: g / a.data)])


# ----------------------------------------------------------------------
# SoftPlus family.  Backward of order k multiplies by order k+1, which is why
# the third derivative exists as a closed form below.


def _sp0(z):
    return np.logaddexp(0.0, z)


def _sp1(z):
    return expit(z)


def _sp2_from_p(p):
    return p * (1.0 - p)


def _sp3_from_p(p):
    return p * (1.0 - p) * (1.0 - 2.0 * p)


def softplus_derivs(z):
    """SoftPlus and its first three derivatives, overflow-safe.

    Returns ``(sigma, sigma', sigma'', sigma''')`` evaluated elementwise.
    """
    z = np.asarray(z, dtype=np.float64)
    p = _sp1(z)
    return _sp0(z), p, _sp2_from_p(p), _sp3_from_p(p)


def softplus(a) -> Tensor:
    a = tensor(a)
    return _node(_sp0(a.data), [(a, lambda g: g * _sp1(a.data))])


def softplus_d1(a) -> Tensor:
    a = tensor(a)
    p = _sp1(a.data)
    return _node(p, [(a, lambda g: g * _sp2_from_p(p))])


def softplus_d2(a) -> Tensor:
    a = tensor(a)
    p = _sp1(a.data)
    return _node(_sp2_from_p(p), [(a, lambda g: g * _sp3_from_p(p))])


def softplus_from_logistic(a, logistic: np.ndarray) -> Tensor:
    """SoftPlus of ``a`` reusing a precomputed ``expit(a.data)``."""
    a = tensor(a)
    return _node(_sp0(a.data), [(a, lambda g: g * logistic)])


def actmul(z, t, logistic: np.ndarray) -> Tensor:
    """Fused ``sigma'(z)[:, None, :] * t`` for derivative stacks.

    ``logistic`` must equal ``expit(z.data)``; passing it in lets one
    evaluation serve all the per-layer ops.  ``t`` is (B, D, n), ``z`` is
    (B, n).
    """
    z, t = tensor(z), tensor(t)
    s1 = logistic[:, None, :]
    data = s1 * t.data

    def pull_z(g):
        s2 = _sp2_from_p(logistic)
        td = np.broadcast_to(t.data, g.shape)
        return np.einsum("bdn,bdn->bn", g, td) * s2

    def pull_t(g):
        return _unbroadcast(g * s1, t.data.shape)

    return _node(data, [(z, pull_z), (t, pull_t)])


def curvature(z, p, logistic: np.ndarray) -> Tensor:
    """Fused ``sigma''(z)[:, None, :] * p**2`` with backward via sigma'''."""
    z, p = tensor(z), tensor(p)
    s2 = _sp2_from_p(logistic)
    p2 = p.data * p.data
    data = s2[:, None, :] * p2

    def pull_z(g):
        s3 = _sp3_from_p(logistic)
        return np.einsum("bdn,bdn->bn", g, np.broadcast_to(p2, g.shape)) * s3

    def pull_p(g):
        return _unbroadcast((2.0 * s2[:, None, :]) * (g * p.data), p.data.shape)

    return _node(data, [(z, pull_z), (p, pull_p)])


# ----------------------------------------------------------------------
# linear algebra


def linear(x, w, b=None) -> Tensor:
    """Affine map ``x @ w.T + b`` for ``x`` of shape (..., in)."""
    x, w = tensor(x), tensor(w)
    data = x.data @ w.data.T
    if b is not None:
        b = tensor(b)
        data = data + b.data
    parents = [
        (x, lambda g: g @ w.data),
        (w, lambda g: np.tensordot(g, x.data, axes=(tuple(range(g.ndim - 1)),) * 2)),
    ]
    if b is not None:
        parents.append((b, lambda g: g.reshape(-1, g.shape[-1]).sum(axis=0)))
    return _node(data, parents)


def lmap(w, t) -> Tensor:
    """Apply a weight matrix to the last axis of ``t``.

    ``w`` has shape (out, in) and ``t`` shape (..., in); the result has shape
    (..., out).  Keeping the feature axis last keeps every array contiguous,
    so this is a single BLAS call.  This is the workhorse of the
    forward-derivative recursions.
    """
    w, t = tensor(w), tensor(t)
    td = t.data
    data = (td.reshape(-1, td.shape[-1]) @ w.data.T).reshape(
        td.shape[:-1] + (w.data.shape[0],))

    def pull_w(g):
        g2 = g.reshape(-1, g.shape[-1])
        tb = np.broadcast_to(td, g.shape[:-1] + td.shape[-1:])
        if tb.shape != td.shape:
            tb = np.ascontiguousarray(tb)
        return g2.T @ tb.reshape(-1, tb.shape[-1])

    def pull_t(g):
        gt = (g.reshape(-1, g.shape[-1]) @ w.data).reshape(
            g.shape[:-1] + (w.data.shape[1],))
        return _unbroadcast(gt, td.shape)

    return _node(data, [(w, pull_w), (t, pull_t)])


def bmm(a, b) -> Tensor:
    """Batched matrix product ``a @ b`` over the last two axes."""
    a, b = tensor(a), tensor(b)
    data = a.data @ b.data

    def pull_a(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)

    def pull_b(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)

    return _node(data, [(a, pull_a), (b, pull_b)])


def transpose12(t) -> Tensor:
    """Swap axes 1 and 2 (contiguous copy, so downstream ops stay fast)."""
    t = tensor(t)
    data = np.ascontiguousarray(np.swapaxes(t.data, 1, 2))
    return _node(data, [(t, lambda g: np.swapaxes(g, 1, 2))])


def einsum2(spec: str, a, b) -> Tensor:
    """Two-operand einsum with automatic backward.

    Every index of each operand must appear in the output or in the other
    operand (no internal traces), which holds for all contractions used here.
    """
    a, b = tensor(a), tensor(b)
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    if "." in spec:
        raise ValueError("einsum2 does not support ellipsis")
    for ch in sa:
        if ch not in out + sb:
            raise ValueError(f"index {ch!r} internal to first operand")
    for ch in sb:
        if ch not in out + sa:
            raise ValueError(f"index {ch!r} internal to second operand")
    data = np.einsum(spec, a.data, b.data, optimize=True)
    spec_a = f"{out},{sb}->{sa}"
    spec_b = f"{sa},{out}->{sb}"
    return _node(data, [
        (a, lambda g: np.einsum(spec_a, g, b.data, optimize=True)),
        (b, lambda g: np.einsum(spec_b, a.data, g, optimize=True)),
    ])


# ----------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def pull(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return _node(data, [(a, pull)])


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def sum_sorted(a, axis) -> Tensor:
    """Sum along ``axis`` with value-sorted accumulation.

    The result is independent of the order of the summands, which makes PEN
    window sums bit-exact under block-switch permutations of the input.
    The gradient is the ordinary broadcast (order does not affect it).
    """
    a = tensor(a)
    data = np.sort(a.data, axis=axis).sum(axis=axis)

    def pull(g):
        return np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()

    return _node(data, [(a, pull)])


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    old = a.data.shape
    return _node(a.data.reshape(shape), [(a, lambda g: g.reshape(old))])


def expand_dims(a, axis) -> Tensor:
    a = tensor(a)
    return _node(np.expand_dims(a.data, axis), [(a, lambda g: np.squeeze(g, axis=axis))])


def take(a, idx) -> Tensor:
    """Basic (slice/index) selection with scatter-add backward."""
    a = tensor(a)
    data = a.data[idx]

    def pull(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return out

    return _node(data, [(a, pull)])


def concat(parts, axis) -> Tensor:
    parts = [tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    parents = []
    for i, p in enumerate(parts):
        lo, hi = offsets[i], offsets[i + 1]

        def pull(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        parents.append((p, pull))
    return _node(data, parents)


def tile_batch(a, batch) -> Tensor:
    """Broadcast an array to a leading batch axis (gradient sums it back)."""
    a = tensor(a)
    data = np.broadcast_to(a.data, (batch,) + a.data.shape)
    return _node(data, [(a, lambda g: g.sum(axis=0))])


def scatter_windows(t, u: int, total: int) -> Tensor:
    """Accumulate per-window derivative blocks onto full-input coordinates.

    ``t`` has shape (B, n_win, w, m) where ``w`` is the flattened window
    width; window ``i`` covers input coordinates ``[i*u, i*u + w)``.  Returns
    shape (B, total, m): derivative of each of the ``m`` features with
    respect to every input coordinate.
    """
    t = tensor(t)
    B, n_win, w, m = t.data.shape
    out = np.zeros((B, total, m))
    for i in range(n_win):
        out[:, i * u:i * u + w, :] += t.data[:, i]

    def pull(g):
        gt = np.empty((B, n_win, w, m))
        for i in range(n_win):
            gt[:, i] = g[:, i * u:i * u + w, :]
        return gt

    return _node(out, [(t, pull)])


# ----------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every parameter leaf.

    Repeated calls accumulate, so a loss may be split into partial sums and
    backpropagated chunk by chunk.
    """
    if loss.data.shape != ():
        raise ValueError("backward expects a scalar loss")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p, _ in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pull in node.parents:
            contrib = pull(g)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib


def weight_gradient(loss: Tensor, params) -> list[np.ndarray]:
    """Gradient of a scalar loss with respect to each parameter in ``params``."""
    for p in params:
        p.grad = None
    backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
