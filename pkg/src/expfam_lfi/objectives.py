"""Score-matching and sliced score-matching objectives.

Both operate on data already mapped to unbounded space, so training on a
bounded simulator is the transformed variant by construction.  The objectives
are Monte Carlo averages over (theta, x) pairs of

    sm:   sum_i [ 1/2 (d_i log p)^2 + d^2_i log p ]
    ssm:  v^T H log p v + 1/2 ||grad log p||^2

with ``log p = etabar(theta)^T fbar(x)`` up to the normalizer, which never
enters because only x-derivatives appear.
"""

from __future__ import annotations

import numpy as np

from . import tape
from .expfam import NeuralExpFam
from .nets import FeedForwardNet, PenNet, fc_forward_derivs, pen_forward_derivs
from .tape import Tensor

__all__ = ["sm_objective", "ssm_objective", "sm_partials", "ssm_partials",
           "NonFiniteLoss"]


class NonFiniteLoss(RuntimeError):
    def __init__(self, batch_index: int):
        super().__init__(f"non-finite loss contribution at batch index {batch_index}")
        self.batch_index = batch_index


def _derivs(f_net, x, direction=None):
    if hasattr(f_net, "forward_derivs"):  # hand-coded statistics (tests, oracles)
        return f_net.forward_derivs(x, direction=direction)
    if isinstance(f_net, PenNet):
        return pen_forward_derivs(f_net, x, direction=direction)
    return fc_forward_derivs(f_net, x, direction=direction)


def _check_finite(per_sample: np.ndarray, offset: int):
    if not np.all(np.isfinite(per_sample)):
        raise NonFiniteLoss(offset + int(np.flatnonzero(~np.isfinite(per_sample))[0]))


def _chunks(n, size):
    size = n if size is None else min(size, n)
    for lo in range(0, n, size):
        yield lo, min(lo + size, n)


def sm_partials(model: NeuralExpFam, theta, x_t, *, train_bn=True, chunk=None,
                denom=None):
    """Yield taped partial sums of the SM objective over chunks of the batch.

    The sum of the yielded scalars equals the objective; backpropagating each
    one in turn keeps at most one chunk's derivative graph alive.  ``denom``
    overrides the averaging denominator (defaults to the batch size).
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    n = x_t.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    denom = n if denom is None else denom
    etab = model.eta_bar_t(theta, train=train_bn)
    for lo, hi in _chunks(n, chunk):
        bundle = _derivs(model.f_net, x_t[lo:hi])
        eta_c = etab[lo:hi]
        grad = tape.einsum2("bc,bcd->bd", eta_c, bundle.jac)
        lap = tape.einsum2("bc,bcd->bd", eta_c, bundle.second)
        per = tape.tsum(0.5 * tape.square(grad) + lap, axis=1)
        _check_finite(per.data, lo)
        yield tape.tsum(per) * (1.0 / denom)


def ssm_partials(model: NeuralExpFam, theta, x_t, slices, *, train_bn=True,
                 chunk=None, denom=None):
    """Chunked partial sums of the variance-reduced SSM objective.

    ``slices`` holds one Rademacher direction per sample, shape (B, d).
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    v = np.atleast_2d(np.asarray(slices, dtype=np.float64))
    if v.shape != x_t.shape:
        raise ValueError("need one slice direction per sample")
    if not np.all(np.abs(v) == 1.0):
        raise ValueError("slice entries must be +-1 (Rademacher)")
    n = x_t.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    denom = n if denom is None else denom
    etab = model.eta_bar_t(theta, train=train_bn)
    for lo, hi in _chunks(n, chunk):
        bundle = _derivs(model.f_net, x_t[lo:hi], direction=v[lo:hi])
        eta_c = etab[lo:hi]
        grad = tape.einsum2("bc,bcd->bd", eta_c, bundle.jac)
        hvp = tape.einsum2("bc,bc->b", eta_c, bundle.second)
        per = hvp + 0.5 * tape.tsum(tape.square(grad), axis=1)
        _check_finite(per.data, lo)
        yield tape.tsum(per) * (1.0 / denom)


def sm_objective(model: NeuralExpFam, theta, x_t, *, train_bn=False,
                 chunk=None) -> Tensor:
    """The Monte Carlo SM objective over a batch in transformed space."""
    total = None
    for part in sm_partials(model, theta, x_t, train_bn=train_bn, chunk=chunk):
        total = part if total is None else total + part
    return total


def ssm_objective(model: NeuralExpFam, theta, x_t, slices, *, m: int = 1,
                  train_bn=False, chunk=None) -> Tensor:
    """The Monte Carlo SSM objective; ``slices`` is (B, d) or (M, B, d).

    With several slices per sample their contributions are averaged.
    """
    v = np.asarray(slices, dtype=np.float64)
    if v.ndim == 2:
        v = v[None]
    if v.shape[0] != m:
        raise ValueError(f"expected {m} slice set(s), got {v.shape[0]}")
    total = None
    for k in range(m):
        for part in ssm_partials(model, theta, x_t, v[k], train_bn=train_bn,
                                 chunk=chunk):
            scaled = part * (1.0 / m)
            total = scaled if total is None else total + scaled
    return total
