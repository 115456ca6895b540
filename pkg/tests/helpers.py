"""Shared test fixtures: hand-coded exponential families and oracles."""

from __future__ import annotations

import numpy as np

from expfam_lfi import tape
from expfam_lfi.nets import DerivBundle
from expfam_lfi.transforms import two_sided, unbounded


class QuadStats:
    """Hand-coded statistics ``fbar(x) = (sum_i x_i, -||x||^2 / 2)``.

    Paired with ``etabar = (0, 1)`` this is the iid standard normal model,
    whose SM objective has the analytic value -d/2.
    """

    def __init__(self, d):
        self.d = d
        self.out_dim = 2

    def forward_derivs(self, x, direction=None):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        B, d = x.shape
        val = np.stack([x.sum(1), -(x ** 2).sum(1) / 2], axis=1)
        jac = np.stack([np.ones((B, d)), -x], axis=1)
        if direction is None:
            sec = np.stack([np.zeros((B, d)), -np.ones((B, d))], axis=1)
            return DerivBundle(tape.tensor(val), tape.tensor(jac),
                               tape.tensor(sec), directional=False)
        v = np.atleast_2d(np.asarray(direction, dtype=np.float64))
        sec = np.stack([np.zeros(B), -(v ** 2).sum(1)], axis=1)
        return DerivBundle(tape.tensor(val), tape.tensor(jac),
                           tape.tensor(sec), directional=True)


class StdNormalModel:
    """Model object exposing the hand statistics with fixed etabar = (0, 1)."""

    def __init__(self, d):
        self.f_net = QuadStats(d)
        self.d_s = 1
        self.data_domains = [unbounded()] * d

    def eta_bar_t(self, theta, train):
        B = np.atleast_2d(theta).shape[0]
        return tape.tensor(np.tile([0.0, 1.0], (B, 1)))


class Gauss1DFamily:
    """Perfectly specified N(mu, 1): fbar = (x, -x^2/2), etabar = (mu, 1)."""

    data_domains = [unbounded()]

    def __init__(self, shift: float = 0.0):
        # a theta-independent shift of log ptilde via the base-measure row
        self.shift = shift

    def stats_full_transformed(self, y):
        y = np.atleast_2d(y)
        return np.column_stack([y[:, 0], -y[:, 0] ** 2 / 2 + self.shift])

    def stats_single(self, y):
        return np.array([y[0], -y[0] * y[0] / 2 + self.shift])

    def natparams_full(self, theta):
        th = np.atleast_2d(theta)
        return np.column_stack([th[:, 0], np.ones(th.shape[0])])


class GaussBoxPrior:
    lows = np.array([-2.0])
    highs = np.array([2.0])


class HandGaussSimulator:
    """Exact-likelihood adapter: x | mu ~ N(mu, 1), 1-D, box prior (-2, 2)."""

    id = "hand_gauss"
    has_exact_loglik = True
    lows = np.array([-2.0])
    highs = np.array([2.0])
    d = 1

    @property
    def prior_domains(self):
        return [two_sided(-2.0, 2.0)]

    def exact_loglik(self, x, theta):
        x = np.atleast_1d(x)
        return float(-0.5 * np.sum((x - theta[0]) ** 2)
                     - 0.5 * x.size * np.log(2 * np.pi))

    def sample_prior(self, n, rng):
        return rng.uniform(self.lows, self.highs, size=(n, 1))


def finite_diff_jacobian(f, x, h=1e-4):
    """Central-difference Jacobian of vector function f at x."""
    x = np.asarray(x, dtype=np.float64)
    f0 = f(x)
    out = np.zeros(f0.shape + x.shape)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        out[..., i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def finite_diff_diag_second(f, x, h=1e-4):
    x = np.asarray(x, dtype=np.float64)
    f0 = f(x)
    out = np.zeros(f0.shape + x.shape)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        out[..., i] = (f(x + e) - 2 * f0 + f(x - e)) / h ** 2
    return out


def rel_err(a, b):
    """Normalized sup-norm relative error between tensors."""
    a = np.asarray(a)
    b = np.asarray(b)
    scale = max(np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def energy_distance_pvalue(a, b, n_perm=200, rng=None):
    """Permutation p-value of the two-sample energy distance."""
    from scipy.spatial.distance import cdist

    rng = np.random.default_rng(0) if rng is None else rng
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    pooled = np.vstack([a, b])
    n, m = a.shape[0], b.shape[0]
    dists = cdist(pooled, pooled)

    def stat(idx_a, idx_b):
        dab = dists[np.ix_(idx_a, idx_b)].mean()
        daa = dists[np.ix_(idx_a, idx_a)].mean()
        dbb = dists[np.ix_(idx_b, idx_b)].mean()
        return 2 * dab - daa - dbb

    labels = np.arange(n + m)
    observed = stat(labels[:n], labels[n:])
    count = 0
    for _ in range(n_perm):
        perm = rng.permutation(n + m)
        if stat(perm[:n], perm[n:]) >= observed:
            count += 1
    return (count + 1) / (n_perm + 1)
