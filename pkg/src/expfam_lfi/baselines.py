"""Comparison methods: regression statistics, synthetic likelihood, ratio
estimation, and the population Monte Carlo sampler that drives the latter two.

The regression ("FP") statistics network minimizes mean squared error from
data to parameters and plugs into the same ABC engine as the learned
exponential-family statistics.  Synthetic likelihood fits a Gaussian to
simulated summary statistics with a Ledoit-Wolf covariance; ratio estimation
fits a per-parameter logistic regression against the marginal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .nets import FeedForwardNet, PenNet
from .training import TrainConfig, TrainingSet, _RegressionTask, _fit

log = logging.getLogger(__name__)

__all__ = ["train_fp_statistics", "ledoit_wolf_cov", "synthetic_loglik",
           "ratio_loglik", "pmc", "PmcConfig", "re_features"]


def _build_regression_net(arch: dict, seed: int):
    rng = np.random.default_rng(seed)
    if arch["kind"] == "fc":
        return FeedForwardNet(arch["f"], rng=rng)
    phi = FeedForwardNet(arch["phi"], rng=rng)
    rho = FeedForwardNet(arch["rho"], rng=rng)
    return PenNet(arch["r"], arch["u"], phi, rho)


def train_fp_statistics(data: TrainingSet, arch: dict, cfg: TrainConfig):
    """Fit a network regressing parameters on raw data (semi-automatic
    statistics).  Returns ``(stats_fn, net, history)``."""
    net = _build_regression_net(arch, cfg.seed)
    task = _RegressionTask(net, cfg, data.x_train, data.theta_train,
                           data.x_test, data.theta_test)
    hist = _fit(task, cfg)

    def stats_fn(x):
        return net.value(np.atleast_2d(np.asarray(x, dtype=np.float64)))

    return stats_fn, net, hist


def ledoit_wolf_cov(samples) -> np.ndarray:
    """Ledoit-Wolf shrinkage covariance: always symmetric positive definite.

    ``(1 - rho) S + rho (tr S / k) I`` with the analytic shrinkage intensity,
    clipped into [1e-10, 1] so the result is positive definite even when the
    analytic intensity vanishes (e.g. n=2, where every per-sample outer
    product equals S exactly).
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, k = x.shape
    if n < 2:
        raise ValueError("need at least two samples")
    xc = x - x.mean(axis=0)
    s = xc.T @ xc / n
    mu = np.trace(s) / k
    delta = float(((s - mu * np.eye(k)) ** 2).sum()) / k
    if delta == 0.0:
        return max(mu, 1e-12) * np.eye(k)
    x2 = xc ** 2
    beta_bar = float((x2.T @ x2 / n - s ** 2).sum()) / (k * n)
    rho = min(max(beta_bar, 1e-10 * delta), delta) / delta
    return rho * mu * np.eye(k) + (1.0 - rho) * s


def ledoit_wolf_shrinkage(samples) -> float:
    """The shrinkage intensity alone (for diagnostics and tests)."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, k = x.shape
    xc = x - x.mean(axis=0)
    s = xc.T @ xc / n
    mu = np.trace(s) / k
    delta = float(((s - mu * np.eye(k)) ** 2).sum()) / k
    if delta == 0.0:
        return 1.0
    x2 = xc ** 2
    beta_bar = float((x2.T @ x2 / n - s ** 2).sum()) / (k * n)
    return min(beta_bar, delta) / delta


def _gaussian_logpdf(s0, mu, cov) -> float:
    k = mu.size
    chol = np.linalg.cholesky(cov)
    w = solve_triangular(chol, s0 - mu, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (w @ w) - 0.5 * (k * np.log(2 * np.pi) + logdet))


def synthetic_loglik(theta, model, stats_fn, m_sims: int, x0, rng) -> float:
    """Gaussian surrogate log-likelihood of the observed statistics."""
    if m_sims < 2:
        raise ValueError("need at least two simulations per parameter")
    theta = np.asarray(theta, dtype=np.float64)
    sims = model.simulate_batch(np.tile(theta, (m_sims, 1)), rng)
    s = np.asarray(stats_fn(sims))
    mu = s.mean(axis=0)
    cov = ledoit_wolf_cov(s)
    s0 = np.asarray(stats_fn(np.atleast_2d(x0)))[0]
    return _gaussian_logpdf(s0, mu, cov)


def _irls_logistic(features, labels, ridge: float = 1e-4, max_iter: int = 100,
                   tol: float = 1e-10):
    """Deterministic ridge-regularized IRLS; intercept unpenalized."""
    x = np.column_stack([np.ones(features.shape[0]), features])
    y = np.asarray(labels, dtype=np.float64)
    k = x.shape[1]
    pen = ridge * np.eye(k)
    pen[0, 0] = 0.0
    beta = np.zeros(k)
    converged = False
    for _ in range(max_iter):
        eta = x @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.maximum(p * (1.0 - p), 1e-10)
        z = eta + (y - p) / w
        xtw = x.T * w
        new = np.linalg.solve(xtw @ x + pen, xtw @ z)
        if np.max(np.abs(new - beta)) < tol:
            beta = new
            converged = True
            break
        beta = new
    if not converged:
        log.warning("IRLS did not converge within %d iterations", max_iter)
    return beta, converged


def ratio_loglik(theta, model, psi_fn, m_sims: int, x0, rng) -> float:
    """Log-ratio surrogate ``beta(theta)^T psi(x0)`` (intercept included).

    Classifies ``m_sims`` draws from the model at ``theta`` against
    ``m_sims`` draws from the prior-predictive marginal with a linear
    logistic regression on the features ``psi``.
    """
    if m_sims < 2:
        raise ValueError("need at least two simulations per class")
    theta = np.asarray(theta, dtype=np.float64)
    x1 = model.simulate_batch(np.tile(theta, (m_sims, 1)), rng)
    theta0 = model.sample_prior(m_sims, rng)
    x0s = model.simulate_batch(theta0, rng)
    feats = np.vstack([np.asarray(psi_fn(x1)), np.asarray(psi_fn(x0s))])
    labels = np.concatenate([np.ones(m_sims), np.zeros(m_sims)])
    beta, _ = _irls_logistic(feats, labels)
    f0 = np.asarray(psi_fn(np.atleast_2d(x0)))[0]
    return float(beta[0] + beta[1:] @ f0)


def re_features(model):
    """Ratio-estimation features: the model's reference statistics plus all
    their degree-two products (what synthetic likelihood implicitly uses)."""

    def psi(x):
        s = np.atleast_2d(model.true_statistics(x))
        k = s.shape[1]
        prods = [s[:, i] * s[:, j] for i in range(k) for j in range(i, k)]
        return np.column_stack([s] + prods)

    return psi


@dataclass
class PmcConfig:
    iterations: int = 10
    n_samples: int = 1000
    sims_per_theta: int = 100  # 100 for SL, 1000 for RE


def _weighted_cov(x, w):
    mu = np.average(x, axis=0, weights=w)
    xc = x - mu
    return (xc * w[:, None]).T @ xc / w.sum()


def _mixture_logpdf(x, centers, weights, cov):
    """Log density of a Gaussian mixture with common covariance."""
    k = cov.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = x[:, None, :] - centers[None, :, :]
    sol = np.linalg.solve(chol[None], diff.transpose(1, 2, 0))
    quad = np.einsum("jkb,jkb->jb", sol, sol).T
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    lognorm = -0.5 * (k * np.log(2 * np.pi) + logdet)
    with np.errstate(divide="ignore"):  # zero mixture weights are valid
        logw = np.log(weights)
    comp = lognorm - 0.5 * quad + logw[None, :]
    mx = comp.max(axis=1)
    return mx + np.log(np.exp(comp - mx[:, None]).sum(axis=1))


def pmc(surrogate_loglik, model, config: PmcConfig, rng):
    """Population Monte Carlo over a surrogate log-likelihood.

    ``surrogate_loglik(theta, rng) -> float``.  Returns
    ``(samples, ess_per_iteration, flags)`` with a final equally weighted
    population of ``n_samples``.
    """
    n = config.n_samples
    flags = []
    particles = model.sample_prior(n, rng)
    loglik = np.array([surrogate_loglik(th, rng) for th in particles])
    logw = loglik.copy()  # proposal = prior cancels the prior factor
    ess_per_iter = []

    def normalize(lw):
        mx = lw.max()
        w = np.exp(lw - mx)
        return w / w.sum()

    w = normalize(logw)
    ess_per_iter.append(float(1.0 / np.sum(w ** 2)))

    for it in range(1, config.iterations):
        cov = 2.0 * _weighted_cov(particles, w)
        cov += 1e-12 * np.eye(cov.shape[0])
        widen = 1.0
        for attempt in range(5):
            idx = rng.choice(n, size=n, p=w)
            prop = particles[idx] + rng.multivariate_normal(
                np.zeros(cov.shape[0]), widen * cov, size=n)
            inside = np.array([model.in_prior(th) for th in prop])
            if not inside.any():
                widen *= 2.0
                flags.append(f"iteration {it}: all proposals left the prior box")
                continue
            new_loglik = np.full(n, -np.inf)
            for i in np.flatnonzero(inside):
                new_loglik[i] = surrogate_loglik(prop[i], rng)
            logq = _mixture_logpdf(prop, particles, w, widen * cov)
            new_logw = np.where(inside, new_loglik - logq, -np.inf)
            if np.all(np.isneginf(new_logw)):
                widen *= 2.0
                flags.append(f"iteration {it}: all-zero weights, widening kernel")
                continue
            particles, loglik, logw = prop, new_loglik, new_logw
            break
        w = normalize(logw)
        ess_per_iter.append(float(1.0 / np.sum(w ** 2)))

    final_idx = rng.choice(n, size=n, p=w)
    return particles[final_idx], ess_per_iter, flags
