"""The benchmark simulator models.

Three iid exponential-family models (gaussian, gamma, beta — 10 draws per
sample), two time series (AR(2) and MA(2) at t=100) and the stochastically
parameterized Lorenz96 system in a small (8 variables, 45 steps) and large
(40 variables, 120 steps) configuration.  Uniform box priors throughout;
exact log-likelihoods wherever they exist, plus a random-walk Metropolis
reference posterior on the transformed parameter space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import transforms
from .transforms import Domain

__all__ = ["SimulatorModel", "get_model", "MODEL_IDS", "lorenz96_trajectory",
           "UnsupportedModel"]

MODEL_IDS = ("gaussian", "gamma", "beta", "ar2", "ma2",
             "lorenz96_small", "lorenz96_large")

_LORENZ_DT = 1.0 / 30.0
_LORENZ_Y0_SEED = 74_190_213  # frozen; initial condition is parameter-independent


class UnsupportedModel(ValueError):
    pass


def _lorenz_y0(k: int) -> np.ndarray:
    return np.random.default_rng(_LORENZ_Y0_SEED).normal(10.0, 1.0, size=k)


def lorenz96_trajectory(theta, k: int, n_steps: int, rng, y0=None,
                        dt: float = _LORENZ_DT) -> np.ndarray:
    """Integrate the stochastically forced Lorenz96 system with RK4.

    The forcing ``g = b0 + b1*y + phi*eta_prev + sigma_e*sqrt(1-phi^2)*eta``
    refreshes its Gaussian noise once per macro step and is held fixed across
    the four stages.  Returns the trajectory at steps 1..n_steps (t=0
    excluded), shape (n_steps, k).
    """
    b0, b1, sigma_e, phi = [float(v) for v in theta]
    y = _lorenz_y0(k) if y0 is None else np.array(y0, dtype=np.float64)
    eta_prev = rng.standard_normal(k)
    out = np.empty((n_steps, k))
    amp = sigma_e * np.sqrt(max(0.0, 1.0 - phi * phi))
    for s in range(n_steps):
        eta = rng.standard_normal(k)
        noise = phi * eta_prev + amp * eta

        def rhs(v):
            return (-np.roll(v, 1) * (np.roll(v, 2) - np.roll(v, -1)) - v
                    + 10.0 - (b0 + b1 * v + noise))

        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[s] = y
        eta_prev = eta
    return out


@dataclass
class SimulatorModel:
    id: str
    param_names: tuple
    lows: np.ndarray
    highs: np.ndarray
    d: int
    data_domains: list
    markov_order: int
    u: int = 1  # per-timestep width (vector series)
    extra: dict = field(default_factory=dict)

    @property
    def p(self):
        return len(self.param_names)

    @property
    def prior_domains(self):
        return [transforms.two_sided(lo, hi) for lo, hi in zip(self.lows, self.highs)]

    def in_prior(self, theta) -> bool:
        theta = np.asarray(theta)
        return bool(np.all(theta > self.lows) and np.all(theta < self.highs))

    # ------------------------------------------------------------------
    def sample_prior(self, n: int, rng) -> np.ndarray:
        return rng.uniform(self.lows, self.highs, size=(n, self.p))

    def log_prior(self, theta) -> float:
        return 0.0 if self.in_prior(theta) else -np.inf

    # ------------------------------------------------------------------
    def simulate(self, theta, rng) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if not self.in_prior(theta):
            raise ValueError(f"theta {theta} outside the prior box of {self.id}")
        return self._simulate_unchecked(theta, rng)

    def _simulate_unchecked(self, theta, rng) -> np.ndarray:
        mid = self.id
        if mid == "gaussian":
            return rng.normal(theta[0], theta[1], size=self.d)
        if mid == "gamma":
            return rng.gamma(shape=theta[0], scale=theta[1], size=self.d)
        if mid == "beta":
            return rng.beta(theta[0], theta[1], size=self.d)
        if mid == "ar2":
            xi = rng.standard_normal(self.d)
            x = np.empty(self.d)
            x[0] = xi[0]
            x[1] = xi[1] + theta[0] * x[0]
            for j in range(2, self.d):
                x[j] = xi[j] + theta[0] * x[j - 1] + theta[1] * x[j - 2]
            return x
        if mid == "ma2":
            xi = rng.standard_normal(self.d)
            x = np.empty(self.d)
            x[0] = xi[0]
            x[1] = xi[1] + theta[0] * xi[0]
            x[2:] = xi[2:] + theta[0] * xi[1:-1] + theta[1] * xi[:-2]
            return x
        if mid.startswith("lorenz96"):
            traj = lorenz96_trajectory(theta, self.extra["k"],
                                       self.extra["n_steps"], rng)
            return traj.reshape(-1)
        raise UnsupportedModel(mid)

    def simulate_batch(self, thetas, rng) -> np.ndarray:
        """One simulation per parameter row, each from an independently
        derived child generator (stable under parallel fan-out)."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        children = rng.spawn(thetas.shape[0])
        out = np.empty((thetas.shape[0], self.d))
        for i, (th, child) in enumerate(zip(thetas, children)):
            out[i] = self.simulate(th, child)
        return out

    # ------------------------------------------------------------------
    def exact_loglik(self, x, theta) -> float:
        x = np.asarray(x, dtype=np.float64)
        theta = np.asarray(theta, dtype=np.float64)
        mid = self.id
        if mid == "gaussian":
            mu, sig = theta
            return float(-0.5 * np.sum((x - mu) ** 2) / sig ** 2
                         - self.d * (np.log(sig) + 0.5 * np.log(2 * np.pi)))
        if mid == "gamma":
            k, s = theta
            if np.any(x <= 0):
                return -np.inf
            return float(np.sum((k - 1) * np.log(x) - x / s) - self.d * (gammaln(k) + k * np.log(s)))
        if mid == "beta":
            a, b = theta
            if np.any((x <= 0) | (x >= 1)):
                return -np.inf
            lbeta = gammaln(a) + gammaln(b) - gammaln(a + b)
            return float(np.sum((a - 1) * np.log(x) + (b - 1) * np.log1p(-x)) - self.d * lbeta)
        if mid == "ar2":
            xi = np.empty_like(x)
            xi[0] = x[0]
            xi[1] = x[1] - theta[0] * x[0]
            xi[2:] = x[2:] - theta[0] * x[1:-1] - theta[1] * x[:-2]
            return float(-0.5 * np.sum(xi ** 2) - 0.5 * self.d * np.log(2 * np.pi))
        if mid == "ma2":
            # x = A xi with unit-diagonal banded A, so A is the Cholesky
            # factor of the t x t covariance and the solve is exact.
            xi = np.empty_like(x)
            xi[0] = x[0]
            xi[1] = x[1] - theta[0] * xi[0]
            for j in range(2, x.size):
                xi[j] = x[j] - theta[0] * xi[j - 1] - theta[1] * xi[j - 2]
            return float(-0.5 * np.sum(xi ** 2) - 0.5 * self.d * np.log(2 * np.pi))
        raise UnsupportedModel(f"{mid} has no tractable likelihood")

    @property
    def has_exact_loglik(self) -> bool:
        return not self.id.startswith("lorenz96")

    # ------------------------------------------------------------------
    def true_statistics(self, x) -> np.ndarray:
        """Exact sufficient statistics (iid models) or the lag-1/lag-2
        autocovariances used by the surrogate-likelihood baselines."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mid = self.id
        if mid == "gaussian":
            s = np.stack([x.sum(axis=1), (x ** 2).sum(axis=1)], axis=1)
        elif mid == "gamma":
            s = np.stack([np.log(x).sum(axis=1), x.sum(axis=1)], axis=1)
        elif mid == "beta":
            s = np.stack([np.log(x).sum(axis=1), np.log1p(-x).sum(axis=1)], axis=1)
        elif mid in ("ar2", "ma2"):
            t = x.shape[1]
            g1 = np.sum(x[:, 1:] * x[:, :-1], axis=1) / t
            g2 = np.sum(x[:, 2:] * x[:, :-2], axis=1) / t
            s = np.stack([g1, g2], axis=1)
        else:
            raise UnsupportedModel(f"no reference statistics for {mid}")
        return s

    def true_natparams(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        mid = self.id
        if mid == "gaussian":
            mu, sig = theta[:, 0], theta[:, 1]
            return np.stack([mu / sig ** 2, -0.5 / sig ** 2], axis=1)
        if mid == "gamma":
            return np.stack([theta[:, 0] - 1.0, -1.0 / theta[:, 1]], axis=1)
        if mid == "beta":
            return np.stack([theta[:, 0] - 1.0, theta[:, 1] - 1.0], axis=1)
        raise UnsupportedModel(f"no exact natural parameters for {mid}")


def reference_posterior(model: SimulatorModel, x0, steps: int = 20000,
                        burn_in: int = 10000, rng=None, init_scale: float = 0.5):
    """Random-walk Metropolis on transformed parameter space targeting
    prior x exact likelihood; the gold standard the approximate methods are
    scored against.  Returns a :class:`~expfam_lfi.exchange.MarkovTrace`.
    """
    from .exchange import MarkovTrace, random_walk_metropolis

    if not model.has_exact_loglik:
        raise UnsupportedModel(f"{model.id} has no exact likelihood")
    rng = np.random.default_rng() if rng is None else rng
    pdoms = model.prior_domains
    x0 = np.asarray(x0, dtype=np.float64)

    def logdens(ty):
        th = transforms.from_unbounded(ty, pdoms)
        # uniform prior on the box contributes only the transform Jacobian
        return (model.exact_loglik(x0, th)
                - transforms.log_abs_det_jacobian(th, pdoms))

    ty0 = transforms.to_unbounded(0.5 * (model.lows + model.highs), pdoms)
    kept_y, rate, scale_hist = random_walk_metropolis(
        logdens, ty0, steps, burn_in, rng, init_scale=init_scale)
    samples = transforms.from_unbounded(kept_y, pdoms)
    trace = MarkovTrace(samples=samples, accept_rate=rate,
                        scale_history=scale_hist)
    if rate == 0.0:
        trace.flags.append("zero acceptance after tuning")
    return trace


def get_model(model_id: str) -> SimulatorModel:
    if model_id == "gaussian":
        return SimulatorModel("gaussian", ("mu", "sigma"),
                              np.array([-10.0, 1.0]), np.array([10.0, 10.0]),
                              d=10, data_domains=[transforms.unbounded()] * 10,
                              markov_order=0)
    if model_id == "gamma":
        return SimulatorModel("gamma", ("k", "theta"),
                              np.array([1.0, 1.0]), np.array([3.0, 3.0]),
                              d=10, data_domains=[transforms.lower_bounded(0.0)] * 10,
                              markov_order=0)
    if model_id == "beta":
        return SimulatorModel("beta", ("alpha", "beta"),
                              np.array([1.0, 1.0]), np.array([3.0, 3.0]),
                              d=10, data_domains=[transforms.two_sided(0.0, 1.0)] * 10,
                              markov_order=0)
    if model_id == "ar2":
        return SimulatorModel("ar2", ("theta1", "theta2"),
                              np.array([-1.0, -1.0]), np.array([1.0, 0.0]),
                              d=100, data_domains=[transforms.unbounded()] * 100,
                              markov_order=2)
    if model_id == "ma2":
        return SimulatorModel("ma2", ("theta1", "theta2"),
                              np.array([-1.0, 0.0]), np.array([1.0, 1.0]),
                              d=100, data_domains=[transforms.unbounded()] * 100,
                              markov_order=10)
    if model_id in ("lorenz96_small", "lorenz96_large"):
        k, n_steps = (8, 45) if model_id.endswith("small") else (40, 120)
        d = k * n_steps
        return SimulatorModel(model_id, ("b0", "b1", "sigma_e", "phi"),
                              np.array([1.4, 0.0, 1.5, 0.0]),
                              np.array([2.2, 1.0, 2.5, 1.0]),
                              d=d, data_domains=[transforms.unbounded()] * d,
                              markov_order=1, u=k,
                              extra={"k": k, "n_steps": n_steps})
    raise UnsupportedModel(f"unknown model id {model_id!r}")
