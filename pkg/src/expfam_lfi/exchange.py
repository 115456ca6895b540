"""MCMC for the doubly-intractable posterior of the learned likelihood.

The outer chain walks the transformed parameter space; every proposal draws
an auxiliary dataset by running an inner random-walk chain on transformed
data space (started at the observation), optionally refined by a ladder of
bridging kernels.  All normalizing constants cancel in the acceptance ratio,
so only the unnormalized form ``etabar(theta)^T fbar(y)`` is ever evaluated.
Proposal scales are tuned during burn-in only, toward an acceptance band.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import transforms

__all__ = ["ExchangeConfig", "MarkovTrace", "tune_proposal", "inner_mcmc",
           "bridging_pass", "run_exchange", "random_walk_metropolis"]


@dataclass
class ExchangeConfig:
    t_outer: int = 20000
    burn_in: int = 10000
    t_in: int = 30          # 30 iid models / 100 time series / 500 lorenz96_small
    k_bridge: int = 0       # 200 for lorenz96_small
    prop_theta: float = 0.5
    prop_x: float = 0.5
    prop_bridge: float = 0.5
    tune_interval: int = 100
    band: tuple = (0.2, 0.5)
    tune_factor: float = 1.3


@dataclass
class MarkovTrace:
    samples: np.ndarray                 # (n_kept, p), original coordinates
    accept_rate: float = 0.0
    window_rates: list = field(default_factory=list)
    scale_history: list = field(default_factory=list)  # (step, name, scale)
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def tune_proposal(window_acceptance_rate: float, current_scale: float,
                  band=(0.2, 0.5), factor: float = 1.3) -> float:
    """Multiplicative proposal adaptation toward the target acceptance band."""
    if not 0.0 <= window_acceptance_rate <= 1.0:
        raise ValueError("acceptance rate must be in [0, 1]")
    if window_acceptance_rate > band[1]:
        return current_scale * factor
    if window_acceptance_rate < band[0]:
        return current_scale / factor
    return current_scale


def _stats_fn(model):
    single = getattr(model, "stats_single", None)
    if single is not None:  # fast per-sample hook for hot inner loops
        return single
    f_net = getattr(model, "f_net", None)
    if f_net is not None:
        return lambda y: f_net.value(y[None, :])[0]
    return lambda y: model.stats_full_transformed(y[None, :])[0]


def _inner_chain(stats, eta, y, f, logg, t_in, scale, rng):
    """Random-walk Metropolis on transformed data space targeting
    ``exp(eta . fbar(y))``; returns the final state and its statistics."""
    d = y.shape[0]
    noise = rng.standard_normal((t_in, d))
    logu = np.log(rng.random(t_in))
    acc = 0
    for j in range(t_in):
        y2 = y + scale * noise[j]
        f2 = stats(y2)
        logg2 = float(eta @ f2)
        if logg2 - logg >= 0.0 or logu[j] < logg2 - logg:
            y, f, logg = y2, f2, logg2
            acc += 1
    return y, f, logg, acc


def inner_mcmc(model, theta_prime, x_start, t_in: int, proposal_std: float, rng):
    """Public inner-chain entry point (original coordinates in and out).

    Runs ``t_in`` Metropolis steps on transformed data space targeting the
    model's unnormalized likelihood at ``theta_prime`` and returns
    ``(x_final, acceptance_count)``.
    """
    if t_in < 1:
        raise ValueError("t_in must be >= 1")
    y0 = transforms.to_unbounded(np.asarray(x_start, dtype=np.float64),
                                 model.data_domains)
    stats = _stats_fn(model)
    eta = model.natparams_full(theta_prime)[0]
    f0 = stats(y0)
    logg0 = float(eta @ f0)
    if not np.isfinite(logg0):
        raise ValueError("non-finite log-density at the inner-chain start")
    y, _, _, acc = _inner_chain(stats, eta, y0, f0, logg0, t_in, proposal_std, rng)
    return transforms.from_unbounded(y, model.data_domains), acc


def _bridge_chain(stats, eta_cur, eta_prop, y, f, k_bridge, scale, rng):
    """Bridging ladder between the proposal's density and the current one.

    Returns the final state, the log correction
    ``sum_k [log p_{k+1}(x_k) - log p_k(x_k)]`` and the acceptance count.
    """
    diff = eta_cur - eta_prop  # moving from theta' toward theta
    log_corr = 0.0
    acc = 0
    kb = k_bridge
    d = y.shape[0]
    noise = rng.standard_normal((kb, d)) if kb > 0 else None
    logu = np.log(rng.random(kb)) if kb > 0 else None
    # k = 0 term uses x'_0 = y
    log_corr += float(diff @ f) / (kb + 1)
    for k in range(1, kb + 1):
        beta = (kb - k + 1) / (kb + 1)
        eta_k = beta * eta_prop + (1.0 - beta) * eta_cur
        logg = float(eta_k @ f)
        y2 = y + scale * noise[k - 1]
        f2 = stats(y2)
        logg2 = float(eta_k @ f2)
        if logg2 - logg >= 0.0 or logu[k - 1] < logg2 - logg:
            y, f = y2, f2
            acc += 1
        log_corr += float(diff @ f) / (kb + 1)
    return y, f, log_corr, acc


def bridging_pass(model, x_prime, theta, theta_prime, k_bridge: int,
                  proposal_std: float, rng):
    """Anneal an auxiliary draw from ``p(.|theta')`` toward ``p(.|theta)``.

    Returns ``(states, log_correction)`` where ``states`` holds x'_0..x'_K in
    original coordinates.  With ``theta == theta_prime`` every ladder density
    coincides and the correction is exactly zero.
    """
    if k_bridge < 1:
        raise ValueError("k_bridge must be >= 1 (skip the call for K=0)")
    y = transforms.to_unbounded(np.asarray(x_prime, dtype=np.float64),
                                model.data_domains)
    stats = _stats_fn(model)
    eta_cur = model.natparams_full(theta)[0]
    eta_prop = model.natparams_full(theta_prime)[0]
    diff = eta_cur - eta_prop
    states = [transforms.from_unbounded(y, model.data_domains)]
    f = stats(y)
    log_corr = float(diff @ f) / (k_bridge + 1)
    for k in range(1, k_bridge + 1):
        beta = (k_bridge - k + 1) / (k_bridge + 1)
        eta_k = beta * eta_prop + (1.0 - beta) * eta_cur
        logg = float(eta_k @ f)
        y2 = y + proposal_std * rng.standard_normal(y.shape[0])
        f2 = stats(y2)
        logg2 = float(eta_k @ f2)
        if logg2 - logg >= 0.0 or np.log(rng.random()) < logg2 - logg:
            y, f = y2, f2
        states.append(transforms.from_unbounded(y, model.data_domains))
        log_corr += float(diff @ f) / (k_bridge + 1)
    return states, log_corr


def run_exchange(model, prior, x0, config: ExchangeConfig, rng,
                 log_q_ratio=None) -> MarkovTrace:
    """ExchangeMCMC over the learned unnormalized likelihood.

    ``prior`` provides the uniform box (``lows``/``highs``); the outer chain
    walks the logit-transformed box.  ``log_q_ratio(ty, ty2)`` may inject an
    asymmetric-proposal correction ``log q(ty|ty2) - log q(ty2|ty)`` (zero
    for the default symmetric random walk).
    """
    lows = np.asarray(prior.lows, dtype=np.float64)
    highs = np.asarray(prior.highs, dtype=np.float64)
    pdoms = [transforms.two_sided(lo, hi) for lo, hi in zip(lows, highs)]
    p = lows.size

    y0 = transforms.to_unbounded(np.asarray(x0, dtype=np.float64),
                                 model.data_domains)
    stats = _stats_fn(model)
    f_obs = stats(y0)

    theta = 0.5 * (lows + highs)
    ty = transforms.to_unbounded(theta, pdoms)
    eta_cur = model.natparams_full(theta)[0]

    def log_prior_y(th):
        # uniform box pushed to transformed space (Jacobian term only)
        return -transforms.log_abs_det_jacobian(th, pdoms)

    lp_cur = float(log_prior_y(theta))

    s_theta, s_x, s_bridge = config.prop_theta, config.prop_x, config.prop_bridge
    kept = []
    acc_out_window = 0
    acc_out_total = 0
    inner_acc_window = 0
    inner_tot_window = 0
    bridge_acc_window = 0
    bridge_tot_window = 0
    window_rates = []
    scale_history = [(0, "theta", s_theta), (0, "x", s_x), (0, "bridge", s_bridge)]
    trace = MarkovTrace(samples=np.empty((0, p)))

    for step in range(1, config.t_outer + 1):
        ty2 = ty + s_theta * rng.standard_normal(p)
        theta2 = transforms.from_unbounded(ty2, pdoms)
        eta_prop = model.natparams_full(theta2)[0]
        lp_prop = float(log_prior_y(theta2))

        logg_obs = float(eta_prop @ f_obs)
        y, f, logg, acc_in = _inner_chain(stats, eta_prop, y0, f_obs, logg_obs,
                                          config.t_in, s_x, rng)
        inner_acc_window += acc_in
        inner_tot_window += config.t_in

        if config.k_bridge > 0:
            y, f, log_corr, acc_br = _bridge_chain(stats, eta_cur, eta_prop, y, f,
                                                   config.k_bridge, s_bridge, rng)
            bridge_acc_window += acc_br
            bridge_tot_window += config.k_bridge
        else:
            log_corr = float((eta_cur - eta_prop) @ f)

        log_alpha = (float((eta_prop - eta_cur) @ f_obs)
                     + lp_prop - lp_cur + log_corr)
        if log_q_ratio is not None:
            log_alpha += float(log_q_ratio(ty, ty2))

        if log_alpha >= 0.0 or np.log(rng.random()) < log_alpha:
            ty, eta_cur, lp_cur = ty2, eta_prop, lp_prop
            acc_out_window += 1
            if step > config.burn_in:
                acc_out_total += 1

        if step > config.burn_in:
            kept.append(transforms.from_unbounded(ty, pdoms))

        if step % config.tune_interval == 0:
            rate_out = acc_out_window / config.tune_interval
            window_rates.append(rate_out)
            if step <= config.burn_in:
                s_theta = tune_proposal(rate_out, s_theta, config.band,
                                        config.tune_factor)
                rate_in = inner_acc_window / max(1, inner_tot_window)
                s_x = tune_proposal(rate_in, s_x, config.band, config.tune_factor)
                scale_history.append((step, "theta", s_theta))
                scale_history.append((step, "x", s_x))
                if bridge_tot_window:
                    rate_br = bridge_acc_window / bridge_tot_window
                    s_bridge = tune_proposal(rate_br, s_bridge, config.band,
                                             config.tune_factor)
                    scale_history.append((step, "bridge", s_bridge))
            acc_out_window = 0
            inner_acc_window = inner_tot_window = 0
            bridge_acc_window = bridge_tot_window = 0

    n_kept = config.t_outer - config.burn_in
    trace.samples = np.asarray(kept)
    trace.accept_rate = acc_out_total / max(1, n_kept)
    trace.window_rates = window_rates
    trace.scale_history = scale_history
    trace.diagnostics = {"final_scales": {"theta": s_theta, "x": s_x,
                                          "bridge": s_bridge}}
    if trace.accept_rate == 0.0:
        trace.flags.append("no outer acceptances after burn-in")
    return trace


def random_walk_metropolis(logdens, y_init, steps: int, burn_in: int, rng,
                           init_scale: float = 0.5, tune_interval: int = 100,
                           band=(0.2, 0.5), tune_factor: float = 1.3):
    """Generic tuned random-walk Metropolis on an unbounded space.

    Returns ``(samples_post_burnin, accept_rate, scale_history)``.
    """
    y = np.array(y_init, dtype=np.float64)
    d = y.size
    lp = float(logdens(y))
    if not np.isfinite(lp):
        raise ValueError("non-finite log-density at the chain start")
    scale = init_scale
    kept = np.empty((steps - burn_in, d))
    acc_window = 0
    acc_total = 0
    scale_history = [(0, scale)]
    for step in range(1, steps + 1):
        y2 = y + scale * rng.standard_normal(d)
        lp2 = float(logdens(y2))
        if lp2 - lp >= 0.0 or np.log(rng.random()) < lp2 - lp:
            y, lp = y2, lp2
            acc_window += 1
            if step > burn_in:
                acc_total += 1
        if step > burn_in:
            kept[step - burn_in - 1] = y
        if step % tune_interval == 0:
            if step <= burn_in:
                scale = tune_proposal(acc_window / tune_interval, scale, band,
                                      tune_factor)
                scale_history.append((step, scale))
            acc_window = 0
    return kept, acc_total / max(1, steps - burn_in), scale_history
