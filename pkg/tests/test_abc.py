"""ABC engine: rejection sampler, annealed population scheme, budgets."""

import numpy as np
import pytest

from expfam_lfi.abc import (
    AbcConfig,
    abc_distance,
    population_abc,
    rejection_abc,
    scaled_statistics,
)
from expfam_lfi.metrics import rmse_mean, wasserstein
from expfam_lfi.simulators import get_model, reference_posterior


def test_distance_trivials():
    assert abc_distance([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert abc_distance([0.0, 0.0], [3.0, 4.0]) == 5.0
    with pytest.raises(ValueError):
        abc_distance([1.0], [1.0, 2.0])


def test_distance_halves_under_doubled_scaler():
    s1 = np.array([2.0, 4.0])
    s2 = np.array([0.0, 0.0])
    assert abc_distance(s1 / 2.0, s2 / 2.0) == abc_distance(s1, s2) / 2.0


def test_rejection_accepts_everything_at_full_quantile():
    m = get_model("gaussian")
    rng = np.random.default_rng(0)
    x0 = m.simulate(m.sample_prior(1, rng)[0], rng)
    prior_rng = np.random.default_rng(1)
    accepted, eps = rejection_abc(x0, m, m.true_statistics, 1.0, 500,
                                  np.random.default_rng(1))
    prior = m.sample_prior(500, prior_rng)
    assert accepted.shape == (500, 2)
    assert np.array_equal(np.sort(accepted[:, 0]), np.sort(prior[:, 0]))


def test_rejection_deterministic_under_seed():
    m = get_model("beta")
    rng = np.random.default_rng(2)
    x0 = m.simulate(m.sample_prior(1, rng)[0], rng)
    a1, e1 = rejection_abc(x0, m, m.true_statistics, 0.1, 1000,
                           np.random.default_rng(3))
    a2, e2 = rejection_abc(x0, m, m.true_statistics, 0.1, 1000,
                           np.random.default_rng(3))
    assert np.array_equal(a1, a2) and e1 == e2


def test_rejection_with_true_statistics_concentrates():
    """Accepted mean beats the prior mean by at least 2x RMSE on Beta."""
    m = get_model("gamma")
    rng = np.random.default_rng(4)
    m = get_model("beta")
    theta_true = np.array([2.4, 1.4])
    x0 = m.simulate(theta_true, rng)
    ref = reference_posterior(m, x0, steps=8000, burn_in=4000,
                              rng=np.random.default_rng(5))
    ref_mean = ref.samples.mean(axis=0)
    stats = scaled_statistics(m.true_statistics, m, 500,
                              np.random.default_rng(6))
    accepted, _ = rejection_abc(x0, m, stats, 0.01, 100_000,
                                np.random.default_rng(7))
    prior_mean = (m.lows + m.highs) / 2
    err_abc = np.linalg.norm(accepted.mean(axis=0) - ref_mean)
    err_prior = np.linalg.norm(prior_mean - ref_mean)
    assert err_abc * 2.0 <= err_prior


def test_population_abc_tolerance_monotone_and_budget():
    m = get_model("gaussian")
    rng = np.random.default_rng(8)
    x0 = m.simulate(m.sample_prior(1, rng)[0], rng)
    stats = scaled_statistics(m.true_statistics, m, 300, rng)
    cfg = AbcConfig(n_particles=200, n_iterations=15)
    res = population_abc(x0, m, stats, cfg, np.random.default_rng(9))
    tols = [r[1] for r in res.records]
    assert all(t2 <= t1 for t1, t2 in zip(tols, tols[1:]))
    assert res.records[0][2] >= res.records[-1][2]  # mean distance shrinks
    for it, (rec_it, _, _, sims) in enumerate(res.records, start=1):
        assert rec_it == it
        assert sims == it * cfg.n_particles
    assert np.all(res.particles > m.lows) and np.all(res.particles < m.highs)


def test_population_abc_beats_prior_on_gaussian():
    m = get_model("gaussian")
    rng = np.random.default_rng(10)
    theta_true = np.array([4.0, 2.0])
    x0 = m.simulate(theta_true, rng)
    ref = reference_posterior(m, x0, steps=8000, burn_in=4000,
                              rng=np.random.default_rng(11))
    stats = scaled_statistics(m.true_statistics, m, 500,
                              np.random.default_rng(12))
    cfg = AbcConfig(n_particles=300, n_iterations=30)
    res = population_abc(x0, m, stats, cfg, np.random.default_rng(13))
    prior = m.sample_prior(300, np.random.default_rng(14))
    w_abc = wasserstein(res.particles, ref.samples)
    w_prior = wasserstein(prior, ref.samples)
    assert w_abc < w_prior


def test_population_abc_with_flat_statistics_stays_prior_like():
    """With a constant statistic every proposal is accepted and the particle
    cloud stays prior-distributed (the epsilon -> infinity behavior)."""
    m = get_model("gaussian")
    rng = np.random.default_rng(15)
    x0 = m.simulate(m.sample_prior(1, rng)[0], rng)

    def stats(x):
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0], 2))

    cfg = AbcConfig(n_particles=400, n_iterations=5)
    res = population_abc(x0, m, stats, cfg, np.random.default_rng(16))
    # all distances are zero: every move accepted, tolerance zero, flagged ok
    prior = m.sample_prior(400, np.random.default_rng(17))
    w_pp = wasserstein(prior, m.sample_prior(400, np.random.default_rng(18)))
    w_res = wasserstein(res.particles, prior)
    assert w_res < 3 * w_pp + 1.0


def test_rejection_epsilon_to_infinity_matches_prior_distribution():
    m = get_model("gaussian")
    rng = np.random.default_rng(19)
    x0 = m.simulate(m.sample_prior(1, rng)[0], rng)
    accepted, _ = rejection_abc(x0, m, m.true_statistics, 1.0, 400,
                                np.random.default_rng(20))
    fresh = m.sample_prior(400, np.random.default_rng(21))
    w_reseeds = [wasserstein(m.sample_prior(400, np.random.default_rng(30 + i)),
                             m.sample_prior(400, np.random.default_rng(60 + i)))
                 for i in range(5)]
    w = wasserstein(accepted, fresh)
    assert w < max(w_reseeds) * 1.5


def test_identity_statistics_monotone_with_epsilon():
    """On a 1-D conjugate toy, shrinking epsilon shrinks posterior-mean RMSE
    (median over observations)."""
    class Toy1D:
        lows = np.array([-2.0])
        highs = np.array([2.0])
        d = 1

        @property
        def prior_domains(self):
            from expfam_lfi.transforms import two_sided
            return [two_sided(-2.0, 2.0)]

        def sample_prior(self, n, rng):
            return rng.uniform(-2, 2, size=(n, 1))

        def simulate_batch(self, thetas, rng):
            return thetas + rng.standard_normal(thetas.shape)

        def simulate(self, theta, rng):
            return theta + rng.standard_normal(1)

    toy = Toy1D()
    rng = np.random.default_rng(22)
    errs = {0.5: [], 0.05: []}
    for i in range(20):
        th = toy.sample_prior(1, rng)[0]
        x0 = toy.simulate(th, rng)
        for q in errs:
            acc, _ = rejection_abc(x0, toy, lambda x: np.atleast_2d(x), q,
                                   4000, np.random.default_rng(100 + i))
            errs[q].append(abs(acc.mean() - x0[0]))
    assert np.median(errs[0.05]) < np.median(errs[0.5])


def test_scaled_statistics_rejects_degenerate():
    m = get_model("gaussian")
    with pytest.raises(ValueError):
        scaled_statistics(lambda x: np.zeros((np.atleast_2d(x).shape[0], 1)),
                          m, 50, np.random.default_rng(23))
