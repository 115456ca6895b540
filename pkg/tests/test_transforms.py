"""Domain bijections: examples, round trips, Jacobians, pushforward moments."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expfam_lfi import transforms as tr

from helpers import rel_err


def test_two_sided_center_maps_to_zero():
    assert tr.to_unbounded(np.array([0.5]), [tr.two_sided(0, 1)])[0] == 0.0


def test_lower_bounded_unit_maps_to_zero():
    assert tr.to_unbounded(np.array([1.0]), [tr.lower_bounded(0)])[0] == 0.0


def test_two_sided_direct_value():
    y = tr.to_unbounded(np.array([2.5]), [tr.two_sided(1, 3)])[0]
    assert abs(y - np.log(3.0)) < 1e-12  # logit(0.75)


def test_round_trip_all_domains():
    rng = np.random.default_rng(0)
    doms = [tr.unbounded(), tr.lower_bounded(-1.0), tr.upper_bounded(2.0),
            tr.two_sided(0.0, 1.0)]
    x = np.column_stack([
        rng.normal(size=200),
        -1.0 + rng.gamma(2.0, 1.0, size=200),
        2.0 - rng.gamma(2.0, 1.0, size=200),
        rng.beta(2, 2, size=200),
    ])
    y = tr.to_unbounded(x, doms)
    back = tr.from_unbounded(y, doms)
    assert np.max(np.abs(back - x)) < 1e-10


def test_from_unbounded_saturation_stays_interior():
    doms = [tr.two_sided(0.0, 1.0)]
    x = tr.from_unbounded(np.array([800.0]), doms)[0]
    assert np.isfinite(x) and x < 1.0
    x = tr.from_unbounded(np.array([-800.0]), doms)[0]
    assert np.isfinite(x) and x > 0.0
    x = tr.from_unbounded(np.array([-800.0]), [tr.lower_bounded(0.0)])[0]
    assert np.isfinite(x) and x > 0.0


def test_lower_bounded_inverse():
    assert tr.from_unbounded(np.array([0.0]), [tr.lower_bounded(2.0)])[0] == 3.0


def test_out_of_domain_rejected_with_index():
    doms = [tr.unbounded(), tr.two_sided(0, 1)]
    with pytest.raises(ValueError, match="coordinate 1"):
        tr.to_unbounded(np.array([0.0, 1.5]), doms)


def test_boundary_value_is_nudged_and_counted():
    doms = [tr.two_sided(0.0, 1.0)]
    before = tr.boundary_nudge_count()
    y = tr.to_unbounded(np.array([0.0]), doms)
    assert np.isfinite(y[0])
    assert tr.boundary_nudge_count() == before + 1


def test_log_jacobian_values():
    assert tr.log_abs_det_jacobian(np.zeros(3), [tr.unbounded()] * 3) == 0.0
    assert tr.log_abs_det_jacobian(np.array([1.0]), [tr.lower_bounded(0)]) == 0.0
    val = tr.log_abs_det_jacobian(np.array([0.5]), [tr.two_sided(0, 1)])
    assert abs(val - np.log(4.0)) < 1e-12


def test_log_jacobian_matches_numeric_derivative():
    rng = np.random.default_rng(1)
    doms = [tr.lower_bounded(0.5), tr.upper_bounded(4.0), tr.two_sided(-1, 2)]
    x = np.array([1.7, 2.2, 0.3])
    h = 1e-6
    total = 0.0
    for i, dom in enumerate(doms):
        e = np.zeros(3)
        e[i] = h
        dy = (tr.to_unbounded(x + e, doms)[i] - tr.to_unbounded(x - e, doms)[i]) / (2 * h)
        total += np.log(abs(dy))
    ours = tr.log_abs_det_jacobian(x, doms)
    assert abs(ours - total) / abs(total) < 1e-5


@settings(max_examples=60, deadline=None)
@given(st.floats(-30, 30), st.floats(-5, 5), st.floats(0.1, 10))
def test_from_unbounded_lands_inside_domain(y, a, width):
    doms = [tr.two_sided(a, a + width), tr.lower_bounded(a), tr.upper_bounded(a)]
    x = tr.from_unbounded(np.array([y, y, y]), doms)
    for i, dom in enumerate(doms):
        assert dom.contains(x[i])


@settings(max_examples=60, deadline=None)
@given(st.floats(-15, 15), st.floats(-5, 5), st.floats(0.1, 10))
def test_round_trip_property(y, a, width):
    # |y| <= 15 keeps the two-sided point far enough from the boundary for
    # float64 to carry the round trip
    doms = [tr.two_sided(a, a + width), tr.lower_bounded(a), tr.upper_bounded(a)]
    ys = np.array([y, y, y])
    x = tr.from_unbounded(ys, doms)
    y2 = tr.to_unbounded(x, doms)
    assert np.max(np.abs(y2 - ys)) < 1e-7 * max(1.0, abs(y))


def test_beta_pushforward_moments():
    """Transformed Beta(2,2) sample moments vs quadrature of the analytic
    pushforward density, within 3 standard errors."""
    from scipy.integrate import quad
    from scipy.special import expit
    from scipy.stats import beta as beta_dist

    def push_moment(k):
        # E[logit(X)^k] under X ~ Beta(2,2) by quadrature on y-space
        def integrand(y):
            x = expit(y)
            return (y ** k) * beta_dist.pdf(x, 2, 2) * x * (1 - x)

        return quad(integrand, -40, 40, limit=200)[0]

    m1 = push_moment(1)
    m2 = push_moment(2)
    rng = np.random.default_rng(2)
    n = 200_000
    xs = rng.beta(2, 2, size=n)
    ys = tr.to_unbounded(xs[:, None], [tr.two_sided(0, 1)])[:, 0]
    se_mean = ys.std() / np.sqrt(n)
    assert abs(ys.mean() - m1) < 3 * se_mean
    var_analytic = m2 - m1 ** 2
    se_var = np.sqrt(np.var((ys - ys.mean()) ** 2) / n)
    assert abs(ys.var() - var_analytic) < 3 * se_var


def test_domain_serialization():
    doms = [tr.unbounded(), tr.lower_bounded(1.5), tr.two_sided(-1, 4)]
    round_tripped = [tr.Domain.from_dict(d.to_dict()) for d in doms]
    assert round_tripped == doms
