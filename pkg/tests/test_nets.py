"""Forward-derivative recursions, PEN invariances, BatchNorm, serialization."""

import numpy as np
import pytest

from expfam_lfi import tape
from expfam_lfi.nets import (
    BatchNormLayer,
    FeedForwardNet,
    PenNet,
    block_switch,
    bn_from_dict,
    bn_to_dict,
    fc_forward_derivs,
    net_from_dict,
    net_to_dict,
    pen_forward_derivs,
    softplus_derivs,
)

from helpers import finite_diff_diag_second, finite_diff_jacobian, rel_err


# ----------------------------------------------------------------------
# softplus


def test_softplus_at_zero():
    s0, s1, s2, s3 = softplus_derivs(0.0)
    assert np.isclose(s0, np.log(2.0), atol=1e-15)
    assert s1 == 0.5
    assert s2 == 0.25
    assert s3 == 0.0


def test_softplus_large_argument_no_overflow():
    s0, s1, s2, _ = softplus_derivs(50.0)
    assert np.isfinite(s0) and abs(s0 - 50.0) < 1e-12
    assert abs(s1 - 1.0) < 1e-12
    assert abs(s2) < 1e-12


def test_softplus_orders_match_finite_differences():
    # central differences in 50-digit arithmetic so the oracle itself is not
    # the noise floor at h=1e-5
    import mpmath

    mpmath.mp.dps = 50
    z, h = mpmath.mpf("1.3"), mpmath.mpf("1e-5")
    f = lambda t: mpmath.log(1 + mpmath.exp(t))
    d0 = f(z)
    d1 = (f(z + h) - f(z - h)) / (2 * h)
    d2 = (f(z + h) - 2 * f(z) + f(z - h)) / h ** 2
    d3 = (f(z + 2 * h) - 2 * f(z + h) + 2 * f(z - h) - f(z - 2 * h)) / (2 * h ** 3)
    s0, s1, s2, s3 = softplus_derivs(1.3)
    for ours, fd in [(s0, d0), (s1, d1), (s2, d2), (s3, d3)]:
        assert abs(ours - float(fd)) / abs(float(fd)) < 1e-6


# ----------------------------------------------------------------------
# fully connected forward derivatives


def test_single_layer_net_is_linear():
    rng = np.random.default_rng(0)
    net = FeedForwardNet([4, 3], rng=rng)
    x = rng.normal(size=4)
    b = fc_forward_derivs(net, x)
    assert np.array_equal(b.jac.data, net.weights[0].data)
    assert np.array_equal(b.second.data, np.zeros((3, 4)))


def test_fc_derivs_match_finite_differences():
    rng = np.random.default_rng(1)
    net = FeedForwardNet([5, 8, 8, 3], rng=rng)
    x = rng.normal(size=5)
    b = fc_forward_derivs(net, x)
    jac_fd = finite_diff_jacobian(lambda t: net.value(t[None])[0], x)
    sec_fd = finite_diff_diag_second(lambda t: net.value(t[None])[0], x)
    assert rel_err(b.jac.data, jac_fd) < 1e-4
    assert rel_err(b.second.data, sec_fd) < 1e-4


def test_directional_equals_diagonal_for_basis_vector():
    rng = np.random.default_rng(2)
    net = FeedForwardNet([5, 7, 4], rng=rng)
    x = rng.normal(size=(3, 5))
    diag = fc_forward_derivs(net, x)
    for i in range(5):
        e = np.zeros(5)
        e[i] = 1.0
        d = fc_forward_derivs(net, x, direction=e)
        assert np.max(np.abs(d.second.data - diag.second.data[:, :, i])) < 1e-13


def test_fc_rejects_dimension_mismatch():
    net = FeedForwardNet([4, 3], rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        fc_forward_derivs(net, np.zeros(5))
    with pytest.raises(ValueError):
        fc_forward_derivs(net, np.zeros(4), direction=np.zeros(3))


def test_directional_rademacher_on_diagonal_hessian_net_equals_trace():
    # one nonzero per first-layer row makes the input Hessian exactly diagonal
    rng = np.random.default_rng(3)
    w1 = np.zeros((6, 4))
    cols = rng.integers(0, 4, size=6)
    w1[np.arange(6), cols] = rng.normal(size=6)
    net = FeedForwardNet([4, 6, 2], rng=rng)
    net.weights[0].data = w1
    x = rng.normal(size=(5, 4))
    diag = fc_forward_derivs(net, x)
    trace = diag.second.data.sum(axis=2)
    for _ in range(5):
        v = rng.choice([-1.0, 1.0], size=4)
        d = fc_forward_derivs(net, x, direction=v)
        # equal up to summation order (v_i^2 = 1 exactly)
        assert np.max(np.abs(d.second.data - trace)) < 1e-13


# ----------------------------------------------------------------------
# PEN


def _small_pen(rng, r=2, u=1, m=4):
    phi = FeedForwardNet([(r + 1) * u, 6, m], rng=rng)
    rho = FeedForwardNet([r * u + m, 7, 2], rng=rng)
    return PenNet(r, u, phi, rho)


def test_pen_order_zero_is_permutation_invariant():
    rng = np.random.default_rng(4)
    phi = FeedForwardNet([1, 5, 3], rng=rng)
    rho = FeedForwardNet([3, 6, 2], rng=rng)
    pen = PenNet(0, 1, phi, rho)
    x = rng.normal(size=9)
    for _ in range(5):
        perm = rng.permutation(9)
        assert np.array_equal(pen.value(x[None]), pen.value(x[perm][None]))


def test_pen_derivs_match_finite_differences():
    rng = np.random.default_rng(5)
    pen = _small_pen(rng)
    x = rng.normal(size=12)
    b = pen_forward_derivs(pen, x)
    jac_fd = finite_diff_jacobian(lambda t: pen.value(t[None])[0], x)
    sec_fd = finite_diff_diag_second(lambda t: pen.value(t[None])[0], x, h=1e-3)
    assert rel_err(b.jac.data, jac_fd) < 1e-4
    assert rel_err(b.second.data, sec_fd) < 1e-4


def test_pen_directional_mode():
    rng = np.random.default_rng(6)
    pen = _small_pen(rng)
    x = rng.normal(size=(3, 12))
    diag = pen_forward_derivs(pen, x)
    for i in range(12):
        e = np.zeros(12)
        e[i] = 1.0
        d = pen_forward_derivs(pen, x, direction=e)
        assert np.max(np.abs(d.second.data - diag.second.data[:, :, i])) < 1e-12
        assert np.allclose(d.jac.data, diag.jac.data, atol=1e-14)


def test_pen_rejects_short_sequence():
    rng = np.random.default_rng(7)
    pen = _small_pen(rng, r=2)
    with pytest.raises(ValueError):
        pen.value(np.zeros((1, 2)))


def test_pen_block_switch_invariance_exact():
    rng = np.random.default_rng(8)
    pen = _small_pen(rng, r=2)
    x = rng.normal(size=14)
    # blocks [3..7] and [9..13], both length 5 > 2r, with matching overlaps
    x[9:11] = x[3:5]
    x[12:14] = x[6:8]
    y = block_switch(x, (3, 7, 9, 13), 2)
    assert not np.array_equal(x, y)
    b1 = pen_forward_derivs(pen, x)
    b2 = pen_forward_derivs(pen, y)
    assert np.array_equal(b1.value.data, b2.value.data)


# ----------------------------------------------------------------------
# block switch


def test_block_switch_paper_digit_example():
    x = np.array([1, 7, 2, 3, 6, 4, 5, 8, 1, 7, 7, 2, 9, 5, 8, 1], dtype=float)
    y = block_switch(x, (1, 7, 10, 14), 2)
    expected = np.array([1, 7, 2, 9, 5, 8, 1, 7, 7, 2, 3, 6, 4, 5, 8, 1],
                        dtype=float)
    assert np.array_equal(y, expected)


def test_block_switch_no_match_returns_input():
    rng = np.random.default_rng(9)
    x = rng.normal(size=12)
    y = block_switch(x, (1, 4, 6, 9), 2)
    assert np.array_equal(x, y)


def test_block_switch_is_involution():
    x = np.array([1, 7, 2, 3, 6, 4, 5, 8, 1, 7, 7, 2, 9, 5, 8, 1], dtype=float)
    y = block_switch(x, (1, 7, 10, 14), 2)
    # after the swap the blocks sit at [1..5] and [8..14]
    z = block_switch(y, (1, 5, 8, 14), 2)
    assert np.array_equal(z, x)


def test_block_switch_rejects_bad_blocks():
    x = np.zeros(10)
    with pytest.raises(ValueError):
        block_switch(x, (1, 5, 4, 8), 2)  # overlapping
    with pytest.raises(ValueError):
        block_switch(x, (1, 4, 6, 12), 2)  # out of range
    with pytest.raises(ValueError):
        block_switch(x, (1, 2, 5, 9), 2)  # block shorter than overlap


def test_block_switch_vector_timesteps():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(8, 3)).reshape(-1)  # 8 timesteps of width 3
    y = block_switch(x, (1, 3, 4, 6), r=0, u=3)
    steps = x.reshape(8, 3)
    expected = np.concatenate([steps[:1], steps[4:7], steps[1:4], steps[7:]],
                              axis=0).reshape(-1)
    assert np.array_equal(y, expected)


# ----------------------------------------------------------------------
# weight gradients


def test_weight_gradient_linear_closed_form():
    rng = np.random.default_rng(11)
    net = FeedForwardNet([4, 3], rng=rng)
    x = rng.normal(size=(1, 4))
    out = net.value_t(x)
    loss = tape.tsum(tape.square(out))
    grads = tape.weight_gradient(loss, net.parameters())
    y = net.value(x)[0]
    expected_w = 2.0 * np.outer(y, x[0])
    expected_b = 2.0 * y
    assert np.allclose(grads[0], expected_w, atol=1e-12)
    assert np.allclose(grads[1], expected_b, atol=1e-12)


def test_weight_gradient_of_sm_loss_matches_fd():
    rng = np.random.default_rng(12)
    net = FeedForwardNet([4, 6, 5, 2], rng=rng)
    eta = rng.normal(size=(6, 2))
    xb = rng.normal(size=(6, 4))
    params = net.parameters()

    def eval_loss():
        b = fc_forward_derivs(net, xb)
        g = np.einsum("bc,bcd->bd", eta, b.jac.data)
        l = np.einsum("bc,bcd->bd", eta, b.second.data)
        return (0.5 * g ** 2 + l).sum(axis=1).mean()

    b = fc_forward_derivs(net, xb)
    g = tape.einsum2("bc,bcd->bd", tape.tensor(eta), b.jac)
    l = tape.einsum2("bc,bcd->bd", tape.tensor(eta), b.second)
    loss = tape.tmean(tape.tsum(0.5 * tape.square(g) + l, axis=1))
    grads = tape.weight_gradient(loss, params)
    h = 1e-5
    for pi, p in enumerate(params):
        num = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = eval_loss()
            p.data[idx] = orig - h
            fm = eval_loss()
            p.data[idx] = orig
            num[idx] = (fp - fm) / (2 * h)
        assert np.max(np.abs(grads[pi] - num) / (np.abs(num) + 1e-6)) < 1e-3


def test_dead_layer_has_zero_gradient():
    rng = np.random.default_rng(13)
    net = FeedForwardNet([3, 5, 4, 2], rng=rng)
    net.weights[2].data[:] = 0.0  # output layer zero: earlier layers are dead
    x = rng.normal(size=(4, 3))
    loss = tape.tsum(net.value_t(x))
    grads = tape.weight_gradient(loss, net.parameters())
    assert np.array_equal(grads[0], np.zeros_like(grads[0]))
    assert np.array_equal(grads[1], np.zeros_like(grads[1]))
    assert np.array_equal(grads[2], np.zeros_like(grads[2]))
    # output bias still matters
    assert np.all(grads[5] != 0.0)


# ----------------------------------------------------------------------
# BatchNorm


def test_batchnorm_train_mode_normalizes():
    rng = np.random.default_rng(14)
    bn = BatchNormLayer(3)
    y = rng.normal(loc=5.0, scale=4.0, size=(64, 3))
    out = bn.apply(y, train=True)
    assert np.max(np.abs(out.mean(axis=0))) < 1e-6
    assert np.max(np.abs(out.var(axis=0) - 1.0)) < 1e-4


def test_batchnorm_running_update_rule():
    bn = BatchNormLayer(2, momentum=0.9)
    y = np.array([[1.0, 2.0], [3.0, 6.0]])
    old_mean = bn.running_mean.copy()
    old_var = bn.running_var.copy()
    bn.apply(y, train=True)
    expected_mean = 0.1 * old_mean + 0.9 * y.mean(axis=0)
    expected_var = 0.1 * old_var + 0.9 * y.var(axis=0, ddof=1)
    assert np.allclose(bn.running_mean, expected_mean, atol=1e-15)
    assert np.allclose(bn.running_var, expected_var, atol=1e-15)


def test_batchnorm_eval_uses_frozen_stats():
    bn = BatchNormLayer(2)
    bn.running_mean = np.array([1.0, -1.0])
    bn.running_var = np.array([4.0, 9.0])
    y = np.array([[3.0, 2.0]])
    out = bn.apply(y, train=False)
    expected = (y - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
    assert np.allclose(out, expected, atol=1e-15)


def test_batchnorm_taped_gradient():
    rng = np.random.default_rng(15)
    bn = BatchNormLayer(3)
    w = tape.parameter(rng.normal(size=(8, 3)))
    target = rng.normal(size=(8, 3))

    def loss_of(data):
        bn2 = BatchNormLayer(3)
        t = tape.parameter(data.copy())
        out = bn2.apply_t(t, train=True)
        return t, tape.tsum(tape.square(out - target))

    t, loss = loss_of(w.data)
    grads = tape.weight_gradient(loss, [t])[0]
    h = 1e-6
    num = np.zeros_like(w.data)
    it = np.nditer(w.data, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = w.data[idx]
        w.data[idx] = orig + h
        fp = float(loss_of(w.data)[1].data)
        w.data[idx] = orig - h
        fm = float(loss_of(w.data)[1].data)
        w.data[idx] = orig
        num[idx] = (fp - fm) / (2 * h)
    assert np.max(np.abs(grads - num)) < 1e-5


# ----------------------------------------------------------------------
# serialization


def test_fc_serialization_round_trip_bit_exact():
    rng = np.random.default_rng(16)
    net = FeedForwardNet([4, 7, 2], rng=rng)
    d = net_to_dict(net)
    net2 = net_from_dict(d)
    for a, b in zip(net.parameters(), net2.parameters()):
        assert np.array_equal(a.data, b.data)
    x = rng.normal(size=(3, 4))
    assert np.array_equal(net.value(x), net2.value(x))


def test_pen_serialization_round_trip_bit_exact():
    rng = np.random.default_rng(17)
    pen = _small_pen(rng)
    d = net_to_dict(pen)
    pen2 = net_from_dict(d)
    x = rng.normal(size=(2, 12))
    assert np.array_equal(pen.value(x), pen2.value(x))


def test_bn_serialization_round_trip():
    bn = BatchNormLayer(3, momentum=0.9)
    bn.apply(np.random.default_rng(18).normal(size=(16, 3)), train=True)
    bn2 = bn_from_dict(bn_to_dict(bn))
    assert np.array_equal(bn.running_mean, bn2.running_mean)
    assert np.array_equal(bn.running_var, bn2.running_var)
