"""Feed-forward and partially exchangeable networks with forward derivatives.

Hidden layers use SoftPlus; the output layer is linear.  Besides the plain
forward pass, each network can propagate first and second input-derivatives
forward along a stack of seed directions.  Identity seeds give the full
Jacobian and diagonal second derivatives; a single seed gives a directional
second derivative (a Hessian-vector quadratic form) in one pass.  All of it
is built from taped ops, so any scalar assembled from the outputs can be
backpropagated to the weights.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

from . import tape
from .tape import Tensor, softplus_derivs  # noqa: F401  (re-exported)

__all__ = [
    "FeedForwardNet",
    "PenNet",
    "BatchNormLayer",
    "DerivBundle",
    "fc_forward_derivs",
    "pen_forward_derivs",
    "block_switch",
    "net_to_dict",
    "net_from_dict",
    "encode_array",
    "decode_array",
]


@dataclass
class DerivBundle:
    """Network output with its first/second input derivatives.

    ``jac`` has shape (B, out, d).  ``second`` is (B, out, d) in diagonal
    mode (per-coordinate second derivatives) or (B, out) in directional mode
    (the second derivative along the seeded direction).
    """

    value: Tensor
    jac: Tensor
    second: Tensor
    directional: bool = False

    def numpy(self):
        return self.value.data, self.jac.data, self.second.data


class FeedForwardNet:
    """Fully connected SoftPlus network with linear output layer."""

    def __init__(self, dims, rng=None, weights=None, biases=None):
        self.dims = list(dims)
        if len(self.dims) < 2:
            raise ValueError("need at least input and output dimension")
        if weights is not None:
            self.weights = [tape.parameter(w) for w in weights]
            self.biases = [tape.parameter(b) for b in biases]
        else:
            rng = np.random.default_rng() if rng is None else rng
            self.weights, self.biases = [], []
            for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
                self.weights.append(tape.parameter(w))
                self.biases.append(tape.parameter(np.zeros(fan_out)))
        for w in self.weights:
            if not np.all(np.isfinite(w.data)):
                raise ValueError("non-finite weight")

    @property
    def in_dim(self):
        return self.dims[0]

    @property
    def out_dim(self):
        return self.dims[-1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    # -- plain forward -------------------------------------------------
    def value(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass for evaluation hot paths."""
        x = np.asarray(x, dtype=np.float64)
        z = x @ self.weights[0].data.T + self.biases[0].data
        for w, b in zip(self.weights[1:], self.biases[1:]):
            z = np.logaddexp(0.0, z) @ w.data.T + b.data
        return z

    def value_t(self, x) -> Tensor:
        """Taped forward pass; ``x`` may be an array or a Tensor."""
        z = tape.linear(x, self.weights[0], self.biases[0])
        for w, b in zip(self.weights[1:], self.biases[1:]):
            z = tape.linear(tape.softplus(z), w, b)
        return z

    # -- forward derivatives --------------------------------------------
    def derivs_stack(self, x, seeds, second_from=0):
        """Propagate value plus derivative seeds through the network.

        ``x`` is (B, d) (array or Tensor); ``seeds`` is (1 or B, D, d) — each
        row a direction in input space.  Returns taped ``(value, P, Q)``
        where ``P[b, k, :]`` is the derivative of the output along row k and
        ``Q`` holds second derivatives for rows ``second_from:``.
        """
        xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if xd.ndim != 2 or xd.shape[1] != self.in_dim:
            raise ValueError(
                f"input of shape {xd.shape} does not match net input dim {self.in_dim}")
        sd = seeds.data if isinstance(seeds, Tensor) else np.asarray(seeds)
        if sd.ndim != 3 or sd.shape[2] != self.in_dim:
            raise ValueError("seeds must have shape (1 or B, n_dirs, in_dim)")

        w0, b0 = self.weights[0], self.biases[0]
        z = tape.linear(x, w0, b0)
        p = tape.lmap(w0, seeds)
        q = None  # second derivatives of the first layer vanish
        for w, b in zip(self.weights[1:], self.biases[1:]):
            logistic = tape._sp1(z.data)  # one expit serves all fused ops
            p_sec = p if second_from == 0 else p[:, second_from:, :]
            curv = tape.curvature(z, p_sec, logistic)
            if q is not None:
                curv = tape.add(curv, tape.actmul(z, q, logistic))
            q = tape.lmap(w, curv)
            p = tape.lmap(w, tape.actmul(z, p, logistic))
            z = tape.linear(tape.softplus_from_logistic(z, logistic), w, b)
        if q is None:
            n_sec = sd.shape[1] - second_from
            q = tape.tensor(np.zeros((xd.shape[0], n_sec, self.out_dim)))
        return z, p, q


class BatchNormLayer:
    """Batch normalization with fixed unit scale and zero shift.

    Running statistics update as ``new = (1 - p) * old + p * batch`` where
    ``p`` is the momentum, i.e. large momentum forgets the past quickly.
    """

    def __init__(self, dim, eps=1e-5, momentum=0.9):
        self.dim = dim
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.n_updates = 0

    def apply_t(self, y: Tensor, train: bool) -> Tensor:
        if train:
            if y.data.shape[0] < 2:
                raise ValueError("train-mode BatchNorm needs a batch of size >= 2")
            mu = tape.tmean(y, axis=0, keepdims=True)
            centered = tape.sub(y, mu)
            var = tape.tmean(tape.square(centered), axis=0, keepdims=True)
            out = tape.div(centered, tape.sqrt(tape.add(var, self.eps)))
            self._update_running(y.data)
            return out
        scale = 1.0 / np.sqrt(self.running_var + self.eps)
        return tape.mul(tape.sub(y, self.running_mean[None, :]), scale[None, :])

    def apply(self, y: np.ndarray, train: bool) -> np.ndarray:
        if train:
            mu = y.mean(axis=0, keepdims=True)
            var = y.var(axis=0, keepdims=True)
            self._update_running(y)
            return (y - mu) / np.sqrt(var + self.eps)
        return (y - self.running_mean) / np.sqrt(self.running_var + self.eps)

    def _update_running(self, y: np.ndarray):
        p = self.momentum
        n = y.shape[0]
        batch_var = y.var(axis=0) * (n / (n - 1)) if n > 1 else y.var(axis=0)
        self.running_mean = (1 - p) * self.running_mean + p * y.mean(axis=0)
        self.running_var = (1 - p) * self.running_var + p * batch_var
        self.n_updates += 1

    def state(self):
        return (self.running_mean.copy(), self.running_var.copy(), self.n_updates)

    def restore(self, state):
        self.running_mean, self.running_var, self.n_updates = (
            state[0].copy(), state[1].copy(), state[2])


class PenNet:
    """Partially exchangeable network of order ``r``.

    The output is ``rho(x[:r*u], sum_i phi(window_i))`` over all windows of
    ``r + 1`` consecutive timesteps of width ``u``.  The window sum uses a
    value-sorted accumulation, so the output is exactly invariant under every
    valid r-block-switch of the input.
    """

    def __init__(self, r, u, phi: FeedForwardNet, rho: FeedForwardNet):
        self.r = int(r)
        self.u = int(u)
        self.phi = phi
        self.rho = rho
        if phi.in_dim != (self.r + 1) * self.u:
            raise ValueError("phi input dim must equal (r+1)*u")
        self.m = phi.out_dim
        if rho.in_dim != self.r * self.u + self.m:
            raise ValueError("rho input dim must equal r*u + phi output dim")

    @property
    def out_dim(self):
        return self.rho.out_dim

    def in_dim_for(self, n_timesteps):
        return n_timesteps * self.u

    def parameters(self):
        return self.phi.parameters() + self.rho.parameters()

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("expected input of shape (B, M*u)")
        if x.shape[1] % self.u != 0:
            raise ValueError("input length is not a multiple of the timestep width")
        n_steps = x.shape[1] // self.u
        if n_steps <= self.r:
            raise ValueError(f"sequence of {n_steps} timesteps too short for order {self.r}")
        return x, n_steps

    def _windows(self, x, n_steps):
        B = x.shape[0]
        n_win = n_steps - self.r
        w = (self.r + 1) * self.u
        out = np.empty((B, n_win, w))
        for i in range(n_win):
            out[:, i] = x[:, i * self.u:i * self.u + w]
        return out.reshape(B * n_win, w), n_win

    def value(self, x: np.ndarray) -> np.ndarray:
        x, n_steps = self._check_input(x)
        B = x.shape[0]
        xw, n_win = self._windows(x, n_steps)
        phi_out = self.phi.value(xw).reshape(B, n_win, self.m)
        z = np.sort(phi_out, axis=1).sum(axis=1)
        head = x[:, :self.r * self.u]
        return self.rho.value(np.concatenate([head, z], axis=1))

    def value_t(self, x) -> "Tensor":
        """Taped forward pass (weight gradients only; no input derivatives)."""
        xv, n_steps = self._check_input(x)
        B = xv.shape[0]
        xw, n_win = self._windows(xv, n_steps)
        phi_out = tape.reshape(self.phi.value_t(xw), (B, n_win, self.m))
        z = tape.sum_sorted(phi_out, axis=1)
        head = tape.tensor(xv[:, :self.r * self.u])
        return self.rho.value_t(tape.concat([head, z], axis=1))


# ----------------------------------------------------------------------
# public derivative entry points


def _promote(x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    return (x[None, :] if squeeze else x), squeeze


def _squeeze_bundle(bundle: DerivBundle) -> DerivBundle:
    return DerivBundle(
        value=tape.take(bundle.value, 0),
        jac=tape.take(bundle.jac, 0),
        second=tape.take(bundle.second, 0),
        directional=bundle.directional,
    )


def fc_forward_derivs(net: FeedForwardNet, x, direction=None) -> DerivBundle:
    """Value, Jacobian and second input-derivatives of a fully connected net.

    Without ``direction`` the second derivatives are the per-coordinate
    diagonal; with a direction ``v`` they are the one-pass directional second
    derivative d^2/ds^2 net(x + s v) at s = 0.
    """
    x2, squeeze = _promote(x)
    B, d = x2.shape
    if d != net.in_dim:
        raise ValueError(f"input dim {d} does not match net input {net.in_dim}")
    eye = np.eye(d)[None, :, :]
    if direction is None:
        value, p, q = net.derivs_stack(x2, eye)
        bundle = DerivBundle(value, tape.transpose12(p), tape.transpose12(q),
                             directional=False)
    else:
        v = np.asarray(direction, dtype=np.float64)
        if v.ndim == 1:
            v = np.broadcast_to(v, (B, d)).copy()
        if v.shape != (B, d):
            raise ValueError("direction must match input shape")
        seeds = np.concatenate([np.broadcast_to(eye, (B, d, d)), v[:, None, :]], axis=1)
        value, p, q = net.derivs_stack(x2, seeds, second_from=d)
        bundle = DerivBundle(value, tape.transpose12(p[:, :d, :]), q[:, 0, :],
                             directional=True)
    return _squeeze_bundle(bundle) if squeeze else bundle


def pen_forward_derivs(pen: PenNet, x, direction=None) -> DerivBundle:
    """Forward derivatives of a PEN via the chain rule over windows.

    Diagonal mode evaluates the quadratic forms of rho's Hessian with one
    seed direction per input coordinate instead of materializing the full
    Hessian (same values, bounded memory).
    """
    x2, squeeze = _promote(x)
    xv, n_steps = pen._check_input(x2)
    B, D = xv.shape
    r, u, m = pen.r, pen.u, pen.m
    ru = r * u
    w = (r + 1) * u
    xw, n_win = pen._windows(xv, n_steps)

    if direction is None:
        seeds_phi = np.eye(w)[None]
        phi_val, phi_p, phi_q = pen.phi.derivs_stack(xw, seeds_phi)
        jac_rows = phi_p
    else:
        v = np.asarray(direction, dtype=np.float64)
        if v.ndim == 1:
            v = np.broadcast_to(v, (B, D)).copy()
        if v.shape != (B, D):
            raise ValueError("direction must match input shape")
        vw, _ = pen._windows(v, n_steps)
        seeds_phi = np.concatenate(
            [np.broadcast_to(np.eye(w)[None], (B * n_win, w, w)), vw[:, None, :]], axis=1)
        phi_val, phi_p, phi_q = pen.phi.derivs_stack(xw, seeds_phi, second_from=w)
        jac_rows = phi_p[:, :w, :]

    # window sum and scatter of first derivatives onto full coordinates
    z = tape.sum_sorted(tape.reshape(phi_val, (B, n_win, m)), axis=1)
    jz = tape.scatter_windows(tape.reshape(jac_rows, (B, n_win, w, m)), u, D)  # (B, D, m)

    head = xv[:, :ru]
    rho_in = tape.concat([tape.tensor(head), z], axis=1)
    d_rho = ru + m
    eye_rho = np.broadcast_to(np.eye(d_rho)[None], (B, d_rho, d_rho))

    if direction is None:
        # one curvature direction per input coordinate: (e_j 1[j<ru], dz/dx_j)
        eye_head = np.zeros((B, D, ru))
        for j in range(ru):
            eye_head[:, j, j] = 1.0
        u_dirs = tape.concat([tape.tensor(eye_head), jz], axis=2)  # (B, D, d_rho)
        seeds_rho = tape.concat([tape.tensor(eye_rho), u_dirs], axis=1)
        rho_val, rho_p, rho_q = pen.rho.derivs_stack(rho_in, seeds_rho, second_from=d_rho)
        sz = tape.scatter_windows(tape.reshape(phi_q, (B, n_win, w, m)), u, D)
        pz = rho_p[:, ru:d_rho, :]  # (B, m, out): d rho / d z
        second_rows = tape.add(rho_q, tape.bmm(sz, pz))  # (B, D, out)
        second = tape.transpose12(second_rows)
        directional = False
    else:
        dz_ds = tape.sum_sorted(tape.reshape(phi_p[:, w, :], (B, n_win, m)), axis=1)
        z_dd = tape.sum_sorted(tape.reshape(phi_q[:, 0, :], (B, n_win, m)), axis=1)
        u_dir = tape.concat([tape.tensor(v[:, :ru]), dz_ds], axis=1)
        seeds_rho = tape.concat([tape.tensor(eye_rho), tape.expand_dims(u_dir, 1)], axis=1)
        rho_val, rho_p, rho_q = pen.rho.derivs_stack(rho_in, seeds_rho, second_from=d_rho)
        pz = rho_p[:, ru:d_rho, :]
        second = tape.add(rho_q[:, 0, :], tape.einsum2("bk,bko->bo", z_dd, pz))
        directional = True

    jac_rows_full = tape.bmm(jz, pz)  # (B, D, out)
    if ru > 0:
        idx = (slice(None), slice(0, ru), slice(None))
        jac_rows_full = tape.add(
            jac_rows_full, _embed(rho_p[:, :ru, :], (B, D, pen.out_dim), idx))
    jac = tape.transpose12(jac_rows_full)
    bundle = DerivBundle(rho_val, jac, second, directional=directional)
    return _squeeze_bundle(bundle) if squeeze else bundle


def _embed(t: Tensor, shape, idx) -> Tensor:
    """Place ``t`` into a zero tensor of ``shape`` at ``idx``."""
    data = np.zeros(shape)
    data[idx] = t.data

    def pull(g):
        return g[idx]

    return tape._node(data, [(t, pull)])


# ----------------------------------------------------------------------
# block switch


def block_switch(x, b, r, u=1):
    """Swap blocks ``x[i:j]`` and ``x[k:l]`` (timestep indices, inclusive)
    when their length-``r`` head and tail overlaps match; otherwise return
    ``x`` unchanged.  ``u`` is the per-timestep width for vector series.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size % u != 0:
        raise ValueError("length not a multiple of timestep width")
    steps = x.reshape(-1, u)
    M = steps.shape[0]
    i, j, k, l = b
    if not (0 <= i <= j < k <= l < M):
        raise ValueError(f"invalid or overlapping blocks {b} for {M} timesteps")
    if j - i < r or l - k < r:
        raise ValueError("blocks shorter than the overlap order")
    head_match = np.array_equal(steps[i:i + r], steps[k:k + r])
    tail_match = np.array_equal(steps[j - r + 1:j + 1], steps[l - r + 1:l + 1])
    if r > 0 and not (head_match and tail_match):
        return x.copy()
    out = np.concatenate([
        steps[:i], steps[k:l + 1], steps[j + 1:k], steps[i:j + 1], steps[l + 1:]
    ], axis=0)
    return out.reshape(x.shape)


# ----------------------------------------------------------------------
# serialization (bit-exact via base64 of raw little-endian float64)


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    buf = base64.b64decode(d["data"])
    return np.frombuffer(buf, dtype="<f8").reshape(d["shape"]).copy()


def net_to_dict(net) -> dict:
    if isinstance(net, FeedForwardNet):
        return {
            "arch": "fc",
            "dims": net.dims,
            "activation": "softplus",
            "weights": [encode_array(w.data) for w in net.weights],
            "biases": [encode_array(b.data) for b in net.biases],
        }
    if isinstance(net, PenNet):
        return {
            "arch": "pen",
            "r": net.r,
            "u": net.u,
            "activation": "softplus",
            "phi": net_to_dict(net.phi),
            "rho": net_to_dict(net.rho),
        }
    raise TypeError(f"cannot serialize {type(net)!r}")


def net_from_dict(d: dict):
    if d["arch"] == "fc":
        return FeedForwardNet(
            d["dims"],
            weights=[decode_array(w) for w in d["weights"]],
            biases=[decode_array(b) for b in d["biases"]],
        )
    if d["arch"] == "pen":
        return PenNet(d["r"], d["u"], net_from_dict(d["phi"]), net_from_dict(d["rho"]))
    raise ValueError(f"unknown architecture tag {d['arch']!r}")


def bn_to_dict(bn: BatchNormLayer) -> dict:
    return {
        "dim": bn.dim,
        "eps": bn.eps,
        "momentum": bn.momentum,
        "running_mean": encode_array(bn.running_mean),
        "running_var": encode_array(bn.running_var),
    }


def bn_from_dict(d: dict) -> BatchNormLayer:
    bn = BatchNormLayer(d["dim"], eps=d["eps"], momentum=d["momentum"])
    bn.running_mean = decode_array(d["running_mean"])
    bn.running_var = decode_array(d["running_var"])
    return bn
