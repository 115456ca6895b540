"""The neural conditional exponential family and its query surface.

The unnormalized log-density is ``etabar(theta)^T fbar(y)`` where ``y`` is
the data mapped to unbounded space, ``fbar`` is the statistics network with
one extra output playing the role of the log base measure, and ``etabar`` is
the natural-parameter network (batch-normalized) with a constant 1 appended.
The normalizing constant is never represented or evaluated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tape, transforms
from .nets import (
    BatchNormLayer,
    FeedForwardNet,
    PenNet,
    bn_from_dict,
    bn_to_dict,
    decode_array,
    encode_array,
    net_from_dict,
    net_to_dict,
)
from .tape import Tensor
from .transforms import Domain

__all__ = ["NeuralExpFam", "build_model", "fit_scaler"]


@dataclass
class NeuralExpFam:
    """Trained (or in-training) conditional exponential family."""

    f_net: object  # FeedForwardNet or PenNet, output dim d_s + 1
    eta_net: FeedForwardNet  # output dim d_s, followed by BatchNorm
    bn: BatchNormLayer
    data_domains: list[Domain]
    d_s: int
    scaler: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.f_net.out_dim != self.d_s + 1:
            raise ValueError("statistics net must output d_s + 1 components")
        if self.eta_net.out_dim != self.d_s:
            raise ValueError("natural-parameter net must output d_s components")

    # ------------------------------------------------------------------
    def parameters(self):
        return self.f_net.parameters() + self.eta_net.parameters()

    def param_groups(self):
        return ([(p, "f") for p in self.f_net.parameters()]
                + [(p, "eta") for p in self.eta_net.parameters()])

    # -- evaluation (numpy) paths --------------------------------------
    def natparams_full(self, theta: np.ndarray) -> np.ndarray:
        """``etabar(theta)`` in eval mode (frozen BatchNorm stats)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        raw = self.eta_net.value(theta)
        normed = self.bn.apply(raw, train=False)
        return np.concatenate([normed, np.ones((normed.shape[0], 1))], axis=1)

    def stats_full_transformed(self, y: np.ndarray) -> np.ndarray:
        """``fbar(y)`` on already-transformed data."""
        return self.f_net.value(np.atleast_2d(np.asarray(y, dtype=np.float64)))

    def logdensity_transformed(self, y, theta) -> np.ndarray:
        """Unnormalized log-density of the transformed-space model."""
        f = self.stats_full_transformed(y)
        e = self.natparams_full(theta)
        return np.sum(f * e, axis=1)

    def unnormalized_logdensity(self, x, theta) -> float | np.ndarray:
        """Unnormalized log-density in original coordinates.

        Adds the transform log-Jacobian so that densities refer to the
        original (possibly bounded) data space.
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        x2 = np.atleast_2d(x)
        y = transforms.to_unbounded(x2, self.data_domains)
        jac = transforms.log_abs_det_jacobian(x2, self.data_domains)
        out = self.logdensity_transformed(y, theta) + jac
        return float(out[0]) if squeeze else out

    def statistics(self, x, scaled: bool = True) -> np.ndarray:
        """Learned summary statistics: ``fbar`` without the base-measure row.

        With ``scaled=True`` each component is divided by its stored standard
        deviation (fit one with :func:`fit_scaler` first).
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        y = transforms.to_unbounded(np.atleast_2d(x), self.data_domains)
        s = self.stats_full_transformed(y)[:, :self.d_s]
        if scaled:
            if self.scaler is None:
                raise ValueError("no scaler fitted; call fit_scaler or pass scaled=False")
            s = s / self.scaler
        return s[0] if squeeze else s

    # -- taped path for training ---------------------------------------
    def eta_bar_t(self, theta, train: bool) -> Tensor:
        raw = self.eta_net.value_t(np.atleast_2d(theta))
        normed = self.bn.apply_t(raw, train=train)
        ones = np.ones((normed.data.shape[0], 1))
        return tape.concat([normed, tape.tensor(ones)], axis=1)

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "format": "expfam-lfi/model-v1",
            "d_s": self.d_s,
            "f_net": net_to_dict(self.f_net),
            "eta_net": net_to_dict(self.eta_net),
            "batch_norm": bn_to_dict(self.bn),
            "data_domains": [dom.to_dict() for dom in self.data_domains],
            "scaler": None if self.scaler is None else encode_array(self.scaler),
            "meta": self.meta,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "NeuralExpFam":
        return NeuralExpFam(
            f_net=net_from_dict(d["f_net"]),
            eta_net=net_from_dict(d["eta_net"]),
            bn=bn_from_dict(d["batch_norm"]),
            data_domains=[Domain.from_dict(x) for x in d["data_domains"]],
            d_s=d["d_s"],
            scaler=None if d["scaler"] is None else decode_array(d["scaler"]),
            meta=d.get("meta", {}),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @staticmethod
    def load(path) -> "NeuralExpFam":
        with open(path) as fh:
            return NeuralExpFam.from_dict(json.load(fh))


def build_model(arch: dict, data_domains, seed: int) -> NeuralExpFam:
    """Construct an untrained model from an architecture description.

    ``arch`` uses the keys ``kind`` ("fc" or "pen"), ``f`` (layer dims) or
    ``phi``/``rho``/``r``/``u``, and ``eta`` (layer dims ending at d_s).
    """
    rng = np.random.default_rng(seed)
    if arch["kind"] == "fc":
        f_net = FeedForwardNet(arch["f"], rng=rng)
    elif arch["kind"] == "pen":
        phi = FeedForwardNet(arch["phi"], rng=rng)
        rho = FeedForwardNet(arch["rho"], rng=rng)
        f_net = PenNet(arch["r"], arch["u"], phi, rho)
    else:
        raise ValueError(f"unknown architecture kind {arch['kind']!r}")
    eta_net = FeedForwardNet(arch["eta"], rng=rng)
    d_s = eta_net.out_dim
    bn = BatchNormLayer(d_s, momentum=arch.get("bn_momentum", 0.9))
    return NeuralExpFam(f_net=f_net, eta_net=eta_net, bn=bn,
                        data_domains=list(data_domains), d_s=d_s)


def fit_scaler(model: NeuralExpFam, simulator, n: int, rng) -> np.ndarray:
    """Per-component standard deviation of the raw statistics on ``n`` fresh
    prior-predictive simulations; stored on the model and returned."""
    if n < 2:
        raise ValueError("need at least two simulations to fit a scaler")
    thetas = simulator.sample_prior(n, rng)
    xs = simulator.simulate_batch(thetas, rng)
    stats = model.statistics(xs, scaled=False)
    std = stats.std(axis=0)
    if np.any(std == 0.0):
        bad = int(np.flatnonzero(std == 0.0)[0])
        raise ValueError(f"statistic component {bad} is degenerate (zero std)")
    model.scaler = std
    return std
