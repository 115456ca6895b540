"""Minibatch Adam training with test-loss early stopping.

The loop follows one convention for both the exponential-family objectives
and the regression baseline: shuffle by index each epoch, fixed batch size,
optional exponential learning-rate decay, and from epoch ``t_start`` onward a
test-loss check every ``t_check`` epochs.  Before each check the BatchNorm
running statistics are settled with one full no-gradient pass over the
training data; if the test loss increased the weights from the previous
check are restored and training stops.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tape, transforms
from .expfam import NeuralExpFam, build_model
from .objectives import NonFiniteLoss, sm_partials, ssm_partials
from .util import tune_malloc

__all__ = ["TrainConfig", "TrainingSet", "TrainHistory", "Adam",
           "train_expfam", "TrainingDiverged"]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    loss: str = "sm"  # "sm" or "ssm"
    epochs: int = 500
    t_start: int = 150
    t_check: int = 10
    batch_size: int = 1000
    lr_f: float = 1e-3
    lr_eta: float = 1e-3
    scheduler: bool = True
    zeta: float = 0.99
    seed: int = 0
    microbatch: int | None = None  # chunk size inside a batch (PEN memory)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingSet:
    """Prior draws paired with simulator output, plus an equal-size test split."""

    theta_train: np.ndarray
    x_train: np.ndarray
    theta_test: np.ndarray
    x_test: np.ndarray

    @property
    def n(self):
        return self.theta_train.shape[0]

    @staticmethod
    def from_simulator(simulator, n: int, seed: int) -> "TrainingSet":
        rng = np.random.default_rng(seed)
        theta = simulator.sample_prior(2 * n, rng)
        x = simulator.simulate_batch(theta, rng)
        return TrainingSet(theta[:n], x[:n], theta[n:], x[n:])


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)   # one entry per epoch
    test_loss: list = field(default_factory=list)    # (epoch, value) at checks
    lr: list = field(default_factory=list)           # f-net lr per epoch
    stopped_epoch: int | None = None
    restored_epoch: int | None = None

    def to_csv(self, path):
        checks = dict(self.test_loss)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epoch", "train_loss", "test_loss", "lr"])
            for i, (tl, lr) in enumerate(zip(self.train_loss, self.lr), start=1):
                wr.writerow([i, repr(tl), repr(checks.get(i, "")), repr(lr)])


class Adam:
    """Adam with canonical defaults (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lrs):
        """Apply one update; ``lrs`` is one learning rate per parameter."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v, lr in zip(self.params, self.m, self.v, lrs):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def state(self):
        return ([m.copy() for m in self.m], [v.copy() for v in self.v], self.t)

    def restore(self, state):
        self.m = [m.copy() for m in state[0]]
        self.v = [v.copy() for v in state[1]]
        self.t = state[2]


class _ExpFamTask:
    """Adapter exposing the exponential-family objective to the generic loop."""

    def __init__(self, model: NeuralExpFam, cfg: TrainConfig, data: TrainingSet):
        self.model = model
        self.cfg = cfg
        self.y_train = transforms.to_unbounded(data.x_train, model.data_domains)
        self.y_test = transforms.to_unbounded(data.x_test, model.data_domains)
        self.theta_train = data.theta_train
        self.theta_test = data.theta_test
        self.d = self.y_train.shape[1]
        self._v_train = None
        self._v_test = None

    def param_groups(self):
        return self.model.param_groups()

    def new_epoch(self, rng):
        if self.cfg.loss == "ssm":
            self._v_train = rng.choice([-1.0, 1.0], size=self.y_train.shape)

    def loss_partials(self, idx):
        th = self.theta_train[idx]
        y = self.y_train[idx]
        if self.cfg.loss == "sm":
            return sm_partials(self.model, th, y, train_bn=True,
                               chunk=self.cfg.microbatch)
        return ssm_partials(self.model, th, y, self._v_train[idx],
                            train_bn=True, chunk=self.cfg.microbatch)

    def settle(self):
        # full-training-set forward pass refreshes the BatchNorm running stats
        raw = self.model.eta_net.value(self.theta_train)
        self.model.bn.apply(raw, train=True)

    def eval_test(self, rng):
        if self.cfg.loss == "ssm" and self._v_test is None:
            self._v_test = rng.choice([-1.0, 1.0], size=self.y_test.shape)
        with tape.no_grad():
            total = 0.0
            if self.cfg.loss == "sm":
                parts = sm_partials(self.model, self.theta_test, self.y_test,
                                    train_bn=False, chunk=self.cfg.microbatch)
            else:
                parts = ssm_partials(self.model, self.theta_test, self.y_test,
                                     self._v_test, train_bn=False,
                                     chunk=self.cfg.microbatch)
            for part in parts:
                total += float(part.data)
        return total

    def snapshot(self):
        return ([p.data.copy() for p, _ in self.param_groups()],
                self.model.bn.state())

    def restore(self, snap):
        for (p, _), saved in zip(self.param_groups(), snap[0]):
            p.data = saved.copy()
        self.model.bn.restore(snap[1])

    @property
    def n_train(self):
        return self.y_train.shape[0]


def _fit(task, cfg: TrainConfig) -> TrainHistory:
    tune_malloc()
    rng = np.random.default_rng(cfg.seed)
    groups = task.param_groups()
    params = [p for p, _ in groups]
    lr_of = {"f": cfg.lr_f, "eta": cfg.lr_eta}
    opt = Adam(params)
    hist = TrainHistory()
    decay = 1.0
    prev_test = None
    snap = None
    snap_epoch = None

    for epoch in range(1, cfg.epochs + 1):
        task.new_epoch(rng)
        perm = rng.permutation(task.n_train)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, task.n_train, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            for p in params:
                p.grad = None
            batch_loss = 0.0
            try:
                for part in task.loss_partials(idx):
                    tape.backward(part)
                    batch_loss += float(part.data)
            except NonFiniteLoss as e:
                raise TrainingDiverged(epoch) from e
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(epoch)
            opt.step([lr_of[g] * decay for _, g in groups])
            epoch_loss += batch_loss
            n_batches += 1
        hist.train_loss.append(epoch_loss / n_batches)
        hist.lr.append(cfg.lr_f * decay)
        if cfg.scheduler:
            decay *= cfg.zeta

        if epoch >= cfg.t_start and (epoch - cfg.t_start) % cfg.t_check == 0:
            task.settle()
            test = task.eval_test(rng)
            hist.test_loss.append((epoch, test))
            if prev_test is not None and test > prev_test:
                if snap is not None:
                    task.restore(snap)
                    hist.restored_epoch = snap_epoch
                hist.stopped_epoch = epoch
                break
            snap = task.snapshot()
            snap_epoch = epoch
            prev_test = test
    return hist


def train_expfam(arch: dict, data: TrainingSet, data_domains, cfg: TrainConfig):
    """Train a neural conditional exponential family with SM or SSM.

    Deterministic given (arch, data, cfg): the same seed reproduces the
    weights bit for bit.  Returns ``(model, history)``.
    """
    model = build_model(arch, data_domains, seed=cfg.seed)
    task = _ExpFamTask(model, cfg, data)
    hist = _fit(task, cfg)
    model.meta["train_config"] = cfg.to_dict()
    model.meta["stopped_epoch"] = hist.stopped_epoch
    return model, hist


class _RegressionTask:
    """Mean-squared-error regression of parameters on data (statistics learning)."""

    def __init__(self, net, cfg: TrainConfig, x_train, t_train, x_test, t_test):
        self.net = net
        self.cfg = cfg
        self.x_train, self.t_train = x_train, t_train
        self.x_test, self.t_test = x_test, t_test

    def param_groups(self):
        return [(p, "f") for p in self.net.parameters()]

    def new_epoch(self, rng):
        pass

    def _partials(self, x, t, denom):
        chunk = self.cfg.microbatch or x.shape[0]
        for lo in range(0, x.shape[0], chunk):
            pred = self.net.value_t(x[lo:lo + chunk])
            err = tape.tsum(tape.square(pred - t[lo:lo + chunk]), axis=1)
            yield tape.tsum(err) * (1.0 / denom)

    def loss_partials(self, idx):
        return self._partials(self.x_train[idx], self.t_train[idx], len(idx))

    def settle(self):
        pass

    def eval_test(self, rng):
        with tape.no_grad():
            return sum(float(p.data) for p in
                       self._partials(self.x_test, self.t_test, self.x_test.shape[0]))

    def snapshot(self):
        return [p.data.copy() for p, _ in self.param_groups()]

    def restore(self, snap):
        for (p, _), saved in zip(self.param_groups(), snap):
            p.data = saved.copy()

    @property
    def n_train(self):
        return self.x_train.shape[0]
