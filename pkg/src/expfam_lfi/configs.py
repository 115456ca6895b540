"""Default architectures and training hyperparameters per model and method.

``ARCHS[model]`` describes the statistics / natural-parameter networks
(``fc`` for the iid models, ``pen`` for the time series), ``FP_ARCHS`` the
regression-statistics network, and ``HYPER[(model, method)]`` the training
schedule.  ``DESK`` variants trade width and epochs for runtime; they are
what the acceptance suite uses on the time-series and Lorenz96 models.
"""

from __future__ import annotations

from .training import TrainConfig

__all__ = ["ARCHS", "FP_ARCHS", "HYPER", "DESK_ARCHS", "DESK_HYPER",
           "default_arch", "default_train_config", "EXCHANGE_DEFAULTS"]

_ETA_2 = [2, 15, 30, 30, 15, 2]
_ETA_4 = [4, 30, 50, 50, 30, 4]

ARCHS = {
    "gaussian": {"kind": "fc", "f": [10, 30, 50, 50, 20, 3], "eta": _ETA_2},
    "gamma": {"kind": "fc", "f": [10, 30, 50, 50, 20, 3], "eta": _ETA_2},
    "beta": {"kind": "fc", "f": [10, 30, 50, 50, 20, 3], "eta": _ETA_2},
    "ar2": {"kind": "pen", "r": 2, "u": 1,
            "phi": [3, 50, 50, 30, 20], "rho": [22, 50, 50, 3], "eta": _ETA_2},
    "ma2": {"kind": "pen", "r": 10, "u": 1,
            "phi": [11, 50, 50, 30, 20], "rho": [30, 50, 50, 3], "eta": _ETA_2},
    "lorenz96_small": {"kind": "pen", "r": 1, "u": 8,
                       "phi": [16, 50, 100, 50, 20], "rho": [28, 40, 90, 35, 5],
                       "eta": _ETA_4},
    "lorenz96_large": {"kind": "pen", "r": 1, "u": 40,
                       "phi": [80, 120, 160, 120, 20], "rho": [60, 80, 100, 80, 5],
                       "eta": _ETA_4},
}

FP_ARCHS = {
    "gaussian": {"kind": "fc", "f": [10, 30, 50, 50, 20, 2]},
    "gamma": {"kind": "fc", "f": [10, 30, 50, 50, 20, 2]},
    "beta": {"kind": "fc", "f": [10, 30, 50, 50, 20, 2]},
    "ar2": {"kind": "pen", "r": 2, "u": 1,
            "phi": [3, 50, 50, 30, 20], "rho": [22, 50, 50, 2]},
    "ma2": {"kind": "pen", "r": 10, "u": 1,
            "phi": [11, 50, 50, 30, 20], "rho": [30, 50, 50, 2]},
    "lorenz96_small": {"kind": "pen", "r": 1, "u": 8,
                       "phi": [16, 50, 100, 50, 20], "rho": [28, 40, 90, 35, 4]},
    "lorenz96_large": {"kind": "pen", "r": 1, "u": 40,
                       "phi": [80, 120, 160, 120, 20], "rho": [60, 80, 100, 80, 4]},
}

# (model, method) -> schedule; method in {"sm", "ssm", "fp"}
HYPER = {
    ("gaussian", "sm"): dict(lr_f=3e-4, lr_eta=3e-3, epochs=500, t_start=150,
                             t_check=10, scheduler=True),
    ("gaussian", "ssm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=500, t_start=200,
                              t_check=10, scheduler=True),
    ("gaussian", "fp"): dict(lr_f=1e-2, epochs=1000, t_start=300, t_check=25,
                             scheduler=False),
    ("gamma", "sm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=500, t_start=200,
                          t_check=10, scheduler=True),
    ("gamma", "ssm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=500, t_start=200,
                           t_check=10, scheduler=True),
    ("gamma", "fp"): dict(lr_f=1e-3, epochs=1000, t_start=300, t_check=25,
                          scheduler=True),
    ("beta", "sm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=500, t_start=200,
                         t_check=10, scheduler=True),
    ("beta", "ssm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=500, t_start=200,
                          t_check=10, scheduler=True),
    ("beta", "fp"): dict(lr_f=1e-2, epochs=1000, t_start=250, t_check=50,
                         scheduler=True),
    ("ar2", "sm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=500, t_start=100,
                        t_check=25, scheduler=True, microbatch=250),
    ("ar2", "ssm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=500, t_start=100,
                         t_check=25, scheduler=True, microbatch=500),
    ("ar2", "fp"): dict(lr_f=1e-3, epochs=1000, t_start=500, t_check=25,
                        scheduler=True, microbatch=500),
    ("ma2", "sm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=500, t_start=100,
                        t_check=25, scheduler=True, microbatch=250),
    ("ma2", "ssm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=500, t_start=100,
                         t_check=25, scheduler=True, microbatch=500),
    ("ma2", "fp"): dict(lr_f=1e-3, epochs=1000, t_start=500, t_check=25,
                        scheduler=True, microbatch=500),
    ("lorenz96_small", "ssm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=1000,
                                    t_start=500, t_check=50, scheduler=True,
                                    microbatch=100),
    ("lorenz96_small", "fp"): dict(lr_f=1e-3, epochs=1000, t_start=200,
                                   t_check=25, scheduler=True, microbatch=250),
    ("lorenz96_large", "ssm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=1000,
                                    t_start=500, t_check=50, scheduler=True,
                                    microbatch=25),
    ("lorenz96_large", "fp"): dict(lr_f=1e-3, epochs=1000, t_start=200,
                                   t_check=25, scheduler=True, microbatch=100),
}

# reduced-width, reduced-epoch variants for bounded-runtime runs
DESK_ARCHS = {
    "ar2": {"kind": "pen", "r": 2, "u": 1,
            "phi": [3, 30, 30, 16], "rho": [18, 30, 30, 3], "eta": _ETA_2},
    "ma2": {"kind": "pen", "r": 10, "u": 1,
            "phi": [11, 30, 30, 16], "rho": [26, 30, 30, 3], "eta": _ETA_2},
    "lorenz96_small": {"kind": "pen", "r": 1, "u": 8,
                       "phi": [16, 30, 30, 12], "rho": [20, 30, 30, 5],
                       "eta": [4, 20, 30, 20, 4]},
}

DESK_FP_ARCHS = {
    "ar2": {"kind": "pen", "r": 2, "u": 1,
            "phi": [3, 30, 30, 16], "rho": [18, 30, 30, 2]},
    "ma2": {"kind": "pen", "r": 10, "u": 1,
            "phi": [11, 30, 30, 16], "rho": [26, 30, 30, 2]},
    "lorenz96_small": {"kind": "pen", "r": 1, "u": 8,
                       "phi": [16, 30, 30, 12], "rho": [20, 30, 30, 4]},
}

DESK_HYPER = {
    ("ar2", "sm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=60, t_start=20,
                        t_check=10, scheduler=True, microbatch=250),
    ("ar2", "fp"): dict(lr_f=1e-3, epochs=150, t_start=40, t_check=10,
                        scheduler=True, microbatch=1000),
    ("ma2", "sm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=60, t_start=20,
                        t_check=10, scheduler=True, microbatch=250),
    ("lorenz96_small", "ssm"): dict(lr_f=1e-3, lr_eta=1e-3, epochs=60,
                                    t_start=20, t_check=10, scheduler=True,
                                    microbatch=200),
}

# inner-chain lengths and bridging per model class
EXCHANGE_DEFAULTS = {
    "gaussian": dict(t_in=30, k_bridge=0),
    "gamma": dict(t_in=30, k_bridge=0),
    "beta": dict(t_in=30, k_bridge=0),
    "ar2": dict(t_in=100, k_bridge=0),
    "ma2": dict(t_in=100, k_bridge=0),
    "lorenz96_small": dict(t_in=500, k_bridge=200),
}


def default_arch(model_id: str, method: str = "sm", desk: bool = False) -> dict:
    if method == "fp":
        if desk and model_id in DESK_FP_ARCHS:
            return DESK_FP_ARCHS[model_id]
        return FP_ARCHS[model_id]
    if desk and model_id in DESK_ARCHS:
        return DESK_ARCHS[model_id]
    return ARCHS[model_id]


def default_train_config(model_id: str, method: str, seed: int = 0,
                         desk: bool = False, **overrides) -> TrainConfig:
    key = (model_id, method)
    table = DESK_HYPER if (desk and key in DESK_HYPER) else HYPER
    base = dict(table[key])
    base.update(overrides)
    loss = method if method in ("sm", "ssm") else "sm"
    return TrainConfig(loss=loss, seed=seed, **base)
