"""Command-line orchestration: simulate, train, infer, validate, score, report.

Every subcommand takes a JSON config (unknown keys rejected) plus a few
overriding flags, writes its artifacts under ``--out`` together with a
manifest carrying the config hash and seed, and exits 0 on success, 2 on
config/missing-artifact errors, 3 on validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import configs, transforms
from .abc import AbcConfig, population_abc, scaled_statistics
from .baselines import PmcConfig, pmc, ratio_loglik, re_features, synthetic_loglik, train_fp_statistics
from .exchange import ExchangeConfig, run_exchange
from .expfam import NeuralExpFam, fit_scaler
from .metrics import median_bandwidth, posterior_predictive_scores, rmse_mean, wasserstein
from .nets import net_from_dict, net_to_dict
from .simulators import get_model, reference_posterior
from .training import TrainConfig, TrainingSet, train_expfam
from .util import config_hash, tune_malloc

METHODS = ("abc-sm", "abc-ssm", "abc-fp", "abc-true", "exc-sm", "exc-ssm",
           "pmc-sl", "pmc-re", "prior")

_ALLOWED_KEYS = {
    "model", "seed", "out", "n_train", "method", "methods", "dataset",
    "model_artifact", "fp_artifact", "observations", "desk", "train",
    "abc", "exchange", "pmc", "scaler_n", "predictive_m", "bandwidth",
    "obs_file", "store_populations",
}


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


def _load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError(f"config is not valid JSON: {e}") from e
    unknown = set(cfg) - _ALLOWED_KEYS
    if unknown:
        raise CliError(f"unknown config key(s): {sorted(unknown)}")
    if "model" not in cfg:
        raise CliError("config missing required key 'model'")
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.get("out", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, cfg: dict, command: str, artifacts: list):
    blob = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg.get("seed", 0),
        "artifacts": [str(a) for a in artifacts],
    }
    (out / f"manifest_{command}.json").write_text(json.dumps(blob, indent=2))


def _write_posterior(path, samples, param_names):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(list(param_names))
        for row in np.atleast_2d(samples):
            wr.writerow([repr(float(v)) for v in row])


def _read_posterior(path) -> np.ndarray:
    with open(path) as fh:
        rd = csv.reader(fh)
        next(rd)
        return np.array([[float(v) for v in row] for row in rd])


def _require(path, what):
    if not Path(path).exists():
        raise CliError(f"missing upstream artifact ({what}): {path}")
    return Path(path)


# ----------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg) -> list:
    model = get_model(cfg["model"])
    n = int(cfg.get("n_train", 10000))
    seed = int(cfg.get("seed", 0))
    out = _out_dir(cfg)
    rng = np.random.default_rng(seed)
    thetas = model.sample_prior(2 * n, rng)
    xs = model.simulate_batch(thetas, rng)
    path = out / f"dataset_{cfg['model']}.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"theta_{k}" for k in model.param_names]
                    + [f"x_{i}" for i in range(model.d)])
        for th, x in zip(thetas, xs):
            wr.writerow([repr(float(v)) for v in th] + [repr(float(v)) for v in x])
    meta = {"model": cfg["model"], "seed": seed, "n_pairs": 2 * n,
            "d": model.d, "p": model.p}
    (out / f"dataset_{cfg['model']}.json").write_text(json.dumps(meta, indent=2))
    return [path]


def _load_dataset(path, model) -> TrainingSet:
    _require(path, "dataset")
    with open(path) as fh:
        rd = csv.reader(fh)
        next(rd)
        rows = np.array([[float(v) for v in row] for row in rd])
    p = model.p
    theta, x = rows[:, :p], rows[:, p:]
    n = rows.shape[0] // 2
    return TrainingSet(theta[:n], x[:n], theta[n:], x[n:])


def _train_config(cfg, method) -> TrainConfig:
    over = dict(cfg.get("train", {}))
    return configs.default_train_config(
        cfg["model"], method, seed=int(cfg.get("seed", 0)),
        desk=bool(cfg.get("desk", False)), **over)


def cmd_train(cfg) -> list:
    model_def = get_model(cfg["model"])
    method = cfg.get("method", "sm")
    if method not in ("sm", "ssm", "fp"):
        raise CliError(f"train method must be sm/ssm/fp, got {method!r}")
    out = _out_dir(cfg)
    dataset = cfg.get("dataset", out / f"dataset_{cfg['model']}.csv")
    data = _load_dataset(dataset, model_def)
    tcfg = _train_config(cfg, method)
    desk = bool(cfg.get("desk", False))
    arch = configs.default_arch(cfg["model"], method, desk=desk)
    artifacts = []
    if method in ("sm", "ssm"):
        model, hist = train_expfam(arch, data, model_def.data_domains, tcfg)
        rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 77]))
        fit_scaler(model, model_def, int(cfg.get("scaler_n", 1000)), rng)
        path = out / f"model_{cfg['model']}_{method}.json"
        model.save(path)
        artifacts.append(path)
    else:
        stats_fn, net, hist = train_fp_statistics(data, arch, tcfg)
        path = out / f"model_{cfg['model']}_fp.json"
        path.write_text(json.dumps({"format": "expfam-lfi/fp-v1",
                                    "net": net_to_dict(net)}))
        artifacts.append(path)
    hpath = out / f"history_{cfg['model']}_{method}.csv"
    hist.to_csv(hpath)
    artifacts.append(hpath)
    return artifacts


def _load_expfam(cfg, out, method) -> NeuralExpFam:
    tag = "ssm" if method.endswith("ssm") else "sm"
    path = cfg.get("model_artifact", out / f"model_{cfg['model']}_{tag}.json")
    _require(path, f"trained {tag} model")
    return NeuralExpFam.load(path)


def _load_fp(cfg, out):
    path = cfg.get("fp_artifact", out / f"model_{cfg['model']}_fp.json")
    _require(path, "trained fp statistics")
    net = net_from_dict(json.loads(Path(path).read_text())["net"])

    def stats_fn(x):
        return net.value(np.atleast_2d(np.asarray(x, dtype=np.float64)))

    return stats_fn


def _observations(cfg, model, seed) -> tuple[np.ndarray, np.ndarray]:
    """True parameters and observations: either loaded or prior-predictive."""
    n_obs = int(cfg.get("observations", 1))
    if cfg.get("obs_file"):
        rows = _read_posterior(_require(cfg["obs_file"], "observations"))
        theta = rows[:, :model.p]
        xs = rows[:, model.p:]
        return theta[:n_obs], xs[:n_obs]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1000]))
    theta = model.sample_prior(n_obs, rng)
    xs = model.simulate_batch(theta, rng)
    return theta, xs


def _abc_config(cfg) -> AbcConfig:
    over = dict(cfg.get("abc", {}))
    over.setdefault("store_populations", bool(cfg.get("store_populations", False)))
    return AbcConfig(**over)


def _exchange_config(cfg) -> ExchangeConfig:
    defaults = configs.EXCHANGE_DEFAULTS.get(cfg["model"], {})
    over = {**defaults, **cfg.get("exchange", {})}
    return ExchangeConfig(**over)


def _infer_one(cfg, model_def, method, x0, seed, out):
    """Posterior samples plus (iteration, cumulative simulations) records."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    scaler_n = int(cfg.get("scaler_n", 1000))
    if method in ("abc-sm", "abc-ssm"):
        model = _load_expfam(cfg, out, method)
        stats = scaled_statistics(lambda x: model.statistics(x, scaled=False),
                                  model_def, scaler_n, rng)
        res = population_abc(x0, model_def, stats, _abc_config(cfg), rng)
        return res.particles, res.records, res
    if method == "abc-fp":
        stats = scaled_statistics(_load_fp(cfg, out), model_def, scaler_n, rng)
        res = population_abc(x0, model_def, stats, _abc_config(cfg), rng)
        return res.particles, res.records, res
    if method == "abc-true":
        stats = scaled_statistics(model_def.true_statistics, model_def,
                                  scaler_n, rng)
        res = population_abc(x0, model_def, stats, _abc_config(cfg), rng)
        return res.particles, res.records, res
    if method in ("exc-sm", "exc-ssm"):
        model = _load_expfam(cfg, out, method)
        trace = run_exchange(model, model_def, x0, _exchange_config(cfg), rng)
        return trace.samples, [(0, np.nan, np.nan, 0)], trace
    if method in ("pmc-sl", "pmc-re"):
        over = dict(cfg.get("pmc", {}))
        over.setdefault("sims_per_theta", 100 if method == "pmc-sl" else 1000)
        pcfg = PmcConfig(**over)
        if method == "pmc-sl":
            def loglik(th, r):
                return synthetic_loglik(th, model_def, model_def.true_statistics,
                                        pcfg.sims_per_theta, x0, r)
        else:
            psi = re_features(model_def)

            def loglik(th, r):
                return ratio_loglik(th, model_def, psi, pcfg.sims_per_theta, x0, r)
        samples, ess, flags = pmc(loglik, model_def, pcfg, rng)
        sims = pcfg.iterations * pcfg.n_samples * pcfg.sims_per_theta
        if method == "pmc-re":
            sims *= 2  # both classes simulate
        return samples, [(pcfg.iterations, np.nan, np.nan, sims)], None
    if method == "prior":
        return model_def.sample_prior(int(cfg.get("abc", {}).get(
            "n_particles", 1000)), rng), [(0, np.nan, np.nan, 0)], None
    raise CliError(f"unknown method {method!r}")


def cmd_infer(cfg) -> list:
    model_def = get_model(cfg["model"])
    method = cfg.get("method")
    if method not in METHODS:
        raise CliError(f"method must be one of {METHODS}, got {method!r}")
    seed = int(cfg.get("seed", 0))
    out = _out_dir(cfg)
    theta_true, xs = _observations(cfg, model_def, seed)
    artifacts = []
    budget_rows = []
    for i, x0 in enumerate(xs):
        samples, records, _ = _infer_one(cfg, model_def, method, x0, seed + i, out)
        path = out / f"posterior_{cfg['model']}_{method}_obs{i}.csv"
        _write_posterior(path, samples, model_def.param_names)
        artifacts.append(path)
        for rec in records:
            budget_rows.append((i, rec[0], rec[3]))
    bpath = out / f"budget_{cfg['model']}_{method}.csv"
    with open(bpath, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["observation", "iteration", "cumulative_simulations"])
        wr.writerows(budget_rows)
    artifacts.append(bpath)
    return artifacts


def cmd_validate(cfg) -> list:
    model_def = get_model(cfg["model"])
    if not model_def.has_exact_loglik:
        raise CliError("validate needs a model with exact likelihood", code=2)
    methods = cfg.get("methods", [cfg.get("method", "abc-true"), "prior"])
    for m in methods:
        if m not in METHODS:
            raise CliError(f"unknown method {m!r}")
    seed = int(cfg.get("seed", 0))
    out = _out_dir(cfg)
    theta_true, xs = _observations(cfg, model_def, seed)
    rows = []
    for i, (tt, x0) in enumerate(zip(theta_true, xs)):
        ref_rng = np.random.default_rng(np.random.SeedSequence([seed, 23, i]))
        ref = reference_posterior(model_def, x0, rng=ref_rng)
        ref_mean = ref.samples.mean(axis=0)
        for method in methods:
            samples, _, _ = _infer_one(cfg, model_def, method, x0, seed + i, out)
            rows.append((method, i, "wasserstein",
                         wasserstein(samples, ref.samples)))
            rows.append((method, i, "rmse_mean", rmse_mean(samples, ref_mean)))
    path = out / f"validation_{cfg['model']}.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "observation", "metric", "value"])
        for r in rows:
            wr.writerow(r)
    summary = {}
    for method in methods:
        for metric in ("wasserstein", "rmse_mean"):
            vals = [r[3] for r in rows if r[0] == method and r[2] == metric]
            summary[f"{method}.{metric}"] = {
                "median": float(np.median(vals)),
                "q25": float(np.quantile(vals, 0.25)),
                "q75": float(np.quantile(vals, 0.75)),
            }
    spath = out / f"validation_{cfg['model']}_summary.json"
    spath.write_text(json.dumps(summary, indent=2))
    return [path, spath]


def cmd_score(cfg) -> list:
    model_def = get_model(cfg["model"])
    if model_def.u == 1:
        raise CliError("score expects a multivariate time-series model")
    seed = int(cfg.get("seed", 0))
    out = _out_dir(cfg)
    methods = cfg.get("methods", ["prior"])
    m_pred = int(cfg.get("predictive_m", 100))
    gamma = cfg.get("bandwidth")
    if gamma is None:
        gamma = median_bandwidth(model_def, rng=np.random.default_rng(
            np.random.SeedSequence([seed, 31])))
    theta_true, xs = _observations(cfg, model_def, seed)
    rows = []
    for i, x0 in enumerate(xs):
        for method in methods:
            samples, _, _ = _infer_one(cfg, model_def, method, x0, seed + i, out)
            rng = np.random.default_rng(np.random.SeedSequence([seed, 41, i]))
            rep = posterior_predictive_scores(samples, model_def, x0, m_pred,
                                              gamma, rng)
            rows.append((method, i, "energy_cumulative", rep.energy_cumulative))
            rows.append((method, i, "kernel_cumulative", rep.kernel_cumulative))
    path = out / f"scores_{cfg['model']}.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "observation", "metric", "value"])
        wr.writerows(rows)
    meta = out / f"scores_{cfg['model']}_meta.json"
    meta.write_text(json.dumps({"bandwidth": gamma, "predictive_m": m_pred}))
    return [path, meta]


def cmd_report(cfg) -> list:
    out = _out_dir(cfg)
    path = _require(out / f"validation_{cfg['model']}.csv", "validation output")
    with open(path) as fh:
        rd = csv.reader(fh)
        next(rd)
        rows = [(m, int(o), met, float(v)) for m, o, met, v in rd]
    methods = sorted({r[0] for r in rows})
    metrics = sorted({r[2] for r in rows})
    rpath = out / f"report_{cfg['model']}.csv"
    with open(rpath, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "metric", "median", "q25", "q75"])
        for m in methods:
            for met in metrics:
                vals = [r[3] for r in rows if r[0] == m and r[2] == met]
                wr.writerow([m, met, np.median(vals), np.quantile(vals, 0.25),
                             np.quantile(vals, 0.75)])
    artifacts = [rpath]
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4))
        axes = np.atleast_1d(axes)
        for ax, met in zip(axes, metrics):
            data = [[r[3] for r in rows if r[0] == m and r[2] == met]
                    for m in methods]
            ax.boxplot(data, tick_labels=methods)
            ax.set_title(met)
            ax.tick_params(axis="x", rotation=45)
        fig.tight_layout()
        ppath = out / f"report_{cfg['model']}.png"
        fig.savefig(ppath, dpi=100)
        artifacts.append(ppath)
    except ImportError:
        pass
    return artifacts


def cmd_budget(cfg) -> list:
    """Aggregate per-method budget files into one simulations-vs-method table."""
    out = _out_dir(cfg)
    rows = []
    pattern = f"budget_{cfg['model']}_*.csv"
    files = sorted(out.glob(pattern))
    if not files:
        raise CliError(f"missing upstream artifact (budget files): {out}/{pattern}")
    for f in files:
        method = f.stem.replace(f"budget_{cfg['model']}_", "")
        with open(f) as fh:
            rd = csv.reader(fh)
            next(rd)
            for obs, it, sims in rd:
                rows.append((method, int(obs), int(it), int(sims)))
    path = out / f"budget_report_{cfg['model']}.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "observation", "iteration",
                     "cumulative_simulations"])
        wr.writerows(rows)
    return [path]


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="expfam-lfi",
        description="Likelihood-free inference with score-matched neural "
                    "exponential families.",
        epilog="Thread count follows OMP_NUM_THREADS (BLAS); all randomness "
               "derives from --seed / the config seed.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_txt in [
        ("simulate", "generate a parameter/simulation dataset"),
        ("train", "train SM/SSM exponential family or FP statistics"),
        ("infer", "draw posterior samples with one method"),
        ("validate", "reference posteriors plus metrics over observations"),
        ("score", "posterior-predictive scoring rules (time series)"),
        ("report", "aggregate validation CSV into summary tables/plots"),
        ("budget", "merge per-method simulation-budget records"),
    ]:
        p = sub.add_parser(name, help=help_txt)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--observations", type=int,
                       help="override number of observations")
        p.add_argument("--method", help="override inference method")
    return ap


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "infer": cmd_infer,
    "validate": cmd_validate,
    "score": cmd_score,
    "report": cmd_report,
    "budget": cmd_budget,
}


def main(argv=None) -> int:
    tune_malloc()
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        for key in ("seed", "out", "observations", "method"):
            val = getattr(args, key, None)
            if val is not None:
                cfg[key] = val
        artifacts = _COMMANDS[args.command](cfg)
        _manifest(_out_dir(cfg), cfg, args.command, artifacts)
    except CliError as e:
        record = {"error": str(e), "command": args.command, "exit_code": e.code}
        print(json.dumps(record), file=sys.stderr)
        return e.code
    except Exception as e:  # unexpected: still machine-readable
        record = {"error": f"{type(e).__name__}: {e}", "command": args.command,
                  "exit_code": 1}
        print(json.dumps(record), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
