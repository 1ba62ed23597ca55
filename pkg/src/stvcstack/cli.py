"""Command-line entry point: ``simulate``, ``fit``, ``predict``, ``evaluate``.

Exit status is 0 on success, 2 for configuration or input errors and 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, NumericalError, ParameterError, StvcError
from .model import model_corr_factors
from .predict import predict_latent, predict_response
from .simulate import (
    SimConfig,
    matern_spatial_config,
    binomial_design_config,
    poisson_design_config,
    simulate_dataset,
)
from .stack import (
    HOLDOUT,
    PREDICT,
    STACKED,
    CellError,
    StackingWeights,
    cell_rng,
    fit_stacking,
    holdout_log_density,
    mlpd,
    stacked_sample,
)

logger = logging.getLogger("stvcstack")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_PRESETS = {
    "poisson": poisson_design_config,
    "binomial": binomial_design_config,
    "matern": matern_spatial_config,
}


def _sim_config(doc: dict, seed=None) -> SimConfig:
    sim = dict(doc.get("simulate", doc))
    if seed is not None:
        sim["seed"] = seed
    preset = sim.pop("preset", None)
    if preset is not None:
        if preset not in _PRESETS:
            raise ConfigError(f"unknown simulation preset {preset!r}; choose from {sorted(_PRESETS)}")
        try:
            return _PRESETS[preset](**sim)
        except TypeError as exc:
            raise ConfigError(f"bad simulation settings: {exc}") from None
    try:
        kernels = tuple(io.model_from_dict({"alpha_eps": 1, "kappa_eps": 0, "sigma_xi": 1, "kernel": k}).kernel
                        for k in sim.pop("kernels"))
        return SimConfig(kernels=kernels, **sim)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad simulation settings: {exc}") from None


def cmd_simulate(args) -> None:
    cfg = _sim_config(io.load_config(args.config), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, hold, truth = simulate_dataset(cfg)
    io.write_table(out / "train.csv", io.dataset_to_rows(train))
    if hold is not None:
        io.write_table(out / "holdout.csv", io.dataset_to_rows(hold))
    io.write_json(out / "truth.json", truth)


def cmd_fit(args) -> None:
    doc = io.load_config(args.config)
    cfg = io.run_config(doc, seed=args.seed, workers=args.workers)
    data = io.dataset_from_table(io.read_table(args.data), cfg, source=args.data)
    models = cfg.candidates()
    res = fit_stacking(
        data, models, K=cfg.K, S=cfg.S, N=cfg.N, seed=cfg.seed, hyper=cfg.hyper,
        workers=cfg.workers, retain_all=cfg.retain_all,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "weights.json", io.weights_document(models, res.weights))
    io.write_table(out / "loo.csv", {f"model_{l}": res.loo.log_values[:, l] for l in range(len(models))})
    for l, sample in res.draws.items():
        io.save_sample(out / "samples" / f"model_{l:03d}", sample, cfg.column_names)
    K = res.folds.n_folds
    meta = dict(res.meta)
    meta.update({
        "seed": cfg.seed,
        "workers": cfg.workers,
        "K": K, "S": cfg.S, "N": cfg.N,
        "fold_permutation": res.folds.permutation.tolist(),
        "fold_bounds": res.folds.bounds.tolist(),
        "rng": "Philox(SeedSequence(seed, spawn_key=(model, fold + 4))); fold -1 full fit, -2 holdout, "
               "-3 prediction, -4 stacked selection (model 0)",
        "cells": [{"model": l, "fold": k, "spawn_key": [l, k + 4]} for l in range(len(models)) for k in range(K)],
    })
    io.write_json(out / "run_meta.json", meta)
    io.write_json(out / "config.json", cfg.to_dict())
    if Path(args.data).resolve() != (out / "train.csv").resolve():
        shutil.copyfile(args.data, out / "train.csv")


def load_fit(fit_dir):
    """Reload a fit directory: config, training data, models, weights and draws."""
    d = Path(fit_dir)
    for name in ("config.json", "train.csv", "weights.json"):
        if not (d / name).exists():
            raise ConfigError(f"fit artifact {d / name} is missing")
    cfg = io.run_config(io.load_config(d / "config.json"))
    data = io.dataset_from_table(io.read_table(d / "train.csv"), cfg, source=str(d / "train.csv"))
    wdoc = io.load_config(d / "weights.json")
    models = [io.model_from_dict(m) for m in wdoc["models"]]
    w = np.array([m["weight"] for m in wdoc["models"]])
    weights = StackingWeights(w, wdoc["objective"], wdoc["iterations"], wdoc["converged"], wdoc["method"])
    draws = {}
    for l in range(len(models)):
        sd = d / "samples" / f"model_{l:03d}"
        if sd.exists():
            draws[l] = io.load_sample(sd, data.n, data.r)
    if not draws:
        raise ConfigError(f"{d}: no posterior samples found")
    return cfg, data, models, weights, draws


def _retained_weights(weights, draws):
    keep = sorted(draws)
    w = weights.w[keep]
    return keep, w / w.sum()


def cmd_predict(args) -> None:
    cfg, data, models, weights, draws = load_fit(args.fit)
    seed = cfg.seed if args.seed is None else args.seed
    new = io.dataset_from_table(io.read_table(args.data), cfg, require_y=False, source=args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sel = stacked_sample(weights, draws, cfg.predict_draws, cell_rng(seed, 0, STACKED))
    m, r, T = new.n, data.r, cfg.predict_draws
    ztilde = np.empty((T, m, r))
    ydraw = np.empty((T, m))
    nu_z = cfg.hyper.nu_z_vector(r)
    for l in sorted(draws):
        rows = np.flatnonzero(sel.model_index == l)
        if rows.size == 0 or m == 0:
            continue
        model = models[l]
        sub = draws[l][sel.draw_index[rows]]
        rng = cell_rng(seed, l, PREDICT)
        factors = model_corr_factors(data.coords, model, r)
        zt = predict_latent(sub.z, data.coords, new.coords, model.kernels(r), nu_z, rng, factors)
        ztilde[rows] = zt
        ydraw[rows] = predict_response(sub.beta, zt, new.X, new.Xtilde, new.family, rng)
    cols = {"s1": new.coords[:, 0], "s2": new.coords[:, 1], "t": new.coords[:, 2]}

    def summarize(prefix, values):
        q = np.quantile(values, [0.025, 0.5, 0.975], axis=0) if T and m else np.empty((3, m))
        cols[f"{prefix}_mean"] = values.mean(axis=0) if m else np.empty(0)
        cols[f"{prefix}_q2.5"] = q[0]
        cols[f"{prefix}_median"] = q[1]
        cols[f"{prefix}_q97.5"] = q[2]

    summarize("y", ydraw)
    for j in range(r):
        summarize(f"z{j}", ztilde[:, :, j])
    io.write_table(out / "predictions.csv", cols)
    io.write_table(out / "predictive_draws.csv", {f"y_{i}": ydraw[:, i] for i in range(m)}
                   if m else {"draw": np.empty(0)})


def cmd_evaluate(args) -> None:
    cfg, data, models, weights, draws = load_fit(args.fit)
    seed = cfg.seed if args.seed is None else args.seed
    test = io.dataset_from_table(io.read_table(args.data), cfg, source=args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keep, w = _retained_weights(weights, draws)
    logp = np.column_stack([
        holdout_log_density(data, models[l], draws[l], test, cfg.hyper, cell_rng(seed, l, HOLDOUT))
        for l in keep
    ])
    report = {
        "stacked_mlpd": mlpd(logp, w),
        "per_model_mlpd": {str(l): float(np.mean(logp[:, i])) for i, l in enumerate(keep)},
        "retained_models": keep,
        "renormalized_weights": {str(l): float(x) for l, x in zip(keep, w)},
        "n_holdout": test.n,
    }
    io.write_json(out / "mlpd.json", report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stvcstack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, config=False, data=False, fit=False, workers=False):
        p = sub.add_parser(name)
        if config:
            p.add_argument("--config", required=True)
        if data:
            p.add_argument("--data", required=True)
        if fit:
            p.add_argument("--fit", required=True, help="directory written by 'fit'")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        if workers:
            p.add_argument("--workers", type=int, default=None)
        p.set_defaults(func=fn)

    add("simulate", cmd_simulate, config=True)
    add("fit", cmd_fit, config=True, data=True, workers=True)
    add("predict", cmd_predict, data=True, fit=True)
    add("evaluate", cmd_evaluate, data=True, fit=True)
    return parser


def _is_numerical(exc) -> bool:
    while exc is not None:
        if isinstance(exc, (NumericalError, np.linalg.LinAlgError, ArithmeticError)):
            return True
        if isinstance(exc, (ConfigError, ParameterError)):
            return False
        exc = exc.cause if isinstance(exc, CellError) else exc.__cause__
    return False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.func(args)
    except (StvcError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if _is_numerical(exc) else EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
