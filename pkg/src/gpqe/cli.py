"""Command-line interface.

Subcommands:

* ``run``     cross-validated experiment over a (kernel x warp) model grid
* ``fit``     train one model on a full dataset and dump its hyperparameters
* ``predict`` score a feature file with a dumped model
* ``synth``   generate a synthetic dataset from a GP prior

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import dataio
from .exceptions import (
    ConvergenceError,
    DataError,
    ExperimentError,
    GpqeError,
    IllConditionedError,
    LossOverflowError,
    OptimizationError,
    SupportViolationError,
)
from .experiment import (
    KERNEL_CHOICES,
    WARP_CHOICES,
    ExperimentConfig,
    generate_synthetic,
    run_experiment,
    standardize_features,
    write_reports,
    _clamp_for_log,
)
from .gp import Dataset, Hyperparams, LatentPredictive, ModelSpec, fit_cache, predict_latent
from .kernels import KernelParams, KernelSpec, LengthscaleMode
from .optimize import OptimizeConfig, two_pass_fit
from .predictive import (
    PredictiveDistribution,
    QuadratureRule,
    log_density,
    mean_and_variance,
    median,
    quantile,
)
from .warping import WarpFamily, WarpParams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (
    OptimizationError,
    IllConditionedError,
    ConvergenceError,
    SupportViolationError,
    LossOverflowError,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; we reserve 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_weight(token: str) -> float:
    token = token.strip()
    if "/" in token:
        num, den = token.split("/", 1)
        return float(num) / float(den)
    return float(token)


def _parse_list(text: str, parse=float) -> list:
    items = [t for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError(f"empty list: {text!r}")
    return [parse(t) for t in items]


def _build_parser() -> _Parser:
    parser = _Parser(prog="gpqe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_flags(p, required=True):
        p.add_argument("--features", required=required, help="feature matrix file")
        p.add_argument("--labels", required=required, help="one label per line")
        p.add_argument("--lengths", default=None, help="sentence lengths; labels become label/length")

    run = sub.add_parser("run", help="cross-validated experiment over a model grid")
    add_data_flags(run)
    run.add_argument("--kernel", default="eq,matern32,matern52", help="comma-separated kernel list")
    run.add_argument("--warp", default="none,log,tanh1,tanh2,tanh3", help="comma-separated warp list")
    run.add_argument("--folds", type=int, default=10)
    run.add_argument("--restarts", type=int, default=10)
    run.add_argument("--max-iters", type=int, default=1000)
    run.add_argument("--al-weights", default="3,1/3", help="comma-separated, fractions allowed")
    run.add_argument("--linex-weights", default="-0.75,0.75")
    run.add_argument("--quad-order", type=int, default=50)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True, help="directory for summary.csv / details.jsonl")

    fit = sub.add_parser("fit", help="fit one model on the full dataset, dump hyperparameters")
    add_data_flags(fit)
    fit.add_argument("--kernel", default="eq", choices=sorted(KERNEL_CHOICES))
    fit.add_argument("--warp", default="none", choices=sorted(WARP_CHOICES))
    fit.add_argument("--restarts", type=int, default=10)
    fit.add_argument("--max-iters", type=int, default=1000)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True, help="output JSON file")

    pred = sub.add_parser("predict", help="score a feature file with a dumped model")
    pred.add_argument("--model", required=True, help="JSON dump produced by fit")
    pred.add_argument("--features", required=True, help="feature rows to score")
    pred.add_argument("--labels", default=None, help="optional labels; adds log densities")
    pred.add_argument("--train-features", default=None, help="override the dump's training paths")
    pred.add_argument("--train-labels", default=None)
    pred.add_argument("--train-lengths", default=None)
    pred.add_argument("--quantiles", default="0.25,0.75", help="extra quantile levels to emit")
    pred.add_argument("--quad-order", type=int, default=50)
    pred.add_argument("--out", required=True, help="output CSV file")

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--dim", type=int, required=True)
    synth.add_argument("--kernel", default="eq", choices=sorted(KERNEL_CHOICES))
    synth.add_argument("--warp", default="none", choices=("none", "log"),
                       help="log pushes the latent draw through exp, giving positive skewed labels")
    synth.add_argument("--variance", type=float, default=1.0)
    synth.add_argument("--lengthscales", default="1.0", help="comma-separated; one value = isotropic")
    synth.add_argument("--noise", type=float, default=0.1)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_run(args) -> int:
    config = ExperimentConfig(
        features_path=args.features,
        labels_path=args.labels,
        lengths_path=args.lengths,
        kernels=tuple(_parse_list(args.kernel, str.strip)),
        warps=tuple(_parse_list(args.warp, str.strip)),
        folds=args.folds,
        optimizer=OptimizeConfig(restarts=args.restarts, max_iters=args.max_iters),
        al_weights=tuple(_parse_list(args.al_weights, _parse_weight)),
        linex_weights=tuple(_parse_list(args.linex_weights, _parse_weight)),
        quad_order=args.quad_order,
        seed=args.seed,
    )
    try:
        report = run_experiment(config)
    except ExperimentError as exc:
        if exc.report is not None:
            write_reports(exc.report, args.out)
        print(f"gpqe: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    csv_path, jsonl_path = write_reports(report, args.out)
    print(f"wrote {csv_path} and {jsonl_path}")
    return EXIT_OK


def _fit_full_dataset(features_path, labels_path, lengths_path, kernel, warp, optimizer):
    dataset = dataio.load_dataset(features_path, labels_path, lengths_path)
    warp_spec = WARP_CHOICES[warp]
    responses = dataset.responses
    clamped = 0
    if warp_spec.family is WarpFamily.LOG:
        responses, clamped = _clamp_for_log(responses)
    standardized, _, mean, std = standardize_features(dataset.features, dataset.features[:1])
    fit = two_pass_fit(Dataset(standardized, responses), KERNEL_CHOICES[kernel], warp_spec, optimizer)
    return dataset, fit, mean, std, clamped


def _cmd_fit(args) -> int:
    optimizer = OptimizeConfig(restarts=args.restarts, max_iters=args.max_iters, seed=args.seed)
    _, fit, mean, std, clamped = _fit_full_dataset(
        args.features, args.labels, args.lengths, args.kernel, args.warp, optimizer
    )
    hp = fit.model.hyperparams
    dump = {
        "kernel": {
            "family": args.kernel,
            "mode": fit.model.spec.kernel.lengthscale_mode.value,
            "variance": hp.kernel.variance,
            "lengthscales": hp.kernel.lengthscales.tolist(),
        },
        "noise_variance": hp.noise_variance,
        "warp": {"family": args.warp},
        "standardize": {"mean": mean.tolist(), "std": std.tolist()},
        "train": {
            "features": args.features,
            "labels": args.labels,
            "lengths": args.lengths,
            "clamped_labels": clamped,
        },
        "nll": fit.final_nll,
        "pass1": {
            "nll": fit.pass1.best_nll,
            "converged": fit.pass1.restarts[fit.pass1.best_index].converged,
        },
        "pass2": {
            "nll": fit.pass2.best_nll,
            "converged": fit.pass2.restarts[fit.pass2.best_index].converged,
        },
    }
    if hp.warp is not None and hp.warp.terms:
        dump["warp"].update(
            {"a": hp.warp.a.tolist(), "b": hp.warp.b.tolist(), "c": hp.warp.c.tolist()}
        )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as handle:
        json.dump(dump, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"wrote {args.out} (nll {fit.final_nll:.6g})")
    return EXIT_OK


def _model_from_dump(dump, train_features, train_labels, train_lengths):
    kernel_name = dump["kernel"]["family"]
    warp_name = dump["warp"]["family"]
    warp_spec = WARP_CHOICES[warp_name]
    warp_params = None
    if warp_spec.family is WarpFamily.TANH_SUM:
        warp_params = WarpParams(
            a=np.asarray(dump["warp"]["a"]),
            b=np.asarray(dump["warp"]["b"]),
            c=np.asarray(dump["warp"]["c"]),
        )
    spec = ModelSpec(
        kernel=KernelSpec(KERNEL_CHOICES[kernel_name], LengthscaleMode(dump["kernel"]["mode"])),
        warp=warp_spec,
    )
    hp = Hyperparams(
        kernel=KernelParams(
            variance=dump["kernel"]["variance"],
            lengthscales=np.asarray(dump["kernel"]["lengthscales"]),
        ),
        noise_variance=dump["noise_variance"],
        warp=warp_params,
    )
    dataset = dataio.load_dataset(train_features, train_labels, train_lengths)
    responses = dataset.responses
    if warp_spec.family is WarpFamily.LOG:
        responses, _ = _clamp_for_log(responses)
    mean = np.asarray(dump["standardize"]["mean"])
    std = np.asarray(dump["standardize"]["std"])
    model = fit_cache(Dataset((dataset.features - mean) / std, responses), spec, hp)
    return model, mean, std


def _cmd_predict(args) -> int:
    with open(args.model, "r", encoding="utf-8") as handle:
        dump = json.load(handle)
    train = dump.get("train", {})
    model, mean, std = _model_from_dump(
        dump,
        args.train_features or train.get("features"),
        args.train_labels or train.get("labels"),
        args.train_lengths if args.train_lengths is not None else train.get("lengths"),
    )
    features = dataio.read_feature_matrix(args.features)
    if features.shape[1] != model.dataset.dim:
        raise DataError(
            f"feature file has {features.shape[1]} columns, model expects {model.dataset.dim}",
            path=args.features,
        )
    labels = None
    if args.labels is not None:
        labels = dataio.read_column(args.labels, "label")
        if labels.size != features.shape[0]:
            raise DataError(
                f"{features.shape[0]} feature rows but {labels.size} labels", path=args.labels
            )
    levels = _parse_list(args.quantiles, float)
    if any(not 0.0 < q < 1.0 for q in levels):
        raise ValueError("quantile levels must lie in (0, 1)")
    rule = QuadratureRule.gauss_hermite(args.quad_order)

    latent = predict_latent(model, (features - mean) / std)
    header = ["row", "median", "mean", "variance"] + [f"q{q:g}" for q in levels]
    if labels is not None:
        header.append("log_density")
    lines = [",".join(header)]
    for i, (m, v) in enumerate(zip(np.atleast_1d(latent.mean), np.atleast_1d(latent.variance))):
        dist = PredictiveDistribution(
            LatentPredictive(float(m), float(v)), model.spec.warp, model.hyperparams.warp
        )
        mu, var = mean_and_variance(dist, rule)
        row = [str(i), f"{median(dist):.12g}", f"{mu:.12g}", f"{var:.12g}"]
        row += [f"{quantile(dist, q):.12g}" for q in levels]
        if labels is not None:
            row.append(f"{log_density(dist, float(labels[i])):.12g}")
        lines.append(",".join(row))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    print(f"wrote {args.out} ({features.shape[0]} rows)")
    return EXIT_OK


def _cmd_synth(args) -> int:
    lengthscales = np.asarray(_parse_list(args.lengthscales, float))
    mode = LengthscaleMode.ISOTROPIC if lengthscales.size == 1 else LengthscaleMode.ARD
    spec = ModelSpec(
        kernel=KernelSpec(KERNEL_CHOICES[args.kernel], mode), warp=WARP_CHOICES[args.warp]
    )
    hp = Hyperparams(
        kernel=KernelParams(variance=args.variance, lengthscales=lengthscales),
        noise_variance=args.noise,
    )
    dataset = generate_synthetic(args.n, args.dim, spec, hp, args.seed)
    os.makedirs(args.out, exist_ok=True)
    features_path = os.path.join(args.out, "features.txt")
    labels_path = os.path.join(args.out, "labels.txt")
    dataio.write_feature_matrix(features_path, dataset.features)
    dataio.write_column(labels_path, dataset.responses)
    print(f"wrote {features_path} and {labels_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "fit": _cmd_fit, "predict": _cmd_predict, "synth": _cmd_synth}
    try:
        return handlers[args.command](args)
    except DataError as exc:
        print(f"gpqe: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"gpqe: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, GpqeError) as exc:
        print(f"gpqe: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
