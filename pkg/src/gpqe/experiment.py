"""Experiment orchestration: cross-validated model grids and report emission.

run_experiment trains every (kernel, warp) combination of the config on a
shared k-fold partition.  Each fold standardizes features with train-split
statistics, fits via the two-pass procedure, scores the held-out split with
NLPD / MAE / Pearson r using median point predictions, and then reuses the
same fitted model to derive asymmetric-loss Bayes estimates for every
configured weight.  Per-fold results are kept alongside fold-averaged
aggregates; reports are written as a flat CSV summary plus a JSON-lines
detail log.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataio
from .exceptions import (
    ExperimentError,
    GpqeError,
    LossOverflowError,
    SupportViolationError,
    UndefinedCorrelationError,
)
from .gp import Dataset, Hyperparams, LatentPredictive, ModelSpec, predict_latent, stabilized_cholesky
from .kernels import KernelFamily, KernelSpec, LengthscaleMode, gram_matrix
from .metrics import EvalRecord, al_loss, linex_loss, mae, nlpd, pearson_pvalue, pearson_r
from .optimize import OptimizeConfig, pack_hyperparams, two_pass_fit
from .predictive import (
    PredictiveDistribution,
    QuadratureRule,
    bayes_estimate_al,
    log_density,
    mean_and_variance,
    median,
)
from .warping import WarpFamily, WarpSpec, warp_inverse

KERNEL_CHOICES = {
    "eq": KernelFamily.EQ,
    "matern32": KernelFamily.MATERN32,
    "matern52": KernelFamily.MATERN52,
}

WARP_CHOICES = {
    "none": WarpSpec(WarpFamily.IDENTITY),
    "log": WarpSpec(WarpFamily.LOG),
    "tanh1": WarpSpec(WarpFamily.TANH_SUM, 1),
    "tanh2": WarpSpec(WarpFamily.TANH_SUM, 2),
    "tanh3": WarpSpec(WarpFamily.TANH_SUM, 3),
}

LOG_LABEL_CLAMP = 1e-6
FOLD_FAILURE_LIMIT = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment run."""

    features_path: str | None = None
    labels_path: str | None = None
    lengths_path: str | None = None
    kernels: tuple[str, ...] = ("eq", "matern32", "matern52")
    warps: tuple[str, ...] = ("none", "log", "tanh1", "tanh2", "tanh3")
    folds: int = 10
    optimizer: OptimizeConfig = field(default_factory=OptimizeConfig)
    al_weights: tuple[float, ...] = (3.0, 1.0 / 3.0)
    linex_weights: tuple[float, ...] = (-0.75, 0.75)
    quad_order: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if not self.kernels or not self.warps:
            raise ValueError("kernel and warp lists must be nonempty")
        if not self.al_weights or not self.linex_weights:
            raise ValueError("weight lists must be nonempty")
        for name in self.kernels:
            if name not in KERNEL_CHOICES:
                raise ValueError(f"unknown kernel {name!r}; choose from {sorted(KERNEL_CHOICES)}")
        for name in self.warps:
            if name not in WARP_CHOICES:
                raise ValueError(f"unknown warp {name!r}; choose from {sorted(WARP_CHOICES)}")
        if any(w <= 0 for w in self.al_weights):
            raise ValueError("asymmetric linear weights must be positive")
        if any(w == 0 for w in self.linex_weights):
            raise ValueError("linex weights must be nonzero")


@dataclass
class FoldResult:
    """Everything recorded for one (model, fold) cell."""

    fold: int
    test_indices: np.ndarray
    error: str | None = None
    hyperparams: Hyperparams | None = None
    nll_train: float = math.nan
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    record: EvalRecord | None = None
    medians: np.ndarray | None = None
    al_estimates: dict[float, np.ndarray] = field(default_factory=dict)
    linex_estimates: dict[float, np.ndarray] = field(default_factory=dict)
    pass1_converged: bool = False
    pass2_converged: bool = False
    jitter: float = 0.0
    fingerprints: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ModelResult:
    """All folds of one (kernel, warp) grid cell plus fold-averaged scores."""

    name: str
    kernel: str
    warp: str
    clamped_labels: int
    folds: list[FoldResult] = field(default_factory=list)
    aggregates: dict[str, float] = field(default_factory=dict)
    al_means: dict[float, float] = field(default_factory=dict)
    linex_means: dict[float, float] = field(default_factory=dict)
    linex_diverged_folds: dict[float, int] = field(default_factory=dict)

    @property
    def failed_folds(self) -> int:
        return sum(1 for f in self.folds if not f.ok)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    n_instances: int
    n_features: int
    fold_sizes: list[int]
    models: list[ModelResult] = field(default_factory=list)

    @property
    def failures(self) -> list[str]:
        limit = FOLD_FAILURE_LIMIT
        return [
            f"{m.name}: {m.failed_folds}/{len(m.folds)} folds failed"
            for m in self.models
            if m.failed_folds > limit * len(m.folds)
        ]


def kfold_split(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Shuffled partition of range(n) into k folds with sizes differing by <= 1."""
    if not 1 <= k <= n:
        raise ValueError(f"folds must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def standardize_features(train: np.ndarray, test: np.ndarray):
    """Z-score both splits using train-split statistics only."""
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (train - mean) / std, (test - mean) / std, mean, std


def generate_synthetic(
    n: int, dim: int, spec: ModelSpec, hyperparams: Hyperparams, seed: int
) -> Dataset:
    """Sample a dataset from the model's own prior.

    Inputs are uniform on [-1, 1]^dim; the latent function is drawn from the
    GP prior through the Gram Cholesky factor; Gaussian noise is added; and
    the noisy latent values are pushed through the inverse warp, so a log
    warp yields strictly positive, right-skewed labels.
    """
    if n < 2:
        raise ValueError("synthetic datasets need n >= 2")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, dim))
    gram = gram_matrix(spec.kernel, hyperparams.kernel, x)
    factor, _ = stabilized_cholesky(gram)
    latent = factor @ rng.standard_normal(n)
    z = latent + math.sqrt(hyperparams.noise_variance) * rng.standard_normal(n)
    y = warp_inverse(spec.warp, hyperparams.warp, z)
    return Dataset(features=x, responses=np.asarray(y))


def _fingerprint(model) -> str:
    digest = hashlib.sha256()
    digest.update(pack_hyperparams(model.hyperparams, model.spec).tobytes())
    digest.update(model.weight_vector.tobytes())
    return digest.hexdigest()[:16]


def _clamp_for_log(responses: np.ndarray) -> tuple[np.ndarray, int]:
    clamped = int(np.sum(responses < LOG_LABEL_CLAMP))
    return np.maximum(responses, LOG_LABEL_CLAMP), clamped


def _run_fold(
    dataset: Dataset,
    responses: np.ndarray,
    kernel_family: KernelFamily,
    warp_spec: WarpSpec,
    fold_idx: int,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    config: ExperimentConfig,
    optimizer_seed: int,
    rule: QuadratureRule,
) -> FoldResult:
    result = FoldResult(fold=fold_idx, test_indices=test_idx)
    x_train, x_test, mean, std = standardize_features(
        dataset.features[train_idx], dataset.features[test_idx]
    )
    result.feature_mean = mean
    result.feature_std = std
    y_train = responses[train_idx]
    y_test = responses[test_idx]

    opt_config = replace(config.optimizer, seed=optimizer_seed)
    try:
        fit = two_pass_fit(Dataset(x_train, y_train), kernel_family, warp_spec, opt_config)
        model = fit.model
        result.hyperparams = model.hyperparams
        result.nll_train = fit.final_nll
        result.pass1_converged = fit.pass1.restarts[fit.pass1.best_index].converged
        result.pass2_converged = fit.pass2.restarts[fit.pass2.best_index].converged
        result.jitter = model.jitter

        latent = predict_latent(model, x_test)
        dists = [
            PredictiveDistribution(
                LatentPredictive(float(m), float(v)), warp_spec, model.hyperparams.warp
            )
            for m, v in zip(np.atleast_1d(latent.mean), np.atleast_1d(latent.variance))
        ]
        log_dens = np.array([log_density(d, float(y)) for d, y in zip(dists, y_test)])
        medians = np.array([median(d) for d in dists])
        result.medians = medians
        result.fingerprints["fit"] = _fingerprint(model)

        nlpd_value = nlpd(log_dens)
        mae_value = mae(medians, y_test)
        try:
            r = pearson_r(medians, y_test)
            r_p = pearson_pvalue(r, y_test.size)
        except UndefinedCorrelationError:
            r = r_p = math.nan

        al_scores: dict[float, float] = {}
        for w in config.al_weights:
            estimates = np.array([bayes_estimate_al(d, w) for d in dists])
            result.al_estimates[w] = estimates
            al_scores[w] = al_loss(estimates, y_test, w)
            result.fingerprints[f"al:{w:g}"] = _fingerprint(model)

        moments = [mean_and_variance(d, rule) for d in dists]
        pred_means = np.array([m for m, _ in moments])
        pred_vars = np.array([v for _, v in moments])
        linex_scores: dict[float, float] = {}
        linex_diverged: dict[float, bool] = {}
        for w in config.linex_weights:
            estimates = pred_means - 0.5 * w * pred_vars
            result.linex_estimates[w] = estimates
            try:
                linex_scores[w] = linex_loss(estimates, y_test, w)
                linex_diverged[w] = False
            except LossOverflowError:
                linex_scores[w] = math.nan
                linex_diverged[w] = True
            result.fingerprints[f"linex:{w:g}"] = _fingerprint(model)

        result.record = EvalRecord(
            labels=y_test,
            predictions=medians,
            log_densities=log_dens,
            nlpd=nlpd_value,
            mae=mae_value,
            pearson=r,
            pearson_p=r_p,
            al=al_scores,
            linex=linex_scores,
            linex_diverged=linex_diverged,
        )
    except (GpqeError, SupportViolationError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def _aggregate_model(result: ModelResult, config: ExperimentConfig) -> None:
    good = [f for f in result.folds if f.ok]

    def mean_of(values):
        vals = [v for v in values if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    result.aggregates = {
        "nll": mean_of(f.nll_train for f in good),
        "nlpd": mean_of(f.record.nlpd for f in good),
        "mae": mean_of(f.record.mae for f in good),
        "pearson_r": mean_of(f.record.pearson for f in good),
        "pearson_p": mean_of(f.record.pearson_p for f in good),
    }
    for w in config.al_weights:
        result.al_means[w] = mean_of(f.record.al[w] for f in good)
    for w in config.linex_weights:
        result.linex_means[w] = mean_of(f.record.linex[w] for f in good)
        result.linex_diverged_folds[w] = sum(1 for f in good if f.record.linex_diverged[w])


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None) -> ExperimentReport:
    """Run the full model grid; raises ExperimentError (report attached) when
    any model loses more than 20% of its folds."""
    if dataset is None:
        if config.features_path is None or config.labels_path is None:
            raise ValueError("config must carry dataset paths when no dataset is passed")
        dataset = dataio.load_dataset(
            config.features_path, config.labels_path, config.lengths_path
        )
    folds = kfold_split(dataset.n, config.folds, config.seed)
    report = ExperimentReport(
        config=config,
        n_instances=dataset.n,
        n_features=dataset.dim,
        fold_sizes=[int(f.size) for f in folds],
    )
    rule = QuadratureRule.gauss_hermite(config.quad_order)
    all_indices = np.arange(dataset.n)

    for mi, kernel_name in enumerate(config.kernels):
        for wi, warp_name in enumerate(config.warps):
            warp_spec = WARP_CHOICES[warp_name]
            responses = dataset.responses
            clamped = 0
            if warp_spec.family is WarpFamily.LOG:
                responses, clamped = _clamp_for_log(responses)
            model_result = ModelResult(
                name=f"{kernel_name}-{warp_name}",
                kernel=kernel_name,
                warp=warp_name,
                clamped_labels=clamped,
            )
            for fi, test_idx in enumerate(folds):
                train_idx = np.setdiff1d(all_indices, test_idx, assume_unique=True)
                sub_seed = int(
                    np.random.SeedSequence([config.seed, mi, wi, fi]).generate_state(1)[0]
                )
                model_result.folds.append(
                    _run_fold(
                        dataset,
                        responses,
                        KERNEL_CHOICES[kernel_name],
                        warp_spec,
                        fi,
                        train_idx,
                        test_idx,
                        config,
                        sub_seed,
                        rule,
                    )
                )
            _aggregate_model(model_result, config)
            report.models.append(model_result)

    if report.failures:
        raise ExperimentError(
            "experiment failed: " + "; ".join(report.failures), report=report
        )
    return report


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def _csv_rows(report: ExperimentReport):
    yield "model,fold,metric,weight,value"
    intrinsic = ("nll", "nlpd", "mae", "pearson_r", "pearson_p")
    for model in report.models:
        for fold in model.folds:
            if not fold.ok:
                continue
            rec = fold.record
            values = {
                "nll": fold.nll_train,
                "nlpd": rec.nlpd,
                "mae": rec.mae,
                "pearson_r": rec.pearson,
                "pearson_p": rec.pearson_p,
            }
            for metric in intrinsic:
                yield f"{model.name},{fold.fold},{metric},,{_fmt(values[metric])}"
            for w in report.config.al_weights:
                yield f"{model.name},{fold.fold},al,{w:g},{_fmt(rec.al[w])}"
            for w in report.config.linex_weights:
                yield f"{model.name},{fold.fold},linex,{w:g},{_fmt(rec.linex[w])}"
        for metric in intrinsic:
            yield f"{model.name},mean,{metric},,{_fmt(model.aggregates[metric])}"
        for w in report.config.al_weights:
            yield f"{model.name},mean,al,{w:g},{_fmt(model.al_means[w])}"
        for w in report.config.linex_weights:
            yield f"{model.name},mean,linex,{w:g},{_fmt(model.linex_means[w])}"


def _hyperparams_summary(hp: Hyperparams | None):
    if hp is None:
        return None
    out = {
        "variance": hp.kernel.variance,
        "lengthscales": hp.kernel.lengthscales.tolist(),
        "noise_variance": hp.noise_variance,
    }
    if hp.warp is not None and hp.warp.terms:
        out["warp"] = {"a": hp.warp.a.tolist(), "b": hp.warp.b.tolist(), "c": hp.warp.c.tolist()}
    return out


def _jsonl_records(report: ExperimentReport):
    yield {
        "type": "experiment",
        "n_instances": report.n_instances,
        "n_features": report.n_features,
        "folds": report.config.folds,
        "fold_sizes": report.fold_sizes,
        "kernels": list(report.config.kernels),
        "warps": list(report.config.warps),
        "al_weights": list(report.config.al_weights),
        "linex_weights": list(report.config.linex_weights),
        "quad_order": report.config.quad_order,
        "seed": report.config.seed,
        "restarts": report.config.optimizer.restarts,
    }
    for model in report.models:
        for fold in model.folds:
            rec = {
                "type": "fold",
                "model": model.name,
                "fold": fold.fold,
                "error": fold.error,
                "test_size": int(fold.test_indices.size),
            }
            if fold.ok:
                rec.update(
                    {
                        "nll": fold.nll_train,
                        "nlpd": fold.record.nlpd,
                        "mae": fold.record.mae,
                        "pearson_r": fold.record.pearson,
                        "pearson_p": fold.record.pearson_p,
                        "al": {f"{w:g}": fold.record.al[w] for w in report.config.al_weights},
                        "linex": {
                            f"{w:g}": fold.record.linex[w] for w in report.config.linex_weights
                        },
                        "linex_diverged": {
                            f"{w:g}": fold.record.linex_diverged[w]
                            for w in report.config.linex_weights
                        },
                        "hyperparams": _hyperparams_summary(fold.hyperparams),
                        "pass1_converged": fold.pass1_converged,
                        "pass2_converged": fold.pass2_converged,
                        "jitter": fold.jitter,
                        "fingerprint": fold.fingerprints.get("fit"),
                    }
                )
            yield rec
        yield {
            "type": "model",
            "model": model.name,
            "kernel": model.kernel,
            "warp": model.warp,
            "clamped_labels": model.clamped_labels,
            "failed_folds": model.failed_folds,
            "aggregates": model.aggregates,
            "al_means": {f"{w:g}": v for w, v in model.al_means.items()},
            "linex_means": {f"{w:g}": v for w, v in model.linex_means.items()},
            "linex_diverged_folds": {f"{w:g}": v for w, v in model.linex_diverged_folds.items()},
        }


def write_reports(report: ExperimentReport, out_dir) -> tuple[str, str]:
    """Write summary.csv and details.jsonl under out_dir; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "summary.csv")
    jsonl_path = os.path.join(out_dir, "details.jsonl")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as handle:
        for row in _csv_rows(report):
            handle.write(row + "\n")
    with open(jsonl_path, "w", encoding="utf-8", newline="\n") as handle:
        for record in _jsonl_records(report):
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    return csv_path, jsonl_path
