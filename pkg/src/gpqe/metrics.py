"""Evaluation metrics over point predictions and predictive densities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as _student_t

from .exceptions import LossOverflowError, SupportViolationError, UndefinedCorrelationError

_EXP_GUARD = 700.0


def _vector(x, name: str) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"{name} must be a non-empty vector")
    return x


def _paired(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    p = _vector(predictions, "predictions")
    y = _vector(labels, "labels")
    if p.size != y.size:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    return p, y


def nlpd(log_densities) -> float:
    """Negative mean log predictive density; lower is better.

    A -inf entry means the model assigned zero density to an observed label;
    that is a hard support violation, not a number to average away.
    """
    ld = _vector(log_densities, "log_densities")
    neg_inf = np.isneginf(ld)
    if np.any(neg_inf):
        idx = np.flatnonzero(neg_inf)
        raise SupportViolationError(
            f"zero predictive density at {idx.size} label(s)", indices=idx.tolist()
        )
    if not np.all(np.isfinite(ld)):
        raise ValueError("log densities must be finite")
    return float(-np.mean(ld))


def mae(predictions, labels) -> float:
    """Mean absolute error."""
    p, y = _paired(predictions, labels)
    return float(np.mean(np.abs(p - y)))


def pearson_r(predictions, labels) -> float:
    """Sample Pearson correlation coefficient."""
    p, y = _paired(predictions, labels)
    if p.size < 2:
        raise ValueError("Pearson correlation needs at least two pairs")
    pc = p - p.mean()
    yc = y - y.mean()
    denom = np.sqrt((pc @ pc) * (yc @ yc))
    if denom == 0:
        raise UndefinedCorrelationError("correlation undefined: a vector has zero variance")
    return float(np.clip((pc @ yc) / denom, -1.0, 1.0))


def pearson_pvalue(r: float, n: int) -> float:
    """Two-tailed p-value for a sample correlation, via the t approximation."""
    if n < 3:
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    stat = abs(r) * np.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * _student_t.sf(stat, df=n - 2))


def al_loss(predictions, labels, w: float) -> float:
    """Mean asymmetric linear loss with weight w on underestimates.

    Per instance: (pred - label) when overestimating, w * (label - pred)
    otherwise; w = 1 recovers the absolute error.
    """
    if not w > 0:
        raise ValueError(f"asymmetric linear weight must be positive, got {w}")
    p, y = _paired(predictions, labels)
    d = p - y
    return float(np.mean(np.where(d > 0, d, -w * d)))


def linex_loss(predictions, labels, w: float) -> float:
    """Mean linex loss exp(w d) - w d - 1 with d = pred - label.

    Nonnegative, zero only at d = 0; negative w penalizes underestimates
    exponentially.  Exponents above 700 would overflow and raise instead of
    silently returning inf.
    """
    if w == 0:
        raise ValueError("linex weight must be nonzero")
    p, y = _paired(predictions, labels)
    wd = w * (p - y)
    if np.any(wd > _EXP_GUARD):
        idx = np.flatnonzero(wd > _EXP_GUARD)
        raise LossOverflowError(
            f"linex exponent exceeds {_EXP_GUARD:g} for weight {w:g} "
            f"(max {float(np.max(wd)):.3g} at {idx.size} instance(s))",
            weight=w,
            max_exponent=float(np.max(wd)),
            indices=idx.tolist(),
        )
    return float(np.mean(np.exp(wd) - wd - 1.0))


@dataclass(frozen=True)
class EvalRecord:
    """Per-instance predictions plus aggregate scores for one evaluation set."""

    labels: np.ndarray
    predictions: np.ndarray
    log_densities: np.ndarray
    nlpd: float
    mae: float
    pearson: float
    pearson_p: float
    al: dict[float, float] = field(default_factory=dict)
    linex: dict[float, float] = field(default_factory=dict)
    linex_diverged: dict[float, bool] = field(default_factory=dict)
