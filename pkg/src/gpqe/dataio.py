"""Reading and writing the flat text formats used by the experiment harness.

Features are whitespace- or tab-separated floats, one row per instance;
labels are one float per line; sentence lengths (optional) are one positive
number per line.  When lengths are supplied the response becomes
label / length, i.e. raw post-editing times are normalized to rates.
"""

from __future__ import annotations

import os

import numpy as np

from .exceptions import DataError
from .gp import Dataset


def _read_lines(path) -> list[tuple[int, str]]:
    if not os.path.exists(path):
        raise DataError("file not found", path=path)
    out = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            stripped = raw.strip()
            if stripped:
                out.append((lineno, stripped))
    return out


def _parse_float(token: str, path, line: int, column: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"could not parse {token!r} as a number", path, line, column) from None
    if not np.isfinite(value):
        raise DataError(f"non-finite value {token!r}", path, line, column)
    return value


def read_feature_matrix(path) -> np.ndarray:
    """Parse a features file into an (n, d) float matrix."""
    rows = []
    width = None
    for lineno, text in _read_lines(path):
        tokens = text.split()
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise DataError(
                f"row has {len(tokens)} columns, expected {width}", path, lineno
            )
        rows.append([_parse_float(tok, path, lineno, col + 1) for col, tok in enumerate(tokens)])
    if not rows:
        raise DataError("no feature rows found", path=path)
    return np.asarray(rows, dtype=float)


def read_column(path, name: str) -> np.ndarray:
    """Parse a one-value-per-line file into a float vector."""
    values = []
    for lineno, text in _read_lines(path):
        tokens = text.split()
        if len(tokens) != 1:
            raise DataError(f"expected one {name} per line, got {len(tokens)} tokens", path, lineno)
        values.append(_parse_float(tokens[0], path, lineno, 1))
    if not values:
        raise DataError(f"no {name} values found", path=path)
    return np.asarray(values, dtype=float)


def load_dataset(features_path, labels_path, lengths_path=None) -> Dataset:
    """Load features and labels; normalize labels by lengths when given."""
    features = read_feature_matrix(features_path)
    labels = read_column(labels_path, "label")
    if labels.size != features.shape[0]:
        raise DataError(
            f"{features.shape[0]} feature rows but {labels.size} labels",
            path=labels_path,
        )
    responses = labels
    if lengths_path is not None:
        lengths = read_column(lengths_path, "length")
        if lengths.size != labels.size:
            raise DataError(
                f"{labels.size} labels but {lengths.size} lengths", path=lengths_path
            )
        bad = np.flatnonzero(lengths <= 0)
        if bad.size:
            raise DataError("non-positive length", path=lengths_path, line=int(bad[0]) + 1)
        responses = labels / lengths
    return Dataset(features=features, responses=responses)


def write_feature_matrix(path, features: np.ndarray) -> None:
    np.savetxt(path, np.asarray(features, dtype=float), fmt="%.17g", delimiter="\t")


def write_column(path, values: np.ndarray) -> None:
    np.savetxt(path, np.asarray(values, dtype=float), fmt="%.17g")
