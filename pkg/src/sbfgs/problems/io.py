"""Readers for LIBSVM and headered CSV classification files."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class DatasetParseError(ValueError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = str(path)
        self.line = line


def _label(token, path, lineno):
    try:
        v = float(token)
    except ValueError:
        raise DatasetParseError(path, lineno, f"bad label {token!r}") from None
    if v != int(v) or v < 0:
        raise DatasetParseError(path, lineno, f"label {token!r} is not a nonnegative integer")
    return int(v)


def read_libsvm(path, n_features=None):
    """Parse ``label idx:val ...`` lines (1-based indices) into dense arrays."""
    rows, labels = [], []
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            labels.append(_label(tokens[0], path, lineno))
            entries = {}
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    j = int(idx)
                    v = float(val)
                except ValueError:
                    raise DatasetParseError(path, lineno, f"malformed entry {tok!r}") from None
                if j < 1:
                    raise DatasetParseError(path, lineno, f"index {j} is not 1-based")
                if n_features is not None and j > n_features:
                    raise DatasetParseError(
                        path, lineno, f"index {j} exceeds n_features={n_features}")
                entries[j - 1] = v
                max_idx = max(max_idx, j)
            rows.append(entries)
    if not rows:
        raise DatasetParseError(path, 0, "empty file")
    f = n_features if n_features is not None else max_idx
    X = np.zeros((len(rows), f))
    for i, entries in enumerate(rows):
        for j, v in entries.items():
            X[i, j] = v
    return X, np.asarray(labels, dtype=np.int64)


def read_csv(path):
    """Header row, real feature columns, integer label in the last column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetParseError(path, 0, "empty file")
        width = len(header)
        if width < 2:
            raise DatasetParseError(path, 1, "need at least one feature and a label column")
        feats, labels = [], []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DatasetParseError(
                    path, lineno, f"expected {width} columns, found {len(row)}")
            try:
                feats.append([float(c) for c in row[:-1]])
            except ValueError as exc:
                raise DatasetParseError(path, lineno, str(exc)) from None
            labels.append(_label(row[-1], path, lineno))
    if not feats:
        raise DatasetParseError(path, 1, "no data rows")
    X = np.asarray(feats, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DatasetParseError(path, 0, "non-finite feature values")
    return X, np.asarray(labels, dtype=np.int64)


def read_dataset(path, format=None, n_features=None):
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "libsvm"
    if format == "csv":
        return read_csv(path)
    if format == "libsvm":
        return read_libsvm(path, n_features=n_features)
    raise ValueError(f"unknown dataset format {format!r}")
