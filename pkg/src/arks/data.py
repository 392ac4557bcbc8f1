"""Dataset ingestion and synthetic generators.

CSV layout contract: UTF-8, first row header, last column target, all
other columns float64 features.  Classification targets must be integer
class labels.  Standardization statistics always come from the training
split only.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import ConfigError, DataError
from .models import RlsProblem, Sample


def load_csv(path, classification: bool = False) -> list[Sample]:
    """Parse samples from a CSV file; raises DataError with the offending
    line number on ragged rows or non-numeric cells."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 2:
        raise DataError(f"{path}: need at least one feature column and one target column")
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(
                f"{path}:{lineno}: ragged row with {len(row)} cells, header has {len(header)}"
            )
        try:
            feats = np.array([float(c) for c in row[:-1]])
        except ValueError as err:
            raise DataError(f"{path}:{lineno}: non-numeric feature cell ({err})") from err
        raw = row[-1]
        try:
            y = float(raw)
        except ValueError as err:
            raise DataError(f"{path}:{lineno}: non-numeric target cell {raw!r}") from err
        if classification:
            if y != int(y):
                raise DataError(f"{path}:{lineno}: classification target {raw!r} is not an integer")
            y = int(y)
        samples.append(Sample(feats, y))
    if not samples:
        raise DataError(f"{path}: no data rows below the header")
    return samples


def write_csv(path, samples: list[Sample]):
    """Inverse of load_csv (feature columns x0.. then target y)."""
    if not samples:
        raise DataError("nothing to write")
    dim = samples[0].x.size
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dim)] + ["y"])
        for s in samples:
            w.writerow([repr(float(v)) for v in s.x] + [repr(s.y) if isinstance(s.y, float) else s.y])


def standardize(train: list[Sample], *others):
    """Zero-mean unit-variance features, statistics from the train split only.

    Returns (train', others'..., (mean, std)); zero-variance columns keep
    their scale.
    """
    X = np.stack([s.x for s in train])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)

    def apply(split):
        return [Sample((s.x - mean) / std, s.y) for s in split]

    out = [apply(train)] + [apply(o) for o in others]
    return (*out, (mean, std))


# -- synthetic datasets --------------------------------------------------


def two_moons(n: int, noise: float, seed: int) -> list[Sample]:
    """Two interleaving half-circles, one per class, with Gaussian noise."""
    if n < 1 or noise < 0:
        raise ConfigError("two_moons needs n >= 1 and noise >= 0")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    t0 = rng.uniform(0.0, np.pi, size=n0)
    t1 = rng.uniform(0.0, np.pi, size=n - n0)
    pts0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    pts1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    X = np.concatenate([pts0, pts1]) + noise * rng.normal(size=(n, 2))
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n - n0, dtype=int)])
    order = rng.permutation(n)
    return [Sample(X[i], int(y[i])) for i in order]


def linear_regression_data(n: int, dim: int, noise: float, seed: int) -> list[Sample]:
    """y = w.x + b + noise, with a seeded random ground-truth (w, b)."""
    if n < 1 or dim < 1 or noise < 0:
        raise ConfigError("invalid linear regression spec")
    rng = np.random.default_rng(seed)
    w = rng.normal(size=dim)
    b = rng.normal()
    X = rng.normal(size=(n, dim))
    y = X @ w + b + noise * rng.normal(size=n)
    return [Sample(X[i], float(y[i])) for i in range(n)]


def make_rls_problem(rows: int, cols: int, seed: int, drift_scale: float = 0.5,
                     rank_one: bool = True) -> RlsProblem:
    """Seeded random uncertain least-squares instance A(xi) = A0 + xi*A1.

    With ``rank_one`` the drift A1 has rank 1, so a parameter direction
    immune to the uncertainty exists and the fit-vs-robustness trade-off
    between the training methods is sharp.
    """
    rng = np.random.default_rng(seed)
    A0 = rng.normal(size=(rows, cols))
    if rank_one:
        u = rng.normal(size=rows)
        v = rng.normal(size=cols)
        A1 = drift_scale * np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
    else:
        A1 = drift_scale * rng.normal(size=(rows, cols))
    b = rng.normal(size=rows)
    return RlsProblem(A0, A1, b)


def sample_xis(n: int, seed: int) -> np.ndarray:
    """Uniform draws of the uncertain scalar on [-1, 1]."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=n)
