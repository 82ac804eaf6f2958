"""Datasets, folds and the nested synthetic generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INTERCEPT_NAME = "(Intercept)"
# documented generator for every seeded draw in the package
RNG_ALGORITHM = "numpy.random.PCG64"


class DataError(ValueError):
    """Raised for malformed or invalid input data."""


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design matrix with an intercept column and labels in {-1, +1}.

    Parameters
    ----------
    features : (n, d+1) array, column 0 identically 1
    labels : (n,) array of -1/+1
    names : d+1 names, names[0] == "(Intercept)"
    """

    features: np.ndarray
    labels: np.ndarray
    names: tuple
    integer_valued: bool = field(init=False)

    def __post_init__(self):
        X = _frozen(self.features)
        y = _frozen(self.labels)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError("features must be a non-empty 2-D array")
        if y.shape != (X.shape[0],):
            raise DataError(f"labels has shape {y.shape}, expected ({X.shape[0]},)")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        if not np.all(X[:, 0] == 1.0):
            raise DataError("column 0 must be the intercept (all ones)")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise DataError("labels must be in {-1, +1}")
        names = tuple(str(s) for s in self.names)
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} names for {X.shape[1]} columns")
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "integer_valued", bool(np.all(X == np.round(X))))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1] - 1

    @property
    def margins(self):
        """y_i * x_i as an (n, d+1) array (cached)."""
        Z = self.__dict__.get("_margins")
        if Z is None:
            Z = np.ascontiguousarray(self.labels[:, None] * self.features)
            Z.setflags(write=False)
            self.__dict__["_margins"] = Z
        return Z

    @classmethod
    def from_arrays(cls, X, y, names=None):
        """Build from a feature matrix *without* intercept and 0/1 or -1/+1 labels."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = _map_labels(np.asarray(y, dtype=np.float64))
        if names is None:
            names = [f"x{j}" for j in range(1, X.shape[1] + 1)]
        full = np.hstack([np.ones((X.shape[0], 1)), X])
        return cls(full, y, (INTERCEPT_NAME, *names))

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows], self.names)


def _map_labels(y):
    vals = set(np.unique(y).tolist())
    if vals <= {0.0, 1.0}:
        return np.where(y > 0, 1.0, -1.0)
    if vals <= {-1.0, 1.0}:
        return y.copy()
    raise DataError(f"labels must be in {{0,1}} or {{-1,+1}}, found {sorted(vals)}")


def load_csv(path, outcome_column=None):
    """Read a header-first CSV; the outcome defaults to the first column."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    # blank lines and "#" header lines (written by this package) are skipped
    rows = [r for r in rows if r and any(c.strip() for c in r) and not r[0].lstrip().startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if outcome_column is None:
        outcome_column = header[0]
    if outcome_column not in header:
        raise DataError(f"{path}: outcome column {outcome_column!r} not in header")
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    k = header.index(outcome_column)
    vals = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i}, column {header[j]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {i}, column {header[j]!r}: missing or non-finite value")
            vals[i - 2, j] = v
    y = vals[:, k]
    feats = [j for j in range(len(header)) if j != k]
    try:
        y = _map_labels(y)
    except DataError as e:
        raise DataError(f"{path}: column {outcome_column!r}: {e}") from None
    X = np.hstack([np.ones((len(y), 1)), vals[:, feats]])
    return Dataset(X, y, (INTERCEPT_NAME, *[header[j] for j in feats]))


def write_csv(data, path, outcome_column="y", header_lines=()):
    """Write data back in the load_csv layout (labels as 0/1).

    ``repr`` of floats round-trips exactly, so reload is bit-identical.
    """
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow([outcome_column, *data.names[1:]])
        for yi, xi in zip(data.labels, data.features[:, 1:]):
            w.writerow([int(yi > 0), *(_fmt(v) for v in xi)])


def _fmt(v):
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


def load_bundled(name="breastcancer"):
    """Datasets shipped with the package (currently only breastcancer)."""
    return load_csv(Path(__file__).parent / "data" / f"{name}.csv")


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    folds: np.ndarray  # 1..K per example
    k: int
    seed: int

    def train_test(self, fold):
        test = self.folds == fold
        return np.flatnonzero(~test), np.flatnonzero(test)


def split_folds(data, k, seed):
    """Stratified K folds; each class is dealt round-robin after a seeded shuffle."""
    if k < 2 or k > data.n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={data.n}")
    pos = np.flatnonzero(data.labels > 0)
    neg = np.flatnonzero(data.labels < 0)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes must be present")
    rng = make_rng(seed)
    folds = np.zeros(data.n, dtype=np.int64)
    # positives fill folds 0,1,..; negatives continue where positives stopped
    # so that fold sizes stay balanced too
    start = 0
    for idx in (pos, neg):
        idx = rng.permutation(idx)
        folds[idx] = (start + np.arange(len(idx))) % k
        start = (start + len(idx)) % k
    folds += 1
    if len(np.unique(folds)) != k:
        raise ValueError("some fold is empty")
    return FoldAssignment(folds, k, seed)


def simulate_nested(original, dims, sizes, seed):
    """Nested synthetic datasets built from a 0..10 integer dataset.

    Returns a dict mapping (n, d) to Dataset; every smaller dataset is the
    leading block of the largest one.
    """
    dims = [int(v) for v in dims]
    sizes = [int(v) for v in sizes]
    if not dims or not sizes or dims != sorted(dims) or sizes != sorted(sizes):
        raise ValueError("dims and sizes must be non-empty and increasing")
    Xo = original.features[:, 1:]
    if not original.integer_valued or Xo.min() < 0 or Xo.max() > 10:
        raise DataError("original features must be integers in [0, 10]")
    d0 = original.d
    d_max, n_max = dims[-1], sizes[-1]
    rng = make_rng(seed)

    m_full = d_max // d0
    m_rem = d_max - m_full * d0
    cols = [rng.permutation(d0) for _ in range(m_full)]
    cols.append(rng.choice(d0, size=m_rem, replace=False))
    cols = np.concatenate(cols).astype(np.int64)

    rows = rng.integers(0, original.n, size=n_max)
    noise = rng.normal(0.0, 0.5, size=(n_max, d_max))
    X = np.clip(np.rint(Xo[rows][:, cols] + noise), 0, 10)
    y = original.labels[rows]
    base = original.names[1:]
    names, seen = [], {}
    for c in cols:
        seen[c] = seen.get(c, 0) + 1
        names.append(f"{base[c]}_{seen[c]}")
    full = np.hstack([np.ones((n_max, 1)), X])

    out = {}
    for d in dims:
        for n in sizes:
            out[(n, d)] = Dataset(full[:n, : d + 1], y[:n], (INTERCEPT_NAME, *names[:d]))
    return out
