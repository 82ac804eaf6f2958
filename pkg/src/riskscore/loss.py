"""Normalized logistic loss, cuts, score/loss bounds and the integer lookup table."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels


@dataclass(frozen=True, eq=False)
class Cut:
    """Supporting hyperplane l(λ') >= value + <gradient, λ' - anchor>."""

    anchor: np.ndarray
    value: float
    gradient: np.ndarray

    def at(self, lam):
        return self.value + float(self.gradient @ (np.asarray(lam, float) - self.anchor))

    @property
    def offset(self):
        """Constant term so that the cut reads <gradient, λ> + offset."""
        return self.value - float(self.gradient @ self.anchor)


@dataclass(frozen=True, eq=False)
class ScoreBounds:
    s_min_i: np.ndarray
    s_max_i: np.ndarray

    @property
    def s_min(self):
        return float(self.s_min_i.min())

    @property
    def s_max(self):
        return float(self.s_max_i.max())


@dataclass(frozen=True, eq=False)
class LossTable:
    """log(1 + exp(-s)) for every integer s in [offset, offset + len(values) - 1]."""

    offset: int
    values: np.ndarray

    @property
    def s_max(self):
        return self.offset + len(self.values) - 1

    def __len__(self):
        return len(self.values)

    def __call__(self, s):
        return self.values[np.asarray(s, dtype=np.int64) - self.offset]


class UnsupportedConfiguration(ValueError):
    pass


def _vec(lam, data):
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (data.d + 1,):
        raise ValueError(f"coefficient vector has shape {lam.shape}, expected ({data.d + 1},)")
    if not np.all(np.isfinite(lam)):
        raise ValueError("coefficient vector must be finite")
    return lam


def log1pexp_neg(s):
    """Elementwise log(1 + exp(-s)), safe for any magnitude."""
    s = np.asarray(s, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(s))) + np.maximum(-s, 0.0)


def loss_value(lam, data):
    lam = _vec(lam, data)
    return float(_kernels.K.loss_scores(data.margins @ lam))


def loss_cut(lam, data):
    lam = _vec(lam, data)
    val, grad = _kernels.K.loss_grad(data.margins, lam)
    return Cut(lam.copy(), float(val), np.asarray(grad))


def score_extremes(data, coefset, r_max=None):
    """Per-example min/max of <λ, x_i> over the box (optionally at most r_max non-zeros)."""
    X = data.features
    lb = coefset.lb.astype(np.float64)
    ub = coefset.ub.astype(np.float64)
    a = X[:, 1:] * lb[1:]
    b = X[:, 1:] * ub[1:]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    d = X.shape[1] - 1
    if r_max is not None and r_max < d:
        r = max(int(r_max), 0)
        lo = np.sort(lo, axis=1)[:, :r]
        hi = -np.sort(-hi, axis=1)[:, :r]
    s_min = lb[0] + lo.sum(axis=1)
    s_max = ub[0] + hi.sum(axis=1)
    return ScoreBounds(s_min, s_max)


def example_loss_bounds(data, coefset, r_max=None):
    """Per-example lower and upper loss over the box."""
    sb = score_extremes(data, coefset, r_max)
    pos = data.labels > 0
    m_lo = np.where(pos, sb.s_min_i, -sb.s_max_i)
    m_hi = np.where(pos, sb.s_max_i, -sb.s_min_i)
    return log1pexp_neg(m_hi), log1pexp_neg(m_lo)


def loss_range(data, coefset, r_max=None):
    lo, hi = example_loss_bounds(data, coefset, r_max)
    return float(np.mean(lo)), float(np.mean(hi))


def margin_range(data, coefset, r_max=None):
    sb = score_extremes(data, coefset, r_max)
    pos = data.labels > 0
    m_lo = np.where(pos, sb.s_min_i, -sb.s_max_i)
    m_hi = np.where(pos, sb.s_max_i, -sb.s_min_i)
    return int(np.floor(m_lo.min())), int(np.ceil(m_hi.max()))


def build_lookup(data, coefset, r_max=None):
    """Table of log(1+exp(-s)) over the integer margins reachable in the box."""
    if not data.integer_valued:
        raise UnsupportedConfiguration("lookup table needs integer-valued features")
    lo, hi = margin_range(data, coefset, r_max)
    s = np.arange(lo, hi + 1, dtype=np.float64)
    vals = log1pexp_neg(s)
    vals.setflags(write=False)
    return LossTable(lo, vals)


class LossEvaluator:
    """Loss oracle bound to one dataset, with optional lookup table.

    Keeps counters: ``n_evals`` (loss evaluations), ``n_rows`` (per-example
    loss terms computed) and ``cut_time`` (seconds spent in value/cut calls).
    """

    def __init__(self, data, coefset=None, r_max=None, use_table=True, backend=None):
        self.data = data
        self.Z = data.margins
        self.n = data.n
        self.K = _kernels.K if backend is None else _kernels.get_backend(backend)
        self.table = None
        if use_table and coefset is not None and data.integer_valued:
            self.table = build_lookup(data, coefset, r_max)
            self.Zi = self.Z.astype(np.int64)
        self.n_evals = 0
        self.n_rows = 0
        self.cut_time = 0.0
        self.n_cuts = 0

    # scores -----------------------------------------------------------
    def scores(self, lam):
        if self.table is not None and _is_int(lam):
            return self.Zi @ np.asarray(lam, dtype=np.int64)
        return self.Z @ np.asarray(lam, dtype=np.float64)

    def from_scores(self, s):
        self.n_evals += 1
        self.n_rows += s.shape[0]
        if self.table is not None and s.dtype == np.int64:
            if s.min() >= self.table.offset and s.max() <= self.table.s_max:
                return float(self.K.loss_table(s, self.table.values, self.table.offset))
        return float(self.K.loss_scores(np.asarray(s, dtype=np.float64)))

    def value(self, lam):
        t = time.perf_counter()
        v = self.from_scores(self.scores(lam))
        self.cut_time += time.perf_counter() - t
        return v

    def cut(self, lam):
        t = time.perf_counter()
        lam = np.asarray(lam, dtype=np.float64)
        val, grad = self.K.loss_grad(self.Z, lam)
        if self.table is not None and _is_int(lam):
            val = self.from_scores(self.scores(lam))
        else:
            self.n_evals += 1
            self.n_rows += self.n
        self.n_cuts += 1
        self.cut_time += time.perf_counter() - t
        return Cut(lam.copy(), float(val), np.asarray(grad))

    def coord_values(self, s, j, deltas):
        """Loss after moving coordinate j by each delta, starting from scores s."""
        deltas = np.asarray(deltas)
        self.n_evals += len(deltas)
        self.n_rows += len(deltas) * self.n
        if self.table is not None and s.dtype == np.int64:
            z = self.Zi[:, j]
            zmax = int(np.abs(z).max()) if len(z) else 0
            dmax = int(np.abs(deltas).max()) if len(deltas) else 0
            lo, hi = int(s.min()) - zmax * dmax, int(s.max()) + zmax * dmax
            if lo >= self.table.offset and hi <= self.table.s_max:
                return self.K.coord_losses_table(s, np.ascontiguousarray(z), deltas.astype(np.int64),
                                                 self.table.values, self.table.offset)
        return self.K.coord_losses(np.asarray(s, np.float64), np.ascontiguousarray(self.Z[:, j]),
                                   deltas.astype(np.float64))


def _is_int(lam):
    lam = np.asarray(lam)
    return lam.dtype.kind in "iu" or bool(np.all(lam == np.round(lam)))
