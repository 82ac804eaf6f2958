"""Loss-aware rounding and polishing on the coefficient lattice."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import make_rng
from .loss import LossEvaluator, example_loss_bounds
from .problem import CoefficientSet, MaxModelSize, is_feasible

log = logging.getLogger(__name__)

GOLDEN_MIN = 8  # brute force for ranges with at most this many values
_IMPROVE = 1e-13


def make_evaluator(spec, use_table=True):
    cc = spec.compiled
    box = CoefficientSet(cc.lam_lb, cc.lam_ub)
    return LossEvaluator(spec.data, box, r_max=cc.r_max, use_table=use_table)


@dataclass
class RoundingLattice:
    """{floor(ρ_j), ceil(ρ_j)} per component, clipped to the box."""

    anchor: np.ndarray
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def around(cls, rho, lb, ub):
        rho = np.asarray(rho, dtype=np.float64)
        return cls(rho, np.clip(np.floor(rho), lb, ub).astype(np.int64), np.clip(np.ceil(rho), lb, ub).astype(np.int64))

    def contains(self, lam):
        lam = np.asarray(lam)
        return bool(np.all((lam == self.low) | (lam == self.high)))

    def points(self):
        axes = [sorted({int(a), int(b)}) for a, b in zip(self.low, self.high)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return grid.reshape(-1, len(axes))


# ---------------------------------------------------------------- DCD

class _Coordinate:
    """Objective along one coordinate with the others held fixed."""

    def __init__(self, ev, s, j, cur):
        self.ev, self.s, self.j, self.cur = ev, s, j, cur
        self.cache = {}

    def losses(self, ts):
        need = [t for t in ts if t not in self.cache]
        if need:
            vals = self.ev.coord_values(self.s, self.j, np.array(need, dtype=np.int64) - self.cur)
            self.cache.update(zip(need, vals))
        return [self.cache[t] for t in ts]


def _piece_min(coord, a, b, use_golden):
    """Argmin of the (convex) loss over integers a..b; ties to the smallest value."""
    if b - a + 1 <= GOLDEN_MIN or not use_golden:
        ts = list(range(a, b + 1))
        vals = coord.losses(ts)
        k = int(np.argmin(vals))
        return ts[k], vals[k]
    mid = (a + b) // 2
    fa, fm, fb = coord.losses([a, mid, b])
    if fm > max(fa, fb):  # not unimodal; should not happen for a convex slice
        log.debug("unimodality probe failed on coordinate %d, using brute force", coord.j)
        return _piece_min(coord, a, b, False)
    lo, hi = a, b
    while hi - lo > 3:
        m1 = lo + int(round(0.381966 * (hi - lo)))
        m2 = lo + int(round(0.618034 * (hi - lo)))
        if m2 <= m1:
            m2 = m1 + 1
        f1, f2 = coord.losses([m1, m2])
        if f1 <= f2:
            hi = m2
        else:
            lo = m1
    ts = list(range(lo, hi + 1))
    vals = coord.losses(ts)
    k = int(np.argmin(vals))
    return ts[k], vals[k]


def _best_move(ev, s, lam, j, lb, ub, zero_ok, nonzero_ok, C0, nnz_other, use_golden=True):
    """Best value for coordinate j and its objective."""
    coord = _Coordinate(ev, s, j, int(lam[j]))
    best_t, best_v = None, math.inf
    if j == 0:
        pieces = [(lb, ub, 0.0)]
    else:
        pieces = []
        if nonzero_ok:
            if lb <= -1:
                pieces.append((lb, -1, C0))
            if ub >= 1:
                pieces.append((1, ub, C0))
        if zero_ok and lb <= 0 <= ub:
            pieces.append((0, 0, 0.0))
        pieces.sort()
    for a, b, pen in pieces:
        t, f = _piece_min(coord, a, b, use_golden)
        v = f + pen + C0 * nnz_other
        if v < best_v:
            best_t, best_v = t, v
    return best_t, best_v


def _size_tight(spec, lam):
    ks = [c.k for c in spec.constraints if isinstance(c, MaxModelSize)]
    return bool(ks) and np.count_nonzero(lam[1:]) >= min(ks)


def dcd_polish(lam, spec, directions=None, evaluator=None, use_golden=True, return_info=False):
    """Discrete coordinate descent to a 1-opt point.

    Parameters
    ----------
    lam : feasible integer vector
    directions : coordinates allowed to move (default: all; only the
        intercept and the non-zero ones when a size constraint is tight)

    Returns
    -------
    integer vector (and a dict of diagnostics if ``return_info``)
    """
    ev = evaluator or make_evaluator(spec)
    lam = np.asarray(lam)
    if np.any(lam != np.round(lam)):
        raise ValueError("dcd_polish needs an integer vector")
    lam = lam.astype(np.int64)
    ok, bad = is_feasible(lam, spec)
    if not ok:
        raise ValueError(f"dcd_polish needs a feasible start, violated: {bad}")
    cc = spec.compiled
    lb, ub = cc.lam_lb, cc.lam_ub
    C0 = spec.C0
    checker = spec.checker
    d = spec.d
    s = ev.scores(lam)
    obj = ev.from_scores(s) + C0 * np.count_nonzero(lam[1:])
    obj0 = obj
    iters = 0
    while True:
        if directions is not None:
            J = sorted(int(j) for j in directions)
        elif _size_tight(spec, lam):
            J = [0] + [j for j in range(1, d + 1) if lam[j] != 0]
        else:
            J = list(range(d + 1))
        alpha = lam[1:] != 0
        nnz = int(alpha.sum())
        best = (obj, None, None)
        for j in J:
            if j == 0:
                zero_ok = nonzero_ok = True
                nnz_other = nnz
            else:
                a0 = alpha.copy()
                a0[j - 1] = False
                a1 = alpha.copy()
                a1[j - 1] = True
                zero_ok = checker.ok(a0)
                nonzero_ok = checker.ok(a1)
                nnz_other = nnz - int(alpha[j - 1])
            t, v = _best_move(ev, s, lam, j, int(lb[j]), int(ub[j]), zero_ok, nonzero_ok, C0, nnz_other, use_golden)
            if t is not None and t != lam[j] and v < best[0] - _IMPROVE * max(1.0, abs(obj)):
                best = (v, j, t)
        if best[1] is None:
            break
        v, j, t = best
        s = s + (t - lam[j]) * (ev.Zi[:, j] if s.dtype == np.int64 else ev.Z[:, j])
        lam = lam.copy()
        lam[j] = t
        obj = v
        iters += 1
    if return_info:
        return lam, {"iterations": iters, "objective": obj, "start_objective": obj0}
    return lam


# ---------------------------------------------------------------- rounding

def sequential_round(rho, spec, evaluator=None, return_info=False):
    """Greedy rounding: commit the best (component, down/up) pair at each step.

    Ties go to the lowest component index and to rounding down.
    """
    ev = evaluator or make_evaluator(spec)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (spec.d + 1,):
        raise ValueError("dimension mismatch")
    cc = spec.compiled
    lb = cc.lam_lb.astype(np.float64)
    ub = cc.lam_ub.astype(np.float64)
    lam = rho.copy()
    near = np.abs(lam - np.round(lam)) <= 1e-9
    lam[near] = np.round(lam[near])
    J = [j for j in range(lam.size) if not near[j]]
    Z = ev.Z
    s = Z @ lam
    C0 = spec.C0
    n_evals = 0
    steps = []
    while J:
        nz = lam[1:] != 0
        nnz = int(nz.sum())
        best = None
        for j in J:
            down = max(math.floor(lam[j]), lb[j])
            up = min(math.ceil(lam[j]), ub[j])
            vals = ev.coord_values(s, j, np.array([down - lam[j], up - lam[j]]))
            n_evals += 2
            base = nnz - (int(nz[j - 1]) if j > 0 else 0)
            for t, f in ((down, vals[0]), (up, vals[1])):
                v = f + C0 * (base + (1 if (j > 0 and t != 0) else 0))
                if best is None or v < best[0]:
                    best = (v, j, t)
        v, j, t = best
        s = s + (t - lam[j]) * Z[:, j]
        lam[j] = t
        J.remove(j)
        steps.append((j, t, v))
    out = np.round(lam).astype(np.int64)
    if return_info:
        return out, {"loss_evaluations": n_evals, "steps": steps}
    return out


# ---------------------------------------------------------------- subsampling

def subsample_threshold(delta, m, n, delta_max, d):
    """ε_δ for comparing a subsample objective with the full-data one."""
    if not 0 < m <= n:
        raise ValueError(f"need 0 < m <= n, got m={m}, n={n}")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if delta_max < 0:
        raise ValueError("delta_max must be non-negative")
    return delta_max * math.sqrt((math.log(1.0 / delta) + d * math.log(2.0)) / 2.0 / m * (1.0 - (m / n) ** 2))


def loss_spread(spec):
    """Conservative Δ_max: largest per-example upper loss minus smallest lower loss."""
    cc = spec.compiled
    lo, hi = example_loss_bounds(spec.data, CoefficientSet(cc.lam_lb, cc.lam_ub), cc.r_max)
    return float(hi.max() - lo.min())


def subsampled_round(rho, spec, m, delta, V_max, rng=None, return_info=False):
    """Sequential rounding on m examples drawn without replacement.

    Proposes the rounded point only if its subsample objective beats
    V_max - ε_δ and its full-data objective beats V_max.
    """
    data = spec.data
    n = data.n
    rng = rng if rng is not None else make_rng(0)
    if not 0 < m <= n:
        raise ValueError(f"need 0 < m <= n, got m={m}, n={n}")
    idx = np.sort(rng.choice(n, size=m, replace=False))
    rest = np.setdiff1d(np.arange(n), idx)
    sub = spec.with_data(data.subset(idx))
    ev = make_evaluator(sub, use_table=False)
    lam, info = sequential_round(rho, sub, evaluator=ev, return_info=True)
    rows = info["loss_evaluations"] * m
    pen = spec.C0 * np.count_nonzero(lam[1:])
    loss_m = ev.value(lam)
    rows += m
    eps = subsample_threshold(delta, m, n, loss_spread(spec), spec.d)
    out = None
    V_n = None
    if loss_m + pen < V_max - eps:
        if len(rest):
            Zr = data.margins[rest]
            from . import _kernels

            loss_r = float(_kernels.K.loss_scores(Zr @ lam.astype(np.float64)))
            rows += len(rest)
        else:
            loss_r = 0.0
        V_n = (m * loss_m + len(rest) * loss_r) / n + pen
        if V_n < V_max:
            out = lam
    if return_info:
        return out, {"candidate": lam, "V_m": loss_m + pen, "V_n": V_n, "epsilon": eps, "rows": rows}
    return out
