"""Penalized logistic regression and the rounding pipelines used as baselines."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .dataset import split_folds
from .evaluation import RiskScoreModel, auc, log_loss
from .heuristics import dcd_polish, make_evaluator, sequential_round
from .loss import log1pexp_neg
from .problem import MaxModelSize, Sign, is_feasible, objective_value

log = logging.getLogger(__name__)

POST_PROCESSORS = ("Rd", "Rd+DCD", "SeqRd", "SeqRd+DCD", "RsRd", "RsRd+DCD", "Unit")
MIXING_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))
PATH_LENGTH = 100
PATH_RATIO = 1e-4
_MIN_MIX = 1e-3  # stands in for a = 0 when sizing the path


# ---------------------------------------------------------------- PLR

@dataclass
class PenalizedFit:
    coefficients: np.ndarray
    a: float
    g: float
    objective: float
    iterations: int
    residual: float
    converged: bool


def _smooth(lam, Z):
    m = Z @ lam
    f = float(np.sum(log1pexp_neg(m))) / (2 * len(m))
    w = -np.exp(-np.logaddexp(0.0, m))  # -sigmoid(-m)
    return f, (Z.T @ w) / (2 * len(m))


def _penalty(lam, a, g):
    b = lam[1:]
    return g * (a * np.abs(b).sum() + (1 - a) * float(b @ b))


def _prox(v, t, a, g, lo, hi):
    out = v.copy()
    b = v[1:]
    b = np.sign(b) * np.maximum(np.abs(b) - t * g * a, 0.0) / (1.0 + 2.0 * t * g * (1 - a))
    out[1:] = b
    # separable 1-D convex terms: clipping the prox is the prox of the constrained term
    return np.clip(out, lo, hi)


def _sign_box(d, signs):
    lo = np.full(d + 1, -np.inf)
    hi = np.full(d + 1, np.inf)
    for j, s in (signs or {}).items():
        if s > 0:
            lo[j] = 0.0
        elif s < 0:
            hi[j] = 0.0
    return lo, hi


def fit_penalized_logistic(data, a, g, signs=None, start=None, tol=1e-8, max_iter=20000):
    """Elastic-net logistic regression by accelerated proximal gradient.

    Minimizes (1/2n) Σ log(1 + exp(-y_i <λ, x_i>)) + g (a ||λ||_1 + (1-a) ||λ||_2^2)
    with an unpenalized intercept.

    Parameters
    ----------
    signs : dict {column index: +1 or -1}, enforced by projection
    start : warm start

    Returns
    -------
    PenalizedFit; ``converged`` is False when the iteration cap was reached
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError("mixing weight must lie in [0, 1]")
    if g < 0:
        raise ValueError("penalty weight must be non-negative")
    Z = data.margins
    d = data.d
    lo, hi = _sign_box(d, signs)
    x = np.zeros(d + 1) if start is None else np.clip(np.asarray(start, float), lo, hi)
    y = x.copy()
    tk = 1.0
    L = 1.0
    it = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        fy, gy = _smooth(y, Z)
        while True:
            xn = _prox(y - gy / L, 1.0 / L, a, g, lo, hi)
            dx = xn - y
            fx, _ = _smooth(xn, Z)
            if fx <= fy + gy @ dx + 0.5 * L * (dx @ dx) + 1e-15:
                break
            L *= 2.0
        # gradient mapping at x_new measures stationarity
        _, gx = _smooth(xn, Z)
        res = float(np.linalg.norm(xn - _prox(xn - gx, 1.0, a, g, lo, hi)))
        tn = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        mom = xn + ((tk - 1) / tn) * (xn - x)
        # restart momentum when the objective goes up
        if _smooth(xn, Z)[0] + _penalty(xn, a, g) > _smooth(x, Z)[0] + _penalty(x, a, g):
            tn, mom = 1.0, xn.copy()
        x, y, tk = xn, mom, tn
        L = max(L / 1.5, 1e-12)
        if res <= tol:
            break
    conv = res <= tol
    if not conv:
        log.warning("PLR did not converge (a=%g, g=%g, residual %.2e)", a, g, res)
    obj = _smooth(x, Z)[0] + _penalty(x, a, g)
    return PenalizedFit(x, float(a), float(g), float(obj), it, res, conv)


def penalty_max(data, a, signs=None):
    """Smallest g that zeroes every non-intercept coefficient."""
    Z = data.margins
    fit0 = fit_penalized_logistic(data, 1.0, 1e12, signs)
    _, grad = _smooth(fit0.coefficients, Z)
    gj = np.abs(grad[1:])
    lo, hi = _sign_box(data.d, signs)
    # a sign constraint keeps a coefficient at 0 when the gradient pushes the wrong way
    gj = np.where((lo[1:] == 0) & (grad[1:] > 0), 0.0, gj)
    gj = np.where((hi[1:] == 0) & (grad[1:] < 0), 0.0, gj)
    return float(gj.max()) / max(a, _MIN_MIX) if gj.size else 0.0


def penalty_path(data, a, n=PATH_LENGTH, ratio=PATH_RATIO, signs=None):
    gmax = penalty_max(data, a, signs)
    if gmax == 0.0:
        return np.zeros(1)
    return np.geomspace(gmax, gmax * ratio, n)


def fit_path(data, a, gs, signs=None):
    """Fits along a decreasing penalty sequence with warm starts."""
    fits, start = [], None
    for g in gs:
        f = fit_penalized_logistic(data, a, g, signs, start=start)
        fits.append(f)
        start = f.coefficients
    return fits


# ---------------------------------------------------------------- post-processing

def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def round_naive(lam, lb, ub):
    """Clamp to the box, then round to the nearest integer (halves away from zero)."""
    lam = np.clip(np.asarray(lam, dtype=np.float64), lb, ub)
    return _round_half_away(lam).astype(np.int64)


def round_rescaled(lam, lb, ub, target=5):
    """Scale so the largest non-intercept magnitude is ``target``, then round."""
    lam = np.asarray(lam, dtype=np.float64)
    m = np.max(np.abs(lam[1:])) if lam.size > 1 else 0.0
    if m == 0.0:
        raise ValueError("rescaled rounding needs a non-zero coefficient")
    return round_naive(lam * (target / m), lb, ub)


def refit_intercept(lam, data, lb=-np.inf, ub=np.inf):
    """Best integer intercept for fixed feature points."""
    lam = np.asarray(lam, dtype=np.float64).copy()
    base = data.features[:, 1:] @ lam[1:]
    y = data.labels

    def f(b):
        return float(np.mean(log1pexp_neg(y * (base + b))))

    r = minimize_scalar(f, bounds=(-50.0, 50.0), method="bounded", options={"xatol": 1e-10})
    cands = {int(np.clip(math.floor(r.x), lb, ub)), int(np.clip(math.ceil(r.x), lb, ub))}
    lam[0] = min(sorted(cands), key=f)
    return lam.astype(np.int64)


def unit_weights(lam, data=None, lb=-np.inf, ub=np.inf):
    """Points sign(λ_j) for j >= 1; the intercept is refit when data is given."""
    lam = np.asarray(lam, dtype=np.float64)
    out = np.sign(lam).astype(np.int64)
    out[0] = int(_round_half_away(np.clip(lam[0], lb, ub)))
    if data is not None:
        out = refit_intercept(out, data, lb, ub)
    return out


def postprocess(lam, method, spec, evaluator=None):
    """Integer vector from a real PLR solution; None when the method cannot run."""
    lb, ub = spec.coefs.lb, spec.coefs.ub
    if method not in POST_PROCESSORS:
        raise ValueError(f"unknown post-processor {method!r}; choose from {POST_PROCESSORS}")
    base, _, polish = method.partition("+")
    if base == "Rd":
        out = round_naive(lam, lb, ub)
    elif base == "RsRd":
        try:
            out = round_rescaled(lam, lb, ub)
        except ValueError:
            return None
    elif base == "SeqRd":
        cc = spec.compiled
        out = sequential_round(np.clip(lam, cc.lam_lb, cc.lam_ub), spec, evaluator=evaluator)
    else:
        out = unit_weights(lam, spec.data, lb[0], ub[0])
    if polish:
        if not is_feasible(out, spec)[0]:
            return out
        out = dcd_polish(out, spec, evaluator=evaluator)
    return out


# ---------------------------------------------------------------- pools

def constraint_classes(violated):
    """Coarse class names for a violated-constraint list."""
    out = set()
    for v in violated:
        if isinstance(v, MaxModelSize):
            out.add("size")
        elif isinstance(v, Sign):
            out.add("sign")
        elif v in ("coefficient set", "integrality"):
            out.add("box")
        else:
            out.add("operational")
    return out


@dataclass
class PoolResult:
    model: RiskScoreModel
    rows: list
    feasible_fraction: dict = field(default_factory=dict)

    @property
    def found(self):
        return self.model is not None


def default_grid(data, signs=None, mixing=MIXING_GRID, n=PATH_LENGTH):
    return [(float(a), float(g)) for a in mixing for g in penalty_path(data, a, n, signs=signs)]


def _signs_of(spec):
    names = list(spec.data.names)
    out = {}
    for c in spec.constraints:
        if isinstance(c, Sign):
            j = c.feature if isinstance(c.feature, (int, np.integer)) else names.index(c.feature)
            out[int(j)] = int(c.sign)
    return out


def _fits_by_grid(data, grid, signs):
    """Fit every (a, g), warm-starting along each a's decreasing g sequence."""
    out = {}
    by_a = {}
    for a, g in grid:
        by_a.setdefault(a, []).append(g)
    for a, gs in by_a.items():
        gs = sorted(set(gs), reverse=True)
        for g, f in zip(gs, fit_path(data, a, gs, signs)):
            out[(a, g)] = f
    return out


@dataclass
class PoolFits:
    """PLR fits on the full data and on each training fold, shared across post-processors."""

    grid: list
    full: dict
    folds: list  # per fold: (train spec, test data, fits)
    k: int
    seed: int


def fit_pool(spec, grid=None, k=5, seed=0, jobs=1):
    """PLR fits for every grid point on the full data and on each training fold.

    ``jobs > 1`` fits the folds in worker processes; results do not depend on it.
    """
    data = spec.data
    signs = _signs_of(spec)
    grid = list(grid) if grid is not None else default_grid(data, signs)
    if not grid:
        raise ValueError("empty parameter grid")
    parts = [data]
    tests = []
    if k:
        fa = split_folds(data, k, seed)
        for f in range(1, k + 1):
            tr, te = fa.train_test(f)
            parts.append(data.subset(tr))
            tests.append(data.subset(te))
    if jobs > 1 and len(parts) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            fits = list(ex.map(_fits_by_grid, parts, [grid] * len(parts), [signs] * len(parts)))
    else:
        fits = [_fits_by_grid(p, grid, signs) for p in parts]
    folds = [(spec.with_data(p), te, f) for p, te, f in zip(parts[1:], tests, fits[1:])]
    return PoolFits(grid, fits[0], folds, k, seed)


def pooled_pipeline(spec, method, grid=None, k=5, seed=0, report_path=None, header_lines=(), fits=None):
    """Fit a PLR pool, post-process each member, keep the feasible ones and
    return the one with the best mean K-fold test AUC (``k=0`` selects by
    training loss instead).

    Returns
    -------
    PoolResult; ``model`` is None when no member is feasible
    """
    data = spec.data
    pf = fits if fits is not None else fit_pool(spec, grid, k, seed)
    grid, full = pf.grid, pf.full
    ev = make_evaluator(spec)
    fa = pf.folds or None
    fold_specs = [(s, dte) for s, dte, _ in pf.folds]
    fold_fits = [f for _, _, f in pf.folds]
    fold_evs = [make_evaluator(s) for s, _ in fold_specs]
    rows = []
    best, best_auc, best_obj = None, -math.inf, math.inf
    for a, g in grid:
        lam = postprocess(full[(a, g)].coefficients, method, spec, ev)
        row = {"a": a, "g": g, "method": method, "feasible": False, "violations": "",
               "size": "", "train_loss": "", "objective": "", "cv_auc": ""}
        if lam is None:
            row["violations"] = "degenerate"
            rows.append(row)
            continue
        ok, bad = is_feasible(lam, spec)
        row["feasible"] = ok
        row["violations"] = ";".join(sorted(constraint_classes(bad)))
        row["size"] = int(np.count_nonzero(lam[1:]))
        model = RiskScoreModel(lam, data.names, {"method": method, "a": a, "g": g})
        row["train_loss"] = log_loss(model, data)
        if ok:
            row["objective"] = objective_value(lam, spec)
        if ok and fa is not None:
            aucs = []
            for (s, dte), fits, fev in zip(fold_specs, fold_fits, fold_evs):
                lf = postprocess(fits[(a, g)].coefficients, method, s, fev)
                if lf is None:
                    lf = np.zeros(spec.d + 1, dtype=np.int64)
                aucs.append(auc(RiskScoreModel(lf, data.names), dte))
            row["cv_auc"] = float(np.mean(aucs))
        rows.append(row)
        if ok:
            score = row["cv_auc"] if fa is not None else -row["train_loss"]
            obj = row["objective"]
            if score > best_auc or (score == best_auc and obj < best_obj):
                best, best_auc, best_obj = model, score, obj
    n = len(rows)
    frac = {"feasible": sum(r["feasible"] for r in rows) / n}
    for cls in ("size", "sign", "box", "operational"):
        frac[f"violates_{cls}"] = sum(cls in r["violations"].split(";") for r in rows) / n
    if report_path is not None:
        write_pool_report(rows, report_path, header_lines)
    if best is not None:
        best.provenance.update({"cv_auc": best_auc})
    return PoolResult(best, rows, frac)


def traditional_pipeline(spec, method, a=1.0, k=5, seed=0):
    """One PLR path (lasso by default) followed by a single post-processor."""
    grid = [(a, g) for g in penalty_path(spec.data, a, signs=_signs_of(spec))]
    return pooled_pipeline(spec, method, grid, k=k, seed=seed)


def write_pool_report(rows, path, header_lines=()):
    cols = ["a", "g", "method", "feasible", "violations", "size", "train_loss", "objective", "cv_auc"]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in r.items()})


# ---------------------------------------------------------------- Platt scaling

def platt_scale(scores, labels):
    """(A, B) minimizing the logistic loss of sigmoid(A s + B)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.where(np.asarray(labels) > 0, 1.0, -1.0)
    if np.all(y > 0) or np.all(y < 0):
        raise ValueError("Platt scaling needs both classes")

    def f(p):
        m = y * (p[0] * s + p[1])
        w = -np.exp(-np.logaddexp(0.0, m))
        return float(np.mean(log1pexp_neg(m))), np.array([np.mean(w * y * s), np.mean(w * y)])

    r = minimize(f, np.array([1.0, 0.0]), jac=True, method="L-BFGS-B")
    A, B = (float(v) for v in r.x)
    if np.ptp(s) == 0.0:
        # A and B are not separately identified; keep A·s + B at the base-rate log-odds
        rate = float(np.mean(y > 0))
        A, B = 0.0, math.log(rate / (1 - rate))
    return A, B
