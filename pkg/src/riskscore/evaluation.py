"""Risk models, calibration and rank metrics, reliability diagrams, risk tables
and cross-validation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .dataset import INTERCEPT_NAME, split_folds
from .loss import log1pexp_neg

log = logging.getLogger(__name__)

AUC_EXACT_MAX_N = 10_000
MAX_DISTINCT_SCORES = 30
N_BINS = 10


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------- model

@dataclass(eq=False)
class RiskScoreModel:
    """Integer points per feature plus an intercept.

    ``coefficients[0]`` is the intercept; ``names[0]`` is "(Intercept)".
    """

    coefficients: np.ndarray
    names: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coefficients)
        if c.ndim != 1 or len(c) != len(self.names):
            raise ModelError(f"{len(c)} coefficients for {len(self.names)} names")
        if np.any(c != np.round(c)):
            raise ModelError("risk score coefficients must be integers")
        self.coefficients = c.astype(np.int64)
        self.names = tuple(self.names)
        if self.names[0] != INTERCEPT_NAME:
            raise ModelError(f"first name must be {INTERCEPT_NAME!r}")

    @property
    def intercept(self):
        return int(self.coefficients[0])

    @property
    def size(self):
        return int(np.count_nonzero(self.coefficients[1:]))

    def points(self):
        """(name, points) for the non-zero features, in column order."""
        return [(n, int(c)) for n, c in zip(self.names[1:], self.coefficients[1:]) if c != 0]

    def align(self, data):
        """Coefficient vector laid out in the column order of ``data``."""
        if tuple(data.names) == self.names:
            return self.coefficients
        pos = {n: j for j, n in enumerate(data.names)}
        missing = [n for n in self.names if n not in pos]
        if missing:
            raise ModelError("features not found in data: " + ", ".join(missing))
        lam = np.zeros(len(data.names), dtype=np.int64)
        for n, c in zip(self.names, self.coefficients):
            lam[pos[n]] = c
        return lam

    def scores(self, data):
        return data.features @ self.align(data).astype(np.float64)

    def risks(self, data):
        return predicted_risk(self.scores(data))

    def options_hash(self):
        blob = json.dumps(self.provenance.get("options", {}), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def predicted_risk(score):
    """Logistic link 1 / (1 + exp(-s))."""
    return expit(score)


def _check_data(data):
    if data.n == 0:
        raise ValueError("empty dataset")


# ---------------------------------------------------------------- metrics

def log_loss(model, data):
    """Mean logistic loss of the model's scores (natural log)."""
    _check_data(data)
    m = data.labels * model.scores(data)
    return float(np.mean(log1pexp_neg(m)))


def cal(model, data, scores=None):
    """Expected calibration error in percent.

    Each example contributes |p_i - p̄_s| where p̄_s is the positive rate
    among the examples sharing its score.
    """
    _check_data(data)
    s = model.scores(data) if scores is None else np.asarray(scores, dtype=np.float64)
    p = predicted_risk(s)
    pos = data.labels > 0
    uniq, inv = np.unique(s, return_inverse=True)
    rate = np.bincount(inv, weights=pos) / np.bincount(inv)
    return float(100.0 * np.mean(np.abs(p - rate[inv])))


def auc_from_scores(scores, labels):
    """Probability that a positive outscores a negative, ties counting 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    if len(s) <= AUC_EXACT_MAX_N:
        return _auc_pairwise(s[pos], s[~pos])
    return _auc_ranks(s, pos)


def _auc_pairwise(sp, sn):
    # every (positive, negative) pair, in row blocks to bound memory
    wins = 0.0
    ties = 0.0
    block = max(1, 4_000_000 // max(1, len(sn)))
    for k in range(0, len(sp), block):
        a = sp[k: k + block, None]
        wins += float(np.count_nonzero(a > sn[None, :]))
        ties += float(np.count_nonzero(a == sn[None, :]))
    return (wins + 0.5 * ties) / (len(sp) * len(sn))


def _auc_ranks(s, pos):
    r = rankdata(s)  # average ranks give the 1/2 tie credit
    n_pos = int(pos.sum())
    n_neg = len(s) - n_pos
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc(model, data):
    _check_data(data)
    return auc_from_scores(model.scores(data), data.labels)


def metrics(model, data):
    s = model.scores(data)
    return {"loss": log_loss(model, data), "cal": cal(model, data, scores=s),
            "auc": auc_from_scores(s, data.labels), "n": data.n, "size": model.size}


# ---------------------------------------------------------------- reliability

@dataclass
class ReliabilityDiagram:
    """One point per distinct score (or per bin).

    Each point is (score_lo, score_hi, predicted, observed, count).
    """

    points: list
    binned: bool

    def to_rows(self):
        return [dict(zip(("score_lo", "score_hi", "predicted", "observed", "count"), p)) for p in self.points]


def _equal_frequency_groups(counts, n_groups):
    """Split consecutive distinct scores into exactly n_groups non-empty groups
    whose sizes are as close to equal as the boundaries allow."""
    m = len(counts)
    cum = np.cumsum(counts)
    total = cum[-1]
    cuts = []
    prev = 0  # groups are [prev, cut)
    for b in range(1, n_groups):
        target = b * total / n_groups
        lo = prev + 1
        hi = m - (n_groups - b)
        cand = np.arange(lo, hi + 1)
        k = int(cand[np.argmin(np.abs(cum[cand - 1] - target))])
        cuts.append(k)
        prev = k
    edges = [0, *cuts, m]
    return [(edges[i], edges[i + 1]) for i in range(n_groups)]


def reliability_diagram(model, data, max_scores=MAX_DISTINCT_SCORES, n_bins=N_BINS):
    """Predicted vs observed risk per score, or per equal-frequency bin when
    there are more than ``max_scores`` distinct scores."""
    _check_data(data)
    s = model.scores(data)
    pos = data.labels > 0
    uniq, inv, counts = np.unique(s, return_inverse=True, return_counts=True)
    npos = np.bincount(inv, weights=pos)
    p = predicted_risk(s)
    psum = np.bincount(inv, weights=p)
    binned = len(uniq) > max_scores
    groups = _equal_frequency_groups(counts, n_bins) if binned else [(k, k + 1) for k in range(len(uniq))]
    pts = []
    for a, b in groups:
        c = int(counts[a:b].sum())
        pts.append((float(uniq[a]), float(uniq[b - 1]), float(psum[a:b].sum() / c), float(npos[a:b].sum() / c), c))
    return ReliabilityDiagram(pts, binned)


# ---------------------------------------------------------------- risk table

def _pct(p):
    return f"{100.0 * p:.1f}%"


def risk_rows(model, data, collapse=True, lo=0.05, hi=0.95):
    """Machine-readable risk rows over the observed score range.

    Each row is (score_lo, score_hi, risk, label). Runs of scores whose
    risk falls below ``lo`` (above ``hi``) are merged when ``collapse``.
    """
    s = model.scores(data)
    smin, smax = int(math.floor(s.min())), int(math.ceil(s.max()))
    scores = list(range(smin, smax + 1))
    risks = [float(predicted_risk(k)) for k in scores]
    rows = []
    i, m = 0, len(scores)
    while i < m:
        if collapse and risks[i] < lo:
            j = i
            while j + 1 < m and risks[j + 1] < lo:
                j += 1
            if j > i:
                rows.append((scores[i], scores[j], risks[j], f"< {100 * lo:.1f}%"))
                i = j + 1
                continue
        if collapse and risks[i] > hi and i + 1 < m:
            rows.append((scores[i], scores[-1], risks[i], f"> {100 * hi:.1f}%"))
            break
        rows.append((scores[i], scores[i], risks[i], _pct(risks[i])))
        i += 1
    return rows


def format_risk_table(rows, points=()):
    """Text table from risk rows (and optional (name, points) pairs)."""
    out = []
    if points:
        w = max(len(n) for n, _ in points)
        for k, (name, pts) in enumerate(points, 1):
            unit = "point" if abs(pts) == 1 else "points"
            out.append(f"{k:>2}. {name:<{w}}  {pts:>3} {unit}")
        out.append("")
    labels = []
    for a, b, _, cell in rows:
        if a == b:
            labels.append(str(a))
        else:
            labels.append(f"<= {b}" if cell.startswith("<") else f">= {a}")
    cells = [r[3] for r in rows]
    widths = [max(len(x), len(y)) for x, y in zip(labels, cells)]
    out.append("SCORE | " + " | ".join(x.rjust(w) for x, w in zip(labels, widths)))
    out.append("RISK  | " + " | ".join(x.rjust(w) for x, w in zip(cells, widths)))
    return "\n".join(out)


def render_risk_table(model, data, collapse=True):
    """(text table, machine-readable rows)."""
    rows = risk_rows(model, data, collapse=collapse)
    return format_risk_table(rows, model.points()), rows


# ---------------------------------------------------------------- model files

def write_model(model, path, header_lines=()):
    """Plain-text key-value model file."""
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"intercept = {model.intercept}\n")
        for n, c in zip(model.names[1:], model.coefficients[1:]):
            fh.write(f"feature {n} = {int(c)}\n")
        for k in sorted(model.provenance):
            v = model.provenance[k]
            v = json.dumps(v, sort_keys=True, default=str) if isinstance(v, (dict, list, tuple)) else v
            fh.write(f"meta {k} = {v}\n")
        fh.write(f"meta options_hash = {model.options_hash()}\n")


def read_model(path):
    names = [INTERCEPT_NAME]
    coefs = [None]
    meta = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            key, sep, val = line.rpartition(" = ")
            if not sep:
                raise ModelError(f"{path}:{lineno}: expected 'key = value'")
            try:
                if key == "intercept":
                    coefs[0] = int(val)
                elif key.startswith("feature "):
                    names.append(key[len("feature "):])
                    coefs.append(int(val))
                elif key.startswith("meta "):
                    meta[key[len("meta "):]] = val
                else:
                    raise ModelError(f"{path}:{lineno}: unknown key {key!r}")
            except ValueError as e:
                if isinstance(e, ModelError):
                    raise
                raise ModelError(f"{path}:{lineno}: points must be integers, got {val!r}") from None
    if coefs[0] is None:
        raise ModelError(f"{path}: no intercept line")
    meta.pop("options_hash", None)
    for k in ("options",):
        if k in meta:
            try:
                meta[k] = json.loads(meta[k])
            except json.JSONDecodeError:
                pass
    return RiskScoreModel(np.array(coefs), tuple(names), meta)


# ---------------------------------------------------------------- cross-validation

@dataclass
class CVReport:
    folds: list  # per-fold dicts with train/test metrics
    final_model: RiskScoreModel
    fold_models: list
    selected: list = field(default_factory=list)

    def summary(self, split="test"):
        out = {}
        for m in ("loss", "cal", "auc"):
            v = np.array([f[split][m] for f in self.folds])
            out[m] = {"mean": float(v.mean()), "min": float(v.min()), "max": float(v.max())}
        return out

    @property
    def n_models(self):
        return len(self.fold_models) + 1


def _check_fold(data, fold, what):
    pos = int(np.count_nonzero(data.labels > 0))
    if pos == 0 or pos == data.n:
        raise ValueError(f"fold {fold} {what} set contains a single class")


def _select(train, data, grid, k, seed):
    """Grid value with the best mean inner-fold test AUC (first on ties)."""
    if len(grid) == 1:
        return grid[0]
    fa = split_folds(data, k, seed)
    best, best_auc = None, -math.inf
    for g in grid:
        aucs = []
        for f in range(1, k + 1):
            tr, te = fa.train_test(f)
            model = train(data.subset(tr), g)
            aucs.append(auc(model, data.subset(te)))
        a = float(np.mean(aucs))
        if a > best_auc:
            best, best_auc = g, a
    return best


def cross_validate(train, data, k=5, seed=0, nested=False, grid=None):
    """K-fold cross-validation.

    Parameters
    ----------
    train : callable(Dataset) -> RiskScoreModel, or callable(Dataset, param)
        when ``nested``
    nested : inner K-fold CV on each training split selects the parameter
        from ``grid`` by mean test AUC

    Returns
    -------
    CVReport with K fold models plus one final model trained on all data
    """
    if nested and not grid:
        raise ValueError("nested cross-validation needs a non-empty grid")
    fa = split_folds(data, k, seed)
    folds, models, selected = [], [], []
    for f in range(1, k + 1):
        tr, te = fa.train_test(f)
        dtr, dte = data.subset(tr), data.subset(te)
        _check_fold(dtr, f, "training")
        _check_fold(dte, f, "test")
        if nested:
            g = _select(train, dtr, grid, k, seed + f)
            selected.append(g)
            model = train(dtr, g)
        else:
            model = train(dtr)
        models.append(model)
        folds.append({"fold": f, "train": metrics(model, dtr), "test": metrics(model, dte)})
    if nested:
        g = _select(train, data, grid, k, seed)
        final = train(data, g)
        selected.append(g)
    else:
        final = train(data)
    return CVReport(folds, final, models, selected)


def model_from_vector(lam, data, **provenance):
    return RiskScoreModel(np.asarray(lam), tuple(data.names), dict(provenance))


__all__ = [
    "CVReport", "ModelError", "ReliabilityDiagram", "RiskScoreModel", "auc", "auc_from_scores", "cal",
    "cross_validate", "format_risk_table", "log_loss", "metrics", "model_from_vector", "predicted_risk",
    "read_model", "reliability_diagram", "render_risk_table", "risk_rows", "write_model",
]
