"""Risk score problem: coefficient lattice, l0 penalty and operational constraints."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .dataset import INTERCEPT_NAME

DEFAULT_C0_WITH_SIZE = 1e-6
ENUMERATION_CAP = 10**7


class ConstraintError(ValueError):
    pass


# ---------------------------------------------------------------- lattice

@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Integer box Λ_min <= λ <= Λ_max, index 0 is the intercept."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = np.asarray(self.lb, dtype=np.float64)
        ub = np.asarray(self.ub, dtype=np.float64)
        if lb.shape != ub.shape or lb.ndim != 1 or lb.size < 1:
            raise ValueError("lb and ub must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
            raise ValueError("coefficient bounds must be finite")
        if np.any(lb != np.round(lb)) or np.any(ub != np.round(ub)):
            raise ValueError("coefficient bounds must be integers")
        if np.any(lb > 0) or np.any(ub < 0):
            raise ValueError("every coefficient range must contain 0")
        lb = lb.astype(np.int64)
        ub = ub.astype(np.int64)
        lb.setflags(write=False)
        ub.setflags(write=False)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @classmethod
    def uniform(cls, d, lo, hi, intercept=None):
        """Same range for every feature; ``intercept`` is an optional (lo, hi)."""
        lb = np.full(d + 1, lo)
        ub = np.full(d + 1, hi)
        if intercept is not None:
            lb[0], ub[0] = intercept
        return cls(lb, ub)

    @property
    def dim(self):
        return self.lb.size

    def cardinality(self):
        return math.prod(int(h - l + 1) for l, h in zip(self.lb, self.ub))

    def contains(self, lam):
        lam = np.asarray(lam)
        return bool(np.all(lam >= self.lb) and np.all(lam <= self.ub))

    def __repr__(self):
        return f"CoefficientSet(lb={self.lb.tolist()}, ub={self.ub.tolist()})"


# ---------------------------------------------------------------- constraints

@dataclass(frozen=True)
class MaxModelSize:
    k: int


@dataclass(frozen=True)
class Sign:
    feature: object
    sign: int  # +1 or -1


@dataclass(frozen=True)
class AtMostKOf:
    k: int
    features: tuple


@dataclass(frozen=True)
class ExclusiveChoice:
    group_a: tuple
    group_b: tuple


@dataclass(frozen=True)
class Implies:
    feature: object
    consequents: tuple


@dataclass(frozen=True)
class LinearIndicatorRow:
    coefs: tuple  # ((feature, coef), ...)
    relation: str  # "<=", ">=", "="
    rhs: float


CONSTRAINT_KINDS = (MaxModelSize, Sign, AtMostKOf, ExclusiveChoice, Implies, LinearIndicatorRow)


@dataclass(frozen=True)
class Row:
    """Linear row over the packed variable vector (λ_0..λ_d, α_1..α_d, aux...)."""

    coefs: dict
    relation: str
    rhs: float
    tag: str = ""


@dataclass(frozen=True, eq=False)
class CompiledConstraints:
    d: int
    lam_lb: np.ndarray  # effective integer bounds after Sign
    lam_ub: np.ndarray
    n_aux: int
    indicator_rows: list
    rows: list  # operational rows only
    r_max: int

    @property
    def all_rows(self):
        return self.indicator_rows + self.rows

    def alpha_index(self, j):
        return self.d + j

    def aux_index(self, k):
        return 2 * self.d + 1 + k


def _resolve(feature, names):
    if isinstance(feature, (int, np.integer)) and not isinstance(feature, bool):
        j = int(feature)
        if not 0 <= j < len(names):
            raise ConstraintError(f"feature index {j} out of range")
        return j
    try:
        return names.index(str(feature))
    except ValueError:
        raise ConstraintError(f"unknown feature {feature!r}") from None


def _resolve_feat(feature, names):
    j = _resolve(feature, names)
    if j == 0:
        raise ConstraintError("the intercept cannot appear in a selection constraint")
    return j


# ---------------------------------------------------------------- spec

@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Data, lattice, penalty and constraints.

    Parameters
    ----------
    data : Dataset
    coefs : CoefficientSet
    C0 : float or None
        Penalty per non-zero non-intercept coefficient. None means 1e-6,
        which is only allowed together with a MaxModelSize constraint.
    constraints : sequence of operational constraints
    """

    data: object
    coefs: CoefficientSet
    C0: float = None
    constraints: tuple = ()

    def __post_init__(self):
        cons = tuple(self.constraints)
        object.__setattr__(self, "constraints", cons)
        if self.coefs.dim != self.data.d + 1:
            raise ValueError(f"coefficient set has {self.coefs.dim} entries, data has d+1={self.data.d + 1}")
        C0 = self.C0
        if C0 is None:
            if not any(isinstance(c, MaxModelSize) for c in cons):
                raise ValueError("C0 must be given when there is no model size constraint")
            C0 = DEFAULT_C0_WITH_SIZE
        C0 = float(C0)
        if not (C0 > 0 and math.isfinite(C0)):
            raise ValueError("C0 must be a positive finite number")
        object.__setattr__(self, "C0", C0)
        for c in cons:
            if not isinstance(c, CONSTRAINT_KINDS):
                raise ConstraintError(f"unsupported constraint {c!r}")
        self.compiled  # fail early on bad names

    @property
    def d(self):
        return self.data.d

    @cached_property
    def compiled(self):
        return compile_constraints(self)

    @cached_property
    def checker(self):
        return SupportChecker(self)

    def with_data(self, data):
        return ProblemSpec(data, self.coefs, self.C0, self.constraints)


def compile_constraints(spec):
    """Indicator rows plus operational rows; Sign becomes a bound."""
    names = list(spec.data.names)
    d = spec.data.d
    lb = spec.coefs.lb.copy()
    ub = spec.coefs.ub.copy()
    a = lambda j: d + j  # noqa: E731
    rows = []
    n_aux = 0
    r_max = d
    for c in spec.constraints:
        if isinstance(c, MaxModelSize):
            if c.k < 0:
                raise ConstraintError("max_size must be >= 0")
            rows.append(Row({a(j): 1.0 for j in range(1, d + 1)}, "<=", float(c.k), f"max_size {c.k}"))
            r_max = min(r_max, int(c.k))
        elif isinstance(c, Sign):
            j = _resolve(c.feature, names)
            if c.sign > 0:
                lb[j] = max(lb[j], 0)
            elif c.sign < 0:
                ub[j] = min(ub[j], 0)
            else:
                raise ConstraintError("sign must be +1 or -1")
        elif isinstance(c, AtMostKOf):
            if c.k < 0:
                raise ConstraintError("k must be >= 0")
            js = sorted({_resolve_feat(f, names) for f in c.features})
            rows.append(Row({a(j): 1.0 for j in js}, "<=", float(c.k), f"at_most_k {c.k}"))
        elif isinstance(c, ExclusiveChoice):
            A = sorted({_resolve_feat(f, names) for f in c.group_a})
            B = sorted({_resolve_feat(f, names) for f in c.group_b})
            if not A or not B or set(A) & set(B):
                raise ConstraintError("exclusive groups must be non-empty and disjoint")
            g = 2 * d + 1 + n_aux
            n_aux += 1
            ra = {a(j): 1.0 for j in A}
            ra[g] = float(len(A))
            rows.append(Row(ra, "<=", float(len(A)), "exclusive/a"))
            rb = {a(j): 1.0 for j in B}
            rb[g] = -float(len(B))
            rows.append(Row(rb, "<=", 0.0, "exclusive/b"))
        elif isinstance(c, Implies):
            j = _resolve_feat(c.feature, names)
            cs = sorted({_resolve_feat(f, names) for f in c.consequents})
            if not cs:
                raise ConstraintError("implies needs at least one consequent")
            r = {a(k): -1.0 for k in cs}
            r[a(j)] = r.get(a(j), 0.0) + 1.0
            rows.append(Row(r, "<=", 0.0, "implies"))
        elif isinstance(c, LinearIndicatorRow):
            if c.relation not in ("<=", ">=", "="):
                raise ConstraintError(f"bad relation {c.relation!r}")
            r = {}
            for f, v in c.coefs:
                k = a(_resolve_feat(f, names))
                r[k] = r.get(k, 0.0) + float(v)
            rows.append(Row(r, c.relation, float(c.rhs), "linear"))
    if np.any(lb > ub):
        raise ConstraintError("sign constraints empty a coefficient range")
    ind = []
    for j in range(1, d + 1):
        ind.append(Row({j: 1.0, a(j): -float(ub[j])}, "<=", 0.0, f"ind_ub[{j}]"))
        ind.append(Row({j: 1.0, a(j): -float(lb[j])}, ">=", 0.0, f"ind_lb[{j}]"))
    free = int(np.sum((lb[1:] != 0) | (ub[1:] != 0)))
    r_max = max(0, min(r_max, free))
    lb.setflags(write=False)
    ub.setflags(write=False)
    return CompiledConstraints(d, lb, ub, n_aux, ind, rows, r_max)


class SupportChecker:
    """Vectorised check of the selection pattern α = 1[λ != 0]."""

    def __init__(self, spec):
        cc = spec.compiled
        d = spec.d
        self.d = d
        self.lam_lb = cc.lam_lb
        self.lam_ub = cc.lam_ub
        le, ge, eq = [], [], []
        self.exclusive = []
        self.tags = []
        for c in spec.constraints:
            names = list(spec.data.names)
            if isinstance(c, ExclusiveChoice):
                A = [_resolve_feat(f, names) for f in c.group_a]
                B = [_resolve_feat(f, names) for f in c.group_b]
                self.exclusive.append((np.array(A) - 1, np.array(B) - 1, c))
        rows = [r for r in cc.rows if not r.tag.startswith("exclusive")]
        A = np.zeros((len(rows), d))
        b = np.zeros(len(rows))
        rel = []
        for i, r in enumerate(rows):
            for k, v in r.coefs.items():
                A[i, k - d - 1] = v
            b[i] = r.rhs
            rel.append(r.relation)
        self.A, self.b, self.rel = A, b, np.array(rel)
        # map rows back to constraint objects for messages
        self.row_src = [c for c in spec.constraints
                        if isinstance(c, (MaxModelSize, AtMostKOf, Implies, LinearIndicatorRow))]

    def violations(self, alpha):
        """Indices of violated rows and exclusive pairs for one pattern."""
        alpha = np.asarray(alpha, dtype=np.float64)
        act = self.A @ alpha
        bad = []
        for i, (v, r, rhs) in enumerate(zip(act, self.rel, self.b)):
            if (r == "<=" and v > rhs + 1e-9) or (r == ">=" and v < rhs - 1e-9) or (r == "=" and abs(v - rhs) > 1e-9):
                bad.append(self.row_src[i])
        for A, B, c in self.exclusive:
            if alpha[A].any() and alpha[B].any():
                bad.append(c)
        return bad

    def ok(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64)
        if self.A.shape[0]:
            act = self.A @ alpha
            if np.any((self.rel == "<=") & (act > self.b + 1e-9)):
                return False
            if np.any((self.rel == ">=") & (act < self.b - 1e-9)):
                return False
            if np.any((self.rel == "=") & (np.abs(act - self.b) > 1e-9)):
                return False
        for A, B, _ in self.exclusive:
            if alpha[A].any() and alpha[B].any():
                return False
        return True

    def ok_many(self, alpha):
        """Row-wise version of ok for an (N, d) 0/1 matrix."""
        alpha = np.asarray(alpha, dtype=np.float64)
        keep = np.ones(alpha.shape[0], dtype=bool)
        if self.A.shape[0]:
            act = alpha @ self.A.T
            keep &= ~np.any((self.rel == "<=") & (act > self.b + 1e-9), axis=1)
            keep &= ~np.any((self.rel == ">=") & (act < self.b - 1e-9), axis=1)
            keep &= ~np.any((self.rel == "=") & (np.abs(act - self.b) > 1e-9), axis=1)
        for A, B, _ in self.exclusive:
            keep &= ~(alpha[:, A].any(axis=1) & alpha[:, B].any(axis=1))
        return keep


# ---------------------------------------------------------------- bounds

@dataclass(frozen=True)
class SolverBounds:
    """Bounds on the optimal objective V, loss L and model size R."""

    V_min: float
    V_max: float
    L_min: float
    L_max: float
    R_min: int
    R_max: int

    def crossed(self, tol=1e-12):
        """True when some lower bound exceeds its upper bound."""
        scale = max(1.0, abs(self.V_max)) if math.isfinite(self.V_max) else 1.0
        return (self.V_min > self.V_max + tol * scale or self.L_min > self.L_max + tol * scale
                or self.R_min > self.R_max)

    def replace(self, **kw):
        return SolverBounds(**{**self.__dict__, **kw})


# ---------------------------------------------------------------- operations

def _check_dim(lam, spec):
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (spec.d + 1,):
        raise ValueError(f"coefficient vector has shape {lam.shape}, expected ({spec.d + 1},)")
    return lam


def l0_norm(lam):
    return int(np.count_nonzero(np.asarray(lam)[1:]))


def objective_value(lam, spec):
    """Loss plus C0 times the number of non-zero non-intercept coefficients."""
    from .loss import loss_value

    lam = _check_dim(lam, spec)
    if not spec.coefs.contains(lam):
        raise ValueError("coefficient vector lies outside the coefficient set")
    return loss_value(lam, spec.data) + spec.C0 * l0_norm(lam)


def is_feasible(lam, spec):
    """(feasible, violated) with α_j = 1[λ_j != 0]."""
    lam = _check_dim(lam, spec)
    bad = []
    if np.any(lam != np.round(lam)):
        bad.append("integrality")
    if not spec.coefs.contains(lam):
        bad.append("coefficient set")
    names = list(spec.data.names)
    for c in spec.constraints:
        if isinstance(c, Sign):
            v = lam[_resolve(c.feature, names)]
            if (c.sign > 0 and v < 0) or (c.sign < 0 and v > 0):
                bad.append(c)
    bad.extend(spec.checker.violations(lam[1:] != 0))
    return (not bad), bad


def enumerate_feasible(spec, cap=ENUMERATION_CAP):
    """All feasible integer vectors in lexicographic order."""
    size = spec.coefs.cardinality()
    if size > cap:
        raise ValueError(f"lattice has {size} points, above the cap of {cap}")
    cc = spec.compiled
    axes = [np.arange(l, h + 1) for l, h in zip(spec.coefs.lb, spec.coefs.ub)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    keep = np.all((grid >= cc.lam_lb) & (grid <= cc.lam_ub), axis=1)
    grid = grid[keep]
    keep = spec.checker.ok_many(grid[:, 1:] != 0)
    return grid[keep]


# ---------------------------------------------------------------- file format

def parse_constraints(text, source="<string>"):
    """Parse the line-oriented constraint format.

    ``max_size K``, ``sign F +|-``, ``at_most_k K F1 F2 ...``,
    ``exclusive A1 A2 | B1 B2``, ``implies F -> F1 F2 ...`` and
    ``linear C1 F1 C2 F2 ... <=|>=|= RHS``. ``#`` starts a comment.
    """
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kw, args = tok[0].lower(), tok[1:]
        where = f"{source}:{lineno}"
        try:
            if kw == "max_size" and len(args) == 1:
                out.append(MaxModelSize(int(args[0])))
            elif kw == "sign" and len(args) == 2 and args[1] in ("+", "-"):
                out.append(Sign(args[0], 1 if args[1] == "+" else -1))
            elif kw == "at_most_k" and len(args) >= 2:
                out.append(AtMostKOf(int(args[0]), tuple(args[1:])))
            elif kw == "exclusive" and "|" in args:
                i = args.index("|")
                out.append(ExclusiveChoice(tuple(args[:i]), tuple(args[i + 1:])))
            elif kw == "implies" and len(args) >= 3 and args[1] == "->":
                out.append(Implies(args[0], tuple(args[2:])))
            elif kw == "linear" and len(args) >= 4 and args[-2] in ("<=", ">=", "="):
                body = args[:-2]
                if len(body) % 2:
                    raise ValueError("expected coefficient/feature pairs")
                pairs = tuple((body[i + 1], float(body[i])) for i in range(0, len(body), 2))
                out.append(LinearIndicatorRow(pairs, args[-2], float(args[-1])))
            else:
                raise ValueError(f"cannot parse {line!r}")
        except ValueError as e:
            raise ConstraintError(f"{where}: {e}") from None
    return out


def load_constraints(path):
    path = Path(path)
    if not path.exists():
        raise ConstraintError(f"{path}: constraint file not found")
    return parse_constraints(path.read_text(), str(path))


__all__ = [
    "CoefficientSet", "SolverBounds", "MaxModelSize", "Sign", "AtMostKOf", "ExclusiveChoice", "Implies",
    "LinearIndicatorRow", "ProblemSpec", "CompiledConstraints", "Row", "SupportChecker",
    "compile_constraints", "objective_value", "is_feasible", "enumerate_feasible",
    "parse_constraints", "load_constraints", "l0_norm", "ConstraintError", "INTERCEPT_NAME",
]
