"""Small dense LPs: bounded-variable dual simplex with warm starts.

Every row a·x {<=,>=,=} b gets a slack s = a·x whose box is the row's
feasible activity interval, clipped to the activity range implied by the
variable bounds. All variables are then boxed, so any basis can be made
dual feasible by moving non-basic variables to the right bound, and the
dual simplex needs no phase 1. Adding rows keeps an old basis usable (the
new slacks enter basic) and tightening bounds only breaks primal
feasibility, which is what the dual simplex repairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
_PRICE_TOL = 1e-9
_PIVOT_TOL = 1e-9

OPTIMAL, INFEASIBLE, ITER_LIMIT, NUMERIC = 0, 1, 2, 3
_STATUS = {OPTIMAL: "optimal", INFEASIBLE: "infeasible", ITER_LIMIT: "iteration limit", NUMERIC: "numerical failure"}


class LPSolverError(RuntimeError):
    pass


class BoundCrossing(ValueError):
    """New bounds leave an empty interval; the region is infeasible."""


# ---------------------------------------------------------------- core loop

def _dual_core(A, c, lb, ub, basis, status, Binv, tol_p, tol_d, piv_tol, max_iter, refactor_every, bland_after):
    """Bounded dual simplex on  [A, -I] (x, s) = 0,  lb <= (x, s) <= ub.

    ``basis``, ``status`` (0 basic, 1 at lower, 2 at upper) and ``Binv`` are
    updated in place. Returns (code, iterations).
    """
    m, n = A.shape
    N = n + m
    eta = refactor_every  # force a factorization first
    stall = 0
    bland = False
    rechecked = False
    for it in range(max_iter):
        if eta >= refactor_every:
            B = np.zeros((m, m))
            for k in range(m):
                col = basis[k]
                if col < n:
                    B[:, k] = A[:, col]
                else:
                    B[col - n, k] = -1.0
            try:
                Binv[:, :] = np.linalg.inv(B)
            except Exception:
                return NUMERIC, it
            eta = 0

        cB = np.empty(m)
        for k in range(m):
            cB[k] = c[basis[k]]
        y = Binv.T @ cB
        dj = np.empty(N)
        dj[:n] = c[:n] - A.T @ y
        dj[n:] = c[n:] + y

        # keep the basis dual feasible by bound flips
        for j in range(N):
            if status[j] == 1 and dj[j] < -tol_d and ub[j] > lb[j]:
                status[j] = 2
            elif status[j] == 2 and dj[j] > tol_d and ub[j] > lb[j]:
                status[j] = 1

        xN = np.where(status == 1, lb, np.where(status == 2, ub, 0.0))
        xB = -(Binv @ (A @ xN[:n] - xN[n:]))
        lbB = np.empty(m)
        ubB = np.empty(m)
        for k in range(m):
            lbB[k] = lb[basis[k]]
            ubB[k] = ub[basis[k]]
        lo_v = lbB - xB
        hi_v = xB - ubB
        viol = np.maximum(lo_v, hi_v)

        r = -1
        if bland:
            best = N + 1
            for k in range(m):
                if viol[k] > tol_p and basis[k] < best:
                    best = basis[k]
                    r = k
        else:
            k = np.argmax(viol)
            if viol[k] > tol_p:
                r = k
        if r < 0:
            if eta > 0 and not rechecked:
                # confirm on a fresh factorization
                eta = refactor_every
                rechecked = True
                continue
            return OPTIMAL, it
        rechecked = False

        to_lower = lo_v[r] > hi_v[r]
        rho = Binv[r, :]
        alpha = np.empty(N)
        alpha[:n] = rho @ A
        alpha[n:] = -rho
        if to_lower:
            at = -alpha
        else:
            at = alpha
        movable = (status != 0) & (ub > lb)
        candL = movable & (status == 1) & (at > piv_tol)
        candU = movable & (status == 2) & (at < -piv_tol)
        cand = candL | candU
        if not np.any(cand):
            if eta > 0:
                eta = refactor_every
                continue
            return INFEASIBLE, it

        ratio = np.full(N, np.inf)
        for j in range(N):
            if cand[j]:
                t = dj[j] / at[j]
                ratio[j] = t if t > 0.0 else 0.0
        q = -1
        if bland:
            # lowest index among the minimum ratios, skipping tiny pivots when possible
            tmin = np.min(ratio)
            for j in range(N):
                if cand[j] and ratio[j] <= tmin + 1e-12:
                    if q < 0:
                        q = j
                    if abs(at[j]) >= 1e-7:
                        q = j
                        break
        else:
            tmax = np.inf
            for j in range(N):
                if candL[j]:
                    t = (dj[j] + tol_d) / at[j]
                    if t < tmax:
                        tmax = t
                elif candU[j]:
                    t = (dj[j] - tol_d) / at[j]
                    if t < tmax:
                        tmax = t
            bestpiv = -1.0
            for j in range(N):
                if cand[j] and ratio[j] <= tmax and abs(at[j]) > bestpiv:
                    bestpiv = abs(at[j])
                    q = j
        theta = ratio[q]
        if theta * viol[r] <= 1e-12:
            stall += 1
            if stall > bland_after:
                bland = True
        else:
            stall = 0

        if q < n:
            w = Binv @ np.ascontiguousarray(A[:, q])
        else:
            w = -Binv[:, q - n]
        piv = w[r]
        if abs(piv) < 1e-11:
            if eta > 0:
                eta = refactor_every
                continue
            return NUMERIC, it
        row = Binv[r, :] / piv
        Binv -= np.outer(w, row)
        Binv[r, :] = row
        leaving = basis[r]
        status[leaving] = 1 if to_lower else 2
        basis[r] = q
        status[q] = 0
        eta += 1
    return ITER_LIMIT, max_iter


if _kernels.HAS_NUMBA:
    _dual_core_nb = _kernels.numba.njit(cache=True)(_dual_core)
else:  # pragma: no cover
    _dual_core_nb = None


def _core(name=None):
    name = _kernels.BACKEND if name is None else name
    return _dual_core_nb if name == "numba" else _dual_core


# ---------------------------------------------------------------- data types

@dataclass(frozen=True, eq=False)
class Basis:
    """Warm-start descriptor: basic variable per row and bound status per variable."""

    basis: np.ndarray
    status: np.ndarray
    n: int

    @property
    def m(self):
        return len(self.basis)


@dataclass(eq=False)
class LPSolution:
    status: str
    x: np.ndarray = None
    objective: float = np.inf
    basis: Basis = None
    iterations: int = 0

    @property
    def optimal(self):
        return self.status == "optimal"


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """min c·x  s.t.  rows,  lb <= x <= ub  (all bounds finite).

    Rows are stored densely as ``A`` with ``sense`` in {'<=','>=','='}.
    """

    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: np.ndarray = None
    sense: tuple = ()
    rhs: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        n = c.size
        lb = np.asarray(self.lb, dtype=np.float64).reshape(n)
        ub = np.asarray(self.ub, dtype=np.float64).reshape(n)
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
            raise ValueError("all variable bounds must be finite")
        A = np.zeros((0, n)) if self.A is None else np.asarray(self.A, dtype=np.float64).reshape(-1, n)
        rhs = np.zeros(0) if self.rhs is None else np.asarray(self.rhs, dtype=np.float64).reshape(-1)
        sense = tuple(self.sense)
        if len(sense) != A.shape[0] or rhs.size != A.shape[0]:
            raise ValueError("row dimensions are inconsistent")
        for s in sense:
            if s not in ("<=", ">=", "="):
                raise ValueError(f"bad relation {s!r}")
        for k, v in (("c", c), ("lb", lb), ("ub", ub), ("A", A), ("sense", sense), ("rhs", rhs)):
            object.__setattr__(self, k, v)

    @property
    def n(self):
        return self.c.size

    @property
    def m(self):
        return self.A.shape[0]


def _row_box(A, sense, rhs, lb, ub):
    """Slack bounds: the row interval clipped to the attainable activity range."""
    lo_act = np.minimum(A * lb, A * ub).sum(axis=1) - 1.0
    hi_act = np.maximum(A * lb, A * ub).sum(axis=1) + 1.0
    sense = np.asarray(sense, dtype=object)
    slo = np.where(sense == "<=", np.minimum(lo_act, rhs), rhs)
    shi = np.where(sense == ">=", np.maximum(hi_act, rhs), rhs)
    return slo.astype(np.float64), shi.astype(np.float64)


class DualSimplex:
    """Mutable solver state for repeated solves of one growing LP."""

    def __init__(self, lp, backend=None, max_iter=None, refactor_every=64, bland_after=60):
        self.n = lp.n
        self.c = lp.c.copy()
        self.lb = lp.lb.copy()
        self.ub = lp.ub.copy()
        # bounds used to size slack boxes; never loosened afterwards
        self.lb0 = lp.lb.copy()
        self.ub0 = lp.ub.copy()
        self._A = np.zeros((max(16, 2 * lp.m), self.n))
        self._slo = np.zeros(self._A.shape[0])
        self._shi = np.zeros(self._A.shape[0])
        self.m = 0
        self.core = _core(backend)
        self.max_iter = max_iter
        self.refactor_every = refactor_every
        self.bland_after = bland_after
        self.last = None
        self.total_iterations = 0
        if lp.m:
            self.add_rows(lp.A, lp.sense, lp.rhs)

    @property
    def A(self):
        return self._A[: self.m]

    def add_rows(self, A, sense, rhs):
        A = np.asarray(A, dtype=np.float64).reshape(-1, self.n)
        k = A.shape[0]
        if k == 0:
            return
        rhs = np.asarray(rhs, dtype=np.float64).reshape(k)
        slo, shi = _row_box(A, sense, rhs, self.lb0, self.ub0)
        if self.m + k > self._A.shape[0]:
            cap = max(2 * self._A.shape[0], self.m + k)
            for name in ("_A", "_slo", "_shi"):
                old = getattr(self, name)
                new = np.zeros((cap,) + old.shape[1:])
                new[: self.m] = old[: self.m]
                setattr(self, name, new)
        self._A[self.m: self.m + k] = A
        self._slo[self.m: self.m + k] = slo
        self._shi[self.m: self.m + k] = shi
        self.m += k

    def set_bounds(self, idx, lo, hi):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if np.any(lo > hi):
            raise BoundCrossing("lower bound exceeds upper bound")
        self.lb[idx] = lo
        self.ub[idx] = hi

    def slack_basis(self):
        basis = np.arange(self.n, self.n + self.m, dtype=np.int64)
        status = np.ones(self.n + self.m, dtype=np.int64)
        status[self.n:] = 0
        status[: self.n][self.c < 0] = 2
        return Basis(basis, status, self.n)

    def extend(self, warm):
        """Grow a basis from fewer rows by making the new slacks basic."""
        if warm is None:
            return self.slack_basis()
        if warm.n != self.n or warm.m > self.m:
            raise ValueError("warm basis does not match this LP")
        k = self.m - warm.m
        basis = np.concatenate([warm.basis, np.arange(self.n + warm.m, self.n + self.m)]).astype(np.int64)
        status = np.concatenate([warm.status, np.zeros(k, dtype=np.int64)]).astype(np.int64)
        return Basis(basis, status, self.n)

    def solve(self, warm=None):
        if np.any(self.lb > self.ub):
            return LPSolution("infeasible")
        m, n = self.m, self.n
        start = self.extend(warm)
        basis = start.basis.copy()
        status = start.status.copy()
        lb = np.concatenate([self.lb, self._slo[:m]])
        ub = np.concatenate([self.ub, self._shi[:m]])
        c = np.concatenate([self.c, np.zeros(m)])
        A = np.ascontiguousarray(self._A[:m])
        max_iter = self.max_iter or 50 * (n + m) + 1000
        if m == 0:
            x = np.where(self.c >= 0, self.lb, self.ub)
            return LPSolution("optimal", x, float(self.c @ x), Basis(basis, status, n), 0)
        Binv = np.empty((m, m))
        code, iters = self.core(A, c, lb, ub, basis, status, Binv, _PRICE_TOL, OPT_TOL, _PIVOT_TOL,
                                max_iter, self.refactor_every, self.bland_after)
        # on trouble restart from the slack basis, refactoring more often,
        # and finally under Bland's rule
        for refactor, bland_after in ((16, self.bland_after), (16, 0)):
            if code != NUMERIC and code != ITER_LIMIT:
                break
            b0 = self.slack_basis()
            basis, status = b0.basis.copy(), b0.status.copy()
            code, it2 = self.core(A, c, lb, ub, basis, status, Binv, _PRICE_TOL, OPT_TOL, _PIVOT_TOL,
                                  max_iter * 4, refactor, bland_after)
            iters += it2
        self.total_iterations += iters
        if code == INFEASIBLE:
            self.last = LPSolution("infeasible", basis=Basis(basis, status, n), iterations=iters)
            return self.last
        if code != OPTIMAL:
            raise LPSolverError(f"dual simplex stopped with {_STATUS[code]} after {iters} iterations "
                                f"(n={n}, m={m})")
        full = np.where(status == 1, lb, np.where(status == 2, ub, 0.0))
        B = np.zeros((m, m))
        for k, col in enumerate(basis):
            if col < n:
                B[:, k] = A[:, col]
            else:
                B[col - n, k] = -1.0
        full[basis] = np.linalg.solve(B, -(A @ full[:n] - full[n:]))
        x = full[:n]
        self.last = LPSolution("optimal", x, float(self.c @ x), Basis(basis, status, n), iters)
        return self.last


# ---------------------------------------------------------------- functional API

def lp_solve(lp, warm=None, backend=None):
    """Solve ``lp``; ``warm`` is a Basis from an earlier solve of a prefix of its rows."""
    return DualSimplex(lp, backend=backend).solve(warm)


def lp_add_rows(lp, A, sense, rhs):
    A = np.asarray(A, dtype=np.float64).reshape(-1, lp.n)
    return LinearProgram(lp.c, lp.lb, lp.ub, np.vstack([lp.A, A]), lp.sense + tuple(sense),
                         np.concatenate([lp.rhs, np.asarray(rhs, dtype=np.float64).reshape(-1)]))


def lp_tighten_bound(lp, index, lower=None, upper=None):
    lb = lp.lb.copy()
    ub = lp.ub.copy()
    if lower is not None:
        lb[index] = max(lb[index], lower)
    if upper is not None:
        ub[index] = min(ub[index], upper)
    if lb[index] > ub[index]:
        raise BoundCrossing(f"variable {index}: lower {lb[index]} > upper {ub[index]}")
    return LinearProgram(lp.c, lb, ub, lp.A, lp.sense, lp.rhs)


def check_solution(lp, sol, tol=FEAS_TOL):
    """Max bound and row violation of a primal point."""
    x = sol.x
    v = max(0.0, float(np.max(lp.lb - x, initial=0)), float(np.max(x - lp.ub, initial=0)))
    if lp.m:
        act = lp.A @ x
        for a, s, b in zip(act, lp.sense, lp.rhs):
            if s == "<=":
                v = max(v, a - b)
            elif s == ">=":
                v = max(v, b - a)
            else:
                v = max(v, abs(a - b))
    return v
