import numpy as np
import pytest
from scipy.optimize import linprog

from riskscore.lp import (
    BoundCrossing, DualSimplex, LinearProgram, check_solution, lp_add_rows, lp_solve, lp_tighten_bound,
)

BACKENDS = ["numpy", "numba"]


def _random_lp(seed, n=6, m=5, with_eq=True):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=n)
    lb = -rng.integers(0, 4, n).astype(float)
    ub = rng.integers(0, 4, n).astype(float) + 1
    A = rng.normal(size=(m, n)).round(2)
    x0 = rng.uniform(lb, ub)  # keeps most instances feasible
    sense = tuple(rng.choice(["<=", ">=", "="] if with_eq else ["<=", ">="], m))
    act = A @ x0
    rhs = np.where(np.array(sense) == "<=", act + 0.5, np.where(np.array(sense) == ">=", act - 0.5, act))
    return LinearProgram(c, lb, ub, A, sense, rhs)


def _highs(lp):
    ub = [(a, b) for a, b in zip(lp.lb, lp.ub)]
    le = [i for i, s in enumerate(lp.sense) if s == "<="]
    ge = [i for i, s in enumerate(lp.sense) if s == ">="]
    eq = [i for i, s in enumerate(lp.sense) if s == "="]
    A_ub = np.vstack([lp.A[le], -lp.A[ge]]) if le or ge else None
    b_ub = np.concatenate([lp.rhs[le], -lp.rhs[ge]]) if le or ge else None
    r = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=lp.A[eq] if eq else None, b_eq=lp.rhs[eq] if eq else None,
                bounds=ub, method="highs")
    return r


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("seed", range(40))
def test_matches_highs(seed, backend):
    lp = _random_lp(seed, n=4 + seed % 5, m=2 + seed % 6)
    sol = lp_solve(lp, backend=backend)
    ref = _highs(lp)
    if ref.status == 2:
        assert sol.status == "infeasible"
        return
    assert sol.optimal
    assert sol.objective == pytest.approx(ref.fun, abs=1e-7)
    assert check_solution(lp, sol) <= 1e-7


@pytest.mark.parametrize("backend", BACKENDS)
def test_warm_start_after_rows_and_bounds(backend):
    lp = _random_lp(100, n=8, m=4, with_eq=False)
    solver = DualSimplex(lp, backend=backend)
    first = solver.solve()
    assert first.optimal
    rng = np.random.default_rng(5)
    cur = lp
    warm = first.basis
    for _ in range(6):
        row = rng.normal(size=(1, lp.n))
        rhs = float((row @ first.x)[0]) - 0.3  # cuts off the current optimum
        solver.add_rows(row, ("<=",), (rhs,))
        cur = lp_add_rows(cur, row, ("<=",), (rhs,))
        j = int(rng.integers(lp.n))
        lo, hi = solver.lb[j], solver.ub[j]
        new_hi = max(lo, hi - 1)
        solver.set_bounds(j, lo, new_hi)
        cur = lp_tighten_bound(cur, j, upper=new_hi)
        sol = solver.solve(warm)
        cold = lp_solve(cur, backend=backend)
        assert sol.status == cold.status
        if not sol.optimal:
            break
        assert sol.objective == pytest.approx(cold.objective, abs=1e-8)
        warm = sol.basis
        first = sol


def test_infeasible_detected():
    lp = LinearProgram([1.0, 1.0], [0, 0], [1, 1], [[1.0, 1.0]], (">=",), [3.0])
    assert lp_solve(lp).status == "infeasible"


def test_bound_crossing():
    lp = LinearProgram([1.0], [0], [2])
    with pytest.raises(BoundCrossing):
        lp_tighten_bound(lp, 0, lower=3)
    s = DualSimplex(lp)
    with pytest.raises(BoundCrossing):
        s.set_bounds(0, 2.0, 1.0)


def test_no_rows():
    lp = LinearProgram([1.0, -2.0], [-1, -1], [1, 3])
    sol = lp_solve(lp)
    assert sol.optimal and np.allclose(sol.x, [-1, 3]) and sol.objective == pytest.approx(-7)


def test_rejects_infinite_bounds():
    with pytest.raises(ValueError):
        LinearProgram([1.0], [-np.inf], [1.0])


def test_degenerate_lp_terminates():
    # many redundant rows through the same vertex
    n = 5
    A = np.vstack([np.eye(n), np.ones((1, n)), np.ones((1, n)), -np.eye(n)])
    rhs = np.concatenate([np.ones(n), [n, n], -np.ones(n)])
    lp = LinearProgram(-np.ones(n), np.zeros(n), np.full(n, 2.0), A, ("<=",) * (n + 2) + (">=",) * n, rhs)
    sol = lp_solve(lp)
    assert sol.optimal and sol.objective == pytest.approx(-n)
