import itertools
import math

import numpy as np
import pytest

from conftest import random_spec
from riskscore.dataset import make_rng
from riskscore.heuristics import (
    RoundingLattice, dcd_polish, make_evaluator, sequential_round, subsample_threshold, subsampled_round,
)
from riskscore.problem import MaxModelSize, Sign, is_feasible, objective_value


def _single_moves(lam, spec):
    cc = spec.compiled
    for j in range(lam.size):
        for t in range(int(cc.lam_lb[j]), int(cc.lam_ub[j]) + 1):
            if t != lam[j]:
                m = lam.copy()
                m[j] = t
                if is_feasible(m, spec)[0]:
                    yield m


@pytest.mark.parametrize("seed", range(12))
def test_dcd_is_one_opt(seed):
    cons = (MaxModelSize(2),) if seed % 3 == 0 else ()
    spec = random_spec(seed, d=3, box=4, C0=1e-3, constraints=cons)
    lam = dcd_polish(np.zeros(spec.d + 1, dtype=np.int64), spec)
    v = objective_value(lam, spec)
    assert is_feasible(lam, spec)[0]
    for m in _single_moves(lam, spec):
        assert objective_value(m, spec) >= v - 1e-12


def test_dcd_golden_matches_brute_force():
    spec = random_spec(7, n=80, d=3, box=20, C0=1e-3)
    start = np.zeros(4, dtype=np.int64)
    a = dcd_polish(start, spec, use_golden=True)
    b = dcd_polish(start, spec, use_golden=False)
    assert objective_value(a, spec) == pytest.approx(objective_value(b, spec), abs=1e-12)


def test_dcd_never_increases():
    spec = random_spec(2, d=3, box=3)
    rng = make_rng(0)
    for _ in range(10):
        start = rng.integers(-3, 4, size=4)
        lam, info = dcd_polish(start, spec, return_info=True)
        assert info["objective"] <= info["start_objective"] + 1e-15


def test_dcd_rejects_bad_start():
    spec = random_spec(2, d=2, box=3, constraints=(Sign(1, 1),))
    with pytest.raises(ValueError):
        dcd_polish(np.array([0, -1, 0]), spec)
    with pytest.raises(ValueError):
        dcd_polish(np.array([0, 0.5, 0]), spec)


def test_dcd_respects_directions():
    spec = random_spec(4, d=3, box=3)
    lam = dcd_polish(np.zeros(4, dtype=np.int64), spec, directions=[0])
    assert np.all(lam[1:] == 0)


@pytest.mark.parametrize("seed", range(10))
def test_sequential_round_on_lattice(seed):
    spec = random_spec(seed, d=3, box=3)
    rho = make_rng(seed).uniform(-2.5, 2.5, size=4)
    lam, info = sequential_round(rho, spec, return_info=True)
    assert RoundingLattice.around(rho, spec.compiled.lam_lb, spec.compiled.lam_ub).contains(lam)
    assert len(info["steps"]) == 4
    # the last step commits the value of the returned point
    assert info["steps"][-1][2] == pytest.approx(objective_value(lam, spec), abs=1e-12)


def test_sequential_round_keeps_integral_components():
    spec = random_spec(1, d=3, box=3)
    lam, info = sequential_round(np.array([1.0, 0.5, -2.0, 0.3]), spec, return_info=True)
    assert lam[0] == 1 and lam[2] == -2
    assert info["loss_evaluations"] == 2 * (2 + 1)


def test_sequential_round_evaluation_count():
    spec = random_spec(1, d=3, box=3)
    _, info = sequential_round(np.array([0.5, 0.5, -0.5, 0.3]), spec, return_info=True)
    assert info["loss_evaluations"] == 4 * 5


def test_sequential_round_dimension_check():
    spec = random_spec(1, d=3, box=3)
    with pytest.raises(ValueError):
        sequential_round(np.zeros(3), spec)


def test_rounding_lattice_points():
    L = RoundingLattice.around([0.5, 2.0, -1.2], [-3] * 3, [3] * 3)
    pts = L.points()
    assert len(pts) == 4
    assert all(L.contains(p) for p in pts)


def test_subsample_threshold_shape():
    e1 = subsample_threshold(0.05, 100, 1000, 1.0, 5)
    assert e1 == pytest.approx(math.sqrt((math.log(20) + 5 * math.log(2)) / 200 * (1 - 0.01)))
    assert subsample_threshold(0.05, 1000, 1000, 1.0, 5) == 0.0
    assert subsample_threshold(0.1, 100, 1000, 1.0, 5) < e1
    with pytest.raises(ValueError):
        subsample_threshold(0.05, 0, 10, 1.0, 2)
    with pytest.raises(ValueError):
        subsample_threshold(1.5, 5, 10, 1.0, 2)


def test_subsampled_round_full_sample_equals_sequential():
    spec = random_spec(5, n=100, d=3, box=3)
    rho = np.array([0.3, 1.4, -0.6, 0.5])
    lam = sequential_round(rho, spec)
    out, info = subsampled_round(rho, spec, 100, 0.05, np.inf, return_info=True)
    assert np.array_equal(out, lam)
    assert info["V_n"] == pytest.approx(objective_value(lam, spec), abs=1e-12)


def test_subsampled_round_rejects_when_not_better():
    spec = random_spec(5, n=100, d=3, box=3)
    out = subsampled_round(np.array([0.3, 1.4, -0.6, 0.5]), spec, 50, 0.05, 0.0, rng=make_rng(1))
    assert out is None


def test_table_and_direct_evaluators_agree():
    spec = random_spec(9, d=3, box=3)
    a, b = make_evaluator(spec, True), make_evaluator(spec, False)
    for lam in itertools.product(range(-3, 4), repeat=2):
        v = np.array([lam[0], lam[1], 1, -1])
        assert abs(a.value(v) - b.value(v)) <= 1e-12
