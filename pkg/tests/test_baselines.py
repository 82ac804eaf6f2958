import numpy as np
import pytest

from conftest import random_dataset, random_spec
from riskscore.baselines import (
    POST_PROCESSORS, fit_pool, fit_penalized_logistic, penalty_max, penalty_path, platt_scale, pooled_pipeline,
    postprocess, refit_intercept, round_naive, round_rescaled, traditional_pipeline, unit_weights,
)
from riskscore.dataset import Dataset, make_rng
from riskscore.evaluation import auc_from_scores, cal, model_from_vector
from riskscore.loss import loss_value
from riskscore.problem import MaxModelSize, Sign, is_feasible, objective_value

BOX = (np.full(3, -5), np.full(3, 5))


def test_round_naive_examples():
    assert round_naive([0.49, 0.5, -0.5], *BOX).tolist() == [0, 1, -1]
    assert round_naive([0.0, 7.2, -9.0], *BOX).tolist() == [0, 5, -5]
    assert round_naive([0.3, -0.4, 0.1], *BOX).tolist() == [0, 0, 0]


def test_round_rescaled_examples():
    assert round_rescaled([0.7, 0.2, 0.4], *BOX)[1:].tolist() == [3, 5]
    out = round_rescaled([0.0, -3.0, 1.1], *BOX)
    assert np.max(np.abs(out[1:])) == 5
    with pytest.raises(ValueError):
        round_rescaled([1.0, 0.0, 0.0], *BOX)


def test_unit_weights_example():
    assert unit_weights([-0.3, 0.0, 2.1])[1:].tolist() == [0, 1]
    assert unit_weights(np.array([0.0, -0.3, 0.0, 2.1]))[1:].tolist() == [-1, 0, 1]


@pytest.mark.parametrize("seed", range(5))
def test_unit_intercept_refit_helps(seed):
    data = random_dataset(seed, n=200, d=3)
    lam = fit_penalized_logistic(data, 1.0, 0.0).coefficients
    kept = unit_weights(lam)
    refit = unit_weights(lam, data)
    assert set(np.unique(refit[1:])) <= {-1, 0, 1}
    assert loss_value(refit, data) <= loss_value(kept, data) + 1e-12


def test_mle_is_stationary():
    data = random_dataset(1, n=300, d=3)
    fit = fit_penalized_logistic(data, 0.5, 0.0, tol=1e-10)
    Z = data.margins
    m = Z @ fit.coefficients
    grad = Z.T @ (-1 / (1 + np.exp(m))) / len(m)
    assert fit.converged
    assert np.linalg.norm(grad) <= 1e-6


def test_lasso_large_penalty_zeroes():
    data = random_dataset(2, n=200, d=3)
    fit = fit_penalized_logistic(data, 1.0, 10 * penalty_max(data, 1.0))
    assert np.all(fit.coefficients[1:] == 0)
    g = penalty_max(data, 1.0)
    assert np.all(fit_penalized_logistic(data, 1.0, g * 1.0001).coefficients[1:] == 0)
    assert np.any(fit_penalized_logistic(data, 1.0, g * 0.5).coefficients[1:] != 0)


def test_self_oracle():
    data = random_dataset(3, n=150, d=3)
    a = fit_penalized_logistic(data, 0.3, 0.01)
    b = fit_penalized_logistic(data, 0.3, 0.01, tol=1e-10, max_iter=50000)
    assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_sign_projection():
    data = random_dataset(4, n=150, d=3)
    fit = fit_penalized_logistic(data, 0.5, 1e-4, signs={1: 1, 2: -1})
    assert fit.coefficients[1] >= 0 and fit.coefficients[2] <= 0


def test_penalty_path_shape():
    data = random_dataset(5, n=100, d=3)
    gs = penalty_path(data, 1.0)
    assert len(gs) == 100
    assert gs[-1] / gs[0] == pytest.approx(1e-4)
    assert np.all(np.diff(gs) < 0)


def test_bad_parameters():
    data = random_dataset(5, n=50, d=2)
    with pytest.raises(ValueError):
        fit_penalized_logistic(data, 1.5, 0.1)
    with pytest.raises(ValueError):
        fit_penalized_logistic(data, 0.5, -1)


def test_postprocessors_are_pure_and_polish_descends():
    spec = random_spec(6, n=150, d=3, box=5, C0=1e-3)
    lam = fit_penalized_logistic(spec.data, 0.5, 1e-3).coefficients
    for m in POST_PROCESSORS:
        a = postprocess(lam, m, spec)
        b = postprocess(lam, m, spec)
        assert np.array_equal(a, b)
    for base in ("Rd", "RsRd", "SeqRd"):
        raw = postprocess(lam, base, spec)
        pol = postprocess(lam, base + "+DCD", spec)
        assert objective_value(pol, spec) <= objective_value(raw, spec) + 1e-12
    with pytest.raises(ValueError):
        postprocess(lam, "Nope", spec)


def test_pooled_returns_feasible():
    spec = random_spec(7, n=150, d=3, box=5, C0=1e-3, constraints=(MaxModelSize(1), Sign(2, 1)))
    grid = [(a, g) for a in (0.5, 1.0) for g in penalty_path(spec.data, a, n=6)]
    res = pooled_pipeline(spec, "Rd", grid, k=3)
    assert res.found
    assert is_feasible(res.model.coefficients, spec)[0]
    assert len(res.rows) == len(grid)
    assert 0 < res.feasible_fraction["feasible"] <= 1


def test_pooled_no_feasible_model():
    spec = random_spec(8, n=120, d=3, box=5, constraints=(MaxModelSize(0),))
    grid = [(1.0, 1e-6)]  # unit weights keep every non-zero fitted feature
    res = pooled_pipeline(spec, "Unit", grid, k=0)
    assert not res.found
    assert res.feasible_fraction["violates_size"] == 1.0


def test_grid_of_one_is_traditional():
    spec = random_spec(9, n=150, d=3, box=5)
    g = penalty_path(spec.data, 1.0)[50]
    one = pooled_pipeline(spec, "Rd", [(1.0, g)], k=3)
    assert np.array_equal(one.model.coefficients,
                          postprocess(fit_penalized_logistic(spec.data, 1.0, g).coefficients, "Rd", spec))


def test_pool_parallel_matches_serial():
    spec = random_spec(10, n=120, d=3, box=5)
    grid = [(1.0, g) for g in penalty_path(spec.data, 1.0, n=4)]
    a = fit_pool(spec, grid, k=3, jobs=1)
    b = fit_pool(spec, grid, k=3, jobs=2)
    for (_, _, fa), (_, _, fb) in zip(a.folds, b.folds):
        for key in grid:
            assert np.array_equal(fa[key].coefficients, fb[key].coefficients)


def test_traditional_pipeline_runs():
    spec = random_spec(11, n=120, d=3, box=5)
    res = traditional_pipeline(spec, "Unit", k=0)
    assert res.found


def test_platt_recovers_generating_model():
    rng = make_rng(0)
    s = rng.normal(0, 2, size=200_000)
    y = np.where(rng.random(s.size) < 1 / (1 + np.exp(-s)), 1, -1)
    A, B = platt_scale(s, y)
    assert abs(A - 1) <= 0.05 and abs(B) <= 0.05


def test_platt_preserves_auc_and_handles_constant():
    rng = make_rng(1)
    s = rng.integers(-3, 4, size=500).astype(float)
    y = np.where(rng.random(500) < 1 / (1 + np.exp(-s)), 1, -1)
    A, B = platt_scale(s, y)
    assert A > 0
    assert auc_from_scores(A * s + B, y) == pytest.approx(auc_from_scores(s, y), abs=1e-12)
    A, B = platt_scale(np.zeros(500), y)
    assert 1 / (1 + np.exp(-B)) == pytest.approx(np.mean(y > 0))
    with pytest.raises(ValueError):
        platt_scale(s, np.ones(500))


def test_refit_intercept_integer():
    data = random_dataset(12, n=200, d=2)
    out = refit_intercept(np.array([0.0, 1.0, -1.0]), data)
    assert out.dtype == np.int64 and out[1:].tolist() == [1, -1]
