import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskscore import _kernels
from riskscore.dataset import Dataset
from riskscore.loss import (
    LossEvaluator, UnsupportedConfiguration, build_lookup, log1pexp_neg, loss_cut, loss_range, loss_value,
    score_extremes,
)
from riskscore.problem import CoefficientSet

from conftest import random_dataset


def _direct_loss(lam, data):
    return math.fsum(math.log1p(math.exp(-m)) if m > -30 else -m + math.log1p(math.exp(m))
                     for m in data.margins @ np.asarray(lam, float)) / data.n


def test_log1pexp_neg_extremes():
    s = np.array([-1000.0, -40.0, 0.0, 40.0, 1000.0])
    v = log1pexp_neg(s)
    assert np.all(np.isfinite(v))
    assert v[2] == pytest.approx(math.log(2.0))
    assert v[0] == pytest.approx(1000.0)
    assert v[4] == pytest.approx(0.0, abs=1e-300)


@pytest.mark.parametrize("seed", range(5))
def test_loss_value_matches_fsum(seed):
    data = random_dataset(seed, n=200, d=4)
    lam = np.random.default_rng(seed).normal(size=5) * 3
    assert loss_value(lam, data) == pytest.approx(_direct_loss(lam, data), rel=1e-14)


def test_backends_agree():
    data = random_dataset(1, n=500, d=4)
    lam = np.array([0.5, -1.0, 2.0, 0.0, 1.5])
    np_b, nb_b = _kernels.get_backend("numpy"), _kernels.get_backend("numba")
    s = data.margins @ lam
    assert np_b.loss_scores(s) == pytest.approx(nb_b.loss_scores(s), rel=1e-14)
    v1, g1 = np_b.loss_grad(data.margins, lam)
    v2, g2 = nb_b.loss_grad(data.margins, lam)
    assert v1 == pytest.approx(v2, rel=1e-14)
    assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15)


def test_gradient_matches_finite_differences():
    data = random_dataset(2, n=150, d=3)
    lam = np.array([0.3, -0.7, 1.1, 0.4])
    cut = loss_cut(lam, data)
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (loss_value(lam + e, data) - loss_value(lam - e, data)) / (2 * h)
        assert cut.gradient[j] == pytest.approx(fd, rel=1e-6, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.lists(st.integers(-4, 4), min_size=4, max_size=4))
def test_cut_underestimates_loss(seed, anchor, point):
    data = random_dataset(seed % 50, n=80, d=3)
    cut = loss_cut(np.array(anchor), data)
    assert cut.at(point) <= loss_value(point, data) + 1e-12


def test_score_extremes_bruteforce():
    data = random_dataset(4, n=40, d=3)
    box = CoefficientSet.uniform(3, -2, 2, intercept=(-1, 3))
    grid = np.stack(np.meshgrid(*[np.arange(l, h + 1) for l, h in zip(box.lb, box.ub)], indexing="ij"), -1)
    grid = grid.reshape(-1, 4)
    S = data.features @ grid.T
    for r in (None, 1, 2):
        sb = score_extremes(data, box, r)
        keep = np.count_nonzero(grid[:, 1:], axis=1) <= (3 if r is None else r)
        assert np.allclose(sb.s_min_i, S[:, keep].min(axis=1))
        assert np.allclose(sb.s_max_i, S[:, keep].max(axis=1))


def test_loss_range_brackets_every_lattice_point():
    data = random_dataset(5, n=60, d=2)
    box = CoefficientSet.uniform(2, -2, 2)
    lo, hi = loss_range(data, box)
    for a in range(-2, 3):
        for b in range(-2, 3):
            for c in range(-2, 3):
                v = loss_value([a, b, c], data)
                assert lo - 1e-12 <= v <= hi + 1e-12


def test_lookup_requires_integer_features():
    data = Dataset.from_arrays([[0.5], [1.0]], [0, 1])
    with pytest.raises(UnsupportedConfiguration):
        build_lookup(data, CoefficientSet.uniform(1, -1, 1))


def test_lookup_covers_and_matches():
    data = random_dataset(6, n=100, d=3)
    box = CoefficientSet.uniform(3, -3, 3)
    t = build_lookup(data, box)
    s = np.arange(t.offset, t.s_max + 1)
    assert np.allclose(t.values, log1pexp_neg(s), rtol=0, atol=1e-15)
    ev = LossEvaluator(data, box)
    ed = LossEvaluator(data, box, use_table=False)
    rng = np.random.default_rng(0)
    for _ in range(50):
        lam = rng.integers(-3, 4, size=4)
        assert ev.value(lam) == pytest.approx(ed.value(lam), abs=1e-12)


def test_coord_values_match_direct():
    data = random_dataset(7, n=90, d=3)
    box = CoefficientSet.uniform(3, -3, 3)
    for use_table in (True, False):
        ev = LossEvaluator(data, box, use_table=use_table)
        lam = np.array([1, -1, 2, 0])
        s = ev.scores(lam)
        deltas = np.array([-2, -1, 0, 1])
        got = ev.coord_values(s, 2, deltas)
        for dlt, g in zip(deltas, got):
            e = lam.copy()
            e[2] += dlt
            assert g == pytest.approx(loss_value(e, data), abs=1e-12)


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_summation_is_compensated(backend):
    # wide dynamic range: a few huge terms and many tiny ones
    rng = np.random.default_rng(11)
    s = np.concatenate([rng.uniform(-700, -600, 5), rng.uniform(20, 35, 100_000), rng.normal(size=1000)])
    rng.shuffle(s)
    terms = [math.log1p(math.exp(-m)) if m > -30 else -m + math.log1p(math.exp(m)) for m in s]
    ref = math.fsum(terms) / len(s)
    got = _kernels.get_backend(backend).loss_scores(s)
    assert abs(got - ref) <= 4e-16 * ref
    assert _kernels.csum_np(np.array(terms)) == pytest.approx(math.fsum(terms), rel=4e-16)
