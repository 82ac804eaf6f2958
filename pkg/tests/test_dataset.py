import numpy as np
import pytest

from riskscore.dataset import (
    INTERCEPT_NAME, DataError, Dataset, load_bundled, load_csv, simulate_nested, split_folds, write_csv,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_basic(tmp_path):
    p = _write(tmp_path, "y,a,b\n1,0,2\n0,1,3\n1,1,0\n")
    d = load_csv(p)
    assert d.names == (INTERCEPT_NAME, "a", "b")
    assert d.n == 3 and d.d == 2
    assert np.array_equal(d.labels, [1, -1, 1])
    assert np.all(d.features[:, 0] == 1)
    assert d.integer_valued


def test_load_csv_outcome_column_by_name(tmp_path):
    p = _write(tmp_path, "a,out,b\n0,1,2\n1,0,3\n")
    d = load_csv(p, "out")
    assert d.names[1:] == ("a", "b")
    assert np.array_equal(d.features[:, 1:], [[0, 2], [1, 3]])


@pytest.mark.parametrize("text,needle", [
    ("y,a\n1,x\n", "row 2, column 'a'"),
    ("y,a\n1,\n", "row 2, column 'a'"),
    ("y,a\n1,nan\n", "non-finite"),
    ("y,a\n1,2,3\n", "row 2 has 3 cells"),
    ("y,a\n2,1\n0,1\n", "column 'y'"),
    ("y,a\n", "no data rows"),
])
def test_load_csv_errors_name_location(tmp_path, text, needle):
    with pytest.raises(DataError, match=needle.replace("(", r"\(").replace(")", r"\)")):
        load_csv(_write(tmp_path, text))


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "nope.csv")


def test_write_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset.from_arrays(rng.normal(size=(30, 4)), rng.integers(0, 2, 30))
    p = tmp_path / "w.csv"
    write_csv(d, p, header_lines=["riskscore test"])
    e = load_csv(p)
    assert np.array_equal(d.features, e.features)
    assert np.array_equal(d.labels, e.labels)
    assert d.names == e.names


def test_dataset_is_read_only():
    d = Dataset.from_arrays([[1.0], [2.0]], [0, 1])
    with pytest.raises(ValueError):
        d.features[0, 0] = 3
    with pytest.raises(ValueError):
        d.margins[0, 0] = 3
    assert np.array_equal(d.margins, d.labels[:, None] * d.features)


def test_bundled_breastcancer(breastcancer):
    assert breastcancer.n == 683 and breastcancer.d == 9
    assert breastcancer.integer_valued
    X = breastcancer.features[:, 1:]
    assert X.min() >= 1 and X.max() <= 10
    assert int((breastcancer.labels > 0).sum()) == 239


def test_split_folds_stratified_and_deterministic(breastcancer):
    a = split_folds(breastcancer, 5, seed=7)
    b = split_folds(breastcancer, 5, seed=7)
    c = split_folds(breastcancer, 5, seed=8)
    assert np.array_equal(a.folds, b.folds)
    assert not np.array_equal(a.folds, c.folds)
    sizes = np.bincount(a.folds)[1:]
    assert sizes.max() - sizes.min() <= 1
    pos = breastcancer.labels > 0
    npos = np.bincount(a.folds[pos], minlength=6)[1:]
    assert npos.max() - npos.min() <= 1
    tr, te = a.train_test(2)
    assert len(np.intersect1d(tr, te)) == 0 and len(tr) + len(te) == breastcancer.n


def test_split_folds_rejects_bad_k(breastcancer):
    with pytest.raises(ValueError):
        split_folds(breastcancer, 1, 0)


def test_simulate_nested_prefix_structure(breastcancer):
    sets = simulate_nested(breastcancer, [5, 12], [50, 200], seed=3)
    assert set(sets) == {(50, 5), (200, 5), (50, 12), (200, 12)}
    big = sets[(200, 12)]
    for (n, d), ds in sets.items():
        assert ds.n == n and ds.d == d
        assert np.array_equal(ds.features, big.features[:n, : d + 1])
        assert np.array_equal(ds.labels, big.labels[:n])
    X = big.features[:, 1:]
    assert X.min() >= 0 and X.max() <= 10 and np.all(X == np.rint(X))
    # the first d0 columns are a permutation of the original features
    base = [nm.rsplit("_", 1)[0] for nm in big.names[1:10]]
    assert sorted(base) == sorted(breastcancer.names[1:])
    again = simulate_nested(breastcancer, [5, 12], [50, 200], seed=3)
    assert np.array_equal(again[(200, 12)].features, big.features)
