import numpy as np
import pytest
from scipy import stats

from mieval.chain import encode, initial_fill, visit_sequence
from mieval.fcs import (FcsConfig, impute_logreg, impute_norm, impute_pmm, impute_polyreg, match_donors,
                        representation, run_fcs)
from mieval.pooling import rubin_pool
from mieval.tabular import ColumnSpec, Dataset

from conftest import make_dataset


def gaussian_mar(n, seed, prop=0.3):
    """Three correlated Gaussians; x2 missing more often when x0 is high."""
    rng = np.random.default_rng(seed)
    R = np.array([[1, 0.5, 0.6], [0.5, 1, 0.4], [0.6, 0.4, 1]])
    Y = rng.multivariate_normal([0, 1, 2], R, size=n)
    full = Dataset(tuple(ColumnSpec(f"x{i}") for i in range(3)), Y)
    p = 1 / (1 + np.exp(-(Y[:, 0] * 1.5 + np.log(prop / (1 - prop)))))
    Z = Y.copy()
    Z[rng.random(n) < p, 2] = np.nan
    return full, Dataset(full.columns, Z)


def test_initial_fill():
    ds = make_dataset([ColumnSpec("a"), ColumnSpec("b", "binary"),
                       ColumnSpec("c", "categorical", categories=("u", "v"))],
                      [[1, 1, 0], [2, 1, 1], [3, 0, None], [None, None, 1], [2, 1, 0]])
    f = initial_fill(ds)
    assert f.values[3, 0] == 2.0 and f.values[3, 1] == 1.0
    assert f.values[2, 2] == 0.0  # tie between u and v: first declared wins
    full = make_dataset([ColumnSpec("a")], [[1.0], [2.0]])
    assert initial_fill(full).equals(full)


def test_visit_sequence():
    ds = make_dataset([ColumnSpec("a"), ColumnSpec("b"), ColumnSpec("c")],
                      [[None, 1, None], [None, 2, 1], [1, 2, 1], [None, 3, 2]])
    assert visit_sequence(ds, ["a", "b", "c"], "monotone") == ["c", "a"]
    assert visit_sequence(ds, ["a", "b", "c"], "revmonotone") == ["a", "c"]


def test_pmm_single_donor():
    rng = np.random.default_rng(0)
    x = np.array([[0.0], [1.0], [2.0], [3.0], [10.0]])
    y = np.array([0.1, 1.2, 1.9, 3.3, 7.3])
    out = impute_pmm(y, x, np.array([[10.0]]), 1, rng)
    assert out[0] == 7.3


def test_match_donors_uniform_on_ties():
    rng = np.random.default_rng(1)
    picks = np.concatenate([match_donors(np.zeros(10), np.zeros(1), 3, rng) for _ in range(3000)])
    counts = np.bincount(picks, minlength=10)
    # three donors are chosen per draw; over draws the random tie-break spreads them evenly
    assert stats.chisquare(counts).pvalue > 0.01
    with pytest.raises(ValueError):
        match_donors(np.zeros(2), np.zeros(1), 3, rng)


def test_pmm_values_in_observed_support():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((300, 2))
    y = X @ [1.0, -2.0] + rng.standard_normal(300)
    out = impute_pmm(y[:200], X[:200], X[200:], 5, rng)
    assert set(out) <= set(y[:200])


def test_norm_noiseless_and_marginal():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5000, 1))
    out = impute_norm(2 * x[:4000, 0], x[:4000], x[4000:], rng)
    assert np.max(np.abs(out - 2 * x[4000:, 0])) < 1e-5
    y = rng.normal(3, 2, 4000)
    out = impute_norm(y, np.zeros((4000, 0)), np.zeros((4000, 0)), rng)
    assert abs(out.mean() - 3) < 0.15 and abs(out.std() - 2) < 0.15
    a = impute_norm(y[:100], np.zeros((100, 0)), np.zeros((5, 0)), np.random.default_rng(1))
    b = impute_norm(y[:100], np.zeros((100, 0)), np.zeros((5, 0)), np.random.default_rng(2))
    assert not np.array_equal(a, b)


def test_logreg_examples():
    rng = np.random.default_rng(4)
    y = np.r_[np.ones(500), np.zeros(500)]
    out = impute_logreg(y, np.zeros((1000, 0)), np.zeros((4000, 0)), rng)
    assert abs(out.mean() - 0.5) < 0.04
    x = rng.standard_normal((2000, 1))
    lab = (x[:, 0] > 0).astype(float)
    flags = []
    out = impute_logreg(lab[:1000], x[:1000], x[1000:], rng, flags)
    assert np.mean(out == lab[1000:]) >= 0.95
    assert "logreg-separation-ridge" in flags
    with pytest.raises(ValueError):
        impute_logreg(np.ones(10), np.zeros((10, 0)), np.zeros((2, 0)), rng)


def test_polyreg_examples():
    rng = np.random.default_rng(5)
    y = np.tile([0.0, 1.0, 2.0], 400)
    out = impute_polyreg(y, np.zeros((1200, 0)), np.zeros((6000, 0)), rng, 3)
    freq = np.bincount(out.astype(int), minlength=3) / 6000
    assert np.all(np.abs(freq - 1 / 3) < 0.03)
    x = rng.uniform(-3, 3, (3000, 1))
    cat = np.digitize(x[:, 0], [-1, 1]).astype(float)
    out = impute_polyreg(cat[:2000], x[:2000], x[2000:], rng, 3)
    assert np.mean(out == cat[2000:]) >= 0.95
    with pytest.raises(ValueError):
        impute_polyreg(np.zeros(10), np.zeros((10, 0)), np.zeros((2, 0)), rng, 2)


def test_polyreg_two_categories_matches_logreg_in_distribution():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1500, 1))
    y = (rng.random(1500) < 1 / (1 + np.exp(-x[:, 0]))).astype(float)
    xm = np.full((4000, 1), 0.7)
    a = impute_polyreg(y, x, xm, np.random.default_rng(1), 2).mean()
    b = impute_logreg(y, x, xm, np.random.default_rng(2)).mean()
    assert abs(a - b) < 0.06


def test_config_validation():
    with pytest.raises(ValueError):
        FcsConfig(variant="logreg")
    with pytest.raises(ValueError):
        FcsConfig(pmm_donors=0)
    with pytest.raises(ValueError):
        FcsConfig(visit_order="random")
    assert representation(make_dataset([ColumnSpec("c", "categorical", categories=("a", "b"))],
                                       [[0.0], [1.0]]), FcsConfig(variant="norm")).names == ["c=b"]


@pytest.mark.parametrize("variant", ["default", "norm"])
def test_run_fcs_completes_and_keeps_observed(mixed_dataset, variant):
    cfg = FcsConfig(variant=variant, m=5, max_iter=5)
    sets = run_fcs(mixed_dataset, cfg, ["y"], seed=[3])
    assert len(sets) == 5
    work = representation(mixed_dataset, cfg)
    for s in sets:
        assert s.dataset.is_complete()
        obs = ~work.mask
        assert np.array_equal(s.dataset.values[obs], work.values[obs])


def test_run_fcs_complete_input_identity():
    full, _ = gaussian_mar(100, 0)
    sets = run_fcs(full, FcsConfig(m=3), seed=[0])
    assert all(s.dataset.equals(full) for s in sets)


def test_run_fcs_deterministic_per_seed(mixed_dataset):
    a = run_fcs(mixed_dataset, FcsConfig(m=2, max_iter=3), ["y"], seed=[9])
    b = run_fcs(mixed_dataset, FcsConfig(m=3, max_iter=3), ["y"], seed=[9])
    assert a[1].dataset.equals(b[1].dataset)


def test_norm_calibration_mean_within_two_se():
    full, ds = gaussian_mar(2000, 1)
    sets = run_fcs(ds, FcsConfig(variant="norm", m=10), seed=[1])
    q = [s.dataset.col("x2").mean() for s in sets]
    u = [s.dataset.col("x2").var(ddof=1) / ds.n_rows for s in sets]
    p = rubin_pool(np.array(q)[:, None], np.array(u)[:, None])
    assert abs(p.qbar[0] - full.col("x2").mean()) < 2 * p.se[0]
    assert p.B[0] > 0


def test_visit_order_has_small_effect():
    _, ds = gaussian_mar(2000, 2)
    ds = ds.with_values(np.where(np.random.default_rng(0).random(ds.values.shape) < 0.1, np.nan, ds.values)
                        * np.r_[1, 1, 1])
    res = []
    for order in ("monotone", "revmonotone"):
        sets = run_fcs(ds, FcsConfig(variant="norm", m=10, visit_order=order), seed=[4])
        q = [s.dataset.col("x2").mean() for s in sets]
        u = [s.dataset.col("x2").var(ddof=1) / ds.n_rows for s in sets]
        res.append(rubin_pool(np.array(q)[:, None], np.array(u)[:, None]))
    assert abs(res[0].qbar[0] - res[1].qbar[0]) < 0.5 * res[0].se[0]


def test_log_transform_pmm_returns_exact_observed():
    rng = np.random.default_rng(7)
    bmi = np.exp(rng.normal(3.4, 0.2, 400))
    age = rng.normal(60, 10, 400)
    vals = np.column_stack([bmi, age])
    vals[rng.random(400) < 0.3, 0] = np.nan
    ds = Dataset((ColumnSpec("BMI", log_transform=True), ColumnSpec("age")), vals)
    for s in run_fcs(ds, FcsConfig(m=2, max_iter=3), seed=[1]):
        assert set(s.dataset.col("BMI")) <= set(bmi[~np.isnan(vals[:, 0])])
