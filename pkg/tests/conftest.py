import numpy as np
import pytest

from mieval.synth import default_cohort_spec, default_outcomes, generate_cohort
from mieval.tabular import ColumnSpec, Dataset


def make_dataset(cols, rows):
    """Dataset from ColumnSpecs and rows of floats/None."""
    vals = np.array([[np.nan if v is None else v for v in r] for r in rows], dtype=float)
    return Dataset(tuple(cols), vals)


@pytest.fixture(scope="session")
def small_cohort():
    spec = default_cohort_spec(n=1500, seed=11)
    ds, truth = generate_cohort(spec)
    return ds, truth, default_outcomes(spec)


@pytest.fixture
def mixed_dataset():
    """Numeric (binned), binary, categorical and outcome columns with a few holes."""
    rng = np.random.default_rng(0)
    n = 200
    age = rng.normal(60, 12, n)
    sex = rng.integers(0, 2, n).astype(float)
    race = rng.choice(3, n, p=[0.6, 0.3, 0.1]).astype(float)
    y = (rng.random(n) < 1 / (1 + np.exp(-(age - 60) / 10))).astype(float)
    vals = np.column_stack([age, sex, race, y])
    vals[rng.random(n) < 0.2, 0] = np.nan
    vals[rng.random(n) < 0.15, 2] = np.nan
    cols = (ColumnSpec("age", "numeric", bins=(50, 70)),
            ColumnSpec("sex", "binary"),
            ColumnSpec("race", "categorical", categories=("White", "Black", "Asian")),
            ColumnSpec("y", "binary", "outcome"))
    return Dataset(cols, vals)
