"""Little's chi-square test of missing completely at random."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .jm import em_mvn
from .tabular import Dataset, SchemaError, binarize_for_estimation, one_hot

PATTERN_RIDGE = 1e-8


@dataclass
class McarTestResult:
    d2: float
    df: int
    p_value: float
    n_patterns: int
    flags: list[str] = field(default_factory=list)

    def rejected(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def numeric_matrix(ds: Dataset, representation: str = "auto") -> tuple[np.ndarray, list[str]]:
    """Matrix the test runs on: binary/numeric columns as-is, categoricals one-hot.

    ``representation="binarized"`` first bins numeric predictors; ``"auto"``
    does so only when every numeric predictor declares bins.
    """
    if representation not in ("auto", "binarized", "numeric"):
        raise ValueError(f"unknown representation {representation!r}")
    keep = [c.name for c in ds.columns if c.role != "id"]
    ds = ds.select(keep)
    binnable = all(c.bins for c in ds.columns if c.role == "predictor" and c.kind == "numeric")
    if representation == "binarized" or (representation == "auto" and binnable):
        try:
            ds = binarize_for_estimation(ds)
        except SchemaError:
            if representation == "binarized":
                raise
    for c in list(ds.columns):
        if c.kind == "categorical":
            ds = one_hot(ds, c.name)
    return ds.values.copy(), ds.names


def little_mcar_test(data, representation: str = "auto", em_tol: float = 1e-10,
                     em_max_iter: int = 1000) -> McarTestResult:
    """Little's d2 statistic with EM estimates of (mu, Sigma).

    ``data`` is a :class:`Dataset` or a float matrix with NaN for missing.
    """
    if isinstance(data, Dataset):
        Y, _ = numeric_matrix(data, representation)
    else:
        Y = np.asarray(data, dtype=float)
    miss = np.isnan(Y)
    keys, inverse = np.unique(miss, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    if not miss.any():
        return McarTestResult(0.0, 0, 1.0, 1)
    if Y.shape[1] < 2:
        raise ValueError("Little's test needs at least 2 variables")
    flags = []
    fit = em_mvn(Y, tol=em_tol, max_iter=em_max_iter)
    flags += [f"em-{f}" for f in fit.flags]
    if not fit.converged:
        flags.append("em-not-converged")
    d2 = 0.0
    df = 0
    for k, pat in enumerate(keys):
        o = ~pat
        if not o.any():
            continue
        rows = inverse == k
        nj = int(rows.sum())
        ybar = Y[np.ix_(rows, o)].mean(axis=0)
        diff = ybar - fit.mu[o]
        S = fit.sigma[np.ix_(o, o)]
        if nj < o.sum() + 1 or np.linalg.cond(S) > 1e12:
            S = S + PATTERN_RIDGE * np.eye(len(S))
            flags.append("pattern-ridge")
        d2 += nj * float(diff @ np.linalg.solve(S, diff))
        df += int(o.sum())
    df -= Y.shape[1]
    p = float(stats.chi2.sf(d2, df)) if df > 0 else 1.0
    return McarTestResult(float(d2), int(df), p, len(keys), sorted(set(flags)))
