"""Rubin's rules and rules of thumb for the number of imputations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import wald_ci

# Bodner's guideline: FMI -> imputations needed
BODNER_TABLE = ((0.05, 3), (0.1, 6), (0.2, 12), (0.3, 24), (0.5, 59))


@dataclass
class PooledEstimate:
    names: list[str]
    qbar: np.ndarray
    W: np.ndarray
    B: np.ndarray
    T: np.ndarray
    df: np.ndarray
    ci: np.ndarray
    fmi: np.ndarray
    m: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.T)


def stable_mean(X: np.ndarray) -> np.ndarray:
    """Column means taken around the first row, so identical rows average exactly."""
    return X[0] + (X - X[0]).mean(axis=0)


def rubin_pool(estimates, variances, names=None, level: float = 0.95) -> PooledEstimate:
    Q = np.atleast_2d(np.asarray(estimates, dtype=float))
    U = np.atleast_2d(np.asarray(variances, dtype=float))
    if Q.shape != U.shape:
        raise ValueError("estimates and variances must have the same shape")
    m = Q.shape[0]
    if m < 2:
        raise ValueError("rubin_pool needs m >= 2 imputations")
    if np.any(U < 0):
        raise ValueError("variances must be nonnegative")
    qbar = stable_mean(Q)
    W = stable_mean(U)
    B = np.sum((Q - qbar) ** 2, axis=0) / (m - 1)
    T = W + (1 + 1 / m) * B
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (1 + 1 / m) * B / W
        df = np.where(B > 0, (m - 1) * (1 + 1 / r) ** 2, np.inf)
        fmi = np.where(W + B > 0, B / (W + B), 0.0)
    names = list(names) if names is not None else [f"x{i}" for i in range(Q.shape[1])]
    return PooledEstimate(names, qbar, W, B, T, df, wald_ci(qbar, np.sqrt(T), df, level), fmi, m)


def relative_efficiency(gamma0: float, m: int) -> float:
    """Variance of the m-imputation estimator relative to infinitely many imputations."""
    return 1 + gamma0 / m


def recommend_m(frac_incomplete: float, rule: str = "von_hippel", max_loss: float = 0.05) -> int:
    """Number of imputations under a named rule of thumb.

    ``frac_incomplete`` stands in for the FMI, as an upper bound, in the
    ``white`` and ``bodner`` rules.
    """
    if not 0 <= frac_incomplete <= 1:
        raise ValueError("frac_incomplete must be in [0, 1]")
    # round away float noise such as 100 * 0.29 = 28.999999999999996
    if rule == "von_hippel":
        return max(1, math.ceil(round(100 * frac_incomplete, 9)))
    if rule == "white":
        return max(1, math.ceil(round(frac_incomplete / max_loss, 9)))
    if rule == "bodner":
        for fmi, m in BODNER_TABLE:
            if frac_incomplete <= fmi:
                return m
        return BODNER_TABLE[-1][1]
    if rule == "rubin_default":
        return 5
    if rule == "graham":
        return 20
    raise ValueError(f"unknown rule {rule!r}")
