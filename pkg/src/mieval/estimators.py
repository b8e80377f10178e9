"""Logistic regression (IRLS) and Cox proportional hazards (Breslow ties, Newton).

Both fitters return an :class:`EstimateVector` that carries only the predictor
coefficients; the logistic intercept is kept on the side.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import expit

from .tabular import Dataset, binarize_for_estimation, threshold_fuzzy

RIDGE = 1e-8


class EstimationError(RuntimeError):
    pass


class SeparationError(EstimationError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"separation detected (diverging coefficients: {self.columns})")


class ConvergenceError(EstimationError):
    pass


@dataclass
class EstimateVector:
    names: list[str]
    q: np.ndarray
    var: np.ndarray
    ci: np.ndarray  # shape (d, 2)
    n_used: int
    weights_applied: bool = False
    intercept: float | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.var)

    def to_rows(self) -> list[dict]:
        return [dict(predictor=n, q=float(q), var=float(v), se=float(np.sqrt(v)),
                     ci_low=float(lo), ci_high=float(hi))
                for n, q, v, (lo, hi) in zip(self.names, self.q, self.var, self.ci)]


def wald_ci(q, se, df=None, level: float = 0.95) -> np.ndarray:
    """Symmetric interval ``q ± quantile * se``; Student t when ``df`` is given.

    ``df`` may be an array; infinite entries use the normal quantile.
    """
    q = np.asarray(q, dtype=float)
    se = np.asarray(se, dtype=float)
    p = 0.5 + level / 2
    if df is None:
        crit = stats.norm.ppf(p)
    else:
        df = np.broadcast_to(np.asarray(df, dtype=float), q.shape)
        crit = np.where(np.isinf(df), stats.norm.ppf(p), stats.t.ppf(p, np.where(np.isinf(df), 1.0, df)))
    return np.stack([q - crit * se, q + crit * se], axis=-1)


def _collinear_columns(X: np.ndarray, names: Sequence[str]) -> list[str]:
    if X.shape[1] == 0:
        return []
    _, r = np.linalg.qr(X - X.mean(axis=0) if X.shape[1] > 1 else X)
    diag = np.abs(np.diag(r))
    tol = diag.max() * 1e-10 if diag.size else 0.0
    return [names[i] for i in np.flatnonzero(diag <= tol)]


def _standardizer(X: np.ndarray) -> np.ndarray:
    """Scale used for the separation check: sd for continuous columns, 1 for 0/1 columns."""
    binary = np.all((X == 0) | (X == 1), axis=0)
    sd = X.std(axis=0)
    return np.where(binary, 1.0, sd)


# -- logistic ------------------------------------------------------------

def logistic_score(beta, X, y, w=None):
    """Gradient of the weighted log-likelihood (X already carries the intercept column)."""
    w = np.ones(len(y)) if w is None else w
    return X.T @ (w * (y - expit(X @ beta)))


def logistic_loglik(beta, X, y, w=None):
    w = np.ones(len(y)) if w is None else w
    eta = X @ beta
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def irls_logistic(X: np.ndarray, y: np.ndarray, w: np.ndarray | None = None,
                  tol: float = 1e-8, max_iter: int = 100, ridge: float = RIDGE):
    """Newton/IRLS for the weighted logistic model.

    Returns ``(beta, information, converged)``. ``X`` must include any
    intercept column.
    """
    n, p = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    beta = np.zeros(p)
    ybar = np.sum(w * y) / np.sum(w)
    if p and np.all(X[:, 0] == 1) and 0 < ybar < 1:
        beta[0] = np.log(ybar / (1 - ybar))
    eye = np.eye(p)
    converged = False
    for _ in range(max_iter):
        mu = expit(X @ beta)
        grad = X.T @ (w * (y - mu))
        if np.max(np.abs(grad), initial=0.0) < tol:
            converged = True
            break
        info = (X * (w * mu * (1 - mu))[:, None]).T @ X
        step = np.linalg.solve(info + ridge * eye, grad)
        # step halving guards against overshoot far from the optimum
        ll0 = logistic_loglik(beta, X, y, w)
        t = 1.0
        while t > 1e-6 and logistic_loglik(beta + t * step, X, y, w) < ll0 - 1e-12 * (1 + abs(ll0)):
            t /= 2
        beta = beta + t * step
    mu = expit(X @ beta)
    info = (X * (w * mu * (1 - mu))[:, None]).T @ X
    if not converged:
        converged = np.max(np.abs(X.T @ (w * (y - mu))), initial=0.0) < tol
    return beta, info, converged


def fit_logistic(X, y, weights=None, names: Sequence[str] | None = None,
                 level: float = 0.95) -> EstimateVector:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    names = list(names) if names is not None else [f"x{i}" for i in range(d)]
    if not (np.any(y == 1) and np.any(y == 0)):
        raise EstimationError("both outcome classes must be present")
    w = None if weights is None else np.asarray(weights, dtype=float)
    if w is not None and (np.any(w < 0) or not np.all(np.isfinite(w))):
        raise EstimationError("weights must be finite and nonnegative")
    flags = []
    collinear = _collinear_columns(X, names)
    if collinear:
        flags.append(f"collinear:{','.join(collinear)}")
    Xi = np.column_stack([np.ones(n), X])
    beta, info, converged = irls_logistic(Xi, y, w)
    scale = _standardizer(X)
    big = np.abs(beta[1:]) * scale > 25
    if big.any():
        raise SeparationError([names[i] for i in np.flatnonzero(big)])
    if not converged:
        raise ConvergenceError("IRLS did not reach ||score|| < 1e-8 in 100 iterations")
    inv = np.linalg.inv(info + RIDGE * np.eye(d + 1))
    if w is not None:
        mu = expit(Xi @ beta)
        u = Xi * (w * (y - mu))[:, None]
        cov = inv @ (u.T @ u) @ inv
    else:
        cov = inv
    var = np.diag(cov)[1:].copy()
    return EstimateVector(names, beta[1:].copy(), var, wald_ci(beta[1:], np.sqrt(var), level=level),
                          n_used=int(np.sum(w > 0)) if w is not None else n,
                          weights_applied=w is not None, intercept=float(beta[0]), flags=flags)


# -- Cox -----------------------------------------------------------------

class _RiskSets:
    """Breslow risk-set bookkeeping for a fixed ordering of subjects."""

    def __init__(self, time, event, w):
        order = np.argsort(-time, kind="stable")
        self.order = order
        self.t = time[order]
        self.d = event[order].astype(float)
        self.w = w[order]
        # index of the last subject (in descending-time order) sharing each time
        _, first = np.unique(-self.t, return_index=True)
        ends = np.r_[first[1:], len(self.t)] - 1
        self.group_end = np.repeat(ends, np.diff(np.r_[first, len(self.t)]))

    def cumulative_forward(self, a):
        """For each subject, sum of ``a`` over subjects with time >= its time (risk set)."""
        c = np.cumsum(a, axis=0)
        return c[self.group_end]

    def cumulative_backward(self, a):
        """For each subject k, sum of ``a`` over subjects with time <= t_k."""
        rev = np.cumsum(a[::-1], axis=0)[::-1]
        # rows sharing t_k: include all tied rows, i.e. start of its tie group
        n = len(self.t)
        start = np.empty(n, dtype=int)
        _, first = np.unique(-self.t, return_index=True)
        start[:] = np.repeat(first, np.diff(np.r_[first, n]))
        return rev[start]


def _cox_parts(beta, Xs, rs: _RiskSets, need_hess=True):
    eta = Xs @ beta
    eta_max = eta.max() if eta.size else 0.0
    r = rs.w * np.exp(eta - eta_max)
    s0 = rs.cumulative_forward(r)
    s1 = rs.cumulative_forward(r[:, None] * Xs)
    xbar = s1 / s0[:, None]
    dw = rs.d * rs.w
    ll = float(np.sum(dw * (eta - eta_max - np.log(s0))))
    grad = Xs.T @ dw - np.sum(dw[:, None] * xbar, axis=0)
    if not need_hess:
        return ll, grad, None
    c = dw / s0
    C = rs.cumulative_backward(c)
    hess = (Xs * (r * C)[:, None]).T @ Xs - (xbar * dw[:, None]).T @ xbar
    return ll, grad, hess


def cox_loglik(beta, X, time, event, w=None):
    X = np.asarray(X, float)
    w = np.ones(len(time)) if w is None else np.asarray(w, float)
    rs = _RiskSets(np.asarray(time, float), np.asarray(event), w)
    return _cox_parts(np.asarray(beta, float), X[rs.order], rs, need_hess=False)[0]


def cox_score(beta, X, time, event, w=None):
    X = np.asarray(X, float)
    w = np.ones(len(time)) if w is None else np.asarray(w, float)
    rs = _RiskSets(np.asarray(time, float), np.asarray(event), w)
    return _cox_parts(np.asarray(beta, float), X[rs.order], rs, need_hess=False)[1]


def _cox_score_residuals(beta, Xs, rs: _RiskSets):
    eta = Xs @ beta
    r = rs.w * np.exp(eta - eta.max())
    s0 = rs.cumulative_forward(r)
    xbar = rs.cumulative_forward(r[:, None] * Xs) / s0[:, None]
    dw = rs.d * rs.w
    c = dw / s0
    C = rs.cumulative_backward(c)
    D = rs.cumulative_backward(c[:, None] * xbar)
    # per-subject contribution, unweighted (weights enter the sandwich outer product)
    return rs.d[:, None] * (Xs - xbar) - np.exp(eta - eta.max())[:, None] * (Xs * C[:, None] - D)


def fit_cox(X, time, event, weights=None, names: Sequence[str] | None = None,
            tol: float = 1e-8, max_iter: int = 100, level: float = 0.95) -> EstimateVector:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    n, d = X.shape
    names = list(names) if names is not None else [f"x{i}" for i in range(d)]
    if np.any(time <= 0):
        raise EstimationError("survival times must be positive")
    if not np.any(event == 1):
        raise EstimationError("at least one event required")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    flags = []
    ev = event == 1
    flags.extend(f"non-identifiable:{names[j]}" for j in range(d) if np.ptp(X[ev, j]) == 0)
    const = [names[j] for j in range(d) if np.ptp(X[:, j]) == 0]
    collinear = [c for c in _collinear_columns(X, names) if c not in const]
    if collinear:
        flags.append(f"collinear:{','.join(collinear)}")
    rs = _RiskSets(time, event, w)
    Xs = X[rs.order]
    beta = np.zeros(d)
    eye = np.eye(d)
    converged = False
    for _ in range(max_iter):
        ll, grad, hess = _cox_parts(beta, Xs, rs)
        if np.max(np.abs(grad), initial=0.0) < tol:
            converged = True
            break
        step = np.linalg.solve(hess + RIDGE * eye, grad)
        t = 1.0
        while t > 1e-6 and _cox_parts(beta + t * step, Xs, rs, need_hess=False)[0] < ll - 1e-12 * (1 + abs(ll)):
            t /= 2
        beta = beta + t * step
    ll, grad, hess = _cox_parts(beta, Xs, rs)
    if not converged:
        converged = np.max(np.abs(grad), initial=0.0) < tol
    scale = _standardizer(X)
    big = (np.abs(beta) * scale > 25) & (np.ptp(X, axis=0) > 0)
    if big.any():
        raise SeparationError([names[i] for i in np.flatnonzero(big)])
    if not converged and not const:
        raise ConvergenceError("Cox Newton-Raphson did not converge")
    inv = np.linalg.inv(hess + RIDGE * eye)
    if weights is not None:
        u = _cox_score_residuals(beta, Xs, rs) * rs.w[:, None]
        cov = inv @ (u.T @ u) @ inv
    else:
        cov = inv
    var = np.diag(cov).copy()
    for c in const:
        var[names.index(c)] = np.inf
    ci = wald_ci(beta, np.sqrt(var), level=level)
    return EstimateVector(names, beta, var, ci, n_used=int(np.sum(w > 0)),
                          weights_applied=weights is not None, flags=flags)


# -- outcome models on a dataset -------------------------------------------

@dataclass(frozen=True)
class Outcome:
    """One estimator of interest: a logistic model on ``y`` or a Cox model on (time, event)."""
    name: str
    model: str = "logistic"
    y: str | None = None
    time: str | None = None
    event: str | None = None

    def __post_init__(self):
        if self.model == "logistic" and self.y is None:
            object.__setattr__(self, "y", self.name)
        if self.model not in ("logistic", "cox"):
            raise ValueError(f"unknown outcome model {self.model!r}")
        if self.model == "cox" and (self.time is None or self.event is None):
            raise ValueError("cox outcome needs time and event columns")

    @property
    def columns(self) -> tuple[str, ...]:
        return (self.y,) if self.model == "logistic" else (self.time, self.event)

    @classmethod
    def coerce(cls, o) -> "Outcome":
        return o if isinstance(o, cls) else cls(**o)


def estimation_matrix(ds: Dataset, predictors: Sequence[str] | None = None,
                      fuzzy_mode: str = "threshold") -> tuple[np.ndarray, list[str]]:
    """Binarized predictor matrix; real-valued indicators are rounded unless ``fuzzy_mode='fuzzy'``."""
    b = binarize_for_estimation(ds)
    if fuzzy_mode == "threshold":
        b = threshold_fuzzy(b)
    elif fuzzy_mode != "fuzzy":
        raise ValueError(f"unknown fuzzy_mode {fuzzy_mode!r}")
    names = list(predictors) if predictors is not None else b.predictors
    missing = [n for n in names if n not in b.names]
    if missing:
        raise EstimationError(f"binarized predictors absent from dataset: {missing}")
    X = b.select(names).values
    if np.isnan(X).any():
        raise EstimationError("estimation data still has missing predictor values")
    return X, names


def fit_outcome(ds: Dataset, outcome, weights=None, predictors=None,
                fuzzy_mode: str = "threshold") -> EstimateVector:
    outcome = Outcome.coerce(outcome)
    X, names = estimation_matrix(ds, predictors, fuzzy_mode)
    if outcome.model == "logistic":
        return fit_logistic(X, ds.col(outcome.y), weights, names)
    return fit_cox(X, ds.col(outcome.time), ds.col(outcome.event), weights, names)
