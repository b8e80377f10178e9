"""Joint-model imputation under a multivariate normal, fitted by EM.

Parameter uncertainty comes from the bootstrap: each imputation refits EM on
a row resample and then draws the missing block of every incomplete row
from its conditional normal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .chain import ImputedSet, encode, model_columns
from .fcs import imputation_rngs
from .tabular import Dataset

log = logging.getLogger(__name__)

_LOG2PI = np.log(2 * np.pi)


class EMError(RuntimeError):
    pass


@dataclass
class MvnFit:
    mu: np.ndarray
    sigma: np.ndarray
    loglik_trace: list[float]
    iterations: int
    converged: bool
    flags: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class JmConfig:
    include_outcomes: bool = True
    one_hot_numeric_bins: bool = False
    m: int = 5
    seed: int = 0
    em_tol: float = 1e-6
    em_max_iter: int = 500
    ridge: float = 1e-6
    fuzzy_mode: str = "threshold"  # or "fuzzy": how estimation treats real-valued indicators

    def __post_init__(self):
        if self.em_tol <= 0:
            raise ValueError("em_tol must be positive")
        if self.fuzzy_mode not in ("threshold", "fuzzy"):
            raise ValueError(f"unknown fuzzy_mode {self.fuzzy_mode!r}")

    def to_json(self) -> dict:
        return dict(kind="jm", **asdict(self))


def _patterns(miss: np.ndarray):
    keys, inverse = np.unique(miss, axis=0, return_inverse=True)
    return [(keys[i], np.flatnonzero(inverse.ravel() == i)) for i in range(len(keys))]


def _observed_loglik(Y, groups, mu, sigma) -> float:
    ll = 0.0
    for pat, rows in groups:
        o = ~pat
        if not o.any():
            continue
        S = sigma[np.ix_(o, o)]
        sign, logdet = np.linalg.slogdet(S)
        if sign <= 0:
            return -np.inf
        R = Y[np.ix_(rows, np.flatnonzero(o))] - mu[o]
        quad = np.sum(R * np.linalg.solve(S, R.T).T)
        ll -= 0.5 * (len(rows) * (o.sum() * _LOG2PI + logdet) + quad)
    return float(ll)


def conditional(mu, sigma, o, y_o):
    """Conditional mean rows (one per row of ``y_o``) and covariance of the missing block."""
    mis = ~o
    S_oo = sigma[np.ix_(o, o)]
    S_mo = sigma[np.ix_(mis, o)]
    if not o.any():
        return np.broadcast_to(mu[mis], (len(y_o), mis.sum())).copy(), sigma[np.ix_(mis, mis)].copy()
    coef = np.linalg.solve(S_oo, S_mo.T).T
    mean = mu[mis] + (y_o - mu[o]) @ coef.T
    cov = sigma[np.ix_(mis, mis)] - coef @ S_mo.T
    return mean, (cov + cov.T) / 2


def em_mvn(Y, tol: float = 1e-6, max_iter: int = 500, ridge: float = 1e-6) -> MvnFit:
    """Maximum likelihood (mu, Sigma) of a multivariate normal from incomplete rows.

    ``ridge`` (relative to the mean diagonal) is added to Sigma only when an
    observed block turns out singular, and the fit is then flagged.
    """
    Y = np.asarray(Y, dtype=float)
    n, d = Y.shape
    miss = np.isnan(Y)
    n_obs = (~miss).sum(axis=0)
    if np.any(n_obs < 2):
        raise EMError("every variable needs at least 2 observed values")
    if n <= d:
        raise EMError(f"EM needs more rows than variables (n={n}, d={d})")
    groups = _patterns(miss)
    mu = np.nanmean(Y, axis=0)
    sigma = np.diag(np.maximum(np.nanvar(Y, axis=0), 1e-12))
    complete = ~miss.any(axis=1)
    if complete.sum() > d + 1:
        sigma = np.cov(Y[complete], rowvar=False, bias=True) + np.diag(np.full(d, 1e-12))
    flags: list[str] = []
    lam = 0.0
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        sig = sigma + lam * np.eye(d)
        ll = _observed_loglik(Y, groups, mu, sig)
        if not np.isfinite(ll):
            lam = max(lam * 10, ridge * np.mean(np.diag(sigma)))
            flags.append("ridge")
            sig = sigma + lam * np.eye(d)
            ll = _observed_loglik(Y, groups, mu, sig)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break
        # E-step: expected sufficient statistics
        sx = np.zeros(d)
        sxx = np.zeros((d, d))
        for pat, rows in groups:
            o = ~pat
            X = Y[rows].copy()
            if pat.any():
                mean, cov = conditional(mu, sig, o, X[:, o])
                X[:, pat] = mean
                sxx[np.ix_(pat, pat)] += len(rows) * cov
            sx += X.sum(axis=0)
            sxx += X.T @ X
        # M-step
        mu = sx / n
        sigma = sxx / n - np.outer(mu, mu)
        sigma = (sigma + sigma.T) / 2
    if lam > 0:
        sigma = sigma + lam * np.eye(d)
    if not converged:
        log.warning("EM did not converge in %d iterations", max_iter)
    return MvnFit(mu, sigma, trace, it, converged, sorted(set(flags)))


def draw_missing(Y, mu, sigma, rng, ridge: float = 1e-6):
    """Fill each incomplete row's missing block with a draw from its conditional normal."""
    Y = np.array(Y, dtype=float, copy=True)
    miss = np.isnan(Y)
    for pat, rows in _patterns(miss):
        if not pat.any():
            continue
        o = ~pat
        mean, cov = conditional(mu, sigma, o, Y[np.ix_(rows, np.flatnonzero(o))])
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            jitter = ridge * max(np.mean(np.diag(cov)), 1e-12)
            w, V = np.linalg.eigh(cov)
            L = V * np.sqrt(np.clip(w, 0, None) + jitter)
        Y[np.ix_(rows, np.flatnonzero(pat))] = mean + rng.standard_normal(mean.shape) @ L.T
    return Y


def run_jm_imputer(ds: Dataset, cfg: JmConfig, outcome_columns=(), seed=None) -> list[ImputedSet]:
    work = encode(ds, cfg.one_hot_numeric_bins, one_hot_categorical=True)
    columns = model_columns(work, outcome_columns, cfg.include_outcomes)
    idx = [work.index(c) for c in columns]
    logs = [k for k, c in enumerate(columns) if work.spec(c).log_transform]
    Y = work.values[:, idx].copy()
    Y[:, logs] = np.log(Y[:, logs])
    miss = np.isnan(Y)
    n = len(Y)
    out = []
    for j, rng in enumerate(imputation_rngs(cfg.seed if seed is None else seed, cfg.m), start=1):
        if not miss.any():
            out.append(ImputedSet(j, work))
            continue
        boot = None
        for _ in range(20):
            rows = rng.integers(0, n, size=n)
            if np.all((~miss[rows]).sum(axis=0) >= 2):
                boot = rows
                break
        if boot is None:
            raise EMError("bootstrap resamples keep losing all observations of a variable")
        fit = em_mvn(Y[boot], cfg.em_tol, cfg.em_max_iter, cfg.ridge)
        filled = draw_missing(Y, fit.mu, fit.sigma, rng, cfg.ridge)
        filled[:, logs] = np.exp(filled[:, logs])
        vals = work.values.copy()
        vals[:, idx] = np.where(miss, filled, work.values[:, idx])
        mask = work.mask.copy()
        mask[:, idx] = False
        out.append(ImputedSet(j, work.with_values(vals, mask), tuple(fit.flags)))
    return out
