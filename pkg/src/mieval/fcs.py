"""Fully conditional specification (chained equations) multiple imputation.

Variants:

* ``default`` -- predictive mean matching for numeric columns, logistic
  regression for binary columns, polytomous regression for categoricals.
* ``norm`` -- Bayesian linear regression draws for every column;
  categoricals are always one-hot encoded so binary indicators receive
  real-valued ("fuzzy") imputations.
* ``logreg`` -- the default models applied to a fully one-hot representation,
  so binned numerics are imputed indicator by indicator with logistic models.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit, softmax

from .chain import ImputedSet, Workspace, encode, model_columns, run_chain
from .estimators import irls_logistic, logistic_loglik
from .tabular import Dataset

log = logging.getLogger(__name__)

RIDGE = 1e-8
FALLBACK_RIDGE = 1e-4


@dataclass(frozen=True)
class FcsConfig:
    variant: str = "default"
    include_outcomes: bool = True
    one_hot_numeric_bins: bool = False
    one_hot_categorical: bool = False
    visit_order: str = "monotone"
    max_iter: int = 21
    pmm_donors: int = 3
    m: int = 5
    seed: int = 0
    early_stop_tol: float = 1e-4

    def __post_init__(self):
        if self.variant not in ("default", "norm", "logreg"):
            raise ValueError(f"unknown FCS variant {self.variant!r}")
        if self.variant == "default" and self.pmm_donors < 1:
            raise ValueError("pmm_donors must be >= 1 for the default variant")
        if self.m < 1 or self.max_iter < 1:
            raise ValueError("m and max_iter must be >= 1")
        if self.variant == "logreg" and not (self.one_hot_numeric_bins and self.one_hot_categorical):
            raise ValueError("logreg variant requires both one-hot flags")
        if self.visit_order not in ("monotone", "revmonotone"):
            raise ValueError(f"unknown visit order {self.visit_order!r}")

    def to_json(self) -> dict:
        return dict(kind="fcs", **asdict(self))


def _with_intercept(X):
    return np.column_stack([np.ones(len(X)), X])


def bayes_linear_draw(y_obs, X_obs, rng):
    """Least squares fit and one draw of (beta, sigma) from the approximate posterior.

    Returns ``(beta_hat, beta_star, sigma_star)``; ``X_obs`` already has the
    intercept column.
    """
    n, p = X_obs.shape
    xtx = X_obs.T @ X_obs
    xtx += RIDGE * np.diag(np.maximum(np.diag(xtx), 1.0))
    inv = np.linalg.inv(xtx)
    beta_hat = inv @ (X_obs.T @ y_obs)
    resid = y_obs - X_obs @ beta_hat
    dfree = max(n - p, 1)
    sigma_star = np.sqrt(resid @ resid / rng.chisquare(dfree))
    chol = np.linalg.cholesky((inv + inv.T) / 2)
    beta_star = beta_hat + sigma_star * (chol @ rng.standard_normal(p))
    return beta_hat, beta_star, sigma_star


def match_donors(yhat_obs, yhat_mis, k, rng) -> np.ndarray:
    """Index (into the observed rows) of a random one of the k nearest donors per recipient."""
    n_obs = len(yhat_obs)
    if k > n_obs:
        raise ValueError(f"k={k} donors requested but only {n_obs} observed rows")
    perm = rng.permutation(n_obs)  # random tie-breaking among equal predictions
    order = perm[np.argsort(yhat_obs[perm], kind="stable")]
    sorted_pred = yhat_obs[order]
    pos = np.searchsorted(sorted_pred, yhat_mis)
    # the k nearest lie within k slots either side of the insertion point
    offsets = np.arange(-k, k)
    cand = np.clip(pos[:, None] + offsets[None, :], 0, n_obs - 1)
    dist = np.abs(sorted_pred[cand] - yhat_mis[:, None])
    # duplicated clipped candidates must not be counted twice
    dup = np.zeros_like(dist, dtype=bool)
    dup[:, 1:] = cand[:, 1:] == cand[:, :-1]
    dist[dup] = np.inf
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    pick = nearest[np.arange(len(yhat_mis)), rng.integers(0, k, size=len(yhat_mis))]
    return order[cand[np.arange(len(yhat_mis)), pick]]


def impute_pmm(y_obs, X_obs, X_mis, k, rng) -> np.ndarray:
    y_obs = np.asarray(y_obs, float)
    Xo, Xm = _with_intercept(X_obs), _with_intercept(X_mis)
    beta_hat, beta_star, _ = bayes_linear_draw(y_obs, Xo, rng)
    donors = match_donors(Xo @ beta_hat, Xm @ beta_star, k, rng)
    return y_obs[donors]


def impute_norm(y_obs, X_obs, X_mis, rng) -> np.ndarray:
    y_obs = np.asarray(y_obs, float)
    Xo, Xm = _with_intercept(X_obs), _with_intercept(X_mis)
    _, beta_star, sigma_star = bayes_linear_draw(y_obs, Xo, rng)
    return Xm @ beta_star + sigma_star * rng.standard_normal(len(Xm))


def _scale(X):
    binary = np.all((X == 0) | (X == 1), axis=0)
    return np.where(binary, 1.0, X.std(axis=0))


def _penalized_irls(X, y, lam, max_iter=100, tol=1e-8):
    p = X.shape[1]
    beta = np.zeros(p)
    for _ in range(max_iter):
        mu = expit(X @ beta)
        grad = X.T @ (y - mu) - lam * beta
        info = (X * (mu * (1 - mu))[:, None]).T @ X + np.diag(lam)
        step = np.linalg.solve(info, grad)
        f0 = logistic_loglik(beta, X, y) - 0.5 * np.sum(lam * beta ** 2)
        t = 1.0
        while t > 1e-6 and (logistic_loglik(beta + t * step, X, y)
                            - 0.5 * np.sum(lam * (beta + t * step) ** 2)) < f0 - 1e-12 * (1 + abs(f0)):
            t /= 2
        beta = beta + t * step
        if np.max(np.abs(t * step)) < tol:
            break
    mu = expit(X @ beta)
    info = (X * (mu * (1 - mu))[:, None]).T @ X + np.diag(lam)
    return beta, info


def fit_logreg_draw(y_obs, X_obs, rng, flags: list | None = None):
    """IRLS fit with separation fallback and one normal-approximation draw of beta."""
    Xo = _with_intercept(X_obs)
    beta, info, _ = irls_logistic(Xo, y_obs, max_iter=50)
    if np.any(np.abs(beta[1:]) * _scale(X_obs) > 25) or not np.all(np.isfinite(beta)):
        lam = FALLBACK_RIDGE * np.ones(Xo.shape[1])
        lam[0] = 0.0
        beta, info = _penalized_irls(Xo, y_obs, lam)
        if flags is not None:
            flags.append("logreg-separation-ridge")
    cov = np.linalg.inv(info + RIDGE * np.eye(len(beta)))
    chol = np.linalg.cholesky((cov + cov.T) / 2 + 1e-12 * np.eye(len(beta)))
    return beta + chol @ rng.standard_normal(len(beta))


def impute_logreg(y_obs, X_obs, X_mis, rng, flags: list | None = None) -> np.ndarray:
    y_obs = np.asarray(y_obs, float)
    if not (np.any(y_obs == 1) and np.any(y_obs == 0)):
        raise ValueError("impute_logreg needs both classes among the observed values")
    beta_star = fit_logreg_draw(y_obs, X_obs, rng, flags)
    p = expit(_with_intercept(X_mis) @ beta_star)
    return (rng.random(len(p)) < p).astype(float)


def _multinomial_newton(X, Y, lam, max_iter=100, tol=1e-8):
    """Multinomial logit with the first column of Y as reference. Returns (B, info)."""
    n, p = X.shape
    K = Y.shape[1]
    beta = np.zeros((K - 1) * p)

    def probs(b):
        eta = np.column_stack([np.zeros(n), X @ b.reshape(K - 1, p).T])
        return softmax(eta, axis=1)

    def information(P):
        H = np.empty(((K - 1) * p, (K - 1) * p))
        for a in range(1, K):
            for b in range(a, K):
                wgt = P[:, a] * ((a == b) - P[:, b])
                blk = (X * wgt[:, None]).T @ X
                H[(a - 1) * p:a * p, (b - 1) * p:b * p] = blk
                H[(b - 1) * p:b * p, (a - 1) * p:a * p] = blk.T
        return H + np.diag(lam)

    def objective(b):
        Pb = probs(b)
        return np.sum(Y * np.log(np.clip(Pb, 1e-300, None))) - 0.5 * np.sum(lam * b * b)

    f0 = objective(beta)
    for _ in range(max_iter):
        P = probs(beta)
        grad = (X.T @ (Y[:, 1:] - P[:, 1:])).T.reshape(-1) - lam * beta
        step = np.linalg.solve(information(P) + RIDGE * np.eye(len(beta)), grad)
        # halve steps that decrease the penalized likelihood
        t = 1.0
        f1 = objective(beta + step)
        while t > 1e-6 and f1 < f0 - 1e-12 * (1 + abs(f0)):
            t /= 2
            f1 = objective(beta + t * step)
        beta = beta + t * step
        done = np.max(np.abs(t * step)) < tol or abs(f1 - f0) < 1e-10 * (abs(f0) + 1)
        f0 = f1
        if done:
            break
    return beta, information(probs(beta))


def impute_polyreg(y_obs, X_obs, X_mis, rng, n_categories: int | None = None,
                   flags: list | None = None) -> np.ndarray:
    """Polytomous logistic imputation of integer category codes.

    The reference level is the largest observed category.
    """
    y_obs = np.asarray(y_obs).astype(int)
    K = n_categories if n_categories is not None else int(y_obs.max()) + 1
    counts = np.bincount(y_obs, minlength=K)
    present = np.flatnonzero(counts)
    if len(present) < 2:
        raise ValueError("impute_polyreg needs at least 2 observed categories")
    ref = present[np.argmax(counts[present])]
    levels = np.r_[ref, present[present != ref]]
    Y = (y_obs[:, None] == levels[None, :]).astype(float)
    Xo, Xm = _with_intercept(X_obs), _with_intercept(X_mis)
    p = Xo.shape[1]
    lam = np.zeros((len(levels) - 1) * p)
    beta, info = _multinomial_newton(Xo, Y, lam)
    B = beta.reshape(len(levels) - 1, p)
    if np.any(np.abs(B[:, 1:]) * _scale(X_obs)[None, :] > 25) or not np.all(np.isfinite(beta)):
        lam = np.tile(np.r_[0.0, FALLBACK_RIDGE * np.ones(Xo.shape[1] - 1)],
                      len(levels) - 1)
        beta, info = _multinomial_newton(Xo, Y, lam)
        if flags is not None:
            flags.append("polyreg-separation-ridge")
    cov = np.linalg.inv(info + RIDGE * np.eye(len(beta)))
    chol = np.linalg.cholesky((cov + cov.T) / 2 + 1e-12 * np.eye(len(beta)))
    b_star = (beta + chol @ rng.standard_normal(len(beta))).reshape(len(levels) - 1, p)
    P = softmax(np.column_stack([np.zeros(len(Xm)), Xm @ b_star.T]), axis=1)
    u = rng.random(len(Xm))
    pick = np.minimum((P.cumsum(axis=1) < u[:, None]).sum(axis=1), len(levels) - 1)
    return levels[pick].astype(float)


def representation(ds: Dataset, cfg) -> Dataset:
    one_hot_cat = cfg.one_hot_categorical or getattr(cfg, "variant", None) == "norm"
    return encode(ds, cfg.one_hot_numeric_bins, one_hot_cat)


def _fcs_step(cfg: FcsConfig, flags: list):
    def impute_one(ws: Workspace, name: str, rng):
        miss = ws.missing(name)
        y = ws.target(name)
        X = ws.design(name)
        y_obs, X_obs, X_mis = y[~miss], X[~miss], X[miss]
        kind = ws.kind(name)
        if cfg.variant == "norm":
            return impute_norm(y_obs, X_obs, X_mis, rng)
        if kind == "numeric":
            return impute_pmm(y_obs, X_obs, X_mis, cfg.pmm_donors, rng)
        if kind == "binary":
            return impute_logreg(y_obs, X_obs, X_mis, rng, flags)
        return impute_polyreg(y_obs, X_obs, X_mis, rng, ws.n_categories(name), flags)
    return impute_one


def _check_counts(ds: Dataset, columns):
    p = sum(len(ds.spec(n).categories) - 1 if ds.spec(n).kind == "categorical" else 1 for n in columns)
    for n in columns:
        n_obs = int((~ds.mask[:, ds.index(n)]).sum())
        if ds.mask[:, ds.index(n)].any() and n_obs < 10 * p:
            log.warning("column %s: %d observed rows for %d predictors", n, n_obs, p)


def imputation_rngs(seed, m):
    """Independent generator per imputation index, keyed by (seed, j)."""
    return [np.random.default_rng(np.random.SeedSequence([int(s) for s in np.atleast_1d(seed)] + [j]))
            for j in range(1, m + 1)]


def run_fcs(ds: Dataset, cfg: FcsConfig, outcome_columns=(), seed=None) -> list[ImputedSet]:
    """m chained-equation imputations of ``ds`` in the config's working representation."""
    work = representation(ds, cfg)
    columns = model_columns(work, outcome_columns, cfg.include_outcomes)
    if cfg.variant == "logreg":
        bad = [n for n in columns if work.mask[:, work.index(n)].any() and work.spec(n).kind == "categorical"]
        if bad:
            raise ValueError(f"logreg variant cannot impute categorical columns {bad}")
    _check_counts(work, columns)
    out = []
    for j, rng in enumerate(imputation_rngs(cfg.seed if seed is None else seed, cfg.m), start=1):
        flags: list[str] = []
        completed = run_chain(work, columns, cfg.visit_order, cfg.max_iter, _fcs_step(cfg, flags),
                              rng, stop="tolerance", tol=cfg.early_stop_tol)
        if not np.all(np.isfinite(completed.values[~completed.mask])):
            raise FloatingPointError("non-finite imputed values")
        out.append(ImputedSet(j, completed, tuple(sorted(set(flags)))))
    return out
