"""Complete-case inverse probability weighting (no augmentation)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit

from .chain import encode
from .estimators import EstimateVector, Outcome, fit_outcome, irls_logistic
from .forest import ForestConfig, fit_forest
from .tabular import Dataset

log = logging.getLogger(__name__)


class IpwError(ValueError):
    pass


@dataclass(frozen=True)
class IpwConfig:
    prob_model: str = "logistic"
    include_outcomes: bool = True
    one_hot_numeric_bins: bool = False
    weight_cap_quantile: float | None = None
    seed: int = 0
    n_trees: int = 50

    def __post_init__(self):
        if self.prob_model not in ("logistic", "forest"):
            raise ValueError(f"unknown prob_model {self.prob_model!r}")
        if self.weight_cap_quantile is not None and not 0.5 < self.weight_cap_quantile <= 1:
            raise ValueError("weight_cap_quantile must be in (0.5, 1]")

    def to_json(self) -> dict:
        return dict(kind="ipw", **asdict(self))


def _design(ds: Dataset, cols) -> np.ndarray:
    blocks = []
    for n in cols:
        c = ds.spec(n)
        x = ds.col(n)
        if c.kind == "categorical":
            blocks.append((x[:, None] == np.arange(1, len(c.categories))[None, :]).astype(float))
        else:
            blocks.append(x[:, None])
    return np.hstack(blocks) if blocks else np.zeros((ds.n_rows, 0))


def fit_missingness_model(ds: Dataset, cfg: IpwConfig, outcome_columns=(), rng=None) -> np.ndarray:
    """Per-row probability of being a complete case given the fully observed columns."""
    complete = ~ds.mask.any(axis=1)
    if complete.all():
        return np.ones(ds.n_rows)
    if not complete.any():
        raise IpwError("IPW infeasible: no complete rows")
    work = encode(ds, cfg.one_hot_numeric_bins, False)
    roles = ("predictor",)
    cols = [c.name for c in work.columns if c.role in roles and not work.mask[:, work.index(c.name)].any()]
    if cfg.include_outcomes:
        cols += [n for n in outcome_columns if not work.mask[:, work.index(n)].any()]
    if not [c for c in cols if work.spec(c).role == "predictor"]:
        raise IpwError("IPW infeasible: no fully observed predictor columns")
    X = _design(work, cols)
    r = complete.astype(float)
    if cfg.prob_model == "logistic":
        Xi = np.column_stack([np.ones(len(X)), X])
        beta, _, converged = irls_logistic(Xi, r)
        if not converged:
            log.warning("missingness model did not converge")
        p = expit(Xi @ beta)
    else:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        forest = fit_forest(X, r, "classification", ForestConfig(n_trees=cfg.n_trees), rng, oob=True)
        # out-of-bag class proportions; in-sample ones are overfit toward 0/1
        proba = forest.model.oob_decision_function_
        never_oob = np.isnan(proba).any(axis=1)
        if never_oob.any():
            proba[never_oob] = forest.predict_proba(X[never_oob])
        classes = list(forest.classes)
        p = proba[:, classes.index(1.0)] if 1.0 in classes else np.zeros(len(X))
        p = np.maximum(p, 1 / (2 * cfg.n_trees))
    return np.clip(p, 1e-12, 1.0)


def ipw_weights(probs, complete, cap_quantile=None) -> np.ndarray:
    """Weights 1/p for complete rows (zero elsewhere), optionally capped at a quantile."""
    probs = np.asarray(probs, float)
    if np.any(probs <= 0) or np.any(probs > 1):
        raise IpwError("probabilities must lie in (0, 1]")
    w = np.where(complete, 1.0 / probs, 0.0)
    if cap_quantile is not None:
        cap = np.quantile(w[complete], cap_quantile)
        w = np.minimum(w, cap)
    return w


def ipw_estimates(ds: Dataset, probs, outcome: Outcome | dict, cap_quantile=None,
                  predictors=None) -> EstimateVector:
    """Weighted complete-case fit of one outcome model on the binarized predictors."""
    complete = ~ds.mask.any(axis=1)
    w = ipw_weights(probs, complete, cap_quantile)
    cc = ds.take_rows(np.flatnonzero(complete))
    wcc = w[complete]
    weights = None if np.all(wcc == 1.0) else wcc
    return fit_outcome(cc, outcome, weights, predictors=predictors)
