"""Random-forest chained imputation with optional predictive mean matching.

Trees come from scikit-learn (bootstrap CART, random feature subsets per
split). Multiple-imputation variability comes from drawing each regression
imputation from one randomly chosen tree and each class from the forest's
class proportions; with ``pmm_donors > 0`` forest predictions are matched to
observed donors instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

from .chain import ImputedSet, Workspace, encode, model_columns, run_chain
from .fcs import imputation_rngs, match_donors
from .tabular import Dataset


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 50
    pmm_donors: int = 0
    include_outcomes: bool = True
    one_hot_numeric_bins: bool = False
    one_hot_categorical: bool = False
    visit_order: str = "monotone"
    max_iter: int = 21
    m: int = 5
    seed: int = 0
    mtry: int | None = None
    min_leaf: int = 5
    regression_draw: str = "tree"  # or "noise": forest mean plus residual noise

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.pmm_donors < 0:
            raise ValueError("pmm_donors must be >= 0")
        if self.regression_draw not in ("tree", "noise"):
            raise ValueError(f"unknown regression_draw {self.regression_draw!r}")

    def to_json(self) -> dict:
        return dict(kind="forest", **asdict(self))


class Forest:
    """Fitted forest with per-tree access; constant targets get a stub predictor."""

    def __init__(self, model, kind, constant=None, classes=None):
        self.model = model
        self.kind = kind
        self.constant = constant
        self.classes = classes
        self.flags = ("constant-target",) if constant is not None else ()

    @property
    def n_trees(self) -> int:
        return 1 if self.model is None else len(self.model.estimators_)

    def predict(self, X) -> np.ndarray:
        if self.model is None:
            return np.full(len(X), self.constant, dtype=float)
        if self.kind == "regression":
            return self.model.predict(X)
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        if self.model is None:
            return np.ones((len(X), 1))
        return self.model.predict_proba(X)

    def tree_predict(self, X, i: int) -> np.ndarray:
        if self.model is None:
            return np.full(len(X), self.constant, dtype=float)
        return self.model.estimators_[i].predict(X)

    def oob_prediction(self) -> np.ndarray:
        return self.model.oob_prediction_


def fit_forest(X, y, kind: str, cfg: ForestConfig, rng, oob: bool = False) -> Forest:
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, p = X.shape
    if n < 2 * cfg.min_leaf:
        raise ValueError(f"fit_forest needs at least {2 * cfg.min_leaf} rows, got {n}")
    classes = np.unique(y)
    if len(classes) == 1:
        return Forest(None, kind, constant=float(classes[0]), classes=classes)
    seed = int(rng.integers(2 ** 31 - 1))
    if kind == "regression":
        mtry = cfg.mtry or max(1, p // 3)
        model = RandomForestRegressor(n_estimators=cfg.n_trees, max_features=min(mtry, p),
                                      min_samples_leaf=cfg.min_leaf, bootstrap=True,
                                      oob_score=oob, random_state=seed, n_jobs=1)
    elif kind == "classification":
        mtry = cfg.mtry or max(1, int(math.sqrt(p)))
        model = RandomForestClassifier(n_estimators=cfg.n_trees, max_features=min(mtry, p),
                                       min_samples_leaf=cfg.min_leaf, bootstrap=True,
                                       oob_score=oob, random_state=seed, n_jobs=1)
    else:
        raise ValueError(f"unknown forest kind {kind!r}")
    model.fit(X, y)
    return Forest(model, kind, classes=getattr(model, "classes_", None))


def _forest_step(cfg: ForestConfig, flags: list):
    def impute_one(ws: Workspace, name: str, rng):
        miss = ws.missing(name)
        y = ws.target(name)
        X = ws.design(name)
        y_obs, X_obs, X_mis = y[~miss], X[~miss], X[miss]
        kind = "regression" if ws.kind(name) == "numeric" else "classification"
        forest = fit_forest(X_obs, y_obs, kind, cfg, rng)
        flags.extend(forest.flags)
        if forest.model is None:
            return forest.predict(X_mis)
        if kind == "regression":
            if cfg.pmm_donors > 0:
                donors = match_donors(forest.predict(X_obs), forest.predict(X_mis), cfg.pmm_donors, rng)
                return y_obs[donors]
            if cfg.regression_draw == "noise":
                resid = y_obs - forest.predict(X_obs)
                return forest.predict(X_mis) + rng.choice(resid, size=len(X_mis))
            trees = rng.integers(0, forest.n_trees, size=len(X_mis))
            out = np.empty(len(X_mis))
            for t in np.unique(trees):
                sel = trees == t
                out[sel] = forest.tree_predict(X_mis[sel], int(t))
            return out
        proba = forest.predict_proba(X_mis)
        if cfg.pmm_donors > 0 and len(forest.classes) == 2:
            donors = match_donors(forest.predict_proba(X_obs)[:, 1], proba[:, 1], cfg.pmm_donors, rng)
            return y_obs[donors]
        u = rng.random(len(X_mis))
        pick = np.minimum((proba.cumsum(axis=1) < u[:, None]).sum(axis=1), len(forest.classes) - 1)
        return forest.classes[pick].astype(float)
    return impute_one


def run_forest_imputer(ds: Dataset, cfg: ForestConfig, outcome_columns=(), seed=None,
                       traces: list | None = None) -> list[ImputedSet]:
    work = encode(ds, cfg.one_hot_numeric_bins, cfg.one_hot_categorical)
    columns = model_columns(work, outcome_columns, cfg.include_outcomes)
    out = []
    for j, rng in enumerate(imputation_rngs(cfg.seed if seed is None else seed, cfg.m), start=1):
        flags: list[str] = []
        trace = [] if traces is not None else None
        completed = run_chain(work, columns, cfg.visit_order, cfg.max_iter, _forest_step(cfg, flags),
                              rng, stop="increase", trace=trace)
        if traces is not None:
            traces.append(trace)
        out.append(ImputedSet(j, completed, tuple(sorted(set(flags)))))
    return out
