"""Uniform entry point over the missing-data strategies under evaluation."""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, asdict

import numpy as np

from .estimators import Outcome, fit_outcome, wald_ci
from .fcs import FcsConfig, run_fcs
from .forest import ForestConfig, run_forest_imputer
from .ipw import IpwConfig, fit_missingness_model, ipw_estimates
from .jm import JmConfig, run_jm_imputer
from .pooling import rubin_pool
from .tabular import Dataset


@dataclass(frozen=True)
class OracleConfig:
    """Harness self-test: "imputes" by restoring the true values."""
    m: int = 2
    seed: int = 0

    def to_json(self) -> dict:
        return dict(kind="oracle", **asdict(self))


CONFIG_TYPES = {"fcs": FcsConfig, "forest": ForestConfig, "jm": JmConfig, "ipw": IpwConfig,
                "oracle": OracleConfig}


def config_from_json(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    d.pop("name", None)
    try:
        cls = CONFIG_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown method kind {kind!r}") from None
    return cls(**d)


def fingerprint(cfg) -> str:
    blob = json.dumps(cfg.to_json(), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def method_label(cfg) -> str:
    j = cfg.to_json()
    kind = j["kind"]
    if kind == "fcs":
        base = f"fcs-{j['variant']}"
    elif kind == "forest":
        base = f"forest-pmm{j['pmm_donors']}"
    elif kind == "ipw":
        base = f"ipw-{j['prob_model']}"
    else:
        base = kind
    parts = [base, "out" if j.get("include_outcomes", False) else "noout"]
    if j.get("one_hot_numeric_bins"):
        parts.append("ohnum")
    if j.get("one_hot_categorical"):
        parts.append("ohcat")
    if j.get("visit_order") == "revmonotone":
        parts.append("rev")
    return "_".join(parts) if kind != "oracle" else "oracle"


def is_multiple_imputation(cfg) -> bool:
    return not isinstance(cfg, IpwConfig)


def impute(cfg, ds: Dataset, outcome_columns, seed, truth: Dataset | None = None, m: int | None = None):
    """Run the imputer described by ``cfg``; returns the list of imputed datasets."""
    if m is not None and hasattr(cfg, "m"):
        cfg = type(cfg)(**{**cfg.__dict__, "m": m})
    if isinstance(cfg, FcsConfig):
        sets = run_fcs(ds, cfg, outcome_columns, seed=seed)
    elif isinstance(cfg, ForestConfig):
        sets = run_forest_imputer(ds, cfg, outcome_columns, seed=seed)
    elif isinstance(cfg, JmConfig):
        sets = run_jm_imputer(ds, cfg, outcome_columns, seed=seed)
    elif isinstance(cfg, OracleConfig):
        if truth is None:
            raise ValueError("oracle imputer needs the true complete dataset")
        return [truth] * cfg.m
    else:
        raise TypeError(f"{type(cfg).__name__} is not an imputer")
    return [s.dataset for s in sets]


def pooled_estimates(cfg, ds: Dataset, outcomes, predictors, seed, truth=None, m=None, level=0.95):
    """Per outcome: (estimate, se, ci) after imputation + Rubin pooling, or after IPW."""
    outcomes = [Outcome.coerce(o) for o in outcomes]
    outcome_columns = [c for o in outcomes for c in o.columns]
    fuzzy = getattr(cfg, "fuzzy_mode", "threshold")
    result = {}
    if isinstance(cfg, IpwConfig):
        rng = np.random.default_rng(np.random.SeedSequence(list(np.atleast_1d(seed).astype(int))))
        probs = fit_missingness_model(ds, cfg, outcome_columns, rng)
        for o in outcomes:
            ev = ipw_estimates(ds, probs, o, cfg.weight_cap_quantile, predictors)
            result[o.name] = (ev.q, ev.se, ev.ci)
        return result
    imputed = impute(cfg, ds, outcome_columns, seed, truth, m)
    for o in outcomes:
        fits = [fit_outcome(d, o, predictors=predictors, fuzzy_mode=fuzzy) for d in imputed]
        pooled = rubin_pool([f.q for f in fits], [f.var for f in fits], predictors, level)
        result[o.name] = (pooled.qbar, pooled.se, pooled.ci)
    return result


# -- the compared grid ---------------------------------------------------

def _product(**axes):
    keys = list(axes)
    for values in itertools.product(*(axes[k] for k in keys)):
        yield dict(zip(keys, values))


def expand_grid(entry: dict) -> list[dict]:
    """Cartesian expansion: list-valued fields of a method entry become grid axes.

    ``score_type``-like tuple fields are not used by methods, so any list is an axis.
    """
    entry = dict(entry)
    axes = {k: v for k, v in entry.items() if isinstance(v, list)}
    fixed = {k: v for k, v in entry.items() if not isinstance(v, list)}
    if not axes:
        return [fixed]
    return [{**fixed, **combo} for combo in _product(**axes)]


def table3_grid(m: int = 5) -> list[dict]:
    """The 44 imputation specifications plus 8 IPW specifications."""
    tf = [False, True]
    orders = ["monotone", "revmonotone"]
    grid = []
    grid += expand_grid(dict(kind="fcs", variant="default", include_outcomes=tf, visit_order=orders, m=m))
    grid += expand_grid(dict(kind="fcs", variant="norm", include_outcomes=tf, visit_order=orders,
                             one_hot_numeric_bins=tf, one_hot_categorical=True, m=m))
    grid += expand_grid(dict(kind="fcs", variant="logreg", include_outcomes=tf, visit_order=orders,
                             one_hot_numeric_bins=True, one_hot_categorical=True, m=m))
    for oh_num, oh_cat in ((False, False), (True, True)):
        grid += expand_grid(dict(kind="forest", include_outcomes=tf, visit_order=orders,
                                 one_hot_numeric_bins=oh_num, one_hot_categorical=oh_cat,
                                 pmm_donors=[0, 3, 5], m=m))
    grid += expand_grid(dict(kind="jm", include_outcomes=tf, one_hot_numeric_bins=tf, m=m))
    grid += expand_grid(dict(kind="ipw", prob_model=["logistic", "forest"], include_outcomes=tf,
                             one_hot_numeric_bins=tf))
    return grid
