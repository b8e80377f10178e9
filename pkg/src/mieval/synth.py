"""Synthetic diabetes/COVID-like cohorts with planted outcome models.

Predictors are tied together by a latent Gaussian copula; each margin is an
inverse transform of its latent normal. Two binary outcomes follow logistic
models and one survival outcome follows exponential proportional hazards
with administrative censoring, all on the binarized predictor scale.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import expit

from .tabular import ColumnSpec, Dataset, binarize_for_estimation, save_schema, write_csv

BLOCK_ROWS = 8192


class CohortSpecError(ValueError):
    pass


@dataclass(frozen=True)
class PredictorSpec:
    name: str
    kind: str = "binary"
    p: float | None = None                      # binary: P(x = 1)
    categories: tuple[str, ...] | None = None   # categorical
    probs: tuple[float, ...] | None = None
    dist: str = "normal"                        # numeric: normal | lognormal (params on log scale)
    mean: float = 0.0
    sd: float = 1.0
    low: float | None = None
    high: float | None = None
    bins: tuple[float, ...] | None = None
    reference_category: str | None = None
    log_transform: bool = False
    loadings: tuple[float, ...] = ()            # weights on shared latent factors

    def column(self) -> ColumnSpec:
        return ColumnSpec(self.name, self.kind, "predictor", categories=self.categories,
                          bins=self.bins, reference_category=self.reference_category,
                          log_transform=self.log_transform)


@dataclass(frozen=True)
class LogisticOutcome:
    name: str
    intercept: float
    coefficients: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SurvivalOutcome:
    time_name: str = "time"
    event_name: str = "death"
    baseline_rate: float = 1e-3
    censor_time: float = 60.0
    coefficients: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CohortSpec:
    predictors: tuple[PredictorSpec, ...]
    logistic_outcomes: tuple[LogisticOutcome, ...] = ()
    survival: SurvivalOutcome | None = None
    correlation: tuple[tuple[float, ...], ...] | None = None
    n: int = 10000
    seed: int = 0

    def columns(self) -> list[ColumnSpec]:
        cols = [p.column() for p in self.predictors]
        cols += [ColumnSpec(o.name, "binary", "outcome") for o in self.logistic_outcomes]
        if self.survival is not None:
            cols += [ColumnSpec(self.survival.time_name, "numeric", "survival_time"),
                     ColumnSpec(self.survival.event_name, "binary", "survival_event")]
        return cols

    def latent_correlation(self) -> np.ndarray:
        p = len(self.predictors)
        if self.correlation is not None:
            R = np.asarray(self.correlation, dtype=float)
            if R.shape != (p, p) or not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1):
                raise CohortSpecError("invalid correlation matrix: must be symmetric with unit diagonal")
        else:
            k = max((len(q.loadings) for q in self.predictors), default=0)
            L = np.zeros((p, k))
            for i, q in enumerate(self.predictors):
                L[i, :len(q.loadings)] = q.loadings
            if np.any(np.sum(L ** 2, axis=1) >= 1):
                raise CohortSpecError("invalid correlation matrix: factor loadings exceed unit variance")
            R = L @ L.T
            np.fill_diagonal(R, 1.0)
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise CohortSpecError("invalid correlation matrix: not positive definite") from None
        return R

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "CohortSpec":
        def tup(x):
            return tuple(x) if isinstance(x, list) else x
        preds = tuple(PredictorSpec(**{k: tup(v) for k, v in p.items()}) for p in d["predictors"])
        outs = tuple(LogisticOutcome(**o) for o in d.get("logistic_outcomes", ()))
        surv = SurvivalOutcome(**d["survival"]) if d.get("survival") else None
        corr = tuple(tuple(r) for r in d["correlation"]) if d.get("correlation") else None
        return cls(preds, outs, surv, corr, int(d.get("n", 10000)), int(d.get("seed", 0)))


@dataclass
class GroundTruth:
    predictors: list[str]
    coefficients: dict  # outcome name -> array over the binarized predictors
    intercepts: dict

    def to_json(self) -> dict:
        return dict(predictors=self.predictors,
                    coefficients={k: list(map(float, v)) for k, v in self.coefficients.items()},
                    intercepts=self.intercepts)


def _margin(q: PredictorSpec, z: np.ndarray) -> np.ndarray:
    if q.kind == "binary":
        if q.p is None or not 0 <= q.p <= 1:
            raise CohortSpecError(f"{q.name}: binary predictor needs p in [0, 1]")
        return (z > stats.norm.ppf(1 - q.p)).astype(float)
    if q.kind == "categorical":
        probs = np.asarray(q.probs, dtype=float)
        if q.categories is None or len(probs) != len(q.categories) or abs(probs.sum() - 1) > 1e-9:
            raise CohortSpecError(f"{q.name}: category probabilities must match categories and sum to 1")
        cuts = stats.norm.ppf(np.cumsum(probs)[:-1])
        return np.searchsorted(cuts, z, side="right").astype(float)
    x = q.mean + q.sd * z
    if q.dist == "lognormal":
        x = np.exp(x)
    elif q.dist != "normal":
        raise CohortSpecError(f"{q.name}: unknown distribution {q.dist!r}")
    if q.low is not None or q.high is not None:
        x = np.clip(x, q.low, q.high)
    return x


def _coef_vector(names, coefs: dict, label: str) -> np.ndarray:
    unknown = set(coefs) - set(names)
    if unknown:
        raise CohortSpecError(f"{label}: coefficients for unknown binarized predictors {sorted(unknown)}")
    return np.array([float(coefs.get(n, 0.0)) for n in names])


def generate_cohort(spec: CohortSpec) -> tuple[Dataset, GroundTruth]:
    R = spec.latent_correlation()
    chol = np.linalg.cholesky(R)
    p = len(spec.predictors)
    n_out = len(spec.logistic_outcomes) + (spec.survival is not None)
    Z, U = [], []
    # one stream per row block keeps the cohort identical however blocks are scheduled
    for b, start in enumerate(range(0, spec.n, BLOCK_ROWS)):
        nb = min(BLOCK_ROWS, spec.n - start)
        rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), b]))
        Z.append(rng.standard_normal((nb, p)) @ chol.T)
        U.append(rng.random((nb, n_out)))
    Z = np.vstack(Z)
    U = np.vstack(U)
    X = np.column_stack([_margin(q, Z[:, i]) for i, q in enumerate(spec.predictors)])
    pred_ds = Dataset(tuple(q.column() for q in spec.predictors), X)
    binar = binarize_for_estimation(pred_ds)
    names = binar.names
    Xb = binar.values
    coefs, intercepts, cols = {}, {}, [X]
    for k, o in enumerate(spec.logistic_outcomes):
        beta = _coef_vector(names, o.coefficients, o.name)
        coefs[o.name] = beta
        intercepts[o.name] = o.intercept
        cols.append((U[:, k] < expit(o.intercept + Xb @ beta)).astype(float)[:, None])
    if spec.survival is not None:
        s = spec.survival
        beta = _coef_vector(names, s.coefficients, s.time_name)
        coefs[s.event_name] = beta
        hazard = s.baseline_rate * np.exp(Xb @ beta)
        t = -np.log1p(-U[:, -1]) / hazard
        t = np.maximum(t, 1e-9)
        event = (t <= s.censor_time).astype(float)
        cols.append(np.column_stack([np.minimum(t, s.censor_time), event]))
    ds = Dataset(tuple(spec.columns()), np.hstack(cols))
    return ds, GroundTruth(names, coefs, intercepts)


def write_cohort(ds: Dataset, truth: GroundTruth | None, out_dir, stem: str = "cohort"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out_dir / f"{stem}.csv")
    save_schema(ds.columns, out_dir / f"{stem}.schema.json")
    if truth is not None:
        (out_dir / f"{stem}.truth.json").write_text(json.dumps(truth.to_json(), indent=2))
    return out_dir / f"{stem}.csv", out_dir / f"{stem}.schema.json"


# -- default cohort echoing the diabetes/COVID cohort's variable groups --------

COMORBIDITIES = (("MI", 0.13), ("CHF", 0.23), ("PVD", 0.21), ("Stroke", 0.17), ("Dementia", 0.05),
                 ("Pulmonary", 0.31), ("liver_mild", 0.16), ("liver_severe", 0.03), ("Renal", 0.30),
                 ("Cancer", 0.14), ("HIV", 0.01))
TREATMENTS = (("Metformin", 0.26), ("dpp4", 0.05), ("sglt2", 0.05), ("Glp", 0.07), ("Tzd", 0.01),
              ("Insulin", 0.25), ("Sulfonylurea", 0.09))

# latent factors: (frailty, metabolic, social)
_LOADINGS = {
    "age": (0.55, -0.15, 0.0), "BMI": (-0.1, 0.5, 0.1), "HbA1c": (0.0, 0.45, 0.15),
    "Race": (0.0, 0.1, 0.45), "Ethnicity": (-0.1, 0.0, 0.45), "Gender": (0.05, 0.0, 0.0),
    "MI": (0.4, 0.1, 0.0), "CHF": (0.5, 0.15, 0.0), "PVD": (0.4, 0.1, 0.0), "Stroke": (0.4, 0.0, 0.0),
    "Dementia": (0.45, -0.1, 0.0), "Pulmonary": (0.25, 0.15, 0.0), "liver_mild": (0.1, 0.25, 0.0),
    "liver_severe": (0.2, 0.1, 0.0), "Renal": (0.45, 0.15, 0.1), "Cancer": (0.25, 0.0, 0.0),
    "HIV": (0.0, 0.0, 0.2), "Metformin": (-0.15, 0.35, 0.0), "dpp4": (0.1, 0.2, 0.0),
    "sglt2": (0.0, 0.25, 0.0), "Glp": (-0.1, 0.4, 0.0), "Tzd": (0.0, 0.15, 0.0),
    "Insulin": (0.2, 0.45, 0.1), "Sulfonylurea": (0.1, 0.2, 0.0),
}

_HOSP = {
    "Gender=male": 0.15, "age<40": -0.5, "40≤age<50": -0.3, "50≤age<60": -0.15, "70≤age<80": 0.2,
    "age≥80": 0.4, "BMI<20": 0.3, "20≤BMI<25": 0.1, "35≤BMI<40": 0.15, "BMI≥40": 0.35,
    "Race=Black": 0.25, "Race=Asian": 0.1, "Race=Other": 0.1, "Ethnicity=Hispanic": 0.2,
    "HbA1c<6": -0.1, "7≤HbA1c<8": 0.05, "8≤HbA1c<9": 0.15, "9≤HbA1c<10": 0.25, "HbA1c≥10": 0.4,
    "MI": 0.2, "CHF": 0.5, "PVD": 0.2, "Stroke": 0.2, "Dementia": 0.4, "Pulmonary": 0.3,
    "liver_mild": 0.2, "liver_severe": 0.6, "Renal": 0.5, "Cancer": 0.3, "HIV": 0.3,
    "Metformin": -0.3, "dpp4": 0.1, "sglt2": -0.2, "Glp": -0.2, "Insulin": 0.4, "Sulfonylurea": 0.05,
}
_VENT = {k: 0.8 * v for k, v in _HOSP.items()}
_VENT.update({"BMI≥40": 0.5, "35≤BMI<40": 0.25, "HbA1c≥10": 0.3})
_DEATH = {k: 0.9 * v for k, v in _HOSP.items()}
_DEATH.update({"age≥80": 1.0, "70≤age<80": 0.5, "age<40": -0.8, "40≤age<50": -0.5, "Dementia": 0.6})


def default_cohort_spec(n: int = 10000, seed: int = 0) -> CohortSpec:
    preds = [
        PredictorSpec("Gender", "categorical", categories=("female", "male"), probs=(0.51, 0.49),
                      reference_category="female", loadings=_LOADINGS["Gender"]),
        PredictorSpec("age", "numeric", dist="normal", mean=62.0, sd=14.0, low=18.0, high=89.0,
                      bins=(40, 50, 60, 70, 80), reference_category="60≤age<70", loadings=_LOADINGS["age"]),
        PredictorSpec("BMI", "numeric", dist="lognormal", mean=np.log(32.5), sd=0.22, low=12.0, high=80.0,
                      bins=(20, 25, 30, 35, 40), reference_category="30≤BMI<35", log_transform=True,
                      loadings=_LOADINGS["BMI"]),
        PredictorSpec("Race", "categorical", categories=("White", "Black", "Asian", "Other"),
                      probs=(0.647, 0.306, 0.035, 0.012), reference_category="White",
                      loadings=_LOADINGS["Race"]),
        PredictorSpec("Ethnicity", "categorical", categories=("Not hispanic", "Hispanic"), probs=(0.82, 0.18),
                      reference_category="Not hispanic", loadings=_LOADINGS["Ethnicity"]),
        PredictorSpec("HbA1c", "numeric", dist="lognormal", mean=np.log(7.3), sd=0.23, low=4.1, high=19.3,
                      bins=(6, 7, 8, 9, 10), reference_category="6≤HbA1c<7", loadings=_LOADINGS["HbA1c"]),
    ]
    preds += [PredictorSpec(name, "binary", p=p, loadings=_LOADINGS[name]) for name, p in COMORBIDITIES]
    preds += [PredictorSpec(name, "binary", p=p, loadings=_LOADINGS[name]) for name, p in TREATMENTS]
    return CohortSpec(
        predictors=tuple(preds),
        logistic_outcomes=(LogisticOutcome("hospitalized", -1.4, dict(_HOSP)),
                           LogisticOutcome("ventilated", -3.4, dict(_VENT))),
        survival=SurvivalOutcome("time", "death", baseline_rate=6e-4, censor_time=60.0,
                                 coefficients=dict(_DEATH)),
        n=n, seed=seed,
    )


def default_outcomes(spec: CohortSpec) -> list[dict]:
    """Outcome descriptors (consumed by the estimation layer) for a cohort spec."""
    out = [dict(name=o.name, model="logistic", y=o.name) for o in spec.logistic_outcomes]
    if spec.survival is not None:
        out.append(dict(name=spec.survival.event_name, model="cox", time=spec.survival.time_name,
                        event=spec.survival.event_name))
    return out
