"""Synthetic missingness on complete data (MCAR and multivariate MAR amputation).

MAR amputation follows the weighted-sum-score scheme: every row is allocated
to one candidate pattern, a standardized score is built from the variables
that stay observed under that pattern, and the row is amputed with
probability ``logistic(shape * (score - shift))`` where ``shift`` is solved so
that the expected amputed fraction of the pattern group equals the target.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .tabular import Dataset, write_csv

SCORE_TYPES = ("RIGHT", "LEFT", "MID", "TAIL")


class AmputationError(ValueError):
    pass


@dataclass(frozen=True)
class AmputationPlan:
    mechanism: str = "MAR"
    patterns: tuple[tuple[str, ...], ...] = ()
    pattern_freqs: tuple[float, ...] = ()
    overall_prop: float = 0.5
    weights: tuple[dict, ...] | None = None
    score_type: str | tuple[str, ...] = "RIGHT"
    shape: float = 1.0
    per_variable_rates: dict | None = None
    condition_on_outcomes: bool = True
    A: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in ("MCAR", "MAR"):
            raise AmputationError(f"unknown mechanism {self.mechanism!r}")
        object.__setattr__(self, "patterns", tuple(tuple(p) for p in self.patterns))
        object.__setattr__(self, "pattern_freqs", tuple(float(f) for f in self.pattern_freqs))
        if self.A < 1:
            raise AmputationError("A must be >= 1")
        if self.mechanism == "MAR":
            if not self.patterns:
                raise AmputationError("MAR plan needs at least one pattern")
            if len(self.pattern_freqs) != len(self.patterns):
                raise AmputationError("one frequency per pattern required")
            if abs(sum(self.pattern_freqs) - 1) > 1e-9:
                raise AmputationError("pattern_freqs must sum to 1")
            if not 0 < self.overall_prop < 1:
                raise AmputationError("overall_prop must be in (0, 1)")
            if self.shape <= 0:
                raise AmputationError("shape must be positive")
            types = (self.score_type,) if isinstance(self.score_type, str) else tuple(self.score_type)
            if any(t not in SCORE_TYPES for t in types):
                raise AmputationError(f"score_type must be one of {SCORE_TYPES}")
            if self.weights is not None:
                if len(self.weights) != len(self.patterns):
                    raise AmputationError("one weight map per pattern required")
                for pat, w in zip(self.patterns, self.weights):
                    bad = [v for v, x in w.items() if v in pat and x != 0]
                    if bad:
                        raise AmputationError(f"weights on amputed variables {bad} are not allowed")
        else:
            rates = self.per_variable_rates or {}
            if any(not 0 <= r <= 1 for r in rates.values()):
                raise AmputationError("rate outside [0, 1]")

    def score_type_for(self, k: int) -> str:
        return self.score_type if isinstance(self.score_type, str) else self.score_type[k]

    def to_json(self) -> dict:
        d = asdict(self)
        d["patterns"] = [list(p) for p in self.patterns]
        d["pattern_freqs"] = list(self.pattern_freqs)
        if self.weights is not None:
            d["weights"] = [dict(w) for w in self.weights]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "AmputationPlan":
        d = dict(d)
        if d.get("weights") is not None:
            d["weights"] = tuple(d["weights"])
        if isinstance(d.get("score_type"), list):
            d["score_type"] = tuple(d["score_type"])
        return cls(**d)

    def with_seed(self, seed: int) -> "AmputationPlan":
        return type(self)(**{**self.__dict__, "seed": seed})


@dataclass
class AmputedSet:
    index: int
    dataset: Dataset
    realized_prop: float
    pattern_of_row: np.ndarray = field(default=None, repr=False)


def solve_shift(scores, target: float, shape: float = 1.0, tol: float = 1e-6, max_bisect: int = 200) -> float:
    """Shift such that ``mean(logistic(shape * (scores - shift))) == target``."""
    s = np.asarray(scores, dtype=float)
    if not 0 < target < 1:
        raise AmputationError("target must be in (0, 1)")
    if not np.all(np.isfinite(s)):
        raise AmputationError("scores must be finite")

    def f(shift):
        return float(np.mean(expit(shape * (s - shift)))) - target

    # f decreases in shift; widen the bracket until it changes sign
    half = max(float(np.ptp(s)), 1.0) + abs(np.log(target / (1 - target))) / shape
    lo, hi = float(np.median(s)) - half, float(np.median(s)) + half
    while f(lo) < 0:
        lo -= 2 * half
        half *= 2
    while f(hi) > 0:
        hi += 2 * half
        half *= 2
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol * 1e-3 or hi - lo < 1e-15 * max(1.0, abs(mid)):
            return mid
        if fm > 0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(f(mid)) > tol:
        raise AmputationError("solve_shift did not converge after 200 bisections")
    return mid


def _check_complete(ds: Dataset):
    if ds.mask.any():
        raise AmputationError("amputation needs a complete dataset")


def ampute_mcar(ds: Dataset, plan: AmputationPlan, rng=None, index: int = 1) -> AmputedSet:
    _check_complete(ds)
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    mask = np.zeros_like(ds.mask)
    for var, rate in (plan.per_variable_rates or {}).items():
        if not 0 <= rate <= 1:
            raise AmputationError("rate outside [0, 1]")
        mask[:, ds.index(var)] = rng.random(ds.n_rows) < rate
    vals = np.where(mask, np.nan, ds.values)
    return AmputedSet(index, ds.with_values(vals, mask), float(mask.any(axis=1).mean()))


def _score_columns(ds: Dataset, plan: AmputationPlan, pattern: Sequence[str]) -> list[str]:
    roles = ("predictor", "outcome", "survival_time", "survival_event") if plan.condition_on_outcomes \
        else ("predictor",)
    return [c.name for c in ds.columns if c.role in roles and c.name not in pattern]


def _standardize(x):
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def pattern_scores(ds: Dataset, plan: AmputationPlan, k: int, rows) -> np.ndarray:
    """Standardized weighted-sum scores of the rows allocated to pattern ``k``."""
    pattern = plan.patterns[k]
    if plan.weights is not None:
        weights = dict(plan.weights[k])
    else:
        weights = {v: 1.0 for v in _score_columns(ds, plan, pattern)}
    s = np.zeros(len(rows))
    for var, w in weights.items():
        if w:
            s += w * _standardize(ds.col(var))[rows]
    if len(rows) > 1 and np.std(s) == 0:
        raise AmputationError("uninformative weights: weighted-sum scores have zero variance")
    if len(rows) > 1:
        s = _standardize(s)
    kind = plan.score_type_for(k)
    if kind == "LEFT":
        s = -s
    elif kind == "MID":
        s = -np.abs(s - np.median(s))
    elif kind == "TAIL":
        s = np.abs(s - np.median(s))
    return s


def ampute_mar(ds: Dataset, plan: AmputationPlan, rng=None, index: int = 1) -> AmputedSet:
    _check_complete(ds)
    rng = rng if rng is not None else np.random.default_rng(plan.seed)
    n = ds.n_rows
    for pat in plan.patterns:
        for v in pat:
            ds.index(v)
    alloc = rng.choice(len(plan.patterns), size=n, p=np.asarray(plan.pattern_freqs))
    mask = np.zeros_like(ds.mask)
    assigned = np.full(n, -1)
    for k, pat in enumerate(plan.patterns):
        rows = np.flatnonzero(alloc == k)
        if len(rows) == 0:
            continue
        s = pattern_scores(ds, plan, k, rows)
        shift = solve_shift(s, plan.overall_prop, plan.shape)
        accept = rng.random(len(rows)) < expit(plan.shape * (s - shift))
        hit = rows[accept]
        assigned[hit] = k
        for v in pat:
            mask[hit, ds.index(v)] = True
    vals = np.where(mask, np.nan, ds.values)
    return AmputedSet(index, ds.with_values(vals, mask), float(mask.any(axis=1).mean()), assigned)


def amputation_rng(seed: int, a: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(a)]))


def ampute(ds: Dataset, plan: AmputationPlan, a: int = 1) -> AmputedSet:
    rng = amputation_rng(plan.seed, a)
    fn = ampute_mar if plan.mechanism == "MAR" else ampute_mcar
    return fn(ds, plan, rng, index=a)


def ampute_batch(ds: Dataset, plan: AmputationPlan) -> list[AmputedSet]:
    return [ampute(ds, plan, a) for a in range(1, plan.A + 1)]


def write_amputed(amp: AmputedSet, out_dir: str | Path, stem: str = "amputed") -> tuple[Path, Path]:
    """CSV with empty masked cells plus a JSON mask sidecar (row, column) list."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}_{amp.index:03d}.csv"
    write_csv(amp.dataset, csv_path)
    rows, cols = np.nonzero(amp.dataset.mask)
    names = amp.dataset.names
    side = out_dir / f"{stem}_{amp.index:03d}.mask.json"
    side.write_text(json.dumps(dict(index=amp.index, realized_prop=amp.realized_prop,
                                    cells=[[int(r), names[c]] for r, c in zip(rows, cols)])))
    return csv_path, side


FIGURE1_PATTERNS = (
    (("BMI",), 9993),
    (("Race",), 4951),
    (("Ethnicity",), 1226),
    (("Race", "BMI"), 2159),
    (("Ethnicity", "BMI"), 3732),
    (("Ethnicity", "Race"), 910),
    (("Ethnicity", "Race", "BMI"), 623),
)


def figure1_plan(A: int = 25, seed: int = 0, overall_prop: float = 0.42, **kw) -> AmputationPlan:
    """MAR plan reproducing the BMI/Race/Ethnicity pattern mix of the diabetes cohort."""
    total = sum(c for _, c in FIGURE1_PATTERNS)
    return AmputationPlan(mechanism="MAR", patterns=tuple(p for p, _ in FIGURE1_PATTERNS),
                          pattern_freqs=tuple(c / total for _, c in FIGURE1_PATTERNS),
                          overall_prop=overall_prop, A=A, seed=seed, **kw)


def mcar_plan(A: int = 25, seed: int = 0, rates=None) -> AmputationPlan:
    return AmputationPlan(mechanism="MCAR", per_variable_rates=dict(rates or {"BMI": 0.30, "Race": 0.15,
                                                                               "Ethnicity": 0.15}),
                          A=A, seed=seed)
