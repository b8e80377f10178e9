"""Amputation-based evaluation of missing-data strategies.

A strategy is scored by amputing the complete data A times, pooling its
estimates on every amputed copy and comparing them with the estimates of
the complete data (the gold standard) through raw bias, estimate ratio,
MSE, coverage rate and the ratio of standard errors.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .amputation import AmputationPlan, ampute
from .estimators import EstimateVector, Outcome, estimation_matrix, fit_outcome
from .methods import fingerprint, method_label, pooled_estimates
from .pooling import stable_mean
from .tabular import Dataset, DataError

log = logging.getLogger(__name__)

METRICS = ("RB", "ER", "MSE", "CR", "ratio_SE")
WTL_METRICS = ("abs_RB", "MSE", "abs_1_minus_ER", "CR", "ratio_SE")
ER_MIN_GOLD = 1e-6
MIN_SUCCESS = 0.8


@dataclass
class GoldStandard:
    predictors: list[str]
    estimates: dict  # outcome name -> EstimateVector

    def to_rows(self) -> list[dict]:
        return [dict(outcome=o, **r) for o, ev in self.estimates.items() for r in ev.to_rows()]


def gold_standard(ds_complete: Dataset, outcomes) -> GoldStandard:
    if not ds_complete.is_complete():
        raise DataError("dataset is not complete: the gold standard needs every cell observed")
    outcomes = [Outcome.coerce(o) for o in outcomes]
    _, names = estimation_matrix(ds_complete)
    return GoldStandard(names, {o.name: fit_outcome(ds_complete, o, predictors=names) for o in outcomes})


# -- metrics -------------------------------------------------------------

def metrics(gold: EstimateVector, q_hat, se_hat, ci_hat) -> dict:
    """Per-predictor metrics of A pooled estimate sets (rows of ``q_hat``) against ``gold``."""
    q_hat = np.atleast_2d(np.asarray(q_hat, float))
    se_hat = np.atleast_2d(np.asarray(se_hat, float))
    ci_hat = np.asarray(ci_hat, float).reshape(q_hat.shape + (2,))
    if q_hat.shape[1] != len(gold.q):
        raise ValueError("dimension mismatch between pooled estimates and gold standard")
    q = gold.q
    qbar = stable_mean(q_hat)
    rb = qbar - q
    with np.errstate(divide="ignore", invalid="ignore"):
        er = np.where(np.abs(q) < ER_MIN_GOLD, np.nan, qbar / q)
        ratio = np.mean(se_hat / gold.se, axis=0)
    mse = np.mean((q_hat - q) ** 2, axis=0)
    cr = np.mean((ci_hat[..., 0] <= q) & (q <= ci_hat[..., 1]), axis=0)
    return dict(RB=rb, ER=er, MSE=mse, CR=cr, ratio_SE=ratio)


def coverage_flags(cr, low: float = 0.90, high: float = 0.99) -> list[str]:
    out = []
    for c in np.atleast_1d(cr):
        if c < low:
            out.append("too optimistic")
        elif c > high:
            out.append("possibly inefficient, inspect ratio_SE")
        else:
            out.append("")
    return out


# -- Wilcoxon signed-rank -------------------------------------------------

@dataclass
class WilcoxonResult:
    statistic: float   # sum of ranks of positive differences
    p_value: float
    n_effective: int
    exact: bool
    flags: list[str] = field(default_factory=list)


def _exact_upper_lower(ranks2: np.ndarray, w2: int) -> tuple[float, float]:
    """P(W+ <= w) and P(W+ >= w) under random signs, with doubled integer ranks.

    Distribution of the positive-rank sum built one rank at a time
    (counts over all 2^n sign patterns).
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r > 0 else counts
        counts = counts + shifted
    # integer counts over a power-of-two total: both tails are exact in floating point
    n_total = counts.sum()
    return float(counts[:w2 + 1].sum() / n_total), float(counts[w2:].sum() / n_total)


def wilcoxon_signed_rank(x, y=None, exact_max_n: int = 12) -> WilcoxonResult:
    """Two-sided paired signed-rank test with midranks; exact null for small samples."""
    x = np.asarray(x, float)
    d = x - np.asarray(y, float) if y is not None else x
    if d.size < 1:
        raise ValueError("need at least one pair")
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, True, ["no signal"])
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= exact_max_n:
        ranks2 = np.rint(2 * ranks).astype(int)
        w2 = int(round(2 * w_plus))
        lo, hi = _exact_upper_lower(ranks2, w2)
        return WilcoxonResult(w_plus, min(1.0, 2 * min(lo, hi)), n, True)
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(tie_counts ** 3 - tie_counts) / 48
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var) if var > 0 else 0.0
    return WilcoxonResult(w_plus, float(min(1.0, 2 * stats.norm.sf(z))), n, False)


# -- reports -------------------------------------------------------------

@dataclass
class MethodReport:
    method: str
    config: dict
    fingerprint: str
    predictors: list[str]
    outcomes: list[str]
    metrics: dict            # outcome -> metric name -> per-predictor array
    raw: dict                # outcome -> {"q", "se", "ci"} arrays over successful amputations
    amputations: list[int]   # indices a that succeeded
    failures: list[dict]
    failed: bool = False
    flags: list[str] = field(default_factory=list)

    def metric_vector(self, outcome: str, name: str) -> np.ndarray:
        m = self.metrics[outcome]
        if name == "abs_RB":
            return np.abs(m["RB"])
        if name == "abs_1_minus_ER":
            return np.abs(1 - m["ER"])
        if name == "CR_distance":
            return np.abs(m["CR"] - 0.95)
        return m[name]

    def summary(self) -> dict:
        """Averages across predictors and then across outcomes."""
        def avg(fn):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)  # failed methods carry all-NaN metrics
                return float(np.mean([np.nanmean(fn(o)) for o in self.outcomes]))
        return dict(mean_abs_RB=avg(lambda o: np.abs(self.metrics[o]["RB"])),
                    mean_MSE=avg(lambda o: self.metrics[o]["MSE"]),
                    mean_ER=avg(lambda o: self.metrics[o]["ER"]),
                    mean_CR=avg(lambda o: self.metrics[o]["CR"]),
                    mean_ratio_SE=avg(lambda o: self.metrics[o]["ratio_SE"]))

    def to_json(self) -> dict:
        def arr(a):
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]
        return dict(
            method=self.method, config=self.config, fingerprint=self.fingerprint,
            predictors=self.predictors, outcomes=self.outcomes, failed=self.failed, flags=self.flags,
            amputations=self.amputations, failures=self.failures, summary=self.summary(),
            metrics={o: {k: arr(v) for k, v in ms.items()} for o, ms in self.metrics.items()},
            coverage_flags={o: coverage_flags(ms["CR"]) for o, ms in self.metrics.items()},
            raw={o: {"q": np.asarray(r["q"]).tolist(), "se": np.asarray(r["se"]).tolist(),
                     "ci": np.asarray(r["ci"]).tolist()} for o, r in self.raw.items()},
        )

    @classmethod
    def from_json(cls, d: dict) -> "MethodReport":
        def arr(a):
            return np.array([np.nan if v is None else v for v in a], dtype=float)
        return cls(d["method"], d["config"], d["fingerprint"], d["predictors"], d["outcomes"],
                   {o: {k: arr(v) for k, v in ms.items()} for o, ms in d["metrics"].items()},
                   {o: {k: np.array(v) for k, v in r.items()} for o, r in d["raw"].items()},
                   d["amputations"], d["failures"], d["failed"], d["flags"])


def method_seed(master_seed: int, cfg, a: int) -> list[int]:
    return [int(master_seed), int(fingerprint(cfg)[:8], 16), int(a)]


_WORKER_DATA: dict = {}


def _init_worker(ds_complete):
    _WORKER_DATA["ds"] = ds_complete
    threadpool_limits(1)


def _amputation_task(job):
    cfg, plan, a, outcomes, predictors, m, master_seed = job
    ds_complete = _WORKER_DATA["ds"]
    t0 = time.perf_counter()
    try:
        amp = ampute(ds_complete, plan, a)
        res = pooled_estimates(cfg, amp.dataset, outcomes, predictors, method_seed(master_seed, cfg, a),
                               truth=ds_complete, m=m)
        return a, res, None, time.perf_counter() - t0
    except Exception as exc:  # per-amputation failures are recorded, not fatal
        return a, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0


def run_jobs(ds_complete: Dataset, jobs: list, workers: int = 1) -> list:
    """Run ``(cfg, plan, a, outcomes, predictors, m, seed)`` jobs; results keep job order.

    BLAS is pinned to one thread in every mode so results do not depend on ``workers``.
    """
    if workers <= 1:
        with threadpool_limits(1):
            _WORKER_DATA["ds"] = ds_complete
            try:
                return [_amputation_task(j) for j in jobs]
            finally:
                _WORKER_DATA.clear()
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ds_complete,)) as ex:
        return list(ex.map(_amputation_task, jobs))


def amputation_jobs(cfg, plan, outcomes, predictors, m, master_seed) -> list:
    return [(cfg, plan, a, outcomes, predictors, m, master_seed) for a in range(1, plan.A + 1)]


def assemble_report(cfg, gold: GoldStandard, outcomes, results, name: str | None = None) -> MethodReport:
    """Metrics from per-amputation results ``(a, per-outcome estimates, error, seconds)``."""
    outcomes = [Outcome.coerce(o) for o in outcomes]
    results = sorted(results, key=lambda r: r[0])
    ok = [r for r in results if r[2] is None]
    failures = [dict(amputation=a, error=err) for a, _, err, _ in results if err is not None]
    label = name or method_label(cfg)
    failed = len(ok) < MIN_SUCCESS * len(results) or not ok
    metric_map, raw = {}, {}
    for o in outcomes:
        if ok:
            q = np.array([r[1][o.name][0] for r in ok])
            se = np.array([r[1][o.name][1] for r in ok])
            ci = np.array([r[1][o.name][2] for r in ok])
            metric_map[o.name] = metrics(gold.estimates[o.name], q, se, ci)
            raw[o.name] = dict(q=q, se=se, ci=ci)
        else:
            nan = np.full(len(gold.predictors), np.nan)
            metric_map[o.name] = {k: nan.copy() for k in METRICS}
            raw[o.name] = dict(q=np.empty((0, len(nan))), se=np.empty((0, len(nan))),
                               ci=np.empty((0, len(nan), 2)))
    flags = ["method failed: fewer than 80% of amputations succeeded"] if failed else []
    return MethodReport(label, cfg.to_json(), fingerprint(cfg), list(gold.predictors),
                        [o.name for o in outcomes], metric_map, raw, [r[0] for r in ok], failures,
                        failed, flags)


def evaluate_method(ds_complete: Dataset, cfg, plan: AmputationPlan, m: int | None, outcomes,
                    gold: GoldStandard | None = None, master_seed: int = 0, workers: int = 1,
                    name: str | None = None) -> MethodReport:
    """Ampute ``plan.A`` times, apply the strategy, pool, and score against the gold standard."""
    outcomes = [Outcome.coerce(o) for o in outcomes]
    gold = gold if gold is not None else gold_standard(ds_complete, outcomes)
    jobs = amputation_jobs(cfg, plan, outcomes, gold.predictors, m, master_seed)
    results = run_jobs(ds_complete, jobs, workers)
    return assemble_report(cfg, gold, outcomes, results, name)


# -- win / tie / loss --------------------------------------------------------

def _compare_values(report: MethodReport, outcome: str, metric: str) -> np.ndarray:
    if metric == "CR":
        return report.metric_vector(outcome, "CR_distance")
    return report.metric_vector(outcome, metric)


def pairwise_outcome(a: MethodReport, b: MethodReport, outcome: str, metric: str, alpha: float = 0.05) -> int:
    """+1 if ``a`` is significantly better than ``b`` on ``metric`` for ``outcome``, -1 if worse, else 0."""
    va, vb = _compare_values(a, outcome, metric), _compare_values(b, outcome, metric)
    keep = np.isfinite(va) & np.isfinite(vb)
    if not keep.any():
        return 0
    res = wilcoxon_signed_rank(va[keep], vb[keep])
    if res.p_value >= alpha:
        return 0
    # lower is better for every compared quantity
    n = res.n_effective
    return -1 if res.statistic > n * (n + 1) / 4 else 1


def win_tie_loss(reports: Sequence[MethodReport], metric: str, alpha: float = 0.05) -> np.ndarray:
    """Antisymmetric grid; entry [a, b] sums +1/0/-1 over outcomes."""
    if len(reports) < 2:
        raise ValueError("win_tie_loss needs at least two reports")
    if metric not in WTL_METRICS:
        raise ValueError(f"metric must be one of {WTL_METRICS}")
    k = len(reports)
    grid = np.zeros((k, k), dtype=int)
    for i in range(k):
        for j in range(i + 1, k):
            s = sum(pairwise_outcome(reports[i], reports[j], o, metric, alpha) for o in reports[i].outcomes)
            grid[i, j], grid[j, i] = s, -s
    assert np.array_equal(grid, -grid.T)
    return grid
