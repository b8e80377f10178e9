"""Experiment configuration and the end-to-end evaluation run."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .amputation import AmputationPlan, figure1_plan, mcar_plan
from .estimators import Outcome
from .evaluation import (WTL_METRICS, MethodReport, amputation_jobs, assemble_report, coverage_flags,
                         gold_standard, run_jobs, win_tie_loss)
from .methods import config_from_json, expand_grid, fingerprint, method_label, table3_grid
from .pooling import recommend_m
from .synth import CohortSpec, default_cohort_spec, default_outcomes, generate_cohort
from .tabular import Dataset, freeze_references, load_csv, load_schema

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int
    data: dict
    methods: list
    amputation: dict = field(default_factory=lambda: {"figure1": {}})
    outcomes: list | None = None
    A: int = 25
    m: int | dict = 5
    alpha: float = 0.05
    level: float = 0.95
    threads: int = 1
    out_dir: str | None = None

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if d.get("seed") is None:
            raise ConfigError("config needs an explicit integer seed")
        if "data" not in d:
            raise ConfigError("config needs a data section")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        d.setdefault("methods", [])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def validate(self) -> None:
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if self.A < 1:
            raise ConfigError("A must be >= 1")
        if not 0 < self.alpha < 1 or not 0 < self.level < 1:
            raise ConfigError("alpha and level must lie in (0, 1)")
        self.method_configs()
        self.plan()
        self.n_imputations()

    def to_json(self) -> dict:
        return dict(seed=self.seed, data=self.data, methods=self.methods, amputation=self.amputation,
                    outcomes=self.outcomes, A=self.A, m=self.m, alpha=self.alpha, level=self.level)

    def fingerprint(self) -> str:
        """Hash of everything that affects results (threads and output location excluded)."""
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]

    # -- resolved pieces ---------------------------------------------------

    def method_configs(self) -> list[tuple[str, object]]:
        entries = self.methods
        if entries == "table3" or entries == ["table3"]:
            entries = table3_grid()
        if not entries:
            raise ConfigError("config needs at least one method")
        out, seen = [], set()
        for entry in entries:
            if not isinstance(entry, dict) or "kind" not in entry:
                raise ConfigError(f"method entry needs a kind: {entry!r}")
            for e in expand_grid(entry):
                try:
                    cfg = config_from_json(e)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"invalid method {e!r}: {exc}") from None
                label = e.get("name") or method_label(cfg)
                if label in seen:
                    label = f"{label}_{fingerprint(cfg)[:6]}"
                seen.add(label)
                out.append((label, cfg))
        return out

    def plan(self) -> AmputationPlan:
        spec = dict(self.amputation)
        try:
            if "figure1" in spec:
                return figure1_plan(A=self.A, seed=self.seed, **spec["figure1"])
            if "mcar" in spec:
                return mcar_plan(A=self.A, seed=self.seed, rates=spec["mcar"].get("rates"))
            return AmputationPlan.from_json({**spec, "A": self.A, "seed": self.seed})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid amputation plan: {exc}") from None

    def n_imputations(self) -> int:
        if isinstance(self.m, int):
            if self.m < 1:
                raise ConfigError("m must be >= 1")
            return self.m
        if not isinstance(self.m, dict) or "rule" not in self.m:
            raise ConfigError("m must be an integer or {\"rule\": ...}")
        frac = self.m.get("frac")
        if frac is None:
            plan = self.plan()
            if plan.mechanism == "MAR":
                frac = plan.overall_prop
            else:
                frac = 1 - float(np.prod([1 - r for r in (plan.per_variable_rates or {}).values()]))
        try:
            return recommend_m(frac, self.m["rule"], self.m.get("max_loss", 0.05))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dataset(self) -> Dataset:
        d = self.data
        if "csv" in d:
            schema = d.get("schema") or str(Path(d["csv"]).with_suffix("")) + ".schema.json"
            return freeze_references(load_csv(d["csv"], load_schema(schema)))
        return generate_cohort(self.cohort_spec())[0]

    def cohort_spec(self) -> CohortSpec:
        synth = self.data.get("synth")
        if synth is None:
            raise ConfigError("data needs either csv or synth")
        if "predictors" in synth:
            return CohortSpec.from_json(synth)
        return default_cohort_spec(n=int(synth.get("n", 10000)), seed=int(synth.get("seed", self.seed)))

    def outcome_list(self) -> list[Outcome]:
        if self.outcomes is not None:
            return [Outcome.coerce(o) for o in self.outcomes]
        if "synth" in self.data:
            return [Outcome.coerce(o) for o in default_outcomes(self.cohort_spec())]
        raise ConfigError("outcomes must be given for CSV data")


# -- artifacts ---------------------------------------------------------------

def _num(v) -> str:
    v = float(v)
    return repr(v) if np.isfinite(v) else ("" if np.isnan(v) else repr(v))


def write_table(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(x) if isinstance(x, (float, np.floating)) else x for x in r])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_gold(path: Path, gold) -> None:
    rows = [[r["outcome"], r["predictor"], r["q"], r["se"], r["ci_low"], r["ci_high"]] for r in gold.to_rows()]
    write_table(path, ["outcome", "predictor", "q", "se", "ci_low", "ci_high"], rows)


SUMMARY_HEADER = ["method", "kind", "include_outcomes", "one_hot_numeric_bins", "one_hot_categorical",
                  "visit_order", "mean_abs_RB", "mean_MSE", "mean_ER", "mean_CR", "mean_ratio_SE",
                  "n_amputations", "failed"]


def summary_row(r: MethodReport) -> list:
    c, s = r.config, r.summary()
    flags = [c.get("kind"), c.get("include_outcomes", ""), c.get("one_hot_numeric_bins", ""),
             c.get("one_hot_categorical", ""), c.get("visit_order", "")]
    return [r.method, *map(str, flags), s["mean_abs_RB"], s["mean_MSE"], s["mean_ER"], s["mean_CR"],
            s["mean_ratio_SE"], str(len(r.amputations)), str(r.failed)]


def write_method_report(out: Path, r: MethodReport) -> None:
    rows = []
    for o in r.outcomes:
        m = r.metrics[o]
        for i, p in enumerate(r.predictors):
            flag = coverage_flags([m["CR"][i]])[0]
            rows.append([o, p, m["RB"][i], m["ER"][i], m["MSE"][i], m["CR"][i], m["ratio_SE"][i], flag])
    write_table(out / f"report_{r.method}.csv", ["outcome", "predictor", "RB", "ER", "MSE", "CR", "ratio_SE",
                                                 "coverage_flag"], rows)
    write_json(out / f"report_{r.method}.json", r.to_json())


def write_forest_tables(out: Path, r: MethodReport, gold) -> None:
    """Odds/hazard ratios averaged over amputations, next to the gold-standard ratios."""
    for o in r.outcomes:
        raw = r.raw[o]
        g = gold.estimates[o]
        rows = []
        for i, p in enumerate(r.predictors):
            if len(raw["q"]):
                q = float(np.mean(raw["q"][:, i]))
                lo, hi = (float(np.mean(raw["ci"][:, i, k])) for k in (0, 1))
            else:
                q = lo = hi = float("nan")
            with np.errstate(over="ignore"):
                rows.append([p, float(np.exp(q)), float(np.exp(lo)), float(np.exp(hi)), float(np.exp(g.q[i])),
                             float(np.exp(g.ci[i, 0])), float(np.exp(g.ci[i, 1]))])
        write_table(out / f"forest_{o}_{r.method}.csv",
                    ["predictor", "ratio", "ci_low", "ci_high", "gold_ratio", "gold_ci_low", "gold_ci_high"], rows)


def write_wtl(out: Path, reports: list[MethodReport], alpha: float) -> dict:
    grids = {}
    if len(reports) < 2:
        return grids
    labels = [r.method for r in reports]
    for metric in WTL_METRICS:
        g = win_tie_loss(reports, metric, alpha)
        grids[metric] = g
        write_table(out / f"wtl_{metric}.csv", ["method", *labels],
                    [[lab, *map(str, row)] for lab, row in zip(labels, g.tolist())])
    return grids


def write_report_artifacts(out: Path, reports: list[MethodReport], gold, alpha: float) -> dict:
    for r in reports:
        write_method_report(out, r)
        write_forest_tables(out, r, gold)
    write_table(out / "summary.csv", SUMMARY_HEADER, [summary_row(r) for r in reports])
    return write_wtl(out, reports, alpha)


class RunLog:
    """JSON-lines stage log. Wall-clock timings live only under the ``seconds`` key."""

    def __init__(self, path: Path):
        self.path = path
        self.fh = open(path, "w")

    def event(self, stage: str, seconds: float | None = None, **fields) -> None:
        rec = dict(stage=stage, **fields)
        if seconds is not None:
            rec["seconds"] = round(seconds, 3)
        self.fh.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


@dataclass
class ExperimentResult:
    out_dir: Path
    reports: list[MethodReport]
    gold: object
    m: int

    @property
    def any_failed(self) -> bool:
        return any(r.failed for r in self.reports)


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> ExperimentResult:
    out = Path(out_dir or cfg.out_dir or "mieval_out")
    out.mkdir(parents=True, exist_ok=True)
    workers = threads if threads is not None else cfg.threads
    runlog = RunLog(out / "run_log.jsonl")
    try:
        t0 = time.perf_counter()
        ds = cfg.dataset()
        outcomes = cfg.outcome_list()
        runlog.event("load", time.perf_counter() - t0, n_rows=ds.n_rows, columns=ds.names)

        t0 = time.perf_counter()
        gold = gold_standard(ds, outcomes)
        write_gold(out / "gold_standard.csv", gold)
        runlog.event("gold_standard", time.perf_counter() - t0,
                     flags={o: ev.flags for o, ev in gold.estimates.items()})

        plan, m, methods = cfg.plan(), cfg.n_imputations(), cfg.method_configs()
        runlog.event("plan", mechanism=plan.mechanism, A=plan.A, m=m, m_rule=cfg.m, n_methods=len(methods))

        jobs, owners = [], []
        for k, (_, mcfg) in enumerate(methods):
            js = amputation_jobs(mcfg, plan, outcomes, gold.predictors, m, cfg.seed)
            jobs += js
            owners += [k] * len(js)
        t0 = time.perf_counter()
        results = run_jobs(ds, jobs, workers)
        runlog.event("evaluate", time.perf_counter() - t0, n_jobs=len(jobs))

        reports = []
        for k, (label, mcfg) in enumerate(methods):
            res = [r for r, own in zip(results, owners) if own == k]
            for a, _, err, secs in res:
                runlog.event("job", secs, method=label, amputation=a, error=err)
            rep = assemble_report(mcfg, gold, outcomes, res, label)
            reports.append(rep)
            runlog.event("method", sum(r[3] for r in res), method=label, fingerprint=rep.fingerprint,
                         failed=rep.failed, failures=rep.failures, flags=rep.flags)

        t0 = time.perf_counter()
        write_report_artifacts(out, reports, gold, cfg.alpha)
        runlog.event("report", time.perf_counter() - t0)

        write_json(out / "manifest.json", dict(
            tool="mieval", version=__version__, config=cfg.to_json(), config_fingerprint=cfg.fingerprint(),
            seed=cfg.seed, m=m, A=plan.A, plan=plan.to_json(),
            methods=[dict(label=lab, fingerprint=fingerprint(c), config=c.to_json()) for lab, c in methods],
            failed_methods=[r.method for r in reports if r.failed]))
    finally:
        runlog.close()
    return ExperimentResult(out, reports, gold, m)


def load_reports(out_dir) -> list[MethodReport]:
    manifest = json.loads((Path(out_dir) / "manifest.json").read_text())
    return [MethodReport.from_json(json.loads((Path(out_dir) / f"report_{m['label']}.json").read_text()))
            for m in manifest["methods"]]
