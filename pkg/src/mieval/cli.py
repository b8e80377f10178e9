"""Command-line front end: ``mieval <stage> --config exp.json --out-dir DIR``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .amputation import ampute, write_amputed
from .diagnostics import little_mcar_test
from .estimators import EstimateVector, fit_outcome
from .evaluation import GoldStandard, gold_standard
from .experiment import (ConfigError, ExperimentConfig, load_reports, run_experiment, write_gold, write_json,
                         write_report_artifacts, write_table)
from .methods import impute, is_multiple_imputation
from .synth import default_cohort_spec, write_cohort, generate_cohort
from .tabular import (DataError, SchemaError, listwise_delete, load_csv, load_schema, pattern_summary,
                      save_schema, write_csv)

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3
log = logging.getLogger("mieval")


def _schema_for(csv_path: Path, explicit: str | None):
    if explicit:
        return load_schema(explicit)
    sibling = csv_path.with_suffix("").with_suffix(".schema.json")
    if sibling.exists():
        return load_schema(sibling)
    found = sorted(csv_path.parent.glob("*.schema.json"))
    if len(found) == 1:
        return load_schema(found[0])
    raise ConfigError(f"no schema for {csv_path}; pass --schema")


def _input_dataset(args, cfg: ExperimentConfig | None):
    if getattr(args, "input", None):
        p = Path(args.input)
        return load_csv(p, _schema_for(p, args.schema))
    if cfg is None:
        raise ConfigError("need --config or --input")
    return cfg.dataset()


def _load_config(args) -> ExperimentConfig | None:
    if not args.config:
        return None
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _emit(out: Path, stem: str, rows: list[dict], fmt: str) -> Path:
    if fmt == "json":
        path = out / f"{stem}.json"
        write_json(path, rows)
    else:
        path = out / f"{stem}.csv"
        header = list(rows[0]) if rows else []
        write_table(path, header, [[r[h] for h in header] for r in rows])
    return path


# -- stages ------------------------------------------------------------------

def cmd_synth(args, cfg, out: Path) -> int:
    if cfg is not None:
        spec = cfg.cohort_spec()
    else:
        spec = default_cohort_spec(n=args.n, seed=args.seed if args.seed is not None else 0)
    ds, truth = generate_cohort(spec)
    write_cohort(ds, truth, out)
    write_json(out / "cohort.spec.json", spec.to_json())
    print(f"wrote {ds.n_rows} rows to {out / 'cohort.csv'}")
    return EXIT_OK


def cmd_ampute(args, cfg, out: Path) -> int:
    if cfg is None:
        raise ConfigError("ampute needs --config")
    ds = _input_dataset(args, cfg)
    plan = cfg.plan()
    save_schema(ds.columns, out / "amputed.schema.json")
    rows = []
    for a in range(1, plan.A + 1):
        amp = ampute(ds, plan, a)
        write_amputed(amp, out)
        rows.append(dict(amputation=a, realized_prop=amp.realized_prop))
    write_json(out / "amputation_plan.json", plan.to_json())
    _emit(out, "amputation_summary", rows, args.format)
    print(f"wrote {plan.A} amputed datasets to {out}")
    return EXIT_OK


def cmd_diagnose(args, cfg, out: Path) -> int:
    ds = _input_dataset(args, cfg)
    if ds.is_complete() and cfg is not None:
        ds = ampute(ds, cfg.plan(), 1).dataset
    res = little_mcar_test(ds)
    table = pattern_summary(ds)
    report = dict(little_d2=res.d2, little_df=res.df, little_p=res.p_value, n_patterns=res.n_patterns,
                  mcar_rejected=res.rejected(), flags=res.flags, n_rows=ds.n_rows,
                  n_complete=table.n_complete, n_incomplete=table.n_incomplete,
                  patterns=[dict(missing=list(p), count=c, percent=pct) for p, c, pct in table.entries])
    write_json(out / "diagnose.json", report)
    print(f"Little's test: d2={res.d2:.3f} df={res.df} p={res.p_value:.4g}; "
          f"{table.n_incomplete}/{ds.n_rows} incomplete rows")
    return EXIT_OK


def cmd_impute(args, cfg, out: Path) -> int:
    if cfg is None:
        raise ConfigError("impute needs --config")
    ds = _input_dataset(args, cfg)
    methods = dict(cfg.method_configs())
    label = args.method or next(iter(methods))
    if label not in methods:
        raise ConfigError(f"unknown method {label!r}; choose from {sorted(methods)}")
    mcfg = methods[label]
    if not is_multiple_imputation(mcfg):
        raise ConfigError(f"{label} is not an imputation method")
    cols = [c for o in cfg.outcome_list() for c in o.columns]
    sets = impute(mcfg, ds, cols, [cfg.seed], m=cfg.n_imputations())
    for j, d in enumerate(sets, start=1):
        write_csv(d, out / f"imputed_{label}_{j:03d}.csv")
    save_schema(sets[0].columns, out / f"imputed_{label}.schema.json")
    print(f"wrote {len(sets)} imputed datasets to {out}")
    return EXIT_OK


def cmd_estimate(args, cfg, out: Path) -> int:
    if cfg is None:
        raise ConfigError("estimate needs --config (for the outcome definitions)")
    ds = _input_dataset(args, cfg)
    outcomes = cfg.outcome_list()
    if ds.is_complete():
        gold = gold_standard(ds, outcomes)
    else:
        # complete-case analysis of an incomplete file
        cc = listwise_delete(ds)
        gold = GoldStandard([], {o.name: fit_outcome(cc, o) for o in outcomes})
    if args.format == "csv":
        write_gold(out / "estimates.csv", gold)
    else:
        _emit(out, "estimates", gold.to_rows(), "json")
    print(f"estimated {len(outcomes)} outcome models")
    return EXIT_OK


def cmd_evaluate(args, cfg, out: Path) -> int:
    if cfg is None:
        raise ConfigError("evaluate needs --config")
    res = run_experiment(cfg, out, threads=args.threads)
    for r in res.reports:
        s = r.summary()
        print(f"{r.method:40s} |RB|={s['mean_abs_RB']:.4f} MSE={s['mean_MSE']:.4f} ER={s['mean_ER']:.3f} "
              f"CR={s['mean_CR']:.3f} ratio_SE={s['mean_ratio_SE']:.3f}{'  FAILED' if r.failed else ''}")
    return EXIT_FAILURE if res.any_failed else EXIT_OK


def _load_gold(path: Path) -> GoldStandard:
    import csv
    rows = list(csv.DictReader(open(path)))
    est, names = {}, []
    for o in dict.fromkeys(r["outcome"] for r in rows):
        rs = [r for r in rows if r["outcome"] == o]
        names = [r["predictor"] for r in rs]
        q = np.array([float(r["q"]) for r in rs])
        se = np.array([float(r["se"]) for r in rs])
        ci = np.array([[float(r["ci_low"]), float(r["ci_high"])] for r in rs])
        est[o] = EstimateVector(names, q, se ** 2, ci, 0)
    return GoldStandard(names, est)


def cmd_report(args, cfg, out: Path) -> int:
    if not (out / "manifest.json").exists():
        raise ConfigError(f"{out} holds no finished run (manifest.json missing)")
    reports = load_reports(out)
    gold = _load_gold(out / "gold_standard.csv")
    alpha = cfg.alpha if cfg is not None else 0.05
    write_report_artifacts(out, reports, gold, alpha)
    for r in reports:
        s = r.summary()
        print(f"{r.method:40s} " + " ".join(f"{k}={v:.4f}" for k, v in s.items()))
    return EXIT_FAILURE if any(r.failed for r in reports) else EXIT_OK


COMMANDS = dict(synth=cmd_synth, ampute=cmd_ampute, diagnose=cmd_diagnose, impute=cmd_impute,
                estimate=cmd_estimate, evaluate=cmd_evaluate, report=cmd_report)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out-dir", default=None, help="artifact directory")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--threads", type=int, default=None, help="worker processes")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--verbose", "-v", action="store_true")
    p = argparse.ArgumentParser(prog="mieval", description="Evaluate missing-data strategies by amputation.")
    p.add_argument("--version", action="version", version=f"mieval {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("ampute", "diagnose", "impute", "estimate"):
            sp.add_argument("--input", help="CSV dataset (defaults to the config's data)")
            sp.add_argument("--schema", help="schema JSON for --input")
        if name == "impute":
            sp.add_argument("--method", help="method label from the config grid")
        if name == "synth":
            sp.add_argument("--n", type=int, default=10000)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        if cfg is not None and args.threads is not None:
            cfg.threads = args.threads
        out = Path(args.out_dir or (cfg.out_dir if cfg and cfg.out_dir else "mieval_out"))
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except (ConfigError, SchemaError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
