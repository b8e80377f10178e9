"""Mixed-type tabular data with an explicit missingness mask.

Cells are stored in one float matrix. Numeric and binary cells hold their
value, categorical cells hold the integer index of their label in
``ColumnSpec.categories``. Masked cells hold NaN.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

KINDS = ("numeric", "binary", "categorical")
ROLES = ("predictor", "outcome", "survival_time", "survival_event", "id")


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = "numeric"
    role: str = "predictor"
    categories: tuple[str, ...] | None = None
    bins: tuple[float, ...] | None = None
    reference_category: str | None = None
    log_transform: bool = False
    # set on columns produced by one_hot: originating variable and its level
    parent: str | None = None
    level: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.categories is not None:
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r}: duplicate categories")
        if self.kind == "categorical" and not self.categories:
            raise SchemaError(f"column {self.name!r}: categorical column needs categories")
        if self.bins is not None:
            if self.kind != "numeric":
                raise SchemaError(f"column {self.name!r}: bins only apply to numeric columns")
            b = tuple(float(x) for x in self.bins)
            if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
                raise SchemaError(f"column {self.name!r}: bins must be strictly increasing")
            object.__setattr__(self, "bins", b)
        if self.log_transform and self.kind != "numeric":
            raise SchemaError(f"column {self.name!r}: log_transform only applies to numeric columns")
        if self.reference_category is not None:
            allowed = self.categories if self.kind == "categorical" else (
                bin_labels(self.name, self.bins) if self.bins else None)
            if allowed is None or self.reference_category not in allowed:
                raise SchemaError(
                    f"column {self.name!r}: reference category {self.reference_category!r} not declared")

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if v not in (None, False)}
        for k in ("categories", "bins"):
            if k in out:
                out[k] = list(out[k])
        return out

    @classmethod
    def from_json(cls, d: dict) -> "ColumnSpec":
        d = dict(d)
        for k in ("categories", "bins"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown ColumnSpec fields {sorted(unknown)}")
        return cls(**d)


def _fmt(x: float) -> str:
    return f"{x:g}"


def bin_labels(name: str, cuts: Sequence[float]) -> tuple[str, ...]:
    """Labels of the intervals defined by ``cuts``, left-closed and right-open."""
    labels = [f"{name}<{_fmt(cuts[0])}"]
    labels += [f"{_fmt(lo)}≤{name}<{_fmt(hi)}" for lo, hi in zip(cuts, cuts[1:])]
    labels.append(f"{name}≥{_fmt(cuts[-1])}")
    return tuple(labels)


@dataclass(frozen=True, eq=False)
class Dataset:
    columns: tuple[ColumnSpec, ...]
    values: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 2 or vals.shape[1] != len(cols):
            raise DataError(f"values shape {vals.shape} does not match {len(cols)} columns")
        if vals.shape[0] < 1 or vals.shape[1] < 1:
            raise DataError("dataset needs at least one row and one column")
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        mask = np.isnan(vals) if self.mask is None else np.array(self.mask, dtype=bool, copy=True)
        if mask.shape != vals.shape:
            raise DataError("mask shape does not match values")
        vals[mask] = np.nan
        if np.isnan(vals[~mask]).any() or np.isinf(vals[~mask]).any():
            raise DataError("unmasked cells must be finite")
        for j, c in enumerate(cols):
            if c.kind == "categorical":
                v = vals[~mask[:, j], j]
                if v.size and ((v != np.round(v)).any() or v.min() < 0 or v.max() >= len(c.categories)):
                    raise DataError(f"column {c.name!r}: category code outside declared set")
        roles = Counter(c.role for c in cols)
        if roles["survival_time"] != roles["survival_event"] or roles["survival_time"] > 1:
            raise SchemaError("survival_time and survival_event must appear together, at most once")
        vals.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mask", mask)

    # -- accessors -------------------------------------------------------
    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        for j, c in enumerate(self.columns):
            if c.name == name:
                return j
        raise KeyError(name)

    def spec(self, name: str) -> ColumnSpec:
        return self.columns[self.index(name)]

    def col(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def names_with_role(self, *roles: str) -> list[str]:
        return [c.name for c in self.columns if c.role in roles]

    @property
    def predictors(self) -> list[str]:
        return self.names_with_role("predictor")

    def is_complete(self) -> bool:
        return not self.mask.any()

    def labels(self, name: str) -> list[str | None]:
        """Decoded cell values of a categorical column (None where missing)."""
        c = self.spec(name)
        return [None if math.isnan(v) else c.categories[int(v)] for v in self.col(name)]

    # -- construction helpers -------------------------------------------
    def with_values(self, values: np.ndarray, mask: np.ndarray | None = None,
                    columns: Iterable[ColumnSpec] | None = None) -> "Dataset":
        return Dataset(tuple(columns) if columns is not None else self.columns, values,
                       np.isnan(values) if mask is None else mask)

    def take_rows(self, rows) -> "Dataset":
        return Dataset(self.columns, self.values[rows], self.mask[rows])

    def select(self, names: Sequence[str]) -> "Dataset":
        idx = [self.index(n) for n in names]
        return Dataset(tuple(self.columns[j] for j in idx), self.values[:, idx], self.mask[:, idx])

    def replace_column(self, name: str, new_cols: Sequence[ColumnSpec],
                       new_values: np.ndarray) -> "Dataset":
        j = self.index(name)
        new_values = np.asarray(new_values, dtype=float).reshape(self.n_rows, len(new_cols))
        cols = self.columns[:j] + tuple(new_cols) + self.columns[j + 1:]
        vals = np.hstack([self.values[:, :j], new_values, self.values[:, j + 1:]])
        return Dataset(cols, vals, np.isnan(vals))

    def with_spec(self, name: str, **changes) -> "Dataset":
        j = self.index(name)
        cols = list(self.columns)
        cols[j] = replace(cols[j], **changes)
        return Dataset(tuple(cols), self.values, self.mask)

    def equals(self, other: "Dataset") -> bool:
        return (self.columns == other.columns
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.values, other.values, equal_nan=True))


@dataclass(frozen=True)
class PatternTable:
    entries: tuple[tuple[tuple[str, ...], int, float], ...]
    n_complete: int
    n_incomplete: int

    @property
    def n(self) -> int:
        return self.n_complete + self.n_incomplete

    def count(self, pattern: Iterable[str]) -> int:
        key = frozenset(pattern)
        for p, cnt, _ in self.entries:
            if frozenset(p) == key:
                return cnt
        return 0


# -- schema / CSV IO -----------------------------------------------------

def load_schema(path: str | Path) -> list[ColumnSpec]:
    doc = json.loads(Path(path).read_text())
    cols = doc["columns"] if isinstance(doc, dict) else doc
    return [ColumnSpec.from_json(c) for c in cols]


def save_schema(columns: Sequence[ColumnSpec], path: str | Path) -> None:
    Path(path).write_text(json.dumps({"columns": [c.to_json() for c in columns]}, indent=2))


_TRUE = {"1", "1.0", "true", "True", "TRUE"}
_FALSE = {"0", "0.0", "false", "False", "FALSE"}


def _parse_cell(raw: str, spec: ColumnSpec, row: int) -> float:
    if spec.kind == "numeric":
        try:
            v = float(raw)
        except ValueError:
            raise DataError(f"invalid value {raw!r} in numeric column {spec.name!r} (row {row})") from None
        if not math.isfinite(v):
            raise DataError(f"invalid value {raw!r} in numeric column {spec.name!r} (row {row})")
        return v
    if spec.kind == "binary":
        if raw in _TRUE:
            return 1.0
        if raw in _FALSE:
            return 0.0
        try:
            v = float(raw)
        except ValueError:
            raise DataError(f"invalid value {raw!r} in binary column {spec.name!r} (row {row})") from None
        if not math.isfinite(v):
            raise DataError(f"invalid value {raw!r} in binary column {spec.name!r} (row {row})")
        return v  # fuzzy indicator written by a real-valued imputer
    try:
        return float(spec.categories.index(raw))
    except ValueError:
        raise DataError(
            f"invalid value {raw!r}: category outside declared set of {spec.name!r} (row {row})") from None


def load_csv(path: str | Path, schema: Sequence[ColumnSpec]) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        by_name = {c.name: c for c in schema}
        unknown = [h for h in header if h not in by_name]
        if unknown:
            raise SchemaError(f"unknown column(s) {unknown} in {path}")
        missing = [c.name for c in schema if c.name not in header]
        if missing:
            raise SchemaError(f"schema column(s) {missing} absent from {path}")
        specs = [by_name[h] for h in header]
        rows = []
        for i, rec in enumerate(reader, start=1):
            if len(rec) != len(header):
                raise DataError(f"{path}: row {i} has {len(rec)} fields, expected {len(header)}")
            rows.append([np.nan if raw == "" else _parse_cell(raw, s, i) for raw, s in zip(rec, specs)])
    if not rows:
        raise DataError(f"{path}: no data rows")
    ds = Dataset(tuple(specs), np.array(rows, dtype=float))
    return ds.select([c.name for c in schema])


def _format_cell(v: float, spec: ColumnSpec) -> str:
    if math.isnan(v):
        return ""
    if spec.kind == "categorical":
        return spec.categories[int(v)]
    if spec.kind == "binary" and v in (0.0, 1.0):
        return str(int(v))
    return repr(float(v))


def write_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        for row in ds.values:
            w.writerow([_format_cell(v, c) for v, c in zip(row, ds.columns)])


# -- transforms ----------------------------------------------------------

def bin_numeric(ds: Dataset, var: str) -> Dataset:
    spec = ds.spec(var)
    if spec.kind != "numeric":
        raise SchemaError(f"{var!r} is not numeric")
    if not spec.bins:
        raise SchemaError(f"bins undeclared for {var!r}")
    labels = bin_labels(var, spec.bins)
    x = ds.col(var)
    codes = np.full(x.shape, np.nan)
    obs = ~np.isnan(x)
    # side="right": a value equal to a cut point opens the next interval
    codes[obs] = np.searchsorted(np.asarray(spec.bins), x[obs], side="right")
    new = ColumnSpec(var, "categorical", spec.role, categories=labels,
                     reference_category=spec.reference_category)
    return ds.replace_column(var, [new], codes)


def reference_level(ds: Dataset, var: str) -> str:
    """Declared reference category, else the largest observed one."""
    spec = ds.spec(var)
    if spec.reference_category is not None:
        return spec.reference_category
    x = ds.col(var)
    counts = np.bincount(x[~np.isnan(x)].astype(int), minlength=len(spec.categories))
    return spec.categories[int(np.argmax(counts))]  # argmax: first declared wins ties


def one_hot_name(var: str, level: str) -> str:
    return level if var in level else f"{var}={level}"


def one_hot(ds: Dataset, var: str) -> Dataset:
    spec = ds.spec(var)
    if spec.kind == "numeric" and spec.bins:
        ds = bin_numeric(ds, var)
        spec = ds.spec(var)
    if spec.kind != "categorical":
        raise SchemaError(f"{var!r} is neither categorical nor binned")
    if len(spec.categories) < 2:
        raise SchemaError(f"{var!r} has fewer than 2 categories")
    ref = reference_level(ds, var)
    x = ds.col(var)
    levels = [c for c in spec.categories if c != ref]
    new_cols, new_vals = [], []
    for lev in levels:
        k = spec.categories.index(lev)
        new_cols.append(ColumnSpec(one_hot_name(var, lev), "binary", spec.role, parent=var, level=lev))
        new_vals.append(np.where(np.isnan(x), np.nan, (x == k).astype(float)))
    return ds.replace_column(var, new_cols, np.column_stack(new_vals))


def listwise_delete(ds: Dataset) -> Dataset:
    keep = ~ds.mask.any(axis=1)
    if not keep.any():
        raise DataError("no complete cases")
    return ds.take_rows(np.flatnonzero(keep))


def pattern_summary(ds: Dataset) -> PatternTable:
    names = ds.names
    keys = [tuple(names[j] for j in np.flatnonzero(r)) for r in ds.mask]
    counts = Counter(keys)
    n = ds.n_rows
    order = sorted(counts.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))
    entries = tuple((p, c, 100.0 * c / n) for p, c in order)
    complete = counts.get((), 0)
    return PatternTable(entries, complete, n - complete)


def binarize_for_estimation(ds: Dataset) -> Dataset:
    """Bin and one-hot every non-binary predictor."""
    for c in list(ds.columns):
        if c.role != "predictor" or c.kind == "binary":
            continue
        if c.kind == "numeric" and not c.bins:
            raise SchemaError(f"numeric predictor {c.name!r} has no bins; cannot binarize")
        ds = one_hot(ds, c.name)
    return ds


def freeze_references(ds: Dataset) -> Dataset:
    """Pin every categorical/binned predictor's reference level to the current largest group.

    Used on the complete dataset so that imputed copies one-hot encode to the
    same columns as the gold standard.
    """
    for c in ds.columns:
        if c.reference_category is not None or c.role != "predictor":
            continue
        if c.kind == "categorical":
            ds = ds.with_spec(c.name, reference_category=reference_level(ds, c.name))
        elif c.kind == "numeric" and c.bins:
            binned = bin_numeric(ds, c.name)
            ds = ds.with_spec(c.name, reference_category=reference_level(binned, c.name))
    return ds


def threshold_fuzzy(ds: Dataset, cutoff: float = 0.5) -> Dataset:
    """Round real-valued binary cells to {0, 1}."""
    vals = ds.values.copy()
    for j, c in enumerate(ds.columns):
        if c.kind == "binary":
            obs = ~ds.mask[:, j]
            vals[obs, j] = (vals[obs, j] >= cutoff).astype(float)
    return ds.with_values(vals, ds.mask)
