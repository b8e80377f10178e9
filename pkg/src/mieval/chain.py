"""Machinery shared by the chained-equation imputers (FCS and forest).

The sweep works on a float matrix in the "working" representation: natural
types or one-hot columns depending on the config flags, with log-transformed
numerics on the log scale. Only masked cells are ever written back.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tabular import Dataset, one_hot

log = logging.getLogger(__name__)


@dataclass
class ImputedSet:
    index: int
    dataset: Dataset
    flags: tuple[str, ...] = ()


def encode(ds: Dataset, one_hot_numeric_bins: bool = False,
           one_hot_categorical: bool = False) -> Dataset:
    """Working representation: optionally one-hot binned numerics and categoricals."""
    for c in list(ds.columns):
        if c.role != "predictor":
            continue
        if c.kind == "numeric" and c.bins and one_hot_numeric_bins:
            ds = one_hot(ds, c.name)
        elif c.kind == "categorical" and one_hot_categorical:
            ds = one_hot(ds, c.name)
    return ds


def model_columns(ds: Dataset, outcome_columns: Sequence[str], include_outcomes: bool) -> list[str]:
    cols = [c.name for c in ds.columns if c.role == "predictor"]
    if include_outcomes:
        cols += [n for n in ds.names if n in set(outcome_columns)]
    return cols


def initial_fill(ds: Dataset, rng=None) -> Dataset:
    """Mean for numeric columns, mode (first declared wins ties) otherwise."""
    vals = ds.values.copy()
    for j, c in enumerate(ds.columns):
        miss = ds.mask[:, j]
        if not miss.any():
            continue
        obs = vals[~miss, j]
        if obs.size == 0:
            raise ValueError(f"column {c.name!r} is fully missing")
        if c.kind == "numeric":
            fill = obs.mean()
        elif c.kind == "binary":
            ones = np.sum(obs >= 0.5)
            fill = 1.0 if ones > obs.size - ones else 0.0
        else:
            fill = float(np.argmax(np.bincount(obs.astype(int), minlength=len(c.categories))))
        vals[miss, j] = fill
    return ds.with_values(vals, np.zeros_like(ds.mask))


def visit_sequence(ds: Dataset, columns: Sequence[str], order: str) -> list[str]:
    counts = {n: int(ds.mask[:, ds.index(n)].sum()) for n in columns}
    incomplete = [n for n in columns if counts[n] > 0]
    if order == "monotone":
        return sorted(incomplete, key=lambda n: counts[n])
    if order == "revmonotone":
        return sorted(incomplete, key=lambda n: -counts[n])
    raise ValueError(f"unknown visit order {order!r}")


class Workspace:
    """Mutable working matrix plus per-column predictor blocks."""

    def __init__(self, ds: Dataset, columns: Sequence[str]):
        self.ds = ds
        self.columns = list(columns)
        self.col_idx = {n: ds.index(n) for n in self.columns}
        self.log_cols = {n for n in self.columns if ds.spec(n).log_transform}
        filled = initial_fill(ds.select(self.columns))
        self.values = filled.values.copy()
        for n in self.log_cols:
            k = self.columns.index(n)
            if np.any(self.values[:, k] <= 0):
                raise ValueError(f"log_transform column {n!r} has non-positive values")
            self.values[:, k] = np.log(self.values[:, k])
        self.mask = ds.mask[:, [self.col_idx[n] for n in self.columns]]
        self.blocks = {n: self._block(n) for n in self.columns}

    def kind(self, name: str) -> str:
        return self.ds.spec(name).kind

    def n_categories(self, name: str) -> int:
        return len(self.ds.spec(name).categories)

    def _block(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        x = self.values[:, k]
        if self.kind(name) == "categorical":
            K = self.n_categories(name)
            codes = x.astype(int)
            return (codes[:, None] == np.arange(1, K)[None, :]).astype(float)
        return x[:, None]

    def target(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def design(self, name: str) -> np.ndarray:
        blocks = [self.blocks[n] for n in self.columns if n != name]
        if not blocks:
            return np.zeros((self.values.shape[0], 0))
        return np.hstack(blocks)

    def missing(self, name: str) -> np.ndarray:
        return self.mask[:, self.columns.index(name)]

    def update(self, name: str, imputed: np.ndarray) -> None:
        k = self.columns.index(name)
        self.values[self.mask[:, k], k] = imputed
        self.blocks[name] = self._block(name)

    def _unlog(self, k: int, v: np.ndarray) -> np.ndarray:
        """exp, except that logs of observed values map back to the exact observed value."""
        raw = self.ds.values[~self.mask[:, k], self.col_idx[self.columns[k]]]
        logs = np.log(raw)
        order = np.argsort(logs, kind="stable")
        logs, raw = logs[order], raw[order]
        pos = np.clip(np.searchsorted(logs, v), 0, len(logs) - 1)
        hit = logs[pos] == v
        return np.where(hit, raw[pos], np.exp(v))

    def to_dataset(self) -> Dataset:
        """Write imputed cells back into a copy of the input."""
        out = self.ds.values.copy()
        for k, n in enumerate(self.columns):
            miss = self.mask[:, k]
            v = self.values[miss, k]
            if n in self.log_cols:
                v = self._unlog(k, v)
            out[miss, self.col_idx[n]] = v
        still = self.ds.mask.copy()
        for n in self.columns:
            still[:, self.col_idx[n]] = False
        return self.ds.with_values(out, still)


def summary_vector(ws: Workspace, name: str) -> np.ndarray:
    """Per-variable summary of the imputed cells used by the convergence checks."""
    x = ws.target(name)[ws.missing(name)]
    if ws.kind(name) == "categorical":
        return np.bincount(x.astype(int), minlength=ws.n_categories(name)) / max(len(x), 1)
    return np.array([x.mean()])


def run_chain(ds: Dataset, columns: Sequence[str], visit_order: str, max_iter: int,
              impute_one: Callable[[Workspace, str, np.random.Generator], np.ndarray],
              rng: np.random.Generator, stop: str = "tolerance", tol: float = 1e-4,
              trace: list | None = None) -> Dataset:
    """Chained sweep over incomplete ``columns``; returns the completed dataset.

    ``stop="tolerance"`` ends when the largest relative change of the
    per-variable imputation summaries drops below ``tol``;
    ``stop="increase"`` ends as soon as the sweep-to-sweep change of the
    imputed values grows, keeping the previous sweep (missForest rule).
    """
    ws = Workspace(ds, columns)
    order = visit_sequence(ds, columns, visit_order)
    if not order:
        return ds
    prev_summary = {n: summary_vector(ws, n) for n in order}
    prev_change = np.inf
    prev_values = ws.values.copy()
    for it in range(max_iter):
        before = ws.values.copy()
        for name in order:
            ws.update(name, impute_one(ws, name, rng))
        summary = {n: summary_vector(ws, n) for n in order}
        rel = max(np.linalg.norm(summary[n] - prev_summary[n]) / (np.linalg.norm(prev_summary[n]) + 1e-12)
                  for n in order)
        change = _sweep_change(ws, before, order)
        if trace is not None:
            trace.append(dict(iteration=it + 1, relative_change=float(rel), value_change=float(change)))
        if stop == "increase":
            if change > prev_change:
                ws.values = prev_values
                break
            prev_values = ws.values.copy()
            prev_change = change
        elif rel < tol:
            break
        prev_summary = summary
    return ws.to_dataset()


def _sweep_change(ws: Workspace, before: np.ndarray, order) -> float:
    total = 0.0
    for n in order:
        k = ws.columns.index(n)
        miss = ws.mask[:, k]
        new, old = ws.values[miss, k], before[miss, k]
        if ws.kind(n) == "categorical":
            total += np.mean(new != old)
        else:
            denom = np.sum(new ** 2)
            total += np.sum((new - old) ** 2) / denom if denom > 0 else 0.0
    return total
