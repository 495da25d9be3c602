"""Estimators that turn simulated ensembles into acceptance evidence.

All reducers are permutation-invariant in path order and mergeable, so
parallel workers can aggregate partial summaries without affecting the
result.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EnsembleSummary:
    """Per-checkpoint moments of a path ensemble, kept as mergeable sums."""

    checkpoints: np.ndarray
    n: int
    sums: np.ndarray
    sumsq: np.ndarray
    sorted_samples: np.ndarray | None = None

    @classmethod
    def from_samples(cls, checkpoints, samples: np.ndarray, keep_samples: bool = False) -> "EnsembleSummary":
        """``samples`` has shape ``(n_paths, n_checkpoints)``."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        srt = np.sort(samples, axis=0) if keep_samples else None
        return cls(
            checkpoints=np.asarray(checkpoints, dtype=float),
            n=samples.shape[0],
            sums=samples.sum(axis=0),
            sumsq=(samples ** 2).sum(axis=0),
            sorted_samples=srt,
        )

    @property
    def mean(self) -> np.ndarray:
        return self.sums / self.n

    @property
    def var(self) -> np.ndarray:
        if self.n < 2:
            raise ValueError("need at least two paths for a variance")
        return (self.sumsq - self.sums ** 2 / self.n) / (self.n - 1)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.var / self.n)

    def merge(self, other: "EnsembleSummary") -> "EnsembleSummary":
        if not np.array_equal(self.checkpoints, other.checkpoints):
            raise ValueError("checkpoint grids differ")
        if self.sorted_samples is not None and other.sorted_samples is not None:
            srt = np.sort(np.concatenate([self.sorted_samples, other.sorted_samples], axis=0), axis=0)
        else:
            srt = None
        return EnsembleSummary(
            checkpoints=self.checkpoints,
            n=self.n + other.n,
            sums=self.sums + other.sums,
            sumsq=self.sumsq + other.sumsq,
            sorted_samples=srt,
        )


def ks_distance(sample_a, sample_b) -> float:
    """Two-sample sup-distance of empirical CDFs."""
    a = np.sort(np.asarray(sample_a, dtype=float))
    b = np.sort(np.asarray(sample_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def qv_estimate(t, values, checkpoints) -> np.ndarray:
    """Realized quadratic variation ``sum (dV)^2`` accumulated to each checkpoint.

    ``values`` may be one path ``(len(t),)`` or an ensemble
    ``(n_paths, len(t))``; event-driven callers should pass exact jump
    sequences instead of grid differences.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    single = values.ndim == 1
    if single:
        values = values[None, :]
    inc2 = np.diff(values, axis=1) ** 2
    cum = np.concatenate([np.zeros((values.shape[0], 1)), np.cumsum(inc2, axis=1)], axis=1)
    idx = np.searchsorted(t, np.asarray(checkpoints, dtype=float), side="right") - 1
    out = cum[:, idx]
    return out[0] if single else out


def corr_estimate(sample_a, sample_b) -> tuple[float, float]:
    """Pearson correlation with its Fisher-z delta-method standard error."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two equal-length 1-d samples")
    n = a.size
    if n < 30:
        raise ValueError("need at least 30 pairs")
    sa, sb = a.std(ddof=1), b.std(ddof=1)
    if sa == 0.0 or sb == 0.0:
        raise ValueError("degenerate (zero-variance) sample")
    r = float(np.corrcoef(a, b)[0, 1])
    se = (1.0 - r ** 2) / math.sqrt(n - 3)
    return r, se


@dataclass(frozen=True)
class ConvergenceTable:
    """Per-``T`` error metrics with monotonicity verdicts.

    ``rows`` maps each ``T`` (ascending) to a metric dict; a metric is
    flagged decreasing when it strictly decreases along the whole list,
    and the verdict is ``None`` with fewer than two rows.
    """

    T_values: tuple
    columns: tuple
    rows: dict
    decreasing: dict = field(init=False)

    def __post_init__(self):
        flags = {}
        for col in self.columns:
            vals = [self.rows[T][col] for T in self.T_values]
            if len(vals) < 2:
                flags[col] = None
            else:
                flags[col] = all(b < a for a, b in zip(vals, vals[1:]))
        object.__setattr__(self, "decreasing", flags)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("T," + ",".join(self.columns) + "\n")
        for T in self.T_values:
            cells = ",".join(f"{self.rows[T][c]:.17g}" for c in self.columns)
            buf.write(f"{T:.17g},{cells}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "T_values": list(self.T_values),
                "rows": {f"{T:g}": self.rows[T] for T in self.T_values},
                "decreasing": self.decreasing,
            },
            sort_keys=True,
        )


def build_convergence_table(metrics_by_T: dict, T_list) -> ConvergenceTable:
    """Assemble the table, requiring a metrics dict for every requested ``T``."""
    T_list = list(T_list)
    missing = [T for T in T_list if T not in metrics_by_T]
    if missing:
        raise ValueError(f"missing runs for T values: {missing}")
    T_sorted = tuple(sorted(T_list))
    columns = tuple(sorted(metrics_by_T[T_sorted[0]].keys()))
    for T in T_sorted:
        if tuple(sorted(metrics_by_T[T].keys())) != columns:
            raise ValueError(f"inconsistent metric columns at T={T}")
    rows = {T: dict(metrics_by_T[T]) for T in T_sorted}
    return ConvergenceTable(T_values=T_sorted, columns=columns, rows=rows)
