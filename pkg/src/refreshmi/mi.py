"""Multiple-imputation inference on completed datasets.

Per imputation, proportions are weighted ratio estimates with the
with-replacement linearized variance; across imputations they are pooled
with the usual combining rules (between-imputation inflation 1 + 1/m,
small-m degrees of freedom, reference t interval).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .data import PanelDataset


class EmptyInput(ValueError):
    pass


class EmptySubgroup(ValueError):
    pass


@dataclass(frozen=True)
class MiEstimate:
    point: float
    within_var: float
    between_var: float
    total_var: float
    df: float
    ci_low: float
    ci_high: float
    m: int

    @property
    def se(self) -> float:
        return math.sqrt(self.total_var)


def rubin_combine(per_imputation: Sequence[tuple[float, float]], level: float = 0.95) -> MiEstimate:
    """Pool (estimate, variance) pairs from m completed-data analyses."""
    if len(per_imputation) == 0:
        raise EmptyInput("no imputations to combine")
    q = np.array([p[0] for p in per_imputation], dtype=float)
    u = np.array([p[1] for p in per_imputation], dtype=float)
    m = q.size
    point = float(q.mean())
    within = float(u.mean())
    if m == 1:
        warnings.warn("a single imputation carries no between-imputation variance", stacklevel=2)
        between = 0.0
    else:
        between = float(q.var(ddof=1))
    total = within + (1.0 + 1.0 / m) * between
    if m == 1 or between == 0.0:
        df = math.inf
    else:
        r = (1.0 + 1.0 / m) * between / within if within > 0 else math.inf
        df = (m - 1) * (1.0 + 1.0 / r) ** 2
    crit = stats.norm.ppf(0.5 + level / 2) if math.isinf(df) else stats.t.ppf(0.5 + level / 2, df)
    half = crit * math.sqrt(total)
    return MiEstimate(point, within, between, total, df, point - half, point + half, m)


def ratio_estimate(y, x, weights=None) -> tuple[float, float]:
    """Weighted ratio sum(w y) / sum(w x) and its with-replacement linearized variance."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    wt = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    n = y.size
    den = float((wt * x).sum())
    if den <= 0:
        raise EmptySubgroup("subgroup has no members")
    r = float((wt * y).sum()) / den
    if n < 2:
        return r, float("nan")
    z = wt * (y - r * x)
    var = n / (n - 1) * float(((z - z.mean()) ** 2).sum()) / den**2
    return r, var


def subgroup_proportion(
    codes: np.ndarray,
    variable: int,
    level: int,
    subgroup: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    contrast: int | None = None,
) -> tuple[float, float]:
    """Estimate Pr(variable = level | subgroup) from a completed code matrix.

    ``level`` is 1-based.  With ``contrast``, estimates the difference
    Pr(variable = level) - Pr(contrast = level) within the subgroup.
    Rows outside the subgroup stay in the variance calculation (domain
    estimation).
    """
    codes = np.asarray(codes)
    n = codes.shape[0]
    x = np.ones(n) if subgroup is None else np.asarray(subgroup, dtype=float)
    y = (codes[:, variable] == level - 1).astype(float)
    if contrast is not None:
        y = y - (codes[:, contrast] == level - 1)
    return ratio_estimate(y * x, x, weights)


@dataclass(frozen=True)
class Quantity:
    var: str
    level: int = 1
    filter: tuple[tuple[str, int], ...] = ()
    contrast: str | None = None

    @classmethod
    def from_json(cls, d: dict) -> "Quantity":
        flt = d.get("filter") or {}
        return cls(d["var"], int(d.get("level", 1)), tuple((k, int(v)) for k, v in flt.items()), d.get("contrast"))

    @property
    def label(self) -> str:
        lhs = f"{self.var}={self.level}" if self.contrast is None else f"{self.var}-{self.contrast}={self.level}"
        if self.filter:
            lhs += "|" + "&".join(f"{k}={v}" for k, v in self.filter)
        return lhs


@dataclass(frozen=True)
class AnalysisSpec:
    quantities: tuple[Quantity, ...] = ()
    population: str = "panel"
    weights: str = "none"

    def __post_init__(self):
        if self.population not in ("panel", "concatenated"):
            raise ValueError("population must be 'panel' or 'concatenated'")
        if self.weights not in ("none", "wave1"):
            raise ValueError("weights must be 'none' or 'wave1'")

    @classmethod
    def from_json(cls, d: dict) -> "AnalysisSpec":
        return cls(
            tuple(Quantity.from_json(q) for q in d.get("quantities", [])),
            d.get("population", "panel"),
            d.get("weights", "none"),
        )


@dataclass(frozen=True)
class AnalysisRow:
    quantity: str
    estimate: MiEstimate
    n_subgroup: int


def analysis_table(imputations: Sequence[PanelDataset], spec: AnalysisSpec) -> list[AnalysisRow]:
    if not spec.quantities:
        return []
    if not imputations:
        raise EmptyInput("no completed datasets")
    schema = imputations[0].schema
    rows = []
    for qt in spec.quantities:
        j = schema.index(qt.var)
        jc = schema.index(qt.contrast) if qt.contrast is not None else None
        flt = [(schema.index(k), v - 1) for k, v in qt.filter]
        per, sizes = [], []
        for ds in imputations:
            keep = ds.panel if spec.population == "panel" else np.ones(ds.n, dtype=bool)
            codes = np.asarray(ds.codes)[keep]
            sub = np.ones(codes.shape[0], dtype=bool)
            for fj, fc in flt:
                sub &= codes[:, fj] == fc
            wt = ds.row_weights[keep] if spec.weights == "wave1" else None
            per.append(subgroup_proportion(codes, j, qt.level, sub, wt, jc))
            sizes.append(int(sub.sum()))
        rows.append(AnalysisRow(qt.label, rubin_combine(per), sizes[0]))
    return rows


def write_analysis_csv(rows: Sequence[AnalysisRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["quantity", "estimate", "ci_low", "ci_high", "n_subgroup", "within_var", "between_var", "df", "m"])
        for r in rows:
            e = r.estimate
            writer.writerow([
                r.quantity, f"{e.point:.6f}", f"{e.ci_low:.6f}", f"{e.ci_high:.6f}", r.n_subgroup,
                f"{e.within_var:.8g}", f"{e.between_var:.8g}", f"{e.df:.6g}", e.m,
            ])

