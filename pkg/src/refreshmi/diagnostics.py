"""Posterior predictive checks and chain health summaries."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .data import Origin, Role, Schema
from .state import ParameterState


class UnknownVariable(KeyError):
    pass


class LengthMismatch(ValueError):
    pass


class DegenerateSeries(UserWarning):
    pass


# ------------------------------------------------------------ replication

def replicate_y2(state: ParameterState, codes: np.ndarray, w: np.ndarray, schema: Schema, rng) -> np.ndarray:
    """Redraw every Y2 cell from its class (and W) conditional; other cells are copied."""
    out = np.array(codes, dtype=np.int64, copy=True)
    y2 = schema.y2_idx
    n = out.shape[0]
    rows = np.tile(np.arange(n, dtype=np.int64), y2.size)
    cols = np.repeat(y2.astype(np.int64), n)
    _kernels.impute_cells(
        rows, cols, state.full_tables(), state.s.astype(np.int64), np.asarray(w, dtype=np.int64), rng.random(rows.size), out
    )
    return out


# ------------------------------------------------------------ statistics

@dataclass(frozen=True)
class Subgroup:
    name: str
    conditions: tuple[tuple[str, int], ...]  # (variable, 1-based level)

    @classmethod
    def of(cls, name: str, **conditions: int) -> "Subgroup":
        return cls(name, tuple(conditions.items()))

    @classmethod
    def from_json(cls, d: dict) -> "Subgroup":
        return cls(d["name"], tuple((k, int(v)) for k, v in d["conditions"].items()))


@dataclass(frozen=True)
class Statistic:
    """A named functional of a completed dataset; returns None when undefined."""

    id: str
    fn: Callable[[np.ndarray, np.ndarray, np.ndarray], float | None]

    def __call__(self, codes, w, origin) -> float | None:
        return self.fn(codes, w, origin)


def _proportion(hit: np.ndarray, base: np.ndarray) -> float | None:
    n = int(base.sum())
    if n == 0:
        return None
    return float((hit & base).sum()) / n


def _subgroup_mask(schema: Schema, sg: Subgroup):
    idx = []
    for name, level in sg.conditions:
        try:
            j = schema.index(name)
        except KeyError:
            raise UnknownVariable(name) from None
        if not 1 <= level <= schema.variables[j].levels:
            raise UnknownVariable(f"{name}={level}: level outside 1..{schema.variables[j].levels}")
        idx.append((j, level - 1))

    def mask(codes):
        m = np.ones(codes.shape[0], dtype=bool)
        for j, c in idx:
            m &= codes[:, j] == c
        return m

    return mask


def default_statistics(schema: Schema, subgroups: Sequence[Subgroup] = ()) -> list[Statistic]:
    """Pr(Y2=1) in the refreshment sample, Pr(Y2=1 | W=1), Pr(Y1=1, Y2=1 | W=1)
    and Pr(Y2=1 | subgroup, W=1), for each Y2 variable.

    Y1 and Y2 variables are paired by position within their blocks.
    """
    y1, y2 = schema.y1_idx, schema.y2_idx
    names = schema.names
    masks = [(sg.name, _subgroup_mask(schema, sg)) for sg in subgroups]
    stats: list[Statistic] = []
    for k, j in enumerate(y2):
        nm = names[j]

        def refresh_rate(codes, w, origin, j=j):
            return _proportion(codes[:, j] == 0, origin == Origin.REFRESH)

        def completer_rate(codes, w, origin, j=j):
            return _proportion(codes[:, j] == 0, (origin == Origin.PANEL) & (w == 1))

        stats.append(Statistic(f"Pr({nm}=1)|refresh", refresh_rate))
        stats.append(Statistic(f"Pr({nm}=1|W=1)|panel", completer_rate))
        if k < y1.size:
            j1 = y1[k]

            def joint(codes, w, origin, j=j, j1=j1):
                return _proportion((codes[:, j] == 0) & (codes[:, j1] == 0), (origin == Origin.PANEL) & (w == 1))

            stats.append(Statistic(f"Pr({names[j1]}=1,{nm}=1|W=1)|panel", joint))
        for sg_name, mask in masks:

            def conditional(codes, w, origin, j=j, mask=mask):
                return _proportion(codes[:, j] == 0, (origin == Origin.PANEL) & (w == 1) & mask(codes))

            stats.append(Statistic(f"Pr({nm}=1|{sg_name},W=1)|panel", conditional))
    return stats


# ------------------------------------------------------------ ppp

def ppp_from_values(s_d: Sequence[float], s_r: Sequence[float]) -> float:
    """Two-sided posterior predictive probability from paired statistic values."""
    d = np.asarray(s_d, dtype=float)
    r = np.asarray(s_r, dtype=float)
    if d.shape != r.shape:
        raise LengthMismatch(f"{d.shape} vs {r.shape}")
    T0 = d.size
    if T0 == 0:
        return float("nan")
    above = int((r - d > 0).sum())
    below = int((d - r > 0).sum())
    if above == 0 and below == 0:
        warnings.warn("every replicated statistic ties its completed-data value; ppp is degenerate", stacklevel=2)
    return min(1.0, 2.0 / T0 * min(above, below))


def ppp(statistic: Statistic, completed_sets, replicated_sets) -> tuple[float, int, int]:
    """(ppp, pairs used, pairs skipped).  Sets are (codes, w, origin) triples."""
    if len(completed_sets) != len(replicated_sets):
        raise LengthMismatch("completed and replicated sets must pair up")
    sd, sr, skipped = [], [], 0
    for D, R in zip(completed_sets, replicated_sets):
        a, b = statistic(*D), statistic(*R)
        if a is None or b is None:
            skipped += 1
            continue
        sd.append(a)
        sr.append(b)
    return ppp_from_values(sd, sr), len(sd), skipped


@dataclass
class PppEntry:
    id: str
    ppp: float
    n_pairs: int
    n_skipped: int
    s_d: np.ndarray
    s_r: np.ndarray


@dataclass
class PppReport:
    entries: list[PppEntry] = field(default_factory=list)

    def values(self) -> np.ndarray:
        return np.array([e.ppp for e in self.entries])

    def fraction_below(self, level: float = 0.05) -> float:
        v = self.values()
        v = v[np.isfinite(v)]
        return float((v < level).mean()) if v.size else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["statistic_id", "ppp", "n_pairs", "n_skipped"])
            for e in self.entries:
                writer.writerow([e.id, f"{e.ppp:.6f}", e.n_pairs, e.n_skipped])

    def write_histogram_csv(self, path, bins: int = 20) -> None:
        v = self.values()
        counts, edges = np.histogram(v[np.isfinite(v)], bins=bins, range=(0.0, 1.0))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_low", "bin_high", "count"])
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                writer.writerow([f"{lo:.2f}", f"{hi:.2f}", int(c)])


def posterior_predictive_check(draws, schema: Schema, origin, statistics, rng, t0: int = 500) -> PppReport:
    """Compare statistics on T0 completed draws with model replicates of Y2.

    ``draws`` is a sequence of objects with ``codes``, ``w`` and ``state``
    (see :class:`refreshmi.gibbs.Draw`).  T0 draws are sampled without
    replacement; item-missing X/Y1 values are carried from each draw.
    """
    T0 = min(t0, len(draws))
    pick = np.sort(rng.choice(len(draws), size=T0, replace=False))
    origin = np.asarray(origin)
    vals_d = np.full((len(statistics), T0), np.nan)
    vals_r = np.full((len(statistics), T0), np.nan)
    for t, idx in enumerate(pick):
        dr = draws[idx]
        codes = np.asarray(dr.codes, dtype=np.int64)
        w = np.asarray(dr.w, dtype=np.int64)
        rep = replicate_y2(dr.state, codes, w, schema, rng)
        for k, st in enumerate(statistics):
            a, b = st(codes, w, origin), st(rep, w, origin)
            if a is not None and b is not None:
                vals_d[k, t], vals_r[k, t] = a, b
    report = PppReport()
    for k, st in enumerate(statistics):
        ok = np.isfinite(vals_d[k])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            value = ppp_from_values(vals_d[k, ok], vals_r[k, ok])
        report.entries.append(PppEntry(st.id, value, int(ok.sum()), int((~ok).sum()), vals_d[k, ok], vals_r[k, ok]))
    return report


# ------------------------------------------------------------ chain health

def lag1_autocorrelation(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        return float("nan")
    xc = x - x.mean()
    denom = float((xc**2).sum())
    if denom == 0.0:
        warnings.warn("constant trace: lag-1 autocorrelation undefined", DegenerateSeries, stacklevel=2)
        return float("nan")
    return float((xc[:-1] * xc[1:]).sum() / denom)


@dataclass
class ChainHealth:
    occupied_histogram: dict[int, int]
    occupied_mode: int
    occupied_max: int
    mass_at_K: float
    k_insufficient: bool
    lag1: dict[str, float]

    def to_json(self) -> dict:
        return {
            "occupied_histogram": {str(k): v for k, v in sorted(self.occupied_histogram.items())},
            "occupied_mode": self.occupied_mode,
            "occupied_max": self.occupied_max,
            "mass_at_K": self.mass_at_K,
            "k_insufficient": self.k_insufficient,
            "lag1_autocorrelation": {k: (None if not np.isfinite(v) else v) for k, v in self.lag1.items()},
        }


def chain_health(trace, K: int, names: Sequence[str] = (), threshold: float = 0.05) -> ChainHealth:
    """Occupied-class posterior summary and lag-1 autocorrelations of the traces."""
    occ = np.asarray(trace.occupied)
    if occ.size == 0:
        raise ValueError("empty trace")
    vals, counts = np.unique(occ, return_counts=True)
    hist = {int(v): int(c) for v, c in zip(vals, counts)}
    mode = int(vals[np.argmax(counts)])
    mass_at_K = hist.get(K, 0) / occ.size
    lag1 = {"alpha": lag1_autocorrelation(trace.alpha)}
    names = list(names) or [f"var{j + 1}" for j in range(trace.marginals.shape[1])]
    with warnings.catch_warnings():
        # fully observed variables have constant traces; reported as null
        warnings.simplefilter("ignore", DegenerateSeries)
        for j, nm in enumerate(names):
            lag1[nm] = lag1_autocorrelation(trace.marginals[:, j])
    return ChainHealth(hist, mode, int(vals.max()), float(mass_at_K), bool(mass_at_K > threshold), lag1)


# ------------------------------------------------------------ election-panel layout

def election_panel_schema() -> Schema:
    """Nine-variable survey layout: eight background X variables and a binary outcome in both waves."""
    return Schema.from_roles([
        ("party", "X", 3),
        ("ideology", "X", 3),
        ("age", "X", 4),
        ("education", "X", 3),
        ("race", "X", 2),
        ("gender", "X", 2),
        ("income", "X", 4),
        ("married", "X", 2),
        ("favorable_w1", "Y1", 2),
        ("favorable_w2", "Y2", 2),
    ])


def election_subgroups(schema: Schema | None = None) -> list[Subgroup]:
    """Every level of every X variable, plus gender x income and race x gender cells."""
    schema = schema or election_panel_schema()
    groups = []
    for var in schema:
        if var.role != Role.X:
            continue
        for lv in range(1, var.levels + 1):
            groups.append(Subgroup.of(f"{var.name}={lv}", **{var.name: lv}))
    for g in (1, 2):
        for inc in (1, 2, 3, 4):
            groups.append(Subgroup.of(f"gender={g}&income={inc}", gender=g, income=inc))
    for r in (1, 2):
        for g in (1, 2):
            groups.append(Subgroup.of(f"race={r}&gender={g}", race=r, gender=g))
    return groups
