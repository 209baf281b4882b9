"""Two-wave simulation study: scenario presets, data generation and scoring.

Each replication draws a true dataset from a three-class mixture, deletes
attriter Y2 and refreshment (Y1, W), then scores methods by how well their
completed-panel estimate of Pr(Y2j = 1) matches the realized panel truth.
"""
from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Origin, PanelDataset, Role, Schema
from .gibbs import GibbsSchedule, run_chain
from .rng import make_rng, sample_bernoulli, sample_categorical_rows
from .state import InitMode, ModelKind, ModelSpec

METHODS = ("complete_case", "dpmpm", "blpm")


class NoCompleters(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    """Ground truth for one scenario; ``psi*`` hold Pr(level 1) per class and variable."""

    name: str
    pi: tuple[float, ...]
    rho: tuple[float, ...]
    psi_y1: tuple[tuple[float, ...], ...]  # [class][Y1 variable]
    psi1: tuple[tuple[float, ...], ...]  # [class][Y2 variable], W = 1
    psi0: tuple[tuple[float, ...], ...]  # [class][Y2 variable], W = 0
    n_panel: int = 2000
    n_refresh: int = 1000
    replications: int = 100

    def __post_init__(self):
        pi = np.asarray(self.pi)
        if abs(pi.sum() - 1) > 1e-12 or (pi < 0).any():
            raise ValueError("pi must lie on the simplex")
        K = pi.size
        for name in ("rho", "psi_y1", "psi1", "psi0"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape[0] != K:
                raise ValueError(f"{name} needs one entry per class")
            if ((arr < 0) | (arr > 1)).any():
                raise ValueError(f"{name} entries must be probabilities")
        if np.shape(self.psi1) != np.shape(self.psi0):
            raise ValueError("psi1 and psi0 must have the same shape")

    @property
    def q1(self) -> int:
        return len(self.psi_y1[0])

    @property
    def q2(self) -> int:
        return len(self.psi1[0])

    def schema(self) -> Schema:
        return Schema.from_roles(
            [(f"y1_{j + 1}", "Y1", 2) for j in range(self.q1)] + [(f"y2_{j + 1}", "Y2", 2) for j in range(self.q2)]
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioSpec":
        conv = {k: (tuple(tuple(r) if isinstance(r, list) else r for r in v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**conv)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


def _by_class(rows: list[list[float]]) -> tuple[tuple[float, ...], ...]:
    """Transpose variable-major table rows into per-class tuples."""
    return tuple(tuple(col) for col in zip(*rows))


_PI = (0.4, 0.3, 0.3)
_RHO = (0.80, 0.95, 0.60)
_Y1 = [
    [0.25, 0.55, 0.85],
    [0.20, 0.50, 0.80],
    [0.15, 0.45, 0.75],
    [0.10, 0.40, 0.70],
    [0.05, 0.35, 0.65],
]
_Y2_W0 = [
    [0.76, 0.46, 0.16],
    [0.77, 0.47, 0.17],
    [0.78, 0.48, 0.18],
    [0.79, 0.49, 0.19],
    [0.80, 0.50, 0.20],
]
_Y2_W1 = [
    [0.38, 0.58, 0.78],
    [0.41, 0.61, 0.81],
    [0.44, 0.64, 0.84],
    [0.47, 0.67, 0.87],
    [0.50, 0.70, 0.90],
]

DEPENDENT = ScenarioSpec(
    name="dependent", pi=_PI, rho=_RHO, psi_y1=_by_class(_Y1), psi1=_by_class(_Y2_W1), psi0=_by_class(_Y2_W0)
)
CONDITIONALLY_INDEPENDENT = ScenarioSpec(
    name="ci", pi=_PI, rho=_RHO, psi_y1=_by_class(_Y1), psi1=_by_class(_Y2_W1), psi0=_by_class(_Y2_W1)
)
PRESETS = {"dependent": DEPENDENT, "ci": CONDITIONALLY_INDEPENDENT}


@dataclass(frozen=True)
class TrueDataset:
    schema: Schema
    codes: np.ndarray
    w: np.ndarray
    origin: np.ndarray
    s: np.ndarray

    @property
    def panel(self) -> np.ndarray:
        return self.origin == Origin.PANEL

    def panel_truth(self) -> np.ndarray:
        """Realized panel Pr(Y2j = 1) for each Y2 variable."""
        y2 = self.schema.y2_idx
        return (self.codes[self.panel][:, y2] == 0).mean(axis=0)


def generate_truth(scenario: ScenarioSpec, rng: np.random.Generator) -> TrueDataset:
    n = scenario.n_panel + scenario.n_refresh
    pi = np.asarray(scenario.pi)
    s = sample_categorical_rows(np.broadcast_to(pi, (n, pi.size)), rng)
    w = sample_bernoulli(np.asarray(scenario.rho)[s], rng).astype(np.int8)
    y1 = sample_bernoulli(np.asarray(scenario.psi_y1)[s], rng)
    p2 = np.where(w[:, None] == 1, np.asarray(scenario.psi1)[s], np.asarray(scenario.psi0)[s])
    y2 = sample_bernoulli(p2, rng)
    # level 1 (code 0) is the "success" outcome
    codes = (1 - np.concatenate([y1, y2], axis=1)).astype(np.int16)
    origin = np.concatenate([np.full(scenario.n_panel, Origin.PANEL), np.full(scenario.n_refresh, Origin.REFRESH)])
    return TrueDataset(scenario.schema(), codes, w, origin.astype(np.int8), s)


def mask_for_design(truth: TrueDataset) -> PanelDataset:
    """Delete attriter Y2 and refreshment (Y1, W)."""
    schema = truth.schema
    panel = truth.panel
    refresh = ~panel
    missing = np.zeros(truth.codes.shape, dtype=bool)
    missing[np.ix_(panel & (truth.w == 0), schema.y2_idx)] = True
    missing[np.ix_(refresh, schema.y1_idx)] = True
    return PanelDataset(schema, truth.codes, missing, truth.w, refresh, truth.origin)


def complete_case_estimate(ds: PanelDataset) -> np.ndarray:
    """Pr(Y2j = 1) among panel completers, using observed cells only."""
    cp = ds.panel & ~ds.w_missing & (ds.w == 1)
    if not cp.any():
        raise NoCompleters("no panel rows with W = 1")
    y2 = ds.schema.y2_idx
    obs = ~ds.missing[cp][:, y2]
    hits = (ds.codes[cp][:, y2] == 0) & obs
    return hits.sum(axis=0) / obs.sum(axis=0)


def analytic_marginals(scenario: ScenarioSpec) -> dict[str, np.ndarray | float]:
    pi = np.asarray(scenario.pi)
    rho = np.asarray(scenario.rho)
    psi1 = np.asarray(scenario.psi1)
    psi0 = np.asarray(scenario.psi0)
    p_w1 = float(pi @ rho)
    y2_w1 = (pi * rho) @ psi1 / p_w1
    y2_w0 = (pi * (1 - rho)) @ psi0 / (1 - p_w1)
    y2 = p_w1 * y2_w1 + (1 - p_w1) * y2_w0
    return {
        "p_w1": p_w1,
        "y2": y2,
        "y2_given_w1": y2_w1,
        "y2_given_w0": y2_w0,
        "y1": pi @ np.asarray(scenario.psi_y1),
        "complete_case_bias": y2_w1 - y2,
    }


@dataclass
class MetricsReport:
    methods: list[str]
    variables: list[str]
    medians: dict[str, np.ndarray]  # method -> (R, J) per-replication estimates
    truths: np.ndarray  # (R, J)
    dif: dict[str, np.ndarray] = field(default_factory=dict)
    rmse: dict[str, np.ndarray] = field(default_factory=dict)
    pair_se: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    @property
    def reference(self) -> str | None:
        return "blpm" if "blpm" in self.methods else None

    def rows(self) -> list[dict]:
        out = []
        ref = self.reference
        for m in self.methods:
            for j, v in enumerate(self.variables):
                se = self.pair_se.get((ref, m)) if ref and m != ref else None
                out.append({
                    "method": m,
                    "variable": v,
                    "DIF": float(self.dif[m][j]),
                    "RMSE": float(self.rmse[m][j]),
                    "pair_se": float(se[j]) if se is not None else float("nan"),
                })
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "variable", "DIF", "RMSE", "pair_se"])
            for r in self.rows():
                writer.writerow([r["method"], r["variable"], f"{r['DIF']:.6f}", f"{r['RMSE']:.6f}", f"{r['pair_se']:.6f}"])

    def write_raw_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["replication", "variable", "truth", *self.methods])
            for r in range(self.truths.shape[0]):
                for j, v in enumerate(self.variables):
                    writer.writerow(
                        [r + 1, v, repr(float(self.truths[r, j]))]
                        + [repr(float(self.medians[m][r, j])) for m in self.methods]
                    )


def dif_rmse(per_replication, truths) -> tuple[np.ndarray, np.ndarray]:
    """DIF_j = |mean_r(est - truth)|, RMSE_j = sqrt(mean_r (est - truth)^2)."""
    est = np.atleast_2d(np.asarray(per_replication, dtype=float))
    tru = np.atleast_2d(np.asarray(truths, dtype=float))
    if est.shape != tru.shape:
        raise LengthMismatch(f"estimates {est.shape} vs truths {tru.shape}")
    err = est - tru
    return np.abs(err.mean(axis=0)), np.sqrt((err**2).mean(axis=0))


def matched_pair_se(est_a, est_b, truths) -> np.ndarray:
    """Standard error of the mean per-replication error difference between two methods."""
    d = (np.asarray(est_a) - truths) - (np.asarray(est_b) - truths)
    R = d.shape[0]
    if R < 2:
        return np.full(d.shape[1], np.nan)
    return d.std(axis=0, ddof=1) / np.sqrt(R)


def build_report(methods, variables, medians, truths) -> MetricsReport:
    rep = MetricsReport(list(methods), list(variables), medians, truths)
    for m in methods:
        rep.dif[m], rep.rmse[m] = dif_rmse(medians[m], truths)
    for a in methods:
        for b in methods:
            if a != b:
                rep.pair_se[(a, b)] = matched_pair_se(medians[a], medians[b], truths)
    return rep


@dataclass(frozen=True)
class StudyConfig:
    scenario: ScenarioSpec = DEPENDENT
    methods: tuple[str, ...] = METHODS
    replications: int = 20
    schedule: GibbsSchedule = GibbsSchedule(iterations=5000, burn_in=2500, thin=10, m=0)
    K: int = 10
    master_seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")

    @classmethod
    def from_json(cls, d: dict, **overrides) -> "StudyConfig":
        sc = d.get("scenario", "dependent")
        scenario = PRESETS[sc] if isinstance(sc, str) else ScenarioSpec.from_json(sc)
        sched = d.get("schedule", {})
        kwargs = dict(
            scenario=scenario,
            methods=tuple(d.get("methods", METHODS)),
            replications=int(d.get("replications", 20)),
            schedule=GibbsSchedule(
                iterations=int(sched.get("iterations", 5000)),
                burn_in=int(sched.get("burn_in", 2500)),
                thin=int(sched.get("thin", 10)),
                m=0,
            ),
            K=int(d.get("K", 10)),
            master_seed=int(d.get("master_seed", 0)),
        )
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


_STREAM = {"data": 0, "dpmpm": 1, "blpm": 2}


def posterior_median_panel(chain, y2_idx) -> np.ndarray:
    return np.median(chain.traces.marginals[:, y2_idx], axis=0)


def run_replication(config: StudyConfig, r: int) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Truth and per-method estimates of panel Pr(Y2j = 1) for replication ``r``."""
    truth = generate_truth(config.scenario, make_rng(config.master_seed, r, _STREAM["data"]))
    ds = mask_for_design(truth)
    y2 = ds.schema.y2_idx
    out = {}
    for method in config.methods:
        if method == "complete_case":
            out[method] = complete_case_estimate(ds)
            continue
        spec = ModelSpec(ModelKind(method), K=config.K)
        chain = run_chain(spec, ds, config.schedule, make_rng(config.master_seed, r, _STREAM[method]), InitMode.SIMULATION)
        out[method] = posterior_median_panel(chain, y2)
    return truth.panel_truth(), out


def _run_one(args):
    return run_replication(*args)


def run_study(config: StudyConfig) -> MetricsReport:
    tasks = [(config, r) for r in range(config.replications)]
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as ex:
            results = list(ex.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    truths = np.array([t for t, _ in results])
    medians = {m: np.array([res[m] for _, res in results]) for m in config.methods}
    variables = [config.scenario.schema().names[j] for j in config.scenario.schema().y2_idx]
    return build_report(config.methods, variables, medians, truths)
