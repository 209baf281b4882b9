"""Blocked Gibbs sampler for the BLPM and DPMPM latent class models.

One sweep runs, in order: class assignments, stick weights, multinomial
tables and attrition probabilities, concentration, missing cells, and the
refreshment-sample attrition indicators.  The two models differ only in
how the multinomial tables are partitioned by W (carried by
:class:`ParameterState`) and in the W update, so both run through
:func:`run_chain`.

Class labels are not identified; everything reported downstream is a
label-invariant functional of the completed data.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import PanelDataset, completed
from .rng import (
    ONE_MINUS,
    TINY,
    normalize_log_rows,
    sample_beta,
    sample_dirichlet_rows,
    sample_gamma,
)
from .state import InitMode, ModelKind, ModelSpec, ParameterState, init_state


class ScheduleInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class GibbsSchedule:
    iterations: int = 20_000
    burn_in: int = 10_000
    thin: int = 10
    m: int = 5
    imputation_spacing: int = 1

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ScheduleInfeasible("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.imputation_spacing < 1 or self.m < 0:
            raise ScheduleInfeasible("thin and imputation_spacing must be >= 1, m >= 0")
        if self.m * self.imputation_spacing > self.n_thinned:
            raise ScheduleInfeasible(
                f"{self.m} imputations spaced by {self.imputation_spacing} need more than "
                f"the {self.n_thinned} thinned draws available"
            )

    @property
    def n_thinned(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def imputation_indices(self) -> list[int]:
        """1-based thinned-draw indices kept as imputations (the last m, spaced)."""
        T, k = self.n_thinned, self.imputation_spacing
        return [T - (self.m - 1 - i) * k for i in range(self.m)]


@dataclass
class Trace:
    sweep: np.ndarray
    alpha: np.ndarray
    occupied: np.ndarray
    marginals: np.ndarray  # completed-panel Pr(level 1), one column per variable
    pi: np.ndarray  # class weights; not identifiable, diagnostics only

    def __len__(self) -> int:
        return int(self.sweep.shape[0])

    def write_csv(self, path, names: list[str], kind: ModelKind) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# model={kind.value}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sweep", "alpha", "occupied_classes", *names])
            for t in range(len(self)):
                writer.writerow(
                    [int(self.sweep[t]), repr(float(self.alpha[t])), int(self.occupied[t])]
                    + [repr(float(x)) for x in self.marginals[t]]
                )


@dataclass
class Draw:
    """One thinned sweep: completed codes/W plus the parameters that produced them."""

    sweep: int
    codes: np.ndarray
    w: np.ndarray
    state: ParameterState


@dataclass
class ChainOutput:
    kind: ModelKind
    retained_imputations: list[PanelDataset]
    traces: Trace
    final_state: ParameterState
    draws: list[Draw] = field(default_factory=list)


# ---------------------------------------------------------------- step 1

def assignment_log_weights(state: ParameterState, codes: np.ndarray, w: np.ndarray, use_w: bool = True) -> np.ndarray:
    """(N, K) unnormalized log Pr(s_i = h | -)."""
    K = state.K
    base = np.broadcast_to(state.log_pi, (2, K)).copy()
    if use_w:
        rho = np.clip(state.rho, TINY, ONE_MINUS)
        base += np.stack([np.log1p(-rho), np.log(rho)])
    with np.errstate(divide="ignore"):
        lt = np.log(state.full_tables()).transpose(0, 2, 3, 1)
    lt = np.ascontiguousarray(lt)
    vars_ = np.arange(codes.shape[1], dtype=np.int64)
    return _kernels.log_weights(base, lt, vars_, _as_index(codes), _as_index(w))


def _as_index(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def assignment_probabilities(state, codes, w, use_w: bool = True) -> np.ndarray:
    return normalize_log_rows(assignment_log_weights(state, codes, w, use_w))


def step_assignments(state: ParameterState, codes, w, rng, use_w: bool = True) -> np.ndarray:
    if state.K == 1:
        state.s = np.zeros(codes.shape[0], dtype=np.int64)
    else:
        lw = assignment_log_weights(state, codes, w, use_w)
        state.s = _kernels.draw_from_log(lw, rng.random(codes.shape[0]))
    return state.s


step_assignments_ci = step_assignments


# ---------------------------------------------------------------- step 2

def stick_posterior(counts: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Beta parameters for V_1..V_{K-1} given class counts."""
    tail = np.cumsum(counts[::-1])[::-1]
    return 1.0 + counts[:-1], alpha + tail[1:]


def step_stick_weights(state: ParameterState, rng) -> np.ndarray:
    K = state.K
    if K == 1:
        return state.pi
    counts = np.bincount(state.s, minlength=K).astype(float)
    a, b = stick_posterior(counts, state.alpha)
    V = np.ones(K)
    V[:-1] = sample_beta(a, b, rng)
    state.V = V
    return state.pi


# ---------------------------------------------------------------- step 3

def _dirichlet_params(counts: np.ndarray, levels: np.ndarray) -> np.ndarray:
    dmax = counts.shape[-1]
    live = np.arange(dmax)[None, :] < levels[:, None]  # (vars, dmax)
    return np.where(live, counts + 1.0, 0.0)


def class_level_counts(s, codes, vars_, K, dmax, w=None, w_value: int = -1) -> np.ndarray:
    """counts[h, k, c] = #{i : s_i = h, Z_{i, vars_[k]} = c}, optionally only rows with W = w_value."""
    if w is None:
        w, w_value = np.zeros(codes.shape[0], dtype=np.int64), -1
    return _kernels.class_counts(_as_index(s), _as_index(codes), _as_index(vars_), _as_index(w), w_value, K, dmax)


def psi_posterior(state: ParameterState, codes, w) -> tuple[np.ndarray, np.ndarray | None]:
    """Dirichlet parameters for the shared and W-split tables."""
    K = state.K
    dmax = state.psi_shared.shape[-1]
    shared = _dirichlet_params(
        class_level_counts(state.s, codes, state.shared_vars, K, dmax), state.levels[state.shared_vars]
    )
    split = None
    if state.psi_split is not None:
        lv = state.levels[state.split_vars]
        split = np.stack([
            _dirichlet_params(class_level_counts(state.s, codes, state.split_vars, K, dmax, w=w, w_value=wv), lv)
            for wv in (0, 1)
        ])
    return shared, split


def step_psi(state: ParameterState, codes, w, rng) -> None:
    shared, split = psi_posterior(state, codes, w)
    state.psi_shared = sample_dirichlet_rows(shared, rng)
    if split is not None:
        state.psi_split = sample_dirichlet_rows(split, rng)


step_psi_pooled = step_psi


def rho_posterior(state: ParameterState, w) -> tuple[np.ndarray, np.ndarray]:
    K = state.K
    ones = np.bincount(state.s, weights=w, minlength=K)
    total = np.bincount(state.s, minlength=K)
    return 1.0 + ones, 1.0 + (total - ones)


def step_rho(state: ParameterState, w, rng) -> np.ndarray:
    a, b = rho_posterior(state, w)
    state.rho = sample_beta(a, b, rng)
    return state.rho


# ---------------------------------------------------------------- step 4

def alpha_posterior(state: ParameterState, a_alpha: float, b_alpha: float) -> tuple[float, float]:
    """(shape, rate) of the concentration's full conditional."""
    return a_alpha + state.K - 1, b_alpha - float(state.log_pi[-1])


def step_alpha(state: ParameterState, rng, a_alpha: float = 0.25, b_alpha: float = 0.25) -> float:
    if state.K == 1:
        return state.alpha
    shape, rate = alpha_posterior(state, a_alpha, b_alpha)
    state.alpha = max(float(sample_gamma(shape, rate, rng)), TINY)
    return state.alpha


# ---------------------------------------------------------------- step 5

def missing_cells(missing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.nonzero(missing)
    return rows.astype(np.int64), cols.astype(np.int64)


def step_impute_missing(state: ParameterState, codes, w, cells, rng) -> np.ndarray:
    """Redraw originally missing cells in place; ``cells`` from :func:`missing_cells`."""
    rows, cols = cells
    if rows.size:
        _kernels.impute_cells(rows, cols, state.full_tables(), state.s, w, rng.random(rows.size), codes)
    return codes


# ---------------------------------------------------------------- step 6

def w_probability(state: ParameterState, codes, rows) -> np.ndarray:
    """Pr(W_i = 1 | s_i, Z_i) for the given rows under the BLPM."""
    s = state.s[rows]
    rho = np.clip(state.rho[s], TINY, ONE_MINUS)
    l1 = np.log(rho)
    l0 = np.log1p(-rho)
    if state.psi_split is not None and state.split_vars.size:
        z = codes[np.ix_(rows, state.split_vars)]
        k = np.arange(state.split_vars.size)[None, :]
        with np.errstate(divide="ignore"):
            l1 = l1 + np.log(state.psi_split[1, s[:, None], k, z]).sum(axis=1)
            l0 = l0 + np.log(state.psi_split[0, s[:, None], k, z]).sum(axis=1)
    # logistic of the log-odds, stable for large |l1 - l0|
    return np.exp(-np.logaddexp(0.0, l0 - l1))


def step_impute_w(state: ParameterState, codes, w, refresh_rows, rng) -> np.ndarray:
    p = w_probability(state, codes, refresh_rows)
    w[refresh_rows] = (rng.random(refresh_rows.size) < p).astype(w.dtype)
    return w


def step_impute_w_ci(state: ParameterState, w, refresh_rows, rng) -> np.ndarray:
    p = state.rho[state.s[refresh_rows]]
    w[refresh_rows] = (rng.random(refresh_rows.size) < p).astype(w.dtype)
    return w


# ---------------------------------------------------------------- driver

def sweep(spec: ModelSpec, state: ParameterState, codes, w, cells, refresh_rows, rng) -> None:
    use_w = not spec.ignore_w
    step_assignments(state, codes, w, rng, use_w=use_w)
    step_stick_weights(state, rng)
    step_psi(state, codes, w, rng)
    step_rho(state, w, rng)
    step_alpha(state, rng, spec.a_alpha, spec.b_alpha)
    step_impute_missing(state, codes, w, cells, rng)
    if spec.kind == ModelKind.BLPM:
        step_impute_w(state, codes, w, refresh_rows, rng)
    else:
        step_impute_w_ci(state, w, refresh_rows, rng)


def run_chain(
    spec: ModelSpec,
    dataset: PanelDataset,
    schedule: GibbsSchedule,
    rng: np.random.Generator,
    init_mode: InitMode | str = InitMode.SIMULATION,
    keep_draws: bool = False,
) -> ChainOutput:
    """Initialize, then sweep; keep thinned traces and the scheduled imputations."""
    start, state = init_state(spec, dataset, rng, init_mode)
    codes = np.array(start.codes, dtype=np.int64)
    w = np.array(start.w, dtype=np.int64)
    cells = missing_cells(dataset.missing)
    refresh_rows = np.nonzero(dataset.w_missing)[0]
    panel = dataset.panel

    T = schedule.n_thinned
    q = codes.shape[1]
    tr = Trace(
        sweep=np.zeros(T, dtype=np.int64),
        alpha=np.zeros(T),
        occupied=np.zeros(T, dtype=np.int64),
        marginals=np.zeros((T, q)),
        pi=np.zeros((T, spec.K)),
    )
    keep = set(schedule.imputation_indices())
    imputations: list[PanelDataset] = []
    draws: list[Draw] = []
    k = 0
    for t in range(1, schedule.iterations + 1):
        sweep(spec, state, codes, w, cells, refresh_rows, rng)
        if t <= schedule.burn_in or (t - schedule.burn_in) % schedule.thin:
            continue
        if k >= T:
            break
        tr.sweep[k] = t
        tr.alpha[k] = state.alpha
        tr.occupied[k] = np.unique(state.s).size
        tr.marginals[k] = (codes[panel] == 0).mean(axis=0) if panel.any() else np.nan
        tr.pi[k] = state.pi
        k += 1
        if k in keep:
            imputations.append(completed(dataset, codes, w))
        if keep_draws:
            draws.append(Draw(t, codes.astype(np.int16), w.astype(np.int8), state.copy()))
    return ChainOutput(spec.kind, imputations, tr, state, draws)


def run_chain_ci(spec: ModelSpec, dataset, schedule, rng, **kwargs) -> ChainOutput:
    if spec.kind != ModelKind.DPMPM:
        spec = ModelSpec(ModelKind.DPMPM, spec.K, spec.a_alpha, spec.b_alpha, ignore_w=spec.ignore_w)
    return run_chain(spec, dataset, schedule, rng, **kwargs)
