"""Latent-class parameter state, stick-breaking weights and chain initialization."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .data import PanelDataset, Role, completed
from .rng import sample_beta, sample_bernoulli, sample_categorical_rows, DomainError

INIT_CLAMP = (0.001, 0.999)


class ModelKind(str, enum.Enum):
    DPMPM = "dpmpm"
    BLPM = "blpm"


class InitMode(str, enum.Enum):
    SIMULATION = "simulation"
    APPLIED = "applied"


class DegenerateInit(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.BLPM
    K: int = 10
    a_alpha: float = 0.25
    b_alpha: float = 0.25
    x_depends_on_w: bool = True
    ignore_w: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not (self.a_alpha > 0 and self.b_alpha > 0):
            raise ValueError("a_alpha and b_alpha must be positive")
        if self.kind == ModelKind.DPMPM:
            object.__setattr__(self, "x_depends_on_w", False)
        elif self.ignore_w:
            raise ValueError("ignore_w is only available for the DPMPM model")

    def split_roles(self) -> tuple[Role, ...]:
        if self.kind == ModelKind.DPMPM:
            return ()
        return (Role.X, Role.Y2) if self.x_depends_on_w else (Role.Y2,)


def stick_breaking(V) -> np.ndarray:
    """Class weights from stick proportions; the last proportion must be 1."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 1 or V.size == 0:
        raise DomainError("V must be a nonempty vector")
    if not ((V > 0).all() and (V <= 1).all()) or V[-1] != 1.0:
        raise DomainError("need V_h in (0, 1] and V_K = 1")
    return np.exp(log_stick_breaking(V))


def log_stick_breaking(V: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    log_rest = np.concatenate([[0.0], np.cumsum(np.log1p(-V[:-1]))])
    return np.log(V) + log_rest


def occupied_class_count(assignments) -> int:
    s = np.asarray(assignments)
    if s.size == 0:
        raise ValueError("assignments must be nonempty")
    return int(np.unique(s).size)


@dataclass
class ParameterState:
    """Full Gibbs state.

    ``psi_shared[h, k, c]`` covers the variables listed in ``shared_vars``
    and ``psi_split[w, h, k, c]`` those in ``split_vars`` (None under
    DPMPM).  Level axes are padded to the largest level count with zeros.
    Assignments ``s`` are 0-based internally.
    """

    V: np.ndarray
    alpha: float
    rho: np.ndarray
    psi_shared: np.ndarray
    psi_split: np.ndarray | None
    s: np.ndarray
    shared_vars: np.ndarray
    split_vars: np.ndarray
    levels: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return int(self.V.shape[0])

    @property
    def log_pi(self) -> np.ndarray:
        return log_stick_breaking(self.V)

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)

    def copy(self) -> "ParameterState":
        return ParameterState(
            V=self.V.copy(),
            alpha=float(self.alpha),
            rho=self.rho.copy(),
            psi_shared=self.psi_shared.copy(),
            psi_split=None if self.psi_split is None else self.psi_split.copy(),
            s=self.s.copy(),
            shared_vars=self.shared_vars,
            split_vars=self.split_vars,
            levels=self.levels,
        )

    def full_tables(self) -> np.ndarray:
        """(2, K, q, dmax) tables indexed by W and global variable index."""
        q = self.levels.size
        out = np.empty((2, self.K, q, self.psi_shared.shape[-1]))
        out[:, :, self.shared_vars, :] = self.psi_shared[None]
        if self.psi_split is not None:
            out[:, :, self.split_vars, :] = self.psi_split
        return out

    def psi_for(self, j: int, w: int | None = None) -> np.ndarray:
        """(K, d_j) table for global variable ``j``; ``w`` selects a split table."""
        d = int(self.levels[j])
        hit = np.nonzero(self.shared_vars == j)[0]
        if hit.size:
            return self.psi_shared[:, hit[0], :d]
        hit = np.nonzero(self.split_vars == j)[0]
        if not hit.size or w is None:
            raise KeyError(f"variable {j} needs a W value to select its table")
        return self.psi_split[w, :, hit[0], :d]

    def to_json(self) -> dict:
        out = {
            "V": self.V.tolist(),
            "pi": self.pi.tolist(),
            "alpha": float(self.alpha),
            "rho": self.rho.tolist(),
            "psi": self.psi_shared.tolist(),
            "s": (self.s + 1).tolist(),
            "shared_vars": self.shared_vars.tolist(),
            "split_vars": self.split_vars.tolist(),
            "levels": self.levels.tolist(),
        }
        if self.psi_split is not None:
            out["psi0"] = self.psi_split[0].tolist()
            out["psi1"] = self.psi_split[1].tolist()
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, d: dict) -> "ParameterState":
        split = None
        if "psi0" in d:
            split = np.stack([np.array(d["psi0"], dtype=float), np.array(d["psi1"], dtype=float)])
        return cls(
            V=np.array(d["V"], dtype=float),
            alpha=float(d["alpha"]),
            rho=np.array(d["rho"], dtype=float),
            psi_shared=np.array(d["psi"], dtype=float),
            psi_split=split,
            s=np.array(d["s"], dtype=np.int64) - 1,
            shared_vars=np.array(d["shared_vars"], dtype=np.int64),
            split_vars=np.array(d["split_vars"], dtype=np.int64),
            levels=np.array(d["levels"], dtype=np.int64),
        )


def variable_partition(spec: ModelSpec, dataset: PanelDataset) -> tuple[np.ndarray, np.ndarray]:
    roles = spec.split_roles()
    split = np.array([j for j, v in enumerate(dataset.schema) if v.role in roles], dtype=np.int64)
    shared = np.array([j for j, v in enumerate(dataset.schema) if v.role not in roles], dtype=np.int64)
    return shared, split


def _empirical(codes: np.ndarray, d: int) -> np.ndarray:
    if codes.size == 0:
        return np.full(d, 1.0 / d)
    return np.bincount(codes, minlength=d)[:d] / codes.size


def _moment_matched(p_all: np.ndarray, p_cp: np.ndarray, p_w1: float) -> np.ndarray:
    p0 = (p_all - p_cp * p_w1) / (1.0 - p_w1)
    p0 = np.clip(p0, *INIT_CLAMP)
    return p0 / p0.sum()


def attriter_init_probs(p_all, p_cp, p_w1: float) -> np.ndarray:
    """Pr(Y2 | W=0) implied by Pr(Y2), Pr(Y2 | W=1) and Pr(W=1), clamped."""
    return _moment_matched(np.atleast_1d(np.asarray(p_all, float)), np.atleast_1d(np.asarray(p_cp, float)), p_w1)


def init_state(
    spec: ModelSpec,
    dataset: PanelDataset,
    rng: np.random.Generator,
    mode: InitMode | str = InitMode.SIMULATION,
) -> tuple[PanelDataset, ParameterState]:
    """Fill every missing cell and build a starting parameter state."""
    mode = InitMode(mode)
    schema = dataset.schema
    levels = schema.levels
    n, q = dataset.n, len(schema)
    panel, refresh = dataset.panel, dataset.refresh
    completer = panel & ~dataset.w_missing & (dataset.w == 1)
    attriter = panel & ~dataset.w_missing & (dataset.w == 0)
    n_p = int(panel.sum())
    n_cp = int(completer.sum())
    if n_p == 0:
        raise DegenerateInit("no panel rows")
    p_w1 = n_cp / n_p
    if p_w1 >= 1.0:
        raise DegenerateInit("Pr(W=0) = 0: there are no attriters to correct for")

    codes = np.array(dataset.codes, dtype=np.int64)
    miss = dataset.missing
    for j, var in enumerate(schema):
        d = var.levels
        obs = ~miss[:, j]
        col_missing = miss[:, j]
        if not col_missing.any():
            continue
        if var.role == Role.X:
            groups = [(col_missing, _empirical(codes[obs, j], d))]
        elif var.role == Role.Y1:
            groups = [(col_missing, _empirical(codes[obs & panel, j], d))]
        else:
            p_ref = _empirical(codes[obs & refresh, j], d)
            p_cp = _empirical(codes[obs & completer, j], d)
            if not (obs & refresh).any():
                p_ref = p_cp
            groups = [
                (col_missing & refresh, p_ref),
                (col_missing & completer, p_cp),
                (col_missing & attriter, _moment_matched(p_ref, p_cp, p_w1)),
            ]
        for rows, probs in groups:
            rows = np.nonzero(rows)[0]
            if rows.size:
                codes[rows, j] = sample_categorical_rows(np.broadcast_to(probs, (rows.size, d)), rng)

    w = np.array(dataset.w, dtype=np.int64)
    w_rows = np.nonzero(dataset.w_missing)[0]
    w[w_rows] = sample_bernoulli(np.full(w_rows.size, p_w1), rng)

    K = spec.K
    dmax = int(levels.max()) if q else 2
    shared, split = variable_partition(spec, dataset)

    def table(vars_: np.ndarray) -> np.ndarray:
        out = np.zeros((K, vars_.size, dmax))
        for k, j in enumerate(vars_):
            d = int(levels[j])
            if mode == InitMode.SIMULATION:
                out[:, k, :d] = 1.0 / d
            else:
                out[:, k, :d] = _empirical(codes[:, j], d)
        return np.maximum(out, 0.0)

    psi_shared = _floor_rows(table(shared), levels[shared])
    psi_split = None
    if spec.kind == ModelKind.BLPM:
        t = _floor_rows(table(split), levels[split])
        psi_split = np.stack([t, t.copy()])

    alpha = 1.0
    if mode == InitMode.SIMULATION:
        V = np.ones(K)
        if K > 1:
            V[:-1] = sample_beta(1.0, alpha, rng, size=K - 1)
    else:
        V = np.full(K, 0.1)
        V[-1] = 1.0
    pi = np.exp(log_stick_breaking(V))
    s = sample_categorical_rows(np.broadcast_to(pi, (n, K)), rng)
    state = ParameterState(
        V=V,
        alpha=alpha,
        rho=np.full(K, p_w1),
        psi_shared=psi_shared,
        psi_split=psi_split,
        s=s.astype(np.int64),
        shared_vars=shared,
        split_vars=split,
        levels=levels,
    )
    return completed(dataset, codes, w), state


def _floor_rows(psi: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # empirical zeros would make log-likelihoods -inf before the first update
    out = psi.copy()
    for k, d in enumerate(levels):
        block = np.maximum(out[..., k, :d], 1e-10)
        out[..., k, :d] = block / block.sum(axis=-1, keepdims=True)
    return out
