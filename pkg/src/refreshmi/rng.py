"""Seeded random streams and the samplers used by the Gibbs steps.

Streams are Philox generators keyed by ``(seed, stream_id, *sub)`` through
a :class:`numpy.random.SeedSequence` spawn key, so replications can be run
in any order or in parallel without coupling their draws.

Gamma is parameterised by shape and RATE throughout.
"""
from __future__ import annotations

import os

import numpy as np

#: Beta/Dirichlet draws are kept this far from exact 0 so logs stay finite.
TINY = 1e-300
#: Largest double below 1; upper clamp for Beta draws.
ONE_MINUS = float(np.nextafter(1.0, 0.0))

SEED_ENV = "REFRESH_SEED"


class SamplerError(ValueError):
    pass


class AllZeroWeights(SamplerError):
    pass


class NonFiniteWeight(SamplerError):
    pass


class NonPositiveAlpha(SamplerError):
    pass


class DomainError(SamplerError):
    pass


class AllNegInfinite(SamplerError):
    pass


def make_rng(seed: int, stream_id: int = 0, *sub: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream_id, *sub)``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(stream_id), *map(int, sub)))
    return np.random.Generator(np.random.Philox(ss))


def seed_from_env(default: int | None = None) -> int | None:
    val = os.environ.get(SEED_ENV)
    return int(val) if val not in (None, "") else default


def normalize_log_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if np.isnan(lw).any() or np.isposinf(lw).any():
        raise NonFiniteWeight("log weights must not contain NaN or +inf")
    m = lw.max()
    if not np.isfinite(m):
        raise AllNegInfinite("all log weights are -inf")
    p = np.exp(lw - m)
    return p / p.sum()


def normalize_log_rows(log_weights: np.ndarray) -> np.ndarray:
    """Row-wise :func:`normalize_log_weights` for an (n, k) array."""
    m = log_weights.max(axis=1, keepdims=True)
    if not np.isfinite(m).all():
        raise AllNegInfinite("a row has all log weights -inf")
    p = np.exp(log_weights - m)
    p /= p.sum(axis=1, keepdims=True)
    return p


def sample_categorical(weights, rng: np.random.Generator) -> int:
    """0-based index drawn with probability proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    if not np.isfinite(w).all():
        raise NonFiniteWeight("weights must be finite")
    if (w < 0).any():
        raise DomainError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise AllZeroWeights("at least one weight must be positive")
    c = np.cumsum(w)
    u = rng.random() * c[-1]
    k = int(np.searchsorted(c, u, side="right"))
    # guard the u == c[-1] edge and skip zero-mass trailing entries
    k = min(k, len(w) - 1)
    while w[k] == 0:
        k -= 1
    return k


def sample_categorical_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of an (n, k) matrix of nonnegative weights."""
    from ._kernels import draw_rows

    probs = np.ascontiguousarray(probs, dtype=float)
    return draw_rows(probs, rng.random(probs.shape[0]))


def sample_dirichlet(alphas, rng: np.random.Generator) -> np.ndarray:
    a = np.asarray(alphas, dtype=float)
    if not (np.isfinite(a).all() and (a > 0).all()):
        raise NonPositiveAlpha("Dirichlet parameters must be positive")
    g = rng.standard_gamma(a)
    return _to_simplex(g[None, :])[0]


def sample_dirichlet_rows(alphas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Dirichlet draws along the last axis.

    Entries with alpha == 0 are padding: they receive probability 0.
    """
    a = np.asarray(alphas, dtype=float)
    g = np.zeros_like(a)
    live = a > 0
    g[live] = rng.standard_gamma(a[live])
    flat = g.reshape(-1, a.shape[-1])
    live_flat = live.reshape(-1, a.shape[-1])
    return _to_simplex(flat, live_flat).reshape(a.shape)


def _to_simplex(g: np.ndarray, live: np.ndarray | None = None) -> np.ndarray:
    if live is None:
        live = np.ones_like(g, dtype=bool)
    g = np.where(live, g, 0.0)
    s = g.sum(axis=1, keepdims=True)
    # all-zero gamma rows can only come from extreme underflow; fall back to uniform
    zero = (s[:, 0] <= 0) & live.any(axis=1)
    if zero.any():
        g[zero] = live[zero]
        s = g.sum(axis=1, keepdims=True)
    s[s == 0] = 1.0
    p = g / s
    p = np.where(live, np.maximum(p, TINY), 0.0)
    return p / p.sum(axis=1, keepdims=True).clip(min=TINY)


def sample_beta(a, b, rng: np.random.Generator, size=None):
    a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if not ((a_arr > 0).all() and (b_arr > 0).all()):
        raise DomainError("Beta parameters must be positive")
    x = rng.beta(a_arr, b_arr, size=size)
    return np.clip(x, TINY, ONE_MINUS)


def sample_gamma(shape, rate, rng: np.random.Generator, size=None):
    """Gamma draw with mean ``shape / rate``."""
    sh, rt = np.asarray(shape, dtype=float), np.asarray(rate, dtype=float)
    if not ((sh > 0).all() and (rt > 0).all() and np.isfinite(rt).all()):
        raise DomainError("Gamma shape and rate must be positive and finite")
    return rng.gamma(sh, 1.0 / rt, size=size)


def sample_bernoulli(p, rng: np.random.Generator, size=None):
    p_arr = np.asarray(p, dtype=float)
    if not ((p_arr >= 0).all() and (p_arr <= 1).all()):
        raise DomainError("Bernoulli probability must lie in [0, 1]")
    if size is None:
        size = p_arr.shape
    return (rng.random(size) < p_arr).astype(np.int8)
