"""Compiled inner loops for the Gibbs sweep.

Kernels take pre-drawn uniforms so every random number still comes from
the caller's numpy Generator.  Multinomial tables are passed in the
combined layout ``tables[w, h, j, c]`` (both W slices equal for variables
that do not depend on W).
"""
import numpy as np
from numba import njit


@njit(cache=True)
def log_weights(base, log_tables, vars_, codes, w):
    """base: (2, K) log prior/attrition terms; log_tables: (2, q, dmax, K)."""
    n = codes.shape[0]
    K = base.shape[1]
    out = np.empty((n, K))
    for i in range(n):
        wi = w[i]
        for h in range(K):
            out[i, h] = base[wi, h]
        for k in range(vars_.shape[0]):
            j = vars_[k]
            c = codes[i, j]
            for h in range(K):
                out[i, h] += log_tables[wi, j, c, h]
    return out


@njit(cache=True)
def _pick(buf, tot, u):
    target = u * tot
    acc = 0.0
    last = 0
    for c in range(buf.shape[0]):
        if buf[c] > 0.0:
            last = c
    for c in range(buf.shape[0]):
        acc += buf[c]
        if target < acc and buf[c] > 0.0:
            return c
    return last


@njit(cache=True)
def draw_from_log(lw, u):
    """Row-wise categorical draw from unnormalized log weights."""
    n, K = lw.shape
    out = np.empty(n, dtype=np.int64)
    buf = np.empty(K)
    for i in range(n):
        m = -np.inf
        for h in range(K):
            if lw[i, h] > m:
                m = lw[i, h]
        tot = 0.0
        for h in range(K):
            buf[h] = np.exp(lw[i, h] - m)
            tot += buf[h]
        out[i] = _pick(buf, tot, u[i])
    return out


@njit(cache=True)
def draw_rows(probs, u):
    """Row-wise categorical draw from nonnegative weights."""
    n, d = probs.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        tot = 0.0
        for c in range(d):
            tot += probs[i, c]
        out[i] = _pick(probs[i], tot, u[i])
    return out


@njit(cache=True)
def class_counts(s, codes, vars_, w, w_value, K, dmax):
    """counts[h, k, c] over rows with w == w_value (all rows when w_value < 0)."""
    nv = vars_.shape[0]
    out = np.zeros((K, nv, dmax))
    for i in range(codes.shape[0]):
        if w_value >= 0 and w[i] != w_value:
            continue
        h = s[i]
        for k in range(nv):
            out[h, k, codes[i, vars_[k]]] += 1.0
    return out


@njit(cache=True)
def impute_cells(rows, cols, tables, s, w, u, codes):
    """Redraw codes[rows[t], cols[t]] from tables[w_i, s_i, cols[t], :]."""
    for t in range(rows.shape[0]):
        i = rows[t]
        j = cols[t]
        row = tables[w[i], s[i], j]
        tot = 0.0
        for c in range(row.shape[0]):
            tot += row[c]
        codes[i, j] = _pick(row, tot, u[t])
