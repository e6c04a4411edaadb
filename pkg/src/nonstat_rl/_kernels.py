"""Compiled inner loops of extended value iteration.

Kept free of Python objects so numba can compile them; the checked public
entry points live in :mod:`nonstat_rl.evi`.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def descending_order(v):
    # stable on -v: ties go to the lowest state index
    return np.argsort(-v, kind="mergesort")


@njit(cache=True)
def greedy_fill(p_lo, p_hi, order, out):
    """Maximize p.v over the box-constrained simplex; returns unplaced mass."""
    n = p_lo.shape[0]
    rem = 1.0
    for j in range(n):
        out[j] = p_lo[j]
        rem -= p_lo[j]
    for idx in range(n):
        if rem <= 0.0:
            break
        j = order[idx]
        room = p_hi[j] - p_lo[j]
        add = room if room < rem else rem
        out[j] += add
        rem -= add
    return rem


@njit(cache=True)
def bellman_step(v, p_lo, p_hi, r_hi, alpha, out_v, out_pol, opt_p):
    S = r_hi.shape[0]
    A = r_hi.shape[1]
    order = descending_order(v)
    for s in range(S):
        best = -np.inf
        best_a = 0
        for a in range(A):
            greedy_fill(p_lo[s, a], p_hi[s, a], order, opt_p[s, a])
            pv = 0.0
            for y in range(S):
                pv += opt_p[s, a, y] * v[y]
            q = r_hi[s, a] + alpha * pv
            if q > best:
                best = q
                best_a = a
        out_v[s] = best + (1.0 - alpha) * v[s]
        out_pol[s] = best_a


@njit(cache=True)
def evi_loop(p_lo, p_hi, r_hi, eps, alpha, ref, max_iter, recenter):
    """Relative value iteration with the extended operator.

    Returns ``(g, h, policy, opt_p, n_iter, converged, last_span)``.
    """
    S = r_hi.shape[0]
    A = r_hi.shape[1]
    v = np.zeros(S)
    v_new = np.empty(S)
    pol = np.zeros(S, dtype=np.int64)
    opt_p = np.empty((S, A, S))
    n = 0
    sp = np.inf
    g = 0.0
    while n < max_iter:
        bellman_step(v, p_lo, p_hi, r_hi, alpha, v_new, pol, opt_p)
        n += 1
        dmax = -np.inf
        dmin = np.inf
        for s in range(S):
            d = v_new[s] - v[s]
            if d > dmax:
                dmax = d
            if d < dmin:
                dmin = d
        sp = dmax - dmin
        g = 0.5 * (dmax + dmin)
        if sp <= eps:
            return g, v, pol, opt_p, n, True, sp
        shift = v_new[ref] if recenter else 0.0
        for s in range(S):
            v[s] = v_new[s] - shift
    return g, v, pol, opt_p, n, False, sp
