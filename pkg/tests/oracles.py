"""Brute-force reference implementations used only by the tests.

They share no code with the package: exponential enumerations, explicit
limits and vertex searches that are obviously correct on tiny instances.
"""

import itertools

import numpy as np


def deterministic_policies(S, A):
    return itertools.product(range(A), repeat=S)


def chain_matrices(m, actions):
    idx = np.arange(m.S)
    a = np.asarray(actions)
    return m.r_mean[idx, a], m.P[idx, a]


def cesaro_limit(P, squarings=48):
    """``P* = lim (0.5 I + 0.5 P)^n`` by repeated squaring; exact for the lazy chain."""
    Q = 0.5 * (np.eye(P.shape[0]) + P)
    for _ in range(squarings):
        Q = Q @ Q
        # rounding would otherwise compound into lost mass
        Q /= Q.sum(axis=1, keepdims=True)
    return Q


def policy_gain_vector(m, actions):
    r, P = chain_matrices(m, actions)
    return cesaro_limit(P) @ r


def optimal_gain_enumeration(m):
    """``(g*, best actions)``; valid for communicating MDPs where the gain is constant."""
    best, best_pol = -np.inf, None
    for pol in deterministic_policies(m.S, m.A):
        g = policy_gain_vector(m, pol).max()
        if g > best:
            best, best_pol = g, pol
    return float(best), best_pol


def hitting_times_enumeration(m):
    """``tau[j, s]`` minimised over deterministic policies by exact linear solves."""
    S = m.S
    tau = np.full((S, S), np.inf)
    for j in range(S):
        tau[j, j] = 0.0
        others = [s for s in range(S) if s != j]
        for pol in deterministic_policies(S, m.A):
            _, P = chain_matrices(m, pol)
            Q = P[np.ix_(others, others)]
            M = np.eye(S - 1) - Q
            if np.linalg.matrix_rank(M) < S - 1:
                # some state cannot reach j under this policy; skip it
                continue
            t = np.linalg.solve(M, np.ones(S - 1))
            if np.any(t < -1e-9):
                continue
            tau[j, others] = np.minimum(tau[j, others], t)
    return tau


def diameter_enumeration(m):
    tau = hitting_times_enumeration(m)
    return float(tau[~np.eye(m.S, dtype=bool)].max()) if m.S > 1 else 0.0


def box_simplex_vertex_max(lo, hi, v):
    """Max of ``p.v`` over ``{lo <= p <= hi, sum p = 1}`` by visiting every basic point.

    A vertex of this polytope has all but at most one coordinate at a bound.
    """
    n = len(v)
    best = -np.inf
    for free in range(n):
        others = [j for j in range(n) if j != free]
        for bits in itertools.product((0, 1), repeat=n - 1):
            p = np.empty(n)
            for j, b in zip(others, bits):
                p[j] = hi[j] if b else lo[j]
            p[free] = 1.0 - p[others].sum()
            if lo[free] - 1e-12 <= p[free] <= hi[free] + 1e-12:
                best = max(best, float(p @ v))
    return best


def finite_horizon_brute_force(env, s=None, t=1):
    """Expectimax over the explicit recursion tree; exponential in ``T``."""
    s = env.s1 if s is None else s
    if t > env.T:
        return 0.0
    m = env.snapshot_at(t)
    best = -np.inf
    for a in range(m.A):
        q = m.r_mean[s, a]
        for y in range(m.S):
            if m.P[s, a, y] > 0:
                q += m.P[s, a, y] * finite_horizon_brute_force(env, y, t + 1)
        best = max(best, q)
    return best


def batch_reward_variance(rewards):
    """Population variance of a list of rewards; 0 for an empty list."""
    return float(np.var(rewards)) if len(rewards) else 0.0


def random_mdp(rng, S, A, gamma=None, r_max=1.0):
    """Dense or sparse random MDP, not necessarily communicating."""
    from nonstat_rl import MdpSnapshot

    gamma = S if gamma is None else gamma
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            sup = rng.choice(S, size=gamma, replace=False)
            P[s, a, sup] = rng.dirichlet(np.ones(gamma))
    return MdpSnapshot(rng.uniform(0, r_max, size=(S, A)), P, r_max)
