"""Optimistic planning over box-shaped confidence sets.

The plausible MDPs are all ``(r, p)`` with ``r(s, a)`` in an interval and
every ``p(s' | s, a)`` in its own interval, subject to rows summing to one.
Maximizing over that family is done inside the Bellman operator: the
reward is pushed to its upper end and the transition row is chosen by a
greedy fill of the box-constrained simplex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels
from .exceptions import IncompatibleShapesError, InfeasibleBoxError, NonConvergenceError
from .mdp import DEFAULT_MAX_ITER, StationaryPolicy, span
from .validation import PROB_ATOL, check_index, check_scalar

__all__ = [
    "SufficientStats",
    "ConfidenceModel",
    "EviResult",
    "ExtendedValueIteration",
    "bernstein_radii",
    "hoeffding_radii",
    "build_confidence",
    "inner_max_transition",
    "extended_bellman",
    "extended_value_iteration",
    "span",
]

RADIUS_KINDS = ("bernstein", "hoeffding")


class SufficientStats:
    """Visit counts and empirical moments for every state-action pair.

    Statistics change only when an episode is folded in with :meth:`fold`;
    the reward variance is carried by the recursive update::

        var' = N / N+' * (var + mean**2) + sq_episode / N+' - mean'**2

    where primes denote post-fold values and ``N+ = max(1, N)``.
    """

    def __init__(self, n_states, n_actions):
        self.n_states = check_scalar(n_states, "n_states", lo=1, integer=True)
        self.n_actions = check_scalar(n_actions, "n_actions", lo=1, integer=True)
        S, A = self.n_states, self.n_actions
        self.N = np.zeros((S, A), dtype=np.int64)
        self.counts = np.zeros((S, A, S), dtype=np.int64)
        self.r_hat = np.zeros((S, A))
        self.sq_sum = np.zeros((S, A))
        self.sigma2_r = np.zeros((S, A))
        self.t = 0

    @property
    def N_plus(self):
        return np.maximum(1, self.N)

    @property
    def p_hat(self):
        return self.counts / self.N_plus[:, :, None]

    @property
    def support_sizes(self):
        """Empirical branching: number of successors observed so far."""
        return (self.counts > 0).sum(axis=2)

    def fold(self, nu, transitions, reward_sum, reward_sq_sum):
        """Merge one episode's visit counts, transition counts and reward sums."""
        nu = np.asarray(nu, dtype=np.int64)
        transitions = np.asarray(transitions, dtype=np.int64)
        if nu.shape != self.N.shape or transitions.shape != self.counts.shape:
            raise IncompatibleShapesError("episode statistics do not match the state-action space")
        if np.any(transitions.sum(axis=2) != nu):
            raise ValueError("transition counts disagree with visit counts")
        N_old = self.N
        N_new = N_old + nu
        Np_new = np.maximum(1, N_new)
        r_new = (N_old * self.r_hat + reward_sum) / Np_new
        var = N_old / Np_new * (self.sigma2_r + self.r_hat**2) + reward_sq_sum / Np_new - r_new**2
        self.sigma2_r = np.maximum(var, 0.0)
        self.r_hat = r_new
        self.sq_sum = self.sq_sum + reward_sq_sum
        self.N = N_new
        self.counts = self.counts + transitions
        self.t += int(nu.sum())
        return self

    def fold_samples(self, samples):
        """Fold an episode given as ``(s, a, r, s_next)`` tuples."""
        S, A = self.n_states, self.n_actions
        nu = np.zeros((S, A), dtype=np.int64)
        trans = np.zeros((S, A, S), dtype=np.int64)
        rs = np.zeros((S, A))
        rsq = np.zeros((S, A))
        if samples:
            s, a, r, y = (np.asarray(c) for c in zip(*samples))
            s, a, y = s.astype(np.int64), a.astype(np.int64), y.astype(np.int64)
            r = r.astype(float)
            np.add.at(nu, (s, a), 1)
            np.add.at(trans, (s, a, y), 1)
            np.add.at(rs, (s, a), r)
            np.add.at(rsq, (s, a), r * r)
        return self.fold(nu, trans, rs, rsq)

    def copy(self):
        out = SufficientStats(self.n_states, self.n_actions)
        for name in ("N", "counts", "r_hat", "sq_sum", "sigma2_r"):
            setattr(out, name, getattr(self, name).copy())
        out.t = self.t
        return out


@dataclass(frozen=True, eq=False)
class ConfidenceModel:
    """Per-pair reward intervals and per-successor transition boxes."""

    p_hat: np.ndarray
    r_hat: np.ndarray
    beta_p: np.ndarray
    beta_r: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    r_lo: np.ndarray
    r_hi: np.ndarray
    v_hat_p: float = 0.0
    v_hat_r: float = 0.0
    delta: float = float("nan")
    r_max: float = 1.0

    @property
    def n_states(self):
        return self.r_hi.shape[0]

    @property
    def n_actions(self):
        return self.r_hi.shape[1]

    @classmethod
    def singleton(cls, m):
        """The degenerate model whose only member is the snapshot ``m``."""
        z2 = np.zeros_like(m.r_mean)
        return cls(
            p_hat=m.P.copy(), r_hat=m.r_mean.copy(), beta_p=np.zeros_like(m.P), beta_r=z2,
            p_lo=m.P.copy(), p_hi=m.P.copy(), r_lo=m.r_mean.copy(), r_hi=m.r_mean.copy(),
            r_max=m.r_max,
        )

    @classmethod
    def from_boxes(cls, p_lo, p_hi, r_lo, r_hi, r_max=1.0):
        p_lo, p_hi = np.asarray(p_lo, float), np.asarray(p_hi, float)
        r_lo, r_hi = np.asarray(r_lo, float), np.asarray(r_hi, float)
        return cls(
            p_hat=0.5 * (p_lo + p_hi), r_hat=0.5 * (r_lo + r_hi),
            beta_p=0.5 * (p_hi - p_lo), beta_r=0.5 * (r_hi - r_lo),
            p_lo=p_lo, p_hi=p_hi, r_lo=r_lo, r_hi=r_hi, r_max=r_max,
        )

    def feasibility_gap(self):
        """Largest violation of ``sum(p_lo) <= 1 <= sum(p_hi)`` over pairs."""
        lo = self.p_lo.sum(axis=2) - 1.0
        hi = 1.0 - self.p_hi.sum(axis=2)
        return float(max(lo.max(), hi.max()))

    def contains(self, m, atol=0.0):
        """Whether the true snapshot ``m`` lies inside every box."""
        return bool(
            np.all(m.P >= self.p_lo - atol)
            and np.all(m.P <= self.p_hi + atol)
            and np.all(m.r_mean >= self.r_lo - atol)
            and np.all(m.r_mean <= self.r_hi + atol)
        )

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in out.items()}

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        for k in ("p_hat", "r_hat", "beta_p", "beta_r", "p_lo", "p_hi", "r_lo", "r_hi"):
            kw[k] = np.asarray(kw[k], dtype=float)
        return cls(**kw)

    def dump_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class EviResult:
    g: float
    h: np.ndarray
    policy: StationaryPolicy
    optimistic_r: np.ndarray
    optimistic_p: np.ndarray
    iterations: int


def _log_term(N_plus, S, A, delta):
    return np.log(6.0 * S * A * N_plus / delta)


def bernstein_radii(stats, delta, r_max):
    """Empirical-Bernstein radii ``(beta_p, beta_r)``.

    The transition variance is the Bernoulli plug-in ``p_hat (1 - p_hat)``.
    """
    Np = stats.N_plus.astype(float)
    L = _log_term(Np, stats.n_states, stats.n_actions, delta)
    p_hat = stats.p_hat
    beta_p = 2.0 * np.sqrt(p_hat * (1.0 - p_hat) * (L / Np)[:, :, None]) + (6.0 * L / Np)[:, :, None]
    beta_r = 2.0 * np.sqrt(stats.sigma2_r * L / Np) + 6.0 * r_max * L / Np
    return beta_p, beta_r


def hoeffding_radii(stats, delta, r_max):
    """Hoeffding radii of the same confidence level, applied per component."""
    Np = stats.N_plus.astype(float)
    L = _log_term(Np, stats.n_states, stats.n_actions, delta)
    base = np.sqrt(L / (2.0 * Np))
    beta_p = np.broadcast_to(base[:, :, None], stats.counts.shape).copy()
    return beta_p, r_max * base


def build_confidence(stats, delta, v_hat_r=0.0, v_hat_p=0.0, r_max=1.0, radius_kind="bernstein"):
    """Confidence boxes around the empirical model, inflated by the variation estimates."""
    check_scalar(delta, "delta", lo=0, hi=1, lo_open=True, hi_open=True)
    v_hat_r = check_scalar(v_hat_r, "v_hat_r", lo=0)
    v_hat_p = check_scalar(v_hat_p, "v_hat_p", lo=0)
    r_max = check_scalar(r_max, "r_max", lo=0, lo_open=True)
    if radius_kind == "bernstein":
        beta_p, beta_r = bernstein_radii(stats, delta, r_max)
    elif radius_kind == "hoeffding":
        beta_p, beta_r = hoeffding_radii(stats, delta, r_max)
    else:
        raise ValueError(f"radius_kind must be one of {RADIUS_KINDS}, got {radius_kind!r}")
    p_hat, r_hat = stats.p_hat, stats.r_hat
    return ConfidenceModel(
        p_hat=p_hat,
        r_hat=r_hat,
        beta_p=beta_p,
        beta_r=beta_r,
        p_lo=np.maximum(0.0, p_hat - beta_p - v_hat_p),
        p_hi=np.minimum(1.0, p_hat + beta_p + v_hat_p),
        r_lo=np.maximum(0.0, r_hat - beta_r - v_hat_r),
        r_hi=np.minimum(r_max, r_hat + beta_r + v_hat_r),
        v_hat_p=v_hat_p,
        v_hat_r=v_hat_r,
        delta=float(delta),
        r_max=r_max,
    )


def _check_feasible(p_lo, p_hi):
    lo = p_lo.sum(axis=-1)
    hi = p_hi.sum(axis=-1)
    if np.any(lo > 1 + PROB_ATOL) or np.any(hi < 1 - PROB_ATOL) or np.any(p_lo > p_hi):
        raise InfeasibleBoxError(
            f"transition box cannot hold a distribution (sum p_lo up to {lo.max():.3g}, sum p_hi down to {hi.min():.3g})"
        )


def inner_max_transition(p_lo, p_hi, v):
    """Maximizer of ``p @ v`` over ``{p_lo <= p <= p_hi, sum(p) = 1}``.

    Starts from ``p_lo`` and pours the remaining mass into successors in
    decreasing order of ``v`` (ties to the lower index), each up to its
    upper bound.
    """
    p_lo = np.ascontiguousarray(p_lo, dtype=float)
    p_hi = np.ascontiguousarray(p_hi, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    if not (p_lo.shape == p_hi.shape == v.shape) or v.ndim != 1:
        raise IncompatibleShapesError("p_lo, p_hi and v must be 1-d arrays of equal length")
    _check_feasible(p_lo, p_hi)
    out = np.empty_like(v)
    _kernels.greedy_fill(p_lo, p_hi, _kernels.descending_order(v), out)
    return out


def _boxes(conf):
    return (
        np.ascontiguousarray(conf.p_lo, dtype=float),
        np.ascontiguousarray(conf.p_hi, dtype=float),
        np.ascontiguousarray(conf.r_hi, dtype=float),
    )


def extended_bellman(v, conf, alpha=0.9):
    """One application of the aperiodic extended Bellman operator.

    Returns
    -------
    Lv : ndarray of shape (S,)
    policy : ndarray of shape (S,)
        Greedy actions, ties broken toward the lowest index.
    optimistic : tuple
        ``(r_hi, p)`` where ``p[s, a]`` is the inner maximizer for ``v``.
    """
    check_scalar(alpha, "alpha", lo=0, hi=1, lo_open=True)
    p_lo, p_hi, r_hi = _boxes(conf)
    v = np.ascontiguousarray(v, dtype=float)
    if v.shape != (r_hi.shape[0],):
        raise IncompatibleShapesError(f"v has shape {v.shape}, expected ({r_hi.shape[0]},)")
    _check_feasible(p_lo, p_hi)
    S, A = r_hi.shape
    out_v = np.empty(S)
    pol = np.empty(S, dtype=np.int64)
    opt_p = np.empty((S, A, S))
    _kernels.bellman_step(v, p_lo, p_hi, r_hi, float(alpha), out_v, pol, opt_p)
    return out_v, pol, (r_hi.copy(), opt_p)


def extended_value_iteration(conf, eps, alpha=0.9, ref=0, max_iter=DEFAULT_MAX_ITER, recenter=True):
    """Near-optimal gain of the most optimistic member of ``conf``.

    Iterates the extended operator, re-centering at ``ref`` after every
    step, until the span of successive differences is at most ``eps``.
    The gain is the midpoint of the final difference and lies within
    ``eps / 2`` of the optimistic optimum.

    Raises
    ------
    NonConvergenceError
        After ``max_iter`` applications; ``last_span`` is attached.
    """
    check_scalar(eps, "eps", lo=0, lo_open=True)
    check_scalar(alpha, "alpha", lo=0, hi=1, lo_open=True)
    ref = check_index(ref, conf.n_states, "ref")
    p_lo, p_hi, r_hi = _boxes(conf)
    _check_feasible(p_lo, p_hi)
    g, h, pol, opt_p, n, converged, last = _kernels.evi_loop(
        p_lo, p_hi, r_hi, float(eps), float(alpha), ref, int(max_iter), bool(recenter)
    )
    if not converged:
        raise NonConvergenceError("extended value iteration did not converge", n, last)
    return EviResult(
        g=float(g),
        h=h,
        policy=StationaryPolicy.deterministic(pol),
        optimistic_r=r_hi.copy(),
        optimistic_p=opt_p,
        iterations=int(n),
    )


class ExtendedValueIteration(BaseEstimator):
    """Estimator wrapper: ``fit`` on a :class:`ConfidenceModel`, ``predict`` actions."""

    def __init__(self, eps=1e-6, alpha=0.9, ref=0, max_iter=DEFAULT_MAX_ITER):
        self.eps = eps
        self.alpha = alpha
        self.ref = ref
        self.max_iter = max_iter

    def fit(self, conf, y=None):
        res = extended_value_iteration(conf, self.eps, self.alpha, self.ref, self.max_iter)
        self.gain_ = res.g
        self.bias_ = res.h
        self.policy_ = res.policy
        self.optimistic_r_ = res.optimistic_r
        self.optimistic_p_ = res.optimistic_p
        self.n_iter_ = res.iterations
        return self

    def predict(self, states):
        if not hasattr(self, "policy_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit before predict")
        return self.policy_.table[np.asarray(states, dtype=np.int64)]
