"""Ground-truth tabular MDPs and the exact solvers used as oracles.

Everything here works on the average-reward criterion for communicating
MDPs with ``S`` states and ``A`` actions in every state.  Snapshots are
immutable; solvers are pure functions.

Conventions
-----------
``r_mean`` has shape ``(S, A)`` and ``P`` has shape ``(S, A, S)`` with
``P[s, a, s']`` the probability of moving from ``s`` to ``s'`` under ``a``.
Steps of a non-stationary trace are numbered ``t = 1..T``.
"""

from __future__ import annotations

import json
from dataclasses import InitVar, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator

from .exceptions import (
    IncompatibleShapesError,
    InvalidSnapshotError,
    NonConvergenceError,
    NotCommunicatingError,
    SingularSystemError,
)
from .validation import (
    PROB_ATOL,
    RENORMALIZE_ATOL,
    check_index,
    check_random_state,
    check_scalar,
    frozen,
)

REWARD_DISTS = ("bernoulli-scaled", "uniform-interval")
DEFAULT_MAX_ITER = 10**6


# ---------------------------------------------------------------------------
# Snapshot validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    coords: tuple
    value: float
    message: str

    def __str__(self):
        return f"{self.kind} at {self.coords}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def to_dict(self):
        return {
            "ok": self.ok,
            "violations": [
                {"kind": v.kind, "coords": list(v.coords), "value": v.value, "message": v.message}
                for v in self.violations
            ],
        }


def _collect_violations(r_mean, P, r_max, reward_dist):
    out = []
    if reward_dist not in REWARD_DISTS:
        out.append(Violation("reward-dist", (), float("nan"), f"unknown reward_dist {reward_dist!r}"))
    if not (np.isfinite(r_max) and r_max > 0):
        out.append(Violation("r-max", (), float(r_max), "r_max must be positive and finite"))
    if r_mean.ndim != 2 or r_mean.shape[0] < 1 or r_mean.shape[1] < 1:
        out.append(Violation("shape", (), float("nan"), f"r_mean must be S x A with S, A >= 1, got {r_mean.shape}"))
        return out
    S, A = r_mean.shape
    if P.shape != (S, A, S):
        out.append(Violation("shape", (), float("nan"), f"P must have shape {(S, A, S)}, got {P.shape}"))
        return out

    for s, a in zip(*np.nonzero(~np.isfinite(r_mean))):
        out.append(Violation("reward-range", (int(s), int(a)), float(r_mean[s, a]), "non-finite mean reward"))
    bad_r = (r_mean < 0) | (r_mean > r_max)
    for s, a in zip(*np.nonzero(bad_r)):
        out.append(
            Violation("reward-range", (int(s), int(a)), float(r_mean[s, a]), f"mean reward outside [0, {r_max}]")
        )
    bad_p = ~np.isfinite(P) | (P < -PROB_ATOL) | (P > 1 + PROB_ATOL)
    for s, a, y in zip(*np.nonzero(bad_p)):
        out.append(
            Violation("probability-range", (int(s), int(a), int(y)), float(P[s, a, y]), "entry outside [0, 1]")
        )
    sums = P.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1) > PROB_ATOL)):
        out.append(Violation("row-sum", (int(s), int(a)), float(sums[s, a]), "transition row does not sum to 1"))
    return out


def _renormalize(P):
    sums = P.sum(axis=-1, keepdims=True)
    near = np.abs(sums - 1) <= RENORMALIZE_ATOL
    return np.where(near, P / np.where(near, sums, 1.0), P)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MdpSnapshot:
    """One time step's true MDP.

    Rows of ``P`` within 1e-9 of summing to one are renormalized on
    construction.  With ``check=True`` (the default) any remaining invariant
    violation raises :class:`InvalidSnapshotError`; pass ``check=False`` to
    build a possibly-invalid snapshot for :func:`validate_snapshot`.
    """

    r_mean: np.ndarray
    P: np.ndarray
    r_max: float = 1.0
    reward_dist: str = "bernoulli-scaled"
    check: InitVar[bool] = True

    def __post_init__(self, check):
        r_mean = np.array(self.r_mean, dtype=float)
        P = _renormalize(np.array(self.P, dtype=float))
        object.__setattr__(self, "r_mean", frozen(r_mean))
        object.__setattr__(self, "P", frozen(P))
        object.__setattr__(self, "r_max", float(self.r_max))
        if check:
            report = validate_snapshot(self)
            if not report.ok:
                raise InvalidSnapshotError(report)

    @property
    def S(self):
        return self.r_mean.shape[0]

    @property
    def A(self):
        return self.r_mean.shape[1]

    @property
    def shape(self):
        return self.S, self.A

    @cached_property
    def support_sizes(self):
        """``Gamma(s, a)``: number of successors with positive probability."""
        return frozen((self.P > 0).sum(axis=2))

    @property
    def gamma(self):
        return int(self.support_sizes.max())

    @cached_property
    def _cdf(self):
        cdf = np.cumsum(self.P, axis=2)
        # pin the tail at 1 from the last reachable successor on
        last = self.S - 1 - np.argmax(self.P[:, :, ::-1] > 0, axis=2)
        idx = np.arange(self.S)
        cdf[idx[None, None, :] >= last[:, :, None]] = 1.0
        return frozen(cdf)

    def reward_bounds(self):
        """Support ``(lo, hi)`` of each reward distribution."""
        if self.reward_dist == "bernoulli-scaled":
            lo = np.zeros_like(self.r_mean)
            hi = np.where(self.r_mean > 0, self.r_max, 0.0)
            return lo, hi
        w = np.minimum(self.r_mean, self.r_max - self.r_mean)
        return self.r_mean - w, self.r_mean + w

    def reward_variance(self):
        if self.reward_dist == "bernoulli-scaled":
            return self.r_mean * (self.r_max - self.r_mean)
        w = np.minimum(self.r_mean, self.r_max - self.r_mean)
        return (2 * w) ** 2 / 12

    def replace(self, **changes):
        d = {"r_mean": self.r_mean, "P": self.P, "r_max": self.r_max, "reward_dist": self.reward_dist}
        d.update(changes)
        return MdpSnapshot(**d)

    def to_dict(self):
        return {
            "S": self.S,
            "A": self.A,
            "r_max": self.r_max,
            "reward_dist": self.reward_dist,
            "r_mean": self.r_mean.tolist(),
            "P": self.P.tolist(),
        }

    @classmethod
    def from_dict(cls, d, check=True):
        r_mean = np.array(d["r_mean"], dtype=float)
        P = np.array(d["P"], dtype=float)
        S, A = d.get("S"), d.get("A")
        if (S is not None and r_mean.shape[:1] != (S,)) or (A is not None and r_mean.shape[1:2] != (A,)):
            raise IncompatibleShapesError(f"declared S={S}, A={A} but r_mean has shape {r_mean.shape}")
        return cls(
            r_mean=r_mean,
            P=P,
            r_max=float(d.get("r_max", 1.0)),
            reward_dist=d.get("reward_dist", "bernoulli-scaled"),
            check=check,
        )

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path, check=True):
        return cls.from_dict(json.loads(Path(path).read_text()), check=check)


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """A stationary decision rule.

    ``table`` is an ``(S,)`` integer array for deterministic policies or an
    ``(S, A)`` row-stochastic array for randomized ones.
    """

    table: np.ndarray
    kind: str = "deterministic"

    def __post_init__(self):
        if self.kind == "deterministic":
            table = np.array(self.table, dtype=np.int64)
            if table.ndim != 1:
                raise ValueError("a deterministic policy is an (S,) array of actions")
        elif self.kind == "randomized":
            table = np.array(self.table, dtype=float)
            if table.ndim != 2 or np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1) > PROB_ATOL):
                raise ValueError("a randomized policy is an (S, A) array with rows summing to 1")
        else:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        object.__setattr__(self, "table", frozen(table))

    @classmethod
    def deterministic(cls, actions):
        return cls(np.asarray(actions), "deterministic")

    @classmethod
    def uniform(cls, S, A):
        return cls(np.full((S, A), 1.0 / A), "randomized")

    @property
    def S(self):
        return self.table.shape[0]

    def probabilities(self, A):
        """``(S, A)`` action probabilities."""
        if self.kind == "randomized":
            if self.table.shape[1] != A:
                raise IncompatibleShapesError(f"policy has {self.table.shape[1]} actions, MDP has {A}")
            return self.table
        if np.any(self.table < 0) or np.any(self.table >= A):
            raise ValueError(f"deterministic policy has actions outside [0, {A})")
        out = np.zeros((self.S, A))
        out[np.arange(self.S), self.table] = 1.0
        return out

    def action(self, s, rng=None):
        if self.kind == "deterministic":
            return int(self.table[s])
        rng = check_random_state(rng)
        return int(rng.choice(self.table.shape[1], p=self.table[s]))


@dataclass(frozen=True)
class GainBias:
    g: float
    h: np.ndarray
    reference_state: int = 0


@dataclass(frozen=True, eq=False)
class NonStationaryEnv:
    """A finite trace ``M_1, ..., M_T`` of snapshots.

    Distinct snapshots are stored once in ``snapshots``; ``schedule[t-1]``
    is the index of the snapshot in force at step ``t``.
    """

    snapshots: tuple
    schedule: np.ndarray
    s1: int = 0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if not snaps:
            raise ValueError("an environment needs at least one snapshot")
        ref = snaps[0]
        for m in snaps[1:]:
            if m.shape != ref.shape or m.r_max != ref.r_max:
                raise IncompatibleShapesError(
                    f"snapshot shape/r_max {m.shape}/{m.r_max} differs from {ref.shape}/{ref.r_max}"
                )
        schedule = np.array(self.schedule, dtype=np.int64)
        if schedule.ndim != 1 or schedule.size < 1:
            raise ValueError("schedule must be a nonempty 1-d array")
        if schedule.min() < 0 or schedule.max() >= len(snaps):
            raise ValueError("schedule refers to a snapshot that does not exist")
        object.__setattr__(self, "snapshots", snaps)
        object.__setattr__(self, "schedule", frozen(schedule))
        object.__setattr__(self, "s1", check_index(self.s1, ref.S, "s1"))

    @classmethod
    def stationary(cls, m, T, s1=0):
        return cls((m,), np.zeros(int(T), dtype=np.int64), s1)

    @classmethod
    def piecewise(cls, snapshots, switch_times, T, s1=0):
        """Use ``snapshots[j]`` from step ``switch_times[j-1]`` on (1-based)."""
        switch_times = list(switch_times)
        if len(switch_times) != len(snapshots) - 1:
            raise ValueError("need exactly one switch time per snapshot after the first")
        if any(b <= a for a, b in zip([1] + switch_times, switch_times)) or (switch_times and switch_times[-1] > T):
            raise ValueError("switch times must be strictly increasing within (1, T]")
        schedule = np.zeros(int(T), dtype=np.int64)
        for j, start in enumerate(switch_times, start=1):
            schedule[start - 1 :] = j
        return cls(tuple(snapshots), schedule, s1)

    @property
    def T(self):
        return int(self.schedule.size)

    @property
    def S(self):
        return self.snapshots[0].S

    @property
    def A(self):
        return self.snapshots[0].A

    @property
    def r_max(self):
        return self.snapshots[0].r_max

    def snapshot_at(self, t):
        """Snapshot in force at step ``t`` (1-based)."""
        return self.snapshots[self.schedule[t - 1]]

    def segments(self):
        """Yield ``(start, stop, snapshot)`` for maximal constant runs, 1-based, ``stop`` exclusive."""
        change = np.flatnonzero(np.diff(self.schedule)) + 1
        starts = np.concatenate(([0], change))
        stops = np.concatenate((change, [self.T]))
        for a, b in zip(starts, stops):
            yield int(a) + 1, int(b) + 1, self.snapshots[self.schedule[a]]

    def truncated(self, T):
        return NonStationaryEnv(self.snapshots, self.schedule[:T], self.s1, self.name)

    def concatenate(self, other):
        """Append ``other``; its first step follows this trace's last one."""
        if other.snapshots[0].shape != self.snapshots[0].shape:
            raise IncompatibleShapesError("cannot concatenate traces of different shapes")
        snaps = self.snapshots + other.snapshots
        schedule = np.concatenate((self.schedule, other.schedule + len(self.snapshots)))
        return NonStationaryEnv(snaps, schedule, self.s1, self.name)

    def to_dict(self):
        """Explicit trace format: one entry per constant run."""
        return {
            "explicit": [
                {"snapshot": m.to_dict(), "steps": stop - start} for start, stop, m in self.segments()
            ],
            "s1": self.s1,
        }

    @classmethod
    def from_explicit(cls, entries, s1=0, base_dir=None):
        snaps, schedule = [], []
        for j, entry in enumerate(entries):
            snap = entry["snapshot"]
            if isinstance(snap, str):
                path = Path(snap)
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                m = MdpSnapshot.load_json(path)
            else:
                m = MdpSnapshot.from_dict(snap)
            snaps.append(m)
            schedule.extend([j] * int(entry["steps"]))
        return cls(tuple(snaps), np.array(schedule, dtype=np.int64), s1)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def validate_snapshot(m) -> ValidationReport:
    """Report every invariant violation of ``m`` with its coordinates.

    Accepts an :class:`MdpSnapshot` (typically built with ``check=False``) or
    a dict in the snapshot JSON layout.
    """
    if isinstance(m, dict):
        r_mean = np.asarray(m.get("r_mean"), dtype=float)
        P = _renormalize(np.asarray(m.get("P"), dtype=float))
        r_max = float(m.get("r_max", 1.0))
        dist = m.get("reward_dist", "bernoulli-scaled")
    else:
        r_mean, P, r_max, dist = m.r_mean, m.P, m.r_max, m.reward_dist
    return ValidationReport(tuple(_collect_violations(r_mean, P, r_max, dist)))


def is_communicating(m):
    """True iff the union transition graph is strongly connected."""
    adj = (m.P > 0).any(axis=1)
    n, _ = connected_components(adj, directed=True, connection="strong")
    return n == 1


def policy_matrices(m, policy):
    """``(r_d, P_d)`` of the Markov chain induced by ``policy`` on ``m``."""
    d = policy.probabilities(m.A)
    if d.shape[0] != m.S:
        raise IncompatibleShapesError(f"policy covers {d.shape[0]} states, MDP has {m.S}")
    r_d = np.einsum("sa,sa->s", d, m.r_mean)
    P_d = np.einsum("sa,say->sy", d, m.P)
    return r_d, P_d


def policy_gain_bias(m, policy, ref=0) -> GainBias:
    """Exact gain and bias of a unichain stationary policy.

    Solves ``h + g e = r_d + P_d h`` together with ``h[ref] = 0`` as one
    square linear system in ``(h, g)``.

    Raises
    ------
    SingularSystemError
        If the system is rank deficient, i.e. the induced chain has more
        than one recurrent class.
    """
    ref = check_index(ref, m.S, "ref")
    r_d, P_d = policy_matrices(m, policy)
    S = m.S
    M = np.zeros((S + 1, S + 1))
    M[:S, :S] = np.eye(S) - P_d
    M[:S, S] = 1.0
    M[S, ref] = 1.0
    rhs = np.concatenate((r_d, [0.0]))
    # multichain policies leave a kernel of dimension >= 2 in I - P_d
    if np.linalg.matrix_rank(M) < S + 1:
        raise SingularSystemError("policy evaluation system is singular; the induced chain is multichain")
    sol = np.linalg.solve(M, rhs)
    h, g = sol[:S], float(sol[S])
    h[ref] = 0.0
    residual = np.max(np.abs(r_d + P_d @ h - h - g))
    if residual > 1e-9 * m.r_max:
        raise SingularSystemError(f"policy evaluation is ill-conditioned (residual {residual:.2e})")
    return GainBias(g, h, ref)


def span(v):
    """``max(v) - min(v)``."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("span of an empty vector")
    return float(v.max() - v.min())


def _relative_value_iteration(r, P, eps, alpha, ref, max_iter):
    S = r.shape[0]
    v = np.zeros(S)
    for n in range(1, max_iter + 1):
        q = r + alpha * (P @ v)
        v_new = q.max(axis=1) + (1 - alpha) * v
        diff = v_new - v
        sp = diff.max() - diff.min()
        if sp <= eps:
            g = 0.5 * (diff.max() + diff.min())
            return g, v, np.argmax(q, axis=1), n
        v = v_new - v_new[ref]
    raise NonConvergenceError("relative value iteration did not converge", max_iter, sp)


def optimal_gain(m, eps, alpha=0.9, ref=0, max_iter=DEFAULT_MAX_ITER):
    """Optimal gain by relative value iteration on the aperiodic transform.

    Stops when the span of successive differences drops to ``eps``; the
    returned gain is the midpoint of that difference, so it is within
    ``eps / 2`` of the optimum.

    Returns
    -------
    g : float
    h : ndarray of shape (S,)
        The last iterate, pinned to 0 at ``ref``.
    policy : StationaryPolicy
        Greedy deterministic policy with respect to ``h``.
    """
    check_scalar(eps, "eps", lo=0, lo_open=True)
    check_scalar(alpha, "alpha", lo=0, hi=1, lo_open=True)
    ref = check_index(ref, m.S, "ref")
    g, h, pol, _ = _relative_value_iteration(m.r_mean, m.P, eps, alpha, ref, max_iter)
    return float(g), h, StationaryPolicy.deterministic(pol)


class RelativeValueIteration(BaseEstimator):
    """Estimator wrapper around :func:`optimal_gain`.

    ``fit`` takes an :class:`MdpSnapshot`; ``predict`` maps states to the
    greedy optimal actions.
    """

    def __init__(self, eps=1e-6, alpha=0.9, ref=0, max_iter=DEFAULT_MAX_ITER):
        self.eps = eps
        self.alpha = alpha
        self.ref = ref
        self.max_iter = max_iter

    def fit(self, mdp, y=None):
        check_scalar(self.eps, "eps", lo=0, lo_open=True)
        check_scalar(self.alpha, "alpha", lo=0, hi=1, lo_open=True)
        ref = check_index(self.ref, mdp.S, "ref")
        g, h, pol, n = _relative_value_iteration(mdp.r_mean, mdp.P, self.eps, self.alpha, ref, self.max_iter)
        self.gain_ = float(g)
        self.bias_ = h
        self.policy_ = StationaryPolicy.deterministic(pol)
        self.n_iter_ = n
        self.n_states_ = mdp.S
        return self

    def predict(self, states):
        if not hasattr(self, "policy_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit before predict")
        states = np.asarray(states, dtype=np.int64)
        if np.any(states < 0) or np.any(states >= self.n_states_):
            raise ValueError("state index out of range")
        return self.policy_.table[states]


def hitting_times(m, tol=1e-9, max_iter=DEFAULT_MAX_ITER):
    """Minimal expected hitting times ``tau[target, s]`` for all pairs.

    Value iteration on the shortest-path operator with unit cost per step,
    run for all targets at once.  ``tau[j, j] = 0``.
    """
    if not is_communicating(m):
        raise NotCommunicatingError("MDP is not communicating; some hitting times are infinite")
    S = m.S
    eye = np.eye(S, dtype=bool)
    tau = np.zeros((S, S))
    for n in range(1, max_iter + 1):
        # q[j, s, a] = 1 + sum_y P[s, a, y] tau[j, y]
        q = 1.0 + np.einsum("say,jy->jsa", m.P, tau)
        new = q.min(axis=2)
        new[eye] = 0.0
        delta = np.max(np.abs(new - tau))
        tau = new
        if delta <= tol:
            return tau
    raise NonConvergenceError("shortest-path value iteration did not converge", max_iter, delta)


def diameter(m, tol=1e-9, max_iter=DEFAULT_MAX_ITER):
    """Largest minimal expected hitting time over ordered state pairs."""
    if m.S == 1:
        return 0.0
    tau = hitting_times(m, tol, max_iter)
    return float(tau[~np.eye(m.S, dtype=bool)].max())


def finite_horizon_value(env, all_states=False):
    """Optimal expected ``T``-step total reward by backward induction.

    Returns ``v_1(s1)``, or the whole vector ``v_1`` with ``all_states``.
    """
    v = np.zeros(env.S)
    for t in range(env.T, 0, -1):
        m = env.snapshots[env.schedule[t - 1]]
        v = (m.r_mean + m.P @ v).max(axis=1)
    return v if all_states else float(v[env.s1])


def snapshot_deltas(m1, m2):
    """``(max |dr|, max ||dp||_1)`` between two snapshots."""
    dr = float(np.max(np.abs(m2.r_mean - m1.r_mean)))
    dp = float(np.max(np.abs(m2.P - m1.P).sum(axis=2)))
    return dr, dp


def variation_budgets(env):
    """Realized variation budgets ``(V_r, V_p)`` of a trace."""
    V_r = V_p = 0.0
    sched = env.schedule
    cache = {}
    for t in np.flatnonzero(sched[1:] != sched[:-1]):
        key = (int(sched[t]), int(sched[t + 1]))
        if key not in cache:
            cache[key] = snapshot_deltas(env.snapshots[key[0]], env.snapshots[key[1]])
        dr, dp = cache[key]
        V_r += dr
        V_p += dp
    return V_r, V_p


def sample_step(m, s, a, rng):
    """Draw ``(reward, next_state)`` for one step of ``m``.

    Consumes exactly two uniforms from ``rng`` (transition first, reward
    second), so trajectories are a deterministic function of the generator
    state.
    """
    u_next, u_rew = rng.random(2)
    return _sample_from_uniforms(m, s, a, u_next, u_rew)


def _sample_from_uniforms(m, s, a, u_next, u_rew):
    s_next = int(np.searchsorted(m._cdf[s, a], u_next, side="right"))
    r = m.r_mean[s, a]
    if m.reward_dist == "bernoulli-scaled":
        reward = m.r_max if u_rew * m.r_max < r else 0.0
    else:
        w = min(r, m.r_max - r)
        reward = r - w + 2 * w * u_rew
    return float(reward), s_next
