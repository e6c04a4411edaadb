"""Optimistic learning agents with episode doubling and scheduled restarts.

An agent is used through a strict alternation::

    agent.begin(S, A, r_max)
    for t in range(T):
        decision = agent.act(s)
        r, s_next = env.step(...)
        agent.observe(s, decision.action, r, s_next)

Hyperparameters live on the constructor so agents compose with
``sklearn.base.clone`` / ``get_params``; everything learned is set by
:meth:`VBUCRL.begin` and carries a trailing underscore.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .evi import RADIUS_KINDS, SufficientStats, build_confidence, extended_value_iteration
from .exceptions import ProtocolError
from .mdp import DEFAULT_MAX_ITER, span
from .validation import check_random_state, check_scalar

RESTART_KINDS = ("none", "variation-schedule")
EPSILON_CLOCKS = ("phase", "global")
BASELINES = ("vb-ucrl", "vb-ucrl-norestart", "ucrl2-hoeffding", "ucrl2-hoeffding-restart")


def _ceil(x):
    # i^2 / V^2 is often an integer up to rounding noise; don't round it up a whole step
    c = math.ceil(x)
    return c - 1 if c - x > 1 - 1e-12 * max(1.0, x) else c


def restart_schedule(V_r, V_p, delta):
    """Yield ``(theta_i, delta_i)`` for phases ``i = 1, 2, ...``.

    ``theta_i = ceil(i^2 / (2 V_r + V_p)^2)`` and ``delta_i = delta / (2 tau^2)``
    with ``tau`` the global step at which phase ``i`` starts.  A zero budget
    gives one phase of unbounded length.
    """
    check_scalar(V_r, "V_r", lo=0)
    check_scalar(V_p, "V_p", lo=0)
    V = 2.0 * V_r + V_p
    if V == 0:
        yield math.inf, delta / 2.0
        return
    tau, i = 1, 1
    while True:
        theta = max(1, _ceil(i * i / (V * V)))
        yield theta, delta / (2.0 * tau * tau)
        tau += theta
        i += 1


def episode_bound(S, A, t):
    """Upper bound on the episode count after ``t >= SA`` steps."""
    return S * A * math.log2(8.0 * t / (S * A))


def phase_bound(V, t):
    """Strict upper bound on the number of phases started by step ``t``."""
    return 1.0 + (3.0 * V * V * t) ** (1.0 / 3.0)


@dataclass(slots=True, frozen=True)
class AgentDecision:
    action: int
    episode_started: bool
    phase_started: bool
    gain: float
    span_h: float
    evi_iterations: int


class VBUCRL(BaseEstimator):
    """Variation-aware optimistic agent for drifting tabular MDPs.

    Parameters
    ----------
    delta : float
        Confidence level in (0, 1).
    alpha : float
        Aperiodicity coefficient of the planning operator, in (0, 1].
    v_hat_r, v_hat_p : float or None
        Inflation added to every reward and transition box.  ``None`` takes
        the budgets handed to :meth:`begin` (the true ones when run under the
        harness), or 0 if none are given.
    radius_kind : {"bernstein", "hoeffding"}
    restart : {"variation-schedule", "none"}
    budget_r, budget_p : float or None
        Budgets driving the restart schedule; ``None`` resolves like the
        inflation terms.
    epsilon_clock : {"phase", "global"}
        Whether the planning accuracy ``r_max / t_k`` counts ``t_k`` from
        the start of the current phase or of the whole run.
    max_evi_iter : int
    verbose : bool
        Keep a list of episode/phase events in ``events_``.
    random_state : int, Generator or None
        Only used when the current policy is randomized.
    """

    def __init__(
        self,
        delta=0.1,
        alpha=0.9,
        v_hat_r=None,
        v_hat_p=None,
        radius_kind="bernstein",
        restart="variation-schedule",
        budget_r=None,
        budget_p=None,
        epsilon_clock="phase",
        max_evi_iter=DEFAULT_MAX_ITER,
        verbose=False,
        random_state=None,
    ):
        self.delta = delta
        self.alpha = alpha
        self.v_hat_r = v_hat_r
        self.v_hat_p = v_hat_p
        self.radius_kind = radius_kind
        self.restart = restart
        self.budget_r = budget_r
        self.budget_p = budget_p
        self.epsilon_clock = epsilon_clock
        self.max_evi_iter = max_evi_iter
        self.verbose = verbose
        self.random_state = random_state

    # -- setup -------------------------------------------------------------

    def _check_params(self):
        check_scalar(self.delta, "delta", lo=0, hi=1, lo_open=True, hi_open=True)
        check_scalar(self.alpha, "alpha", lo=0, hi=1, lo_open=True)
        for name in ("v_hat_r", "v_hat_p", "budget_r", "budget_p"):
            if getattr(self, name) is not None:
                check_scalar(getattr(self, name), name, lo=0)
        if self.radius_kind not in RADIUS_KINDS:
            raise ValueError(f"radius_kind must be one of {RADIUS_KINDS}, got {self.radius_kind!r}")
        if self.restart not in RESTART_KINDS:
            raise ValueError(f"restart must be one of {RESTART_KINDS}, got {self.restart!r}")
        if self.epsilon_clock not in EPSILON_CLOCKS:
            raise ValueError(f"epsilon_clock must be one of {EPSILON_CLOCKS}, got {self.epsilon_clock!r}")

    def begin(self, n_states, n_actions, r_max=1.0, budgets=None):
        """Reset all learned state for a fresh run."""
        self._check_params()
        S = check_scalar(n_states, "n_states", lo=1, integer=True)
        A = check_scalar(n_actions, "n_actions", lo=1, integer=True)
        self.n_states_, self.n_actions_ = S, A
        self.r_max_ = check_scalar(r_max, "r_max", lo=0, lo_open=True)
        known_r, known_p = budgets if budgets is not None else (0.0, 0.0)
        pick = lambda value, default: float(default if value is None else value)  # noqa: E731
        self.v_hat_r_ = pick(self.v_hat_r, known_r)
        self.v_hat_p_ = pick(self.v_hat_p, known_p)
        self.budget_r_ = pick(self.budget_r, known_r)
        self.budget_p_ = pick(self.budget_p, known_p)
        self.schedule_V_ = 2.0 * self.budget_r_ + self.budget_p_
        if self.restart == "variation-schedule":
            self._schedule = restart_schedule(self.budget_r_, self.budget_p_, self.delta)
        else:
            self._schedule = None
        self._rng = check_random_state(self.random_state)

        self.t_ = 0
        self.phase_ = 0
        self.phase_start_ = 1
        self.phase_len_ = 0
        self.phase_delta_ = float(self.delta)
        self.phase_t_ = 0
        self.episode_ = 0
        self.phase_episodes_ = 0
        self.episode_start_ = 1
        self.gain_ = float("nan")
        self.span_h_ = float("nan")
        self.evi_iterations_ = 0
        self.confidence_ = None
        self.policy_ = None
        self.events_ = []
        self._pending = None
        self._need_episode = True
        return self

    # -- phases and episodes -------------------------------------------------

    def _start_phase(self):
        self.phase_ += 1
        self.phase_start_ = self.t_ + 1
        if self._schedule is None:
            self.phase_len_, self.phase_delta_ = math.inf, float(self.delta)
        else:
            self.phase_len_, self.phase_delta_ = next(self._schedule)
        self.phase_t_ = 0
        self.phase_episodes_ = 0
        S, A = self.n_states_, self.n_actions_
        self.stats_ = SufficientStats(S, A)
        self._nu = [[0] * A for _ in range(S)]
        self._samples = []
        self._need_episode = True
        if self.verbose:
            self._event("phase")

    def _start_episode(self):
        stats = self.stats_
        if self._samples:
            stats.fold_samples(self._samples)
        S, A = self.n_states_, self.n_actions_
        if self.epsilon_clock == "phase":
            t_k = self.phase_t_ + 1
        else:
            t_k = self.t_ + 1
        self.episode_start_ = t_k
        conf = build_confidence(
            stats, self.phase_delta_, self.v_hat_r_, self.v_hat_p_, self.r_max_, self.radius_kind
        )
        res = extended_value_iteration(conf, self.r_max_ / t_k, self.alpha, 0, self.max_evi_iter)
        self.confidence_ = conf
        self.policy_ = res.policy
        self._actions = res.policy.table.tolist()
        self.gain_ = res.g
        self.span_h_ = span(res.h)
        self.evi_iterations_ = res.iterations
        self._nu = [[0] * A for _ in range(S)]
        self._thresh = np.maximum(1, stats.N).tolist()
        self._samples = []
        self.episode_ += 1
        self.phase_episodes_ += 1
        self._need_episode = False
        if self.verbose:
            self._event("episode")

    def _event(self, kind):
        self.events_.append(
            {
                "t": self.t_ + 1,
                "event": kind,
                "episode": self.episode_,
                "phase": self.phase_,
                "gain": self.gain_,
                "span_h": self.span_h_,
                "evi_iterations": self.evi_iterations_,
            }
        )

    # -- interaction ---------------------------------------------------------

    def act(self, s):
        """Action for the observed state; replans first if an episode just ended."""
        if not hasattr(self, "t_"):
            raise ProtocolError("call begin() before act()")
        if self._pending is not None:
            raise ProtocolError("act() called twice without observe()")
        if not (0 <= s < self.n_states_):
            raise ValueError(f"state {s!r} out of range")
        phase_started = episode_started = False
        if self.phase_t_ >= self.phase_len_:
            self._start_phase()
            phase_started = True
        if self._need_episode:
            self._start_episode()
            episode_started = True
        if self.policy_.kind == "deterministic":
            a = self._actions[s]
        else:
            a = self.policy_.action(s, self._rng)
        self._pending = (s, a)
        return AgentDecision(a, episode_started, phase_started, self.gain_, self.span_h_, self.evi_iterations_)

    def observe(self, s, a, r, s_next):
        """Record the transition produced by the last action."""
        if self._pending is None or self._pending != (s, a):
            raise ProtocolError(f"observe({s}, {a}) does not match the pending act() {self._pending}")
        if not (0.0 <= r <= self.r_max_):
            raise ValueError(f"reward {r!r} outside [0, {self.r_max_}]")
        if not (0 <= s_next < self.n_states_):
            raise ValueError(f"next state {s_next!r} out of range")
        self._pending = None
        row = self._nu[s]
        row[a] += 1
        self._samples.append((s, a, r, s_next))
        self.t_ += 1
        self.phase_t_ += 1
        if row[a] >= self._thresh[s][a]:
            self._need_episode = True

    def in_episode_counts(self):
        """``nu_k`` of the running episode as an ``(S, A)`` array."""
        return np.array(self._nu, dtype=np.int64)


def make_baseline(kind, **params):
    """One of the named agent variants, with extra constructor overrides."""
    presets = {
        "vb-ucrl": dict(radius_kind="bernstein", restart="variation-schedule"),
        "vb-ucrl-norestart": dict(radius_kind="bernstein", restart="none"),
        "ucrl2-hoeffding": dict(radius_kind="hoeffding", restart="none"),
        "ucrl2-hoeffding-restart": dict(radius_kind="hoeffding", restart="variation-schedule"),
    }
    if kind not in presets:
        raise ValueError(f"unknown agent kind {kind!r}; expected one of {BASELINES}")
    kw = presets[kind]
    kw.update(params)
    return VBUCRL(**kw)


def agent_from_config(cfg):
    """Build ``(label, agent)`` from a harness agent block.

    Recognized keys: ``algorithm``, ``name``, ``delta``, ``alpha``,
    ``v_hat_r``, ``v_hat_p`` (number, or ``"true"``/null for the realized
    budgets), ``radius_kind``, ``restart`` (bool or kind), ``epsilon_clock``.
    """
    cfg = dict(cfg)
    algorithm = cfg.pop("algorithm", "vb-ucrl")
    label = cfg.pop("name", algorithm)
    params = {}
    for key in ("delta", "alpha", "radius_kind", "epsilon_clock", "budget_r", "budget_p", "max_evi_iter"):
        if key in cfg:
            params[key] = cfg.pop(key)
    for key in ("v_hat_r", "v_hat_p"):
        if key in cfg:
            value = cfg.pop(key)
            params[key] = None if value in (None, "true") else float(value)
    if "restart" in cfg:
        value = cfg.pop("restart")
        if isinstance(value, bool):
            value = "variation-schedule" if value else "none"
        params["restart"] = value
    if cfg:
        raise ValueError(f"unknown agent config keys: {sorted(cfg)}")
    return label, make_baseline(algorithm, **params)
