"""Reproducible non-stationary traces and the classic tabular testbeds."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .exceptions import IncompatibleShapesError, InvalidSnapshotError, NotCommunicatingError
from .mdp import MdpSnapshot, NonStationaryEnv, is_communicating, variation_budgets
from .validation import check_random_state, check_scalar

GENERATOR_KINDS = ("stationary", "abrupt-switch", "linear-drift", "random-garnet-switch")


def chain_testbed(S, r_max=1.0, small_reward=None, large_reward=None, reward_dist="bernoulli-scaled"):
    """RiverSwim-style chain with ``S`` states and two actions.

    Action 0 moves left deterministically and pays ``small_reward`` (default
    ``0.05 * r_max``) when taken in state 0.  Action 1 moves right with
    probability 0.6, stays with 0.35 and slips left with 0.05; taken in the
    last state it pays ``large_reward`` (default ``r_max``).  At the ends the
    blocked moves turn into staying put.
    """
    S = check_scalar(S, "S", lo=2, integer=True)
    small = 0.05 * r_max if small_reward is None else small_reward
    large = r_max if large_reward is None else large_reward
    P = np.zeros((S, 2, S))
    r = np.zeros((S, 2))
    for s in range(S):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, min(s + 1, S - 1)] += 0.6
        P[s, 1, s] += 0.35
        P[s, 1, max(s - 1, 0)] += 0.05
    r[0, 0] = small
    r[S - 1, 1] = large
    return MdpSnapshot(r, P, r_max, reward_dist)


def random_garnet(S, A, gamma, rng=None, r_max=1.0, reward_dist="bernoulli-scaled", max_tries=1000):
    """Random communicating MDP with exactly ``gamma`` successors per pair.

    Supports are uniform subsets of size ``gamma``, weights are Dirichlet(1)
    and mean rewards uniform on ``[0, r_max]``.  Draws that are not
    communicating are rejected.
    """
    S = check_scalar(S, "S", lo=1, integer=True)
    A = check_scalar(A, "A", lo=1, integer=True)
    gamma = check_scalar(gamma, "gamma", lo=1, hi=S, integer=True)
    rng = check_random_state(rng)
    for _ in range(max_tries):
        P = np.zeros((S, A, S))
        for s in range(S):
            for a in range(A):
                support = rng.choice(S, size=gamma, replace=False)
                w = rng.dirichlet(np.ones(gamma))
                # keep the support size exact even if a weight underflows
                w = np.maximum(w, 1e-6)
                P[s, a, support] = w / w.sum()
        r = rng.uniform(0.0, r_max, size=(S, A))
        m = MdpSnapshot(r, P, r_max, reward_dist)
        if is_communicating(m):
            return m
    raise NotCommunicatingError(f"no communicating garnet found in {max_tries} draws (S={S}, A={A}, gamma={gamma})")


def mix(m1, m2, lam_r, lam_p=None):
    """Convex combination ``(1 - lam) m1 + lam m2``, separately for rewards and transitions."""
    lam_p = lam_r if lam_p is None else lam_p
    return MdpSnapshot(
        (1 - lam_r) * m1.r_mean + lam_r * m2.r_mean,
        (1 - lam_p) * m1.P + lam_p * m2.P,
        m1.r_max,
        m1.reward_dist,
    )


def _snapshot_from_spec(spec, base_dir=None):
    if isinstance(spec, MdpSnapshot):
        return spec
    if "testbed" in spec:
        spec = dict(spec)
        name = spec.pop("testbed")
        if name != "chain":
            raise ValueError(f"unknown testbed {name!r}")
        return chain_testbed(**spec)
    if "garnet" in spec:
        g = dict(spec["garnet"])
        seed = g.pop("seed", None)
        return random_garnet(rng=np.random.default_rng(seed), **g)
    if "path" in spec:
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return MdpSnapshot.load_json(path)
    return MdpSnapshot.from_dict(spec)


@dataclass
class GeneratorSpec:
    """Recipe for a non-stationary trace.

    ``base`` holds snapshot specs: a snapshot dict, ``{"testbed": "chain",
    ...}``, ``{"garnet": {...}}`` or ``{"path": ...}``.  Switch steps come
    from ``switch_times`` (1-based) or from ``switch_fractions`` of ``T``.
    """

    kind: str = "stationary"
    T: int = 1000
    base: list = field(default_factory=list)
    switch_times: list | None = None
    switch_fractions: list | None = None
    drift_start: int | None = None
    drift_end: int | None = None
    target_budgets: list | None = None
    n_states: int = 6
    n_actions: int = 2
    gamma: int = 2
    seed: int | None = None
    s1: int = 0
    r_max: float = 1.0

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"kind must be one of {GENERATOR_KINDS}, got {self.kind!r}")
        check_scalar(self.T, "T", lo=1, integer=True)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items()}

    def with_T(self, T):
        d = self.to_dict()
        d["T"] = int(T)
        return GeneratorSpec(**d)

    def resolved_switch_times(self, n_switches=None):
        if self.switch_times is not None:
            return [int(t) for t in self.switch_times]
        if self.switch_fractions is not None:
            return [int(round(f * self.T)) + 1 for f in self.switch_fractions]
        if n_switches:
            # evenly spaced by default
            return [int(round((j + 1) * self.T / (n_switches + 1))) + 1 for j in range(n_switches)]
        return []


def _scale_to_targets(snaps, schedule, targets, s1):
    env = NonStationaryEnv(tuple(snaps), schedule, s1)
    V_r, V_p = variation_budgets(env)
    t_r, t_p = (float(x) for x in targets)
    ref = snaps[0]

    def factor(target, realized, what):
        if realized == 0:
            if target != 0:
                raise ValueError(f"cannot reach a {what} budget of {target} from a trace with none")
            return 0.0
        return target / realized

    c_r, c_p = factor(t_r, V_r, "reward"), factor(t_p, V_p, "transition")
    out = []
    for m in snaps:
        try:
            out.append(
                MdpSnapshot(
                    ref.r_mean + c_r * (m.r_mean - ref.r_mean), ref.P + c_p * (m.P - ref.P), ref.r_max, ref.reward_dist
                )
            )
        except InvalidSnapshotError as err:
            raise ValueError(f"target budgets {targets} push a snapshot out of range: {err}") from err
    return out


def generate(spec, base_dir=None) -> NonStationaryEnv:
    """Build the trace described by ``spec`` (a :class:`GeneratorSpec` or dict).

    Relative ``{"path": ...}`` bases resolve against ``base_dir``.
    """
    if isinstance(spec, dict):
        spec = GeneratorSpec.from_dict(spec)
    T = spec.T
    rng = np.random.default_rng(spec.seed)

    if spec.kind == "random-garnet-switch":
        times = spec.resolved_switch_times(n_switches=1)
        snaps = [
            random_garnet(spec.n_states, spec.n_actions, spec.gamma, rng, spec.r_max) for _ in range(len(times) + 1)
        ]
    else:
        snaps = [_snapshot_from_spec(b, base_dir) for b in spec.base]
        if not snaps:
            raise ValueError(f"{spec.kind} generator needs at least one base snapshot")
        times = None
    ref = snaps[0]
    for m in snaps:
        if m.shape != ref.shape or m.r_max != ref.r_max:
            raise IncompatibleShapesError("base snapshots have different shapes or r_max")
        if not is_communicating(m):
            raise NotCommunicatingError("base snapshot is not communicating")

    if spec.kind == "stationary":
        snaps, schedule = snaps[:1], np.zeros(T, dtype=np.int64)
    elif spec.kind in ("abrupt-switch", "random-garnet-switch"):
        times = times if times is not None else spec.resolved_switch_times(n_switches=len(snaps) - 1)
        if len(times) != len(snaps) - 1:
            raise ValueError(f"{len(snaps)} snapshots need {len(snaps) - 1} switch times, got {len(times)}")
        schedule = NonStationaryEnv.piecewise(snaps, times, T).schedule
    else:  # linear-drift
        if len(snaps) != 2:
            raise ValueError("linear drift needs exactly two endpoint snapshots")
        t0 = 1 if spec.drift_start is None else int(spec.drift_start)
        t1 = T if spec.drift_end is None else int(spec.drift_end)
        if not 1 <= t0 < t1 <= T:
            raise ValueError(f"drift window [{t0}, {t1}] must satisfy 1 <= start < end <= T")
        m1, m2 = snaps
        lam = [(t - t0) / (t1 - t0) for t in range(t0, t1 + 1)]
        snaps = [mix(m1, m2, x) for x in lam]
        schedule = np.concatenate(
            (np.zeros(t0 - 1, dtype=np.int64), np.arange(len(lam)), np.full(T - t1, len(lam) - 1))
        )

    if spec.target_budgets is not None:
        snaps = _scale_to_targets(snaps, schedule, spec.target_budgets, spec.s1)
    return NonStationaryEnv(tuple(snaps), schedule, spec.s1, name=spec.kind)


def load_trace(obj, base_dir=None, T=None):
    """Environment from the trace file layout: ``explicit``, ``generator`` or a bare spec."""
    if isinstance(obj, (str, Path)):
        path = Path(obj)
        base_dir = path.parent if base_dir is None else base_dir
        obj = json.loads(path.read_text())
    if "explicit" in obj:
        env = NonStationaryEnv.from_explicit(obj["explicit"], obj.get("s1", 0), base_dir)
        return env.truncated(T) if T is not None else env
    spec = obj.get("generator", obj)
    spec = GeneratorSpec.from_dict(spec)
    if T is not None:
        spec = spec.with_T(T)
    return generate(spec, base_dir)
