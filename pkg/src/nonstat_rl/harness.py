"""Run agents against traces, measure dynamic regret and aggregate sweeps."""

from __future__ import annotations

import bisect
import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import clone

from .agents import episode_bound, phase_bound
from .envs import GeneratorSpec, generate
from .exceptions import NonstatRLError, RunError
from .mdp import NonStationaryEnv, finite_horizon_value, variation_budgets

STEP_FIELDS = ("t", "s", "a", "r", "episode", "phase")
SUMMARY_FIELDS = ("algorithm", "T", "seed", "regret", "episodes", "phases", "runtime_ms")
SWEEP_FIELDS = ("algorithm", "T", "mean_regret", "std_regret", "n_seeds")
SLOPE_FIELDS = ("algorithm", "slope", "residual")
EVENT_FIELDS = ("t", "event", "episode", "phase", "gain", "span_h", "evi_iterations")
THREADS_ENV = "NONSTAT_RL_THREADS"


@dataclass
class RunRecord:
    algorithm: str
    T: int
    seed: int
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    episode: np.ndarray
    phase: np.ndarray
    total_reward: float
    v_star: float
    regret: float
    episodes: int
    phases: int
    config_hash: str = ""
    violations: list = field(default_factory=list)
    runtime_ms: float = 0.0
    events: list = field(default_factory=list)

    @property
    def t(self):
        return np.arange(1, len(self.s) + 1)

    @property
    def ok(self):
        return not self.violations

    def summary_row(self):
        return {
            "algorithm": self.algorithm,
            "T": self.T,
            "seed": self.seed,
            "regret": self.regret,
            "episodes": self.episodes,
            "phases": self.phases,
            "runtime_ms": self.runtime_ms,
        }

    def without_steps(self):
        empty = np.zeros(0, dtype=np.int64)
        return RunRecord(
            self.algorithm, self.T, self.seed, empty, empty, np.zeros(0), empty, empty,
            self.total_reward, self.v_star, self.regret, self.episodes, self.phases,
            self.config_hash, list(self.violations), self.runtime_ms, list(self.events),
        )  # fmt: skip


def _env_digest(env):
    h = hashlib.sha256()
    for m in env.snapshots:
        h.update(m.r_mean.tobytes())
        h.update(m.P.tobytes())
        h.update(f"{m.r_max}|{m.reward_dist}".encode())
    h.update(env.schedule.tobytes())
    h.update(str(env.s1).encode())
    return h.hexdigest()


def config_hash(env, agent, T, seed):
    params = {k: v for k, v in agent.get_params().items() if k != "random_state"}
    payload = json.dumps(
        {"env": _env_digest(env), "agent": type(agent).__name__, "params": params, "T": T, "seed": seed},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class _Sampler:
    """List-based copy of :func:`nonstat_rl.mdp.sample_step` for the hot loop."""

    def __init__(self, m):
        self.cdf = m._cdf.tolist()
        self.r = m.r_mean.tolist()
        self.r_max = float(m.r_max)
        self.bernoulli = m.reward_dist == "bernoulli-scaled"

    def __call__(self, s, a, u_next, u_rew):
        s_next = bisect.bisect_right(self.cdf[s][a], u_next)
        r = self.r[s][a]
        if self.bernoulli:
            reward = self.r_max if u_rew * self.r_max < r else 0.0
        else:
            w = min(r, self.r_max - r)
            reward = r - w + 2 * w * u_rew
        return reward, s_next


def run_episode_loop(env, agent, T=None, seed=0, label=None, v_star=None, keep_steps=True):
    """Simulate ``T`` steps of ``agent`` on ``env`` and score the run.

    One :class:`numpy.random.SeedSequence` built from ``seed`` is split into
    an environment stream and an agent stream.  ``agent`` is cloned, so the
    caller's instance is never mutated.  Episode and phase count bounds are
    checked online; breaches land in ``violations`` rather than raising.
    """
    T = env.T if T is None else int(T)
    if T > env.T:
        raise ValueError(f"trace has {env.T} steps, asked for {T}")
    if T < env.T:
        env = env.truncated(T)
    label = label or type(agent).__name__
    agent = clone(agent)
    env_ss, agent_ss = np.random.SeedSequence(seed).spawn(2)
    agent.set_params(random_state=np.random.default_rng(agent_ss))
    uniforms = np.random.default_rng(env_ss).random((T, 2)).tolist()

    tic = time.perf_counter()
    budgets = variation_budgets(env)
    if v_star is None:
        v_star = finite_horizon_value(env)
    S, A = env.S, env.A
    agent.begin(S, A, env.r_max, budgets=budgets)
    restarting = getattr(agent, "restart", "none") != "none"
    V = getattr(agent, "schedule_V_", 0.0)

    samplers = [_Sampler(m) for m in env.snapshots]
    sched = env.schedule.tolist()
    ss, aa, rr, kk, ii = [], [], [], [], []
    violations = []

    def check_episodes(t_local, k_local, where):
        if t_local >= S * A and k_local > episode_bound(S, A, t_local):
            violations.append(
                f"episode bound: {k_local} episodes after {t_local} steps of phase {agent.phase_} "
                f"(bound {episode_bound(S, A, t_local):.2f}) at {where}"
            )

    s = env.s1
    t = 0
    try:
        for t in range(1, T + 1):
            d = agent.act(s)
            a = d.action
            if d.phase_started and restarting and V > 0 and not agent.phase_ < phase_bound(V, t):
                violations.append(f"phase bound: phase {agent.phase_} started at t={t} (bound {phase_bound(V, t):.3f})")
            if d.episode_started:
                # the count only moves here and the bound increases with t
                check_episodes(agent.phase_t_ + 1, agent.phase_episodes_, f"t={t}")
            u = uniforms[t - 1]
            r, s_next = samplers[sched[t - 1]](s, a, u[0], u[1])
            agent.observe(s, a, r, s_next)
            if keep_steps:
                ss.append(s)
                aa.append(a)
                rr.append(r)
                kk.append(agent.episode_)
                ii.append(agent.phase_)
            else:
                rr.append(r)
            s = s_next
    except NonstatRLError as err:
        raise RunError(f"{type(err).__name__}: {err}", t, getattr(agent, "episode_", None), getattr(agent, "phase_", None)) from err
    except ValueError as err:
        raise RunError(f"ValueError: {err}", t, getattr(agent, "episode_", None), getattr(agent, "phase_", None)) from err
    check_episodes(agent.phase_t_, agent.phase_episodes_, "end of run")
    runtime = (time.perf_counter() - tic) * 1e3

    total = math.fsum(rr)
    as_int = lambda x: np.array(x, dtype=np.int64)  # noqa: E731
    return RunRecord(
        algorithm=label,
        T=T,
        seed=int(seed),
        s=as_int(ss),
        a=as_int(aa),
        r=np.array(rr if keep_steps else [], dtype=float),
        episode=as_int(kk),
        phase=as_int(ii),
        total_reward=total,
        v_star=float(v_star),
        regret=float(v_star) - total,
        episodes=agent.episode_,
        phases=agent.phase_,
        config_hash=config_hash(env, agent, T, seed),
        violations=violations,
        runtime_ms=runtime,
        events=list(agent.events_),
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def fit_loglog_slope(T_values, means):
    """Least-squares slope of ``ln(mean)`` against ``ln(T)``.

    Returns ``(slope, residual)`` with the residual the root mean square of
    the log-space misfit, or ``(None, None)`` when fewer than four points
    are given or some mean is not positive.
    """
    x = np.asarray(T_values, dtype=float)
    y = np.asarray(means, dtype=float)
    if x.size < 4 or np.any(y <= 0) or np.any(x <= 0):
        return None, None
    lx, ly = np.log(x), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    return float(slope), float(np.sqrt(np.mean(resid**2)))


@dataclass
class SweepSummary:
    """Per-(algorithm, T) regret statistics over seeds plus slope fits."""

    T_grid: list
    seeds: list
    regrets: dict  # algorithm -> {T: [regret per seed]}
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def algorithms(self):
        return list(self.regrets)

    @property
    def complete(self):
        return not self.failures and all(
            len(self.regrets[alg].get(T, [])) == len(self.seeds) for alg in self.regrets for T in self.T_grid
        )

    def mean(self, alg, T):
        return float(np.mean(self.regrets[alg][T]))

    def std(self, alg, T):
        vals = self.regrets[alg][T]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else float("nan")

    def slope(self, alg):
        Ts = [T for T in self.T_grid if self.regrets[alg].get(T)]
        return fit_loglog_slope(Ts, [self.mean(alg, T) for T in Ts])

    def rows(self):
        for alg in self.regrets:
            for T in self.T_grid:
                vals = self.regrets[alg].get(T, [])
                if vals:
                    yield {
                        "algorithm": alg,
                        "T": T,
                        "mean_regret": self.mean(alg, T),
                        "std_regret": self.std(alg, T),
                        "n_seeds": len(vals),
                    }

    @property
    def violations(self):
        return [(r.algorithm, r.T, r.seed, v) for r in self.records for v in r.violations]


def _env_for(env_source, T):
    if isinstance(env_source, NonStationaryEnv):
        return env_source.truncated(T) if env_source.T > T else env_source
    if isinstance(env_source, dict):
        env_source = GeneratorSpec.from_dict(env_source)
    if isinstance(env_source, GeneratorSpec):
        return generate(env_source.with_T(T))
    return env_source(T)


def _run_task(args):
    env, label, agent, T, seed, v_star, keep_steps = args
    try:
        rec = run_episode_loop(env, agent, T, seed, label, v_star, keep_steps)
        return rec, None
    except RunError as err:
        return None, (label, T, seed, str(err))


def resolve_parallelism(requested=1):
    requested = max(1, int(requested or 1))
    cap = os.environ.get(THREADS_ENV)
    if cap:
        requested = min(requested, max(1, int(cap)))
    return requested


def sweep(env_source, agents, T_grid, seeds, parallelism=1, keep_steps=False):
    """Run every (agent, T, seed) combination and aggregate the regrets.

    ``env_source`` is a :class:`GeneratorSpec` (or its dict), a fixed
    :class:`NonStationaryEnv` that is truncated per ``T``, or a callable
    ``T -> env``.  ``agents`` is a list of ``(label, agent)`` pairs.  Results
    do not depend on ``parallelism``.  Failed runs are listed in
    ``failures`` and never silently dropped.
    """
    T_grid = sorted(int(T) for T in T_grid)
    seeds = [int(s) for s in seeds]
    if not T_grid or not seeds or not agents:
        raise ValueError("sweep needs a nonempty T grid, seed list and agent list")
    envs = {T: _env_for(env_source, T) for T in T_grid}
    v_stars = {T: finite_horizon_value(envs[T]) for T in T_grid}
    tasks = [
        (envs[T], label, agent, T, seed, v_stars[T], keep_steps)
        for label, agent in agents
        for T in T_grid
        for seed in seeds
    ]
    workers = resolve_parallelism(parallelism)
    if workers == 1:
        results = [_run_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))

    regrets = {label: {T: [] for T in T_grid} for label, _ in agents}
    records, failures = [], []
    for rec, fail in results:
        if fail is not None:
            failures.append(fail)
            continue
        regrets[rec.algorithm][rec.T].append(rec.regret)
        records.append(rec)
    return SweepSummary(T_grid, seeds, regrets, records, failures)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _write_csv(path, fields, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def write_steps_csv(record, path):
    rows = (
        {"t": t, "s": s, "a": a, "r": float(r), "episode": k, "phase": i}
        for t, s, a, r, k, i in zip(
            range(1, len(record.s) + 1), record.s.tolist(), record.a.tolist(), record.r.tolist(),
            record.episode.tolist(), record.phase.tolist(),
        )
    )  # fmt: skip
    return _write_csv(path, STEP_FIELDS, rows)


def write_summary_csv(records, path):
    return _write_csv(path, SUMMARY_FIELDS, (rec.summary_row() for rec in records))


def write_sweep_csv(summary, path):
    return _write_csv(path, SWEEP_FIELDS, summary.rows())


def write_slope_csv(summary, path):
    rows = []
    for alg in summary.algorithms:
        slope, resid = summary.slope(alg)
        rows.append({"algorithm": alg, "slope": "" if slope is None else slope, "residual": "" if resid is None else resid})
    return _write_csv(path, SLOPE_FIELDS, rows)


def write_plot_data(summary, out_dir):
    """One ``x,y,err`` file per algorithm: T, mean regret, std over seeds."""
    paths = []
    for alg in summary.algorithms:
        rows = ({"x": r["T"], "y": r["mean_regret"], "err": r["std_regret"]} for r in summary.rows() if r["algorithm"] == alg)
        paths.append(_write_csv(Path(out_dir) / f"plot_{_slug(alg)}.csv", ("x", "y", "err"), rows))
    return paths


def write_events_csv(record, path):
    return _write_csv(path, EVENT_FIELDS, record.events)


def _slug(text):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in str(text))


def emit(obj, out_dir, verbose=False):
    """Write a :class:`RunRecord` or :class:`SweepSummary` to ``out_dir``.

    Returns the list of files written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(obj, RunRecord):
        stem = f"{_slug(obj.algorithm)}_T{obj.T}_seed{obj.seed}"
        paths = [write_steps_csv(obj, out_dir / f"steps_{stem}.csv"), write_summary_csv([obj], out_dir / f"summary_{stem}.csv")]
        if verbose:
            paths.append(write_events_csv(obj, out_dir / f"events_{stem}.csv"))
        return paths
    if isinstance(obj, SweepSummary):
        paths = [
            write_summary_csv(obj.records, out_dir / "summary.csv"),
            write_sweep_csv(obj, out_dir / "sweep.csv"),
            write_slope_csv(obj, out_dir / "slope.csv"),
        ]
        paths += write_plot_data(obj, out_dir)
        if verbose:
            for rec in obj.records:
                stem = f"{_slug(rec.algorithm)}_T{rec.T}_seed{rec.seed}"
                paths.append(write_events_csv(rec, out_dir / f"events_{stem}.csv"))
        return paths
    raise TypeError(f"cannot emit {type(obj).__name__}")


def read_steps_csv(path):
    """Parse a steps file back into arrays keyed by column name."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {k: np.array([int(row[k]) for row in rows], dtype=np.int64) for k in STEP_FIELDS if k != "r"}
    out["r"] = np.array([float(row["r"]) for row in rows], dtype=float)
    return out


def read_summary_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    conv = {"T": int, "seed": int, "regret": float, "episodes": int, "phases": int, "runtime_ms": float}
    return [{k: conv.get(k, str)(v) for k, v in row.items()} for row in rows]
