"""Command line entry point: ``nonstat-rl {run,sweep,validate,oracle}``."""

from __future__ import annotations

import argparse
import functools
import json
import sys
from pathlib import Path

from .agents import agent_from_config
from .envs import load_trace
from .exceptions import NonstatRLError
from .harness import emit, resolve_parallelism, run_episode_loop, sweep
from .mdp import MdpSnapshot, NonStationaryEnv, diameter, finite_horizon_value, optimal_gain, validate_snapshot

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


def load_config(path, seed=None):
    path = Path(path)
    cfg = json.loads(path.read_text())
    missing = {"env", "agents", "T_grid", "seeds"} - set(cfg)
    if missing:
        raise ValueError(f"config is missing keys: {sorted(missing)}")
    if seed is not None:
        cfg["seeds"] = [int(seed)]
    cfg.setdefault("output_dir", "results")
    cfg.setdefault("parallelism", 1)
    cfg.setdefault("verbose", False)
    out = Path(cfg["output_dir"])
    if not out.is_absolute():
        cfg["output_dir"] = str(path.parent / out)
    cfg["_base_dir"] = str(path.parent)
    return cfg


def _env_source(cfg):
    """``T -> env`` for the configured trace; relative paths follow the config file."""
    return functools.partial(load_trace, cfg["env"], cfg["_base_dir"])


def _agents(cfg):
    agents = []
    for block in cfg["agents"]:
        label, agent = agent_from_config(block)
        agent.set_params(verbose=bool(cfg["verbose"]))
        agents.append((label, agent))
    return agents


def cmd_run(args):
    cfg = load_config(args.config, args.seed)
    T = max(cfg["T_grid"])
    env = _env_source(cfg)(T)
    seed = cfg["seeds"][0]
    status = EXIT_OK
    for label, agent in _agents(cfg):
        rec = run_episode_loop(env, agent, T, seed, label)
        emit(rec, cfg["output_dir"], verbose=cfg["verbose"])
        print(f"{label}: T={rec.T} seed={seed} regret={rec.regret:.3f} episodes={rec.episodes} phases={rec.phases}")
        for v in rec.violations:
            print(f"  VIOLATION {v}", file=sys.stderr)
            status = EXIT_VIOLATION
    return status


def cmd_sweep(args):
    cfg = load_config(args.config, args.seed)
    summary = sweep(
        _env_source(cfg), _agents(cfg), cfg["T_grid"], cfg["seeds"], resolve_parallelism(cfg["parallelism"])
    )
    emit(summary, cfg["output_dir"], verbose=cfg["verbose"])
    for row in summary.rows():
        print(f"{row['algorithm']}: T={row['T']} mean={row['mean_regret']:.3f} std={row['std_regret']:.3f}")
    for alg in summary.algorithms:
        slope, resid = summary.slope(alg)
        print(f"{alg}: slope={'n/a' if slope is None else f'{slope:.3f}'}")
    for fail in summary.failures:
        print(f"  FAILED {fail}", file=sys.stderr)
    for v in summary.violations:
        print(f"  VIOLATION {v}", file=sys.stderr)
    if summary.failures:
        return EXIT_ERROR
    return EXIT_VIOLATION if summary.violations else EXIT_OK


def cmd_validate(args):
    data = json.loads(Path(args.mdp).read_text())
    report = validate_snapshot(data)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_oracle(args):
    path = Path(args.mdp)
    data = json.loads(path.read_text())
    if args.op == "finite-horizon":
        if "explicit" in data or "generator" in data:
            env = load_trace(data, base_dir=path.parent, T=args.horizon)
        else:
            if args.horizon is None:
                raise ValueError("--horizon is required for a single snapshot")
            env = NonStationaryEnv.stationary(MdpSnapshot.from_dict(data), args.horizon, args.s1)
        v = finite_horizon_value(env, all_states=True)
        out = {"T": env.T, "s1": env.s1, "value": float(v[env.s1]), "values": v.tolist()}
    else:
        m = MdpSnapshot.from_dict(data)
        if args.op == "gain":
            g, h, pol = optimal_gain(m, args.eps * m.r_max)
            out = {"gain": g, "bias": h.tolist(), "policy": pol.table.tolist(), "eps": args.eps * m.r_max}
        else:
            out = {"diameter": diameter(m)}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="nonstat-rl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one run per agent at the largest T of the grid")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="all agents x T grid x seeds, with slope fits")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a snapshot file and list violations")
    p.add_argument("--mdp", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("oracle", help="exact quantities of a snapshot or trace")
    p.add_argument("--mdp", required=True)
    p.add_argument("--op", required=True, choices=("gain", "diameter", "finite-horizon"))
    p.add_argument("--horizon", type=int, help="T for finite-horizon on a single snapshot")
    p.add_argument("--s1", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-8, help="gain accuracy in units of r_max")
    p.add_argument("--seed", type=int, help="accepted for symmetry; oracles are deterministic")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NonstatRLError, ValueError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
