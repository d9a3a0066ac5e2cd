"""Command-line entry point: ``evcoord <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import sessions
from .baselines import bau_schedule, heuristic_schedule
from .config import RunConfig, load_config, with_overrides
from .costs import dump_profiles
from .environment import InfeasibleAction
from .evaluation import (
    DemandViolation,
    RandomPolicy,
    bau_policy,
    episode_load,
    evaluate_networks,
    increasing_windows,
    normalized_load,
    optimal_loads,
    rollout,
    rolling_windows,
    run_experiment_credit,
    run_experiment_observability,
    write_report,
)
from .oracle import check_schedule, solve_optimal
from .qlearn import MdpConfig, build_experience, fqi, sample_trajectories

logger = logging.getLogger("evcoord")


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output file or directory")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--episodes", type=Path, help="episodes as JSON lines")
    p.add_argument("--iterations", type=int, help="FQI iterations")
    p.add_argument("--trajectories", type=int, help="random trajectories per training episode")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evcoord", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("generate", help="write synthetic episodes as JSON lines")
    _common(p)
    p.add_argument("--n-episodes", type=int)

    p = sub.add_parser("ingest", help="convert a transaction CSV to episodes")
    _common(p)
    p.add_argument("csv", type=Path)
    p.add_argument("--stations", type=int, help="keep the k busiest stations (default N_max)")
    p.add_argument("--charger-kw", type=float)

    p = sub.add_parser("oracle", help="optimal profiles and L_opt per episode")
    _common(p)

    p = sub.add_parser("baseline", help="BAU and heuristic loads per episode")
    _common(p)

    p = sub.add_parser("train", help="train one MDP formulation on one split")
    _common(p)
    p.add_argument("--repr", choices=("matrix", "vector"), default="vector")
    p.add_argument("--scaling", choices=("local", "global"), default="local")
    p.add_argument("--cost", choices=("quadratic", "linear-avg", "linear-med"), default="quadratic")
    p.add_argument("--E", type=int, default=1)
    p.add_argument("--train", default="0:90", help="training episode positions a:b")
    p.add_argument("--test", default="90:120", help="test episode positions c:d")

    p = sub.add_parser("experiment", help="run a full experiment")
    _common(p)
    p.add_argument("which", choices=("obs", "credit"))

    p = sub.add_parser("validate", help="check dataset and policy invariants")
    _common(p)
    p.add_argument("--random-rollouts", type=int, default=3)
    return parser


def _config(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        raise CliError("missing-file", str(exc)) from exc
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CliError("invalid-config", str(exc)) from exc
    return with_overrides(cfg, seed=args.seed, iterations=args.iterations,
                          trajectories=args.trajectories)


def _episodes(args, cfg: RunConfig, required: bool = True) -> list[sessions.Episode]:
    if args.episodes is None:
        if required:
            raise CliError("usage", "--episodes is required")
        return sessions.generate_synthetic(cfg.slot, cfg.n_episodes, cfg.generator, cfg.seed)
    if not args.episodes.exists():
        raise CliError("missing-file", f"{args.episodes} does not exist")
    try:
        return sessions.load_episodes(args.episodes, cfg.slot)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError("invalid-data", f"{args.episodes}: {exc}") from exc


def _out_file(out: Path | None, default_name: str) -> Path | None:
    if out is None:
        return None
    if out.suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
        return out
    out.mkdir(parents=True, exist_ok=True)
    return out / default_name


def cmd_generate(args) -> None:
    cfg = _config(args)
    n = args.n_episodes or cfg.n_episodes
    eps = sessions.generate_synthetic(cfg.slot, n, cfg.generator, cfg.seed)
    path = _out_file(args.out, "episodes.jsonl")
    if path is None:
        for ep in eps:
            print(json.dumps(sessions.episode_to_dict(ep), separators=(",", ":")))
    else:
        sessions.dump_episodes(eps, path)
        print(f"wrote {len(eps)} episodes to {path}")


def cmd_ingest(args) -> None:
    cfg = _config(args)
    if not args.csv.exists():
        raise CliError("missing-file", f"{args.csv} does not exist")
    try:
        rows, rejected = sessions.read_transactions_csv(args.csv)
    except ValueError as exc:
        raise CliError("invalid-data", str(exc)) from exc
    keep = sessions.select_busiest_stations(rows, args.stations or cfg.slot.n_max)
    rows = [r for r in rows if r.station_id in keep]
    eps = sessions.discretize(rows, cfg.slot, args.charger_kw or cfg.charger_kw)
    path = _out_file(args.out, "episodes.jsonl")
    if path is None:
        for ep in eps:
            print(json.dumps(sessions.episode_to_dict(ep), separators=(",", ":")))
    else:
        sessions.dump_episodes(eps, path)
        print(f"wrote {len(eps)} episodes to {path} ({rejected} rejected rows)")


def cmd_oracle(args) -> None:
    cfg = _config(args)
    eps = _episodes(args, cfg)
    profiles = []
    for ep in eps:
        _, prof, l_opt = solve_optimal(ep)
        profiles.append(prof)
        print(f"episode {ep.episode_id} L_opt = {l_opt}")
    path = _out_file(args.out, "profiles.jsonl")
    if path is not None:
        dump_profiles(profiles, path)


def cmd_baseline(args) -> None:
    cfg = _config(args)
    eps = _episodes(args, cfg)
    print("episode_id,L_opt,L_bau,L_heur,norm_bau,norm_heur")
    for ep in eps:
        l_opt = solve_optimal(ep)[2]
        l_bau, l_heur = bau_schedule(ep)[2], heuristic_schedule(ep)[2]
        print(f"{ep.episode_id},{l_opt},{l_bau},{l_heur},"
              f"{normalized_load(l_bau, l_opt):.6f},{normalized_load(l_heur, l_opt):.6f}")


def _positions(spec: str) -> slice:
    try:
        a, b = (int(x) for x in spec.split(":"))
    except ValueError as exc:
        raise CliError("usage", f"expected a:b, got {spec!r}") from exc
    return slice(a, b)


def cmd_train(args) -> None:
    cfg = _config(args)
    eps = _episodes(args, cfg, required=False)
    train, test = eps[_positions(args.train)], eps[_positions(args.test)]
    if not train or not test:
        raise CliError("usage", "empty train or test range")
    try:
        mdp = MdpConfig(args.repr, args.scaling, args.cost, args.E)
    except ValueError as exc:
        raise CliError("usage", str(exc)) from exc
    history = order = None
    if mdp.cost != "quadratic":
        history, _ = optimal_loads(eps)
        order = [ep.episode_id for ep in eps]
    F = build_experience(sample_trajectories(train, cfg.fqi.trajectories_per_episode, cfg.fqi.seed),
                         mdp, history, order)
    result = fqi(F, cfg.fqi)
    _, l_opt = optimal_loads(test)
    loads = evaluate_networks(result, test, l_opt)
    for k, row in enumerate(loads, start=1):
        print(f"iteration {k}: mean normalized load {row.mean():.4f} "
              f"(median {np.median(row):.4f}, {result.seconds[k - 1]:.2f}s)")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        for k, net in enumerate(result, start=1):
            net.save(args.out / f"{mdp.label}_iter{k:02d}.json")


def cmd_experiment(args) -> None:
    cfg = _config(args)
    eps = _episodes(args, cfg, required=False)
    w = cfg.windows
    if args.which == "obs":
        splits = increasing_windows([e.episode_id for e in eps], w["increasing_step"], 30,
                                    w["increasing_max_train"])
    else:
        order = [e.episode_id for e in sessions.weekday_filter(eps)]
        splits = rolling_windows(order, w["rolling_train"], w["rolling_test"], w["rolling_stride"])
    if w.get("max_splits"):
        splits = splits[:w["max_splits"]]
    if not splits:
        raise CliError("invalid-data", f"{len(eps)} episodes are too few for the {args.which} windows")
    if args.which == "obs":
        report = run_experiment_observability(eps, cfg.fqi, splits, jobs=args.jobs)
    else:
        report = run_experiment_credit(eps, cfg.fqi, cfg.E_values, splits, jobs=args.jobs)
    report.config["run"] = cfg.to_dict()
    root = write_report(report, args.out or Path("results"))
    for policy in report.policies():
        loads = report.pooled(policy)
        print(f"{policy}: median normalized load {np.median(loads):.4f} over {len(loads)} episodes")
    print(f"report written to {root}")


def cmd_validate(args) -> None:
    cfg = _config(args)
    eps = _episodes(args, cfg)
    problems = []
    for ep in eps:
        try:
            ep.validate()
            sched, prof, l_opt = solve_optimal(ep)
            check_schedule(ep, sched)
            for fn in (bau_schedule, heuristic_schedule):
                s, _, l = fn(ep)
                check_schedule(ep, s)
                if l < l_opt:
                    problems.append(f"episode {ep.episode_id}: {fn.__name__} beats the oracle")
            if episode_load(rollout(bau_policy, ep)) != episode_load(bau_schedule(ep)[1]):
                problems.append(f"episode {ep.episode_id}: BAU rollout differs from BAU schedule")
            for k in range(args.random_rollouts):
                prof_r = rollout(RandomPolicy(cfg.seed + k), ep)
                if episode_load(prof_r) < l_opt:
                    problems.append(f"episode {ep.episode_id}: random policy beats the oracle")
        except (ValueError, DemandViolation, InfeasibleAction, RuntimeError) as exc:
            problems.append(f"episode {ep.episode_id}: {exc}")
    for p in problems:
        print(p)
    if problems:
        raise CliError("invariant", f"{len(problems)} violation(s) in {len(eps)} episodes")
    print(f"ok: {len(eps)} episodes, no violations")


COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "oracle": cmd_oracle,
    "baseline": cmd_baseline,
    "train": cmd_train,
    "experiment": cmd_experiment,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except CliError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2 if exc.kind == "usage" else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
