"""Metrics, significance testing, validation windows and experiment runners."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .baselines import bau_schedule, heuristic_schedule
from .costs import PowerProfile
from .environment import ParkState, flex_counts, initial_state, is_terminal, step, violations
from .oracle import Schedule, solve_optimal
from .qlearn import (
    EXPERIENCE_SETS,
    FqiConfig,
    GreedyPolicy,
    MdpConfig,
    build_experience,
    fqi,
    input_width,
    sample_trajectories,
)
from .sessions import Episode, episode_to_dict, weekday_filter

logger = logging.getLogger(__name__)

Policy = Callable[[ParkState], np.ndarray]


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def episode_load(profile: PowerProfile | Sequence[float]) -> float:
    power = profile.power if isinstance(profile, PowerProfile) else profile
    return float(np.sum(np.square(np.asarray(power, dtype=float))))


def normalized_load(l_pi: float, l_opt: float) -> float:
    """``l_pi / l_opt``; an empty episode (both zero) counts as optimal."""
    if l_opt == 0:
        if l_pi == 0:
            return 1.0
        raise ZeroDivisionError("optimal load is zero but the policy load is not")
    return l_pi / l_opt


class DemandViolation(RuntimeError):
    pass


def rollout(policy: Policy | Schedule, episode: Episode) -> PowerProfile:
    """Power profile of ``policy`` on ``episode``.

    A :class:`Schedule` is replayed as is; a callable is queried for an
    action in every slot and simulated in the car park.
    """
    s_max = episode.config.s_max
    if isinstance(policy, Schedule):
        return PowerProfile(episode.episode_id, tuple(policy.load(s_max)))
    park = initial_state(episode)
    power = []
    while park.t < s_max:
        bad = violations(park)
        if bad:
            raise DemandViolation("; ".join(bad))
        park, p = step(park, policy(park))
        power.append(p)
    if not is_terminal(park):
        raise DemandViolation(f"episode {episode.episode_id} ended with connected EVs")
    return PowerProfile(episode.episode_id, tuple(power))


def bau_policy(park: ParkState) -> np.ndarray:
    """Charge every connected EV."""
    return flex_counts(park)


class RandomPolicy:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, park: ParkState) -> np.ndarray:
        n = flex_counts(park)
        u = np.array([self.rng.integers(c + 1) for c in n])
        u[0] = n[0]
        return u


# --------------------------------------------------------------------------
# Wilcoxon signed-rank test
# --------------------------------------------------------------------------

EXACT_MAX_N = 12
MIN_NONZERO = 5


def signed_rank_null(ranks: Sequence[float]) -> dict[float, float]:
    """Null distribution of the positive-rank sum by enumerating all sign patterns."""
    ranks = np.asarray(ranks, dtype=float)
    n = len(ranks)
    signs = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(float)
    sums = np.round(signs @ ranks, 9)
    values, counts = np.unique(sums, return_counts=True)
    return dict(zip(values.tolist(), (counts / 2**n).tolist()))


def wilcoxon_signed_rank(
    pairs: Iterable[tuple[float, float]] | None = None,
    b: Sequence[float] | None = None,
    *,
    a: Sequence[float] | None = None,
    method: str = "auto",
) -> float:
    """Two-sided p-value of the Wilcoxon signed-rank test.

    Accepts ``pairs`` of ``(a, b)`` or two equal-length sequences. Zero
    differences are dropped and tied magnitudes share their average rank.
    The null distribution is enumerated exactly for up to 12 non-zero
    differences; beyond that (or with ``method="approx"``) a normal
    approximation with tie and continuity corrections is used.
    """
    if b is not None:
        x, y = np.asarray(pairs if a is None else a, dtype=float), np.asarray(b, dtype=float)
    else:
        arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
        x, y = arr[:, 0], arr[:, 1]
    d = x - y
    d = d[d != 0]
    n = len(d)
    if n < MIN_NONZERO:
        raise ValueError(f"need at least {MIN_NONZERO} non-zero differences, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if method == "exact" or (method == "auto" and n <= EXACT_MAX_N):
        if n > 20:
            raise ValueError("exact enumeration limited to 20 differences")
        null = signed_rank_null(ranks)
        w = round(w_plus, 9)
        lower = sum(p for v, p in null.items() if v <= w)
        upper = sum(p for v, p in null.items() if v >= w)
        return min(1.0, 2.0 * min(lower, upper))

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def pairwise_pvalues(loads: Mapping[str, Sequence[float]]) -> dict[tuple[str, str], float]:
    """Wilcoxon p-value for every pair of policies (NaN when undefined)."""
    out = {}
    for p, q in itertools.combinations(loads, 2):
        try:
            out[(p, q)] = wilcoxon_signed_rank(a=loads[p], b=loads[q])
        except ValueError:
            out[(p, q)] = float("nan")
    return out


# --------------------------------------------------------------------------
# Validation windows
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationSplit:
    train: tuple[int, ...]
    test: tuple[int, ...]
    label: str

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise ValueError("train and test overlap")


def _label(start: int, n_train: int, n_test: int) -> str:
    a, b = start + 1, start + n_train
    return f"B{a}-{b}_B{b + 1}-{b + n_test}"


def increasing_windows(
    episodes: int | Sequence[int],
    step_size: int = 30,
    test_size: int = 30,
    max_train: int = 270,
) -> list[ValidationSplit]:
    """Train on the first 30, 60, ... episodes and test on the next 30."""
    ids = list(range(episodes)) if isinstance(episodes, int) else list(episodes)
    splits = []
    for n_train in range(step_size, max_train + 1, step_size):
        if n_train + test_size > len(ids):
            break
        splits.append(ValidationSplit(tuple(ids[:n_train]),
                                      tuple(ids[n_train:n_train + test_size]),
                                      _label(0, n_train, test_size)))
    return splits


def rolling_windows(
    episodes: Sequence[int] | Sequence[Episode],
    train_size: int = 90,
    test_size: int = 30,
    stride: int = 30,
) -> list[ValidationSplit]:
    """Fixed-size train/test windows advancing by ``stride`` over the given ordering."""
    ids = [e.episode_id if isinstance(e, Episode) else int(e) for e in episodes]
    splits = []
    for start in range(0, len(ids) - train_size - test_size + 1, stride):
        splits.append(ValidationSplit(tuple(ids[start:start + train_size]),
                                      tuple(ids[start + train_size:start + train_size + test_size]),
                                      _label(start, train_size, test_size)))
    return splits


def iterations_to_converge(curve: Sequence[float], tol: float = 0.05) -> int:
    """First iteration (1-based) from which the curve stays within ``tol`` of its final value."""
    curve = np.asarray(curve, dtype=float)
    final = curve[-1]
    inside = np.abs(curve - final) <= tol * abs(final)
    k = len(curve)
    while k > 0 and inside[k - 1]:
        k -= 1
    return k + 1


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    policy: str
    split: str
    episode_ids: tuple[int, ...]
    normalized_loads: np.ndarray              # final policy, one per test episode
    iteration_loads: np.ndarray | None = None  # (iterations, episodes)
    train_seconds: list[float] = field(default_factory=list)
    input_width: int | None = None

    @property
    def curve(self) -> np.ndarray:
        if self.iteration_loads is None:
            return np.asarray([self.normalized_loads.mean()])
        return self.iteration_loads.mean(axis=1)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.train_seconds))


@dataclass
class ExperimentReport:
    name: str
    runs: dict[str, dict[str, RunResult]]          # split -> policy -> result
    pvalues: dict[str, dict[tuple[str, str], float]]
    config: dict

    def policies(self) -> list[str]:
        seen = []
        for by_policy in self.runs.values():
            seen.extend(p for p in by_policy if p not in seen)
        return seen

    def pooled(self, policy: str) -> np.ndarray:
        return np.concatenate([r[policy].normalized_loads for r in self.runs.values() if policy in r])

    def pooled_curve(self, policy: str) -> np.ndarray:
        stacks = [r[policy].iteration_loads for r in self.runs.values() if policy in r]
        return np.concatenate(stacks, axis=1).mean(axis=1)


def optimal_loads(episodes: Iterable[Episode]) -> tuple[dict[int, PowerProfile], dict[int, int]]:
    profiles, loads = {}, {}
    for ep in episodes:
        _, prof, l_opt = solve_optimal(ep)
        profiles[ep.episode_id] = prof
        loads[ep.episode_id] = l_opt
    return profiles, loads


def _baseline_runs(split: str, test: Sequence[Episode], l_opt: Mapping[int, int]) -> dict[str, RunResult]:
    ids = tuple(ep.episode_id for ep in test)
    out = {}
    for name, fn in (("BAU", bau_schedule), ("Heur", heuristic_schedule)):
        loads = np.array([normalized_load(fn(ep)[2], l_opt[ep.episode_id]) for ep in test])
        out[name] = RunResult(name, split, ids, loads)
    return out


def evaluate_networks(result, test: Sequence[Episode], l_opt: Mapping[int, int]) -> np.ndarray:
    """Normalized load of every FQI iterate on every test episode."""
    out = np.empty((len(result), len(test)))
    for k, net in enumerate(result):
        pol = GreedyPolicy(net, result.mdp)
        for j, ep in enumerate(test):
            out[k, j] = normalized_load(episode_load(rollout(pol, ep)), l_opt[ep.episode_id])
    return out


def _train_and_evaluate(task) -> RunResult:
    mdp, split_label, train, test, l_opt, history, order, fqi_config, seed = task
    transitions = sample_trajectories(train, fqi_config.trajectories_per_episode, seed)
    F = build_experience(transitions, mdp, history, order)
    result = fqi(F, fqi_config)
    loads = evaluate_networks(result, test, l_opt)
    return RunResult(mdp.label, split_label, tuple(ep.episode_id for ep in test), loads[-1],
                     loads, list(result.seconds), input_width(mdp.representation, train[0].config.s_max))


def _map(fn, tasks: list, jobs: int | None):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _split_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def _run(name, episodes, splits, mdps, fqi_config, history, order, jobs) -> ExperimentReport:
    by_id = {ep.episode_id: ep for ep in episodes}
    needed = {i for s in splits for i in s.test}
    _, l_opt = optimal_loads(by_id[i] for i in sorted(needed))

    tasks, index = [], []
    for k, split in enumerate(splits):
        train = [by_id[i] for i in split.train]
        test = [by_id[i] for i in split.test]
        seed = _split_seed(fqi_config.seed, k)
        for mdp in mdps:
            tasks.append((mdp, split.label, train, test, l_opt, history, order, fqi_config, seed))
            index.append(split.label)
    results = _map(_train_and_evaluate, tasks, jobs)

    runs: dict[str, dict[str, RunResult]] = {}
    for split in splits:
        test = [by_id[i] for i in split.test]
        runs[split.label] = _baseline_runs(split.label, test, l_opt)
    for label, res in zip(index, results):
        runs[label][res.policy] = res
    pvalues = {
        label: pairwise_pvalues({p: r.normalized_loads for p, r in by_policy.items()})
        for label, by_policy in runs.items()
    }
    config = {
        "experiment": name,
        "fqi": fqi_config.to_dict(),
        "slot": episodes[0].config.to_dict() if episodes else {},
        "mdps": [vars(m) | {"label": m.label} for m in mdps],
        "splits": [{"label": s.label, "train": list(s.train), "test": list(s.test)} for s in splits],
        "data_sha256": data_digest(episodes),
    }
    return ExperimentReport(name, runs, pvalues, config)


def run_experiment_observability(
    episodes: Sequence[Episode],
    fqi_config: FqiConfig = FqiConfig(),
    splits: Sequence[ValidationSplit] | None = None,
    jobs: int | None = 1,
) -> ExperimentReport:
    """Train RL_ml, RL_vl, RL_mg and RL_vg (quadratic cost) on increasing windows."""
    if splits is None:
        if len(episodes) < 60:
            raise ValueError("observability experiment needs at least 60 episodes")
        splits = increasing_windows([ep.episode_id for ep in episodes])
    mdps = [EXPERIENCE_SETS[k] for k in ("F1", "F2", "F3", "F4")]
    return _run("obs", list(episodes), list(splits), mdps, fqi_config, None, None, jobs)


def run_experiment_credit(
    episodes: Sequence[Episode],
    fqi_config: FqiConfig = FqiConfig(),
    E_values: Sequence[int] = (1, 5, 10),
    splits: Sequence[ValidationSplit] | None = None,
    history: Mapping[int, PowerProfile] | None = None,
    jobs: int | None = 1,
) -> ExperimentReport:
    """Train RL_q and the linear-cost policies for every E on rolling weekday windows.

    Linear costs use the optimal profiles of the preceding weekdays.
    """
    weekdays = weekday_filter(episodes)
    order = [ep.episode_id for ep in weekdays]
    if splits is None:
        splits = rolling_windows(order)
        if not splits:
            raise ValueError(f"{len(order)} weekday episodes are too few for a rolling window")
    if history is None:
        history, _ = optimal_loads(weekdays)
    mdps = [EXPERIENCE_SETS["F5"]]
    for E in E_values:
        mdps.append(MdpConfig("vector", "global", "linear-avg", E))
        mdps.append(MdpConfig("vector", "global", "linear-med", E))
    return _run("credit", weekdays, list(splits), mdps, fqi_config, history, order, jobs)


def data_digest(episodes: Iterable[Episode]) -> str:
    h = hashlib.sha256()
    for ep in episodes:
        h.update(json.dumps(episode_to_dict(ep), sort_keys=True).encode())
    return h.hexdigest()


# --------------------------------------------------------------------------
# Report output
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_report(report: ExperimentReport, out_dir: str | Path) -> Path:
    """Write ``<out>/<experiment>/<split>/<policy>.csv`` plus p-values, timings and a manifest.

    Policy CSVs and p-values hold deterministic values only; wall-clock
    timings go to ``timing.json``.
    """
    root = Path(out_dir) / report.name
    for split, by_policy in report.runs.items():
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        timing = {}
        for policy, res in by_policy.items():
            with open(d / f"{policy}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["episode_id", "normalized_load", "iteration"])
                if res.iteration_loads is None:
                    for eid, v in zip(res.episode_ids, res.normalized_loads):
                        w.writerow([eid, _fmt(v), 0])
                else:
                    for k, row in enumerate(res.iteration_loads, start=1):
                        for eid, v in zip(res.episode_ids, row):
                            w.writerow([eid, _fmt(v), k])
            if res.train_seconds:
                timing[policy] = {"iteration_seconds": res.train_seconds,
                                  "total_seconds": res.total_seconds,
                                  "input_width": res.input_width}
        with open(d / "pvalues.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy_a", "policy_b", "p_value"])
            for (p, q), v in report.pvalues[split].items():
                w.writerow([p, q, _fmt(v)])
        (d / "timing.json").write_text(json.dumps(timing, indent=2))
    (root / "manifest.json").write_text(json.dumps(report.config, indent=2, sort_keys=True))
    return root
