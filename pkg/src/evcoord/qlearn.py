"""Experience generation, fitted Q-iteration and greedy control.

Experience is collected by rolling out a uniformly random feasible policy
from the first state of each training episode. Raw transitions are shared
by every MDP formulation; the state representation, action scaling and
cost function only enter when an :class:`ExperienceSet` is built.
"""
from __future__ import annotations

import hashlib
import logging
import time
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .costs import InsufficientHistory, PowerProfile, reference_profile
from .environment import (
    ParkState,
    Representation,
    Scaling,
    enumerate_actions,
    flex_counts,
    initial_state,
    matrix_counts,
    matrix_to_flex,
    observe,
    scale,
    step,
)
from .network import QNetwork, TrainConfig, train_network
from .sessions import Episode

logger = logging.getLogger(__name__)

COST_FUNCTIONS = ("quadratic", "linear-avg", "linear-med")


@dataclass(frozen=True)
class MdpConfig:
    representation: Representation = "vector"
    scaling: Scaling = "local"
    cost: str = "quadratic"
    E: int = 1

    def __post_init__(self):
        if self.representation not in ("matrix", "vector"):
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.scaling not in ("local", "global"):
            raise ValueError(f"unknown scaling {self.scaling!r}")
        if self.cost not in COST_FUNCTIONS:
            raise ValueError(f"unknown cost {self.cost!r}")
        if self.E < 1:
            raise ValueError("E must be >= 1")

    @property
    def label(self) -> str:
        if self.cost == "quadratic":
            return f"RL_{self.representation[0]}{self.scaling[0]}"
        return f"RL_{'a' if self.cost == 'linear-avg' else 'm'}_E{self.E}"


EXPERIENCE_SETS = {
    "F1": MdpConfig("matrix", "local", "quadratic"),
    "F2": MdpConfig("vector", "local", "quadratic"),
    "F3": MdpConfig("matrix", "global", "quadratic"),
    "F4": MdpConfig("vector", "global", "quadratic"),
    "F5": MdpConfig("vector", "global", "quadratic"),
    "F6": MdpConfig("vector", "global", "linear-avg"),
    "F7": MdpConfig("vector", "global", "linear-med"),
}


@dataclass
class FqiConfig:
    iterations: int = 12
    trajectories_per_episode: int = 200
    epochs: int = 8
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    huber_delta: float = 1.0
    hidden: tuple[int, ...] = (128, 64)
    action_cap: int = 50_000
    warm_start: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.trajectories_per_episode < 1:
            raise ValueError("trajectories_per_episode must be >= 1")
        self.hidden = tuple(self.hidden)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.huber_delta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# --------------------------------------------------------------------------
# Encoding
# --------------------------------------------------------------------------

def input_width(representation: Representation, s_max: int) -> int:
    return s_max * s_max + s_max + 1 if representation == "matrix" else 2 * s_max + 1


def encode_input(t: int, obs: np.ndarray, action: np.ndarray, s_max: int | None = None) -> np.ndarray:
    """``[t / S_max] + obs (rows concatenated) + scaled action``."""
    obs = np.asarray(obs, dtype=float)
    action = np.asarray(action, dtype=float)
    s_max = len(action) if s_max is None else s_max
    if len(action) != s_max or obs.shape not in ((s_max,), (s_max, s_max)):
        raise ValueError(
            f"observation {obs.shape} and action {action.shape} do not match S_max={s_max}"
        )
    return np.concatenate(([t / s_max], obs.ravel(), action))


def _state_features(t: np.ndarray, obs: np.ndarray, s_max: int) -> np.ndarray:
    obs = obs.reshape(len(obs), -1)
    return np.hstack([(np.asarray(t, dtype=float) / s_max)[:, None], obs])


# --------------------------------------------------------------------------
# Raw transitions
# --------------------------------------------------------------------------

@dataclass
class Transitions:
    """Deduplicated random-policy transitions; ``weight`` counts repeats."""

    s_max: int
    n_max: int
    episode_id: np.ndarray
    t: np.ndarray
    grid: np.ndarray        # (R, S, S) counts at s
    u: np.ndarray           # (R, S) action counts
    power: np.ndarray
    next_grid: np.ndarray   # (R, S, S) counts at s'
    terminal: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def flex(self) -> np.ndarray:
        return _grid_to_flex(self.grid)

    @property
    def next_flex(self) -> np.ndarray:
        return _grid_to_flex(self.next_grid)

    def select(self, mask: np.ndarray) -> "Transitions":
        arrays = {k: getattr(self, k)[mask] for k in
                  ("episode_id", "t", "grid", "u", "power", "next_grid", "terminal", "weight")}
        return Transitions(self.s_max, self.n_max, **arrays)


def _grid_to_flex(grid: np.ndarray) -> np.ndarray:
    s = grid.shape[-1]
    return np.stack([np.trace(grid, offset=-d, axis1=1, axis2=2) for d in range(s)], axis=1)


def decode_action(index: int, n: np.ndarray) -> np.ndarray:
    """Row ``index`` of ``enumerate_actions(n)`` without building the table."""
    u = np.zeros(len(n), dtype=np.int64)
    u[0] = n[0]
    for d in range(len(n) - 1, 0, -1):
        index, u[d] = divmod(index, int(n[d]) + 1)
    return u


def _park_key(park: ParkState) -> tuple:
    return park.t, tuple(sorted((ev.depart_remaining, ev.charge_remaining) for ev in park.connected))


def sample_trajectories(
    episodes: Sequence[Episode],
    trajectories_per_episode: int,
    seed: int = 0,
) -> Transitions:
    """Roll out the uniform random policy ``trajectories_per_episode`` times per episode.

    Each episode draws from its own stream seeded by ``(seed, episode_id)``.
    Identical transitions within an episode are merged and counted.
    """
    if not episodes:
        raise ValueError("no episodes")
    cfg = episodes[0].config
    s_max = cfg.s_max
    rows: list[tuple] = []
    weights: list[int] = []
    for ep in episodes:
        rng = np.random.default_rng([seed, ep.episode_id])
        start = initial_state(ep)
        memo: dict[tuple, tuple[int, ParkState]] = {}
        for _ in range(trajectories_per_episode):
            park = start
            while park.t < s_max:
                n = flex_counts(park)
                k = int(np.prod(n[1:] + 1))
                u = decode_action(int(rng.integers(k)), n)
                key = (_park_key(park), tuple(u))
                hit = memo.get(key)
                if hit is None:
                    nxt, p = step(park, u)
                    memo[key] = (len(rows), nxt)
                    rows.append((ep.episode_id, park.t, matrix_counts(park), u, p,
                                 matrix_counts(nxt), nxt.t == s_max and not nxt.connected))
                    weights.append(1)
                else:
                    weights[hit[0]] += 1
                    nxt = hit[1]
                park = nxt
    cols = list(zip(*rows))
    return Transitions(
        s_max=s_max,
        n_max=cfg.n_max,
        episode_id=np.array(cols[0], dtype=np.int64),
        t=np.array(cols[1], dtype=np.int64),
        grid=np.array(cols[2], dtype=np.int8),
        u=np.array(cols[3], dtype=np.int8),
        power=np.array(cols[4], dtype=float),
        next_grid=np.array(cols[5], dtype=np.int8),
        terminal=np.array(cols[6], dtype=bool),
        weight=np.array(weights, dtype=float),
    )


# --------------------------------------------------------------------------
# Experience sets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperienceTuple:
    state: tuple[int, np.ndarray]
    action: np.ndarray
    next_state: tuple[int, np.ndarray]
    cost: float
    next_flex_counts: np.ndarray
    terminal: bool
    weight: float = 1.0


@dataclass
class ExperienceSet:
    mdp: MdpConfig
    transitions: Transitions
    cost: np.ndarray
    x: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.cost)

    @property
    def s_max(self) -> int:
        return self.transitions.s_max

    @property
    def n_max(self) -> int:
        return self.transitions.n_max

    @property
    def weight(self) -> np.ndarray:
        return self.transitions.weight

    @property
    def n_tuples(self) -> int:
        """Number of tuples counting repeats."""
        return int(self.weight.sum())

    def observations(self, which: str = "state") -> np.ndarray:
        tr = self.transitions
        grid = tr.grid if which == "state" else tr.next_grid
        counts = grid if self.mdp.representation == "matrix" else _grid_to_flex(grid)
        return counts / self.n_max

    def tuples(self) -> Iterator[ExperienceTuple]:
        tr = self.transitions
        obs, next_obs = self.observations("state"), self.observations("next")
        actions = scale(tr.u, tr.flex, self.mdp.scaling, self.n_max)
        next_flex = tr.next_flex
        for i in range(len(self)):
            yield ExperienceTuple(
                (int(tr.t[i]), obs[i]), actions[i], (int(tr.t[i]) + 1, next_obs[i]),
                float(self.cost[i]), next_flex[i], bool(tr.terminal[i]), float(tr.weight[i]),
            )

    def digest(self) -> str:
        h = hashlib.sha256(repr(self.mdp).encode())
        for a in (self.x, self.cost, self.weight, self.transitions.next_grid, self.transitions.terminal):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        tr = self.transitions
        np.savez_compressed(
            path, mdp=np.array([self.mdp.representation, self.mdp.scaling, self.mdp.cost, str(self.mdp.E)]),
            dims=np.array([tr.s_max, tr.n_max]), episode_id=tr.episode_id, t=tr.t, grid=tr.grid,
            u=tr.u, power=tr.power, next_grid=tr.next_grid, terminal=tr.terminal,
            weight=tr.weight, cost=self.cost,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperienceSet":
        z = np.load(path)
        rep, scl, cost, E = (str(v) for v in z["mdp"])
        s_max, n_max = (int(v) for v in z["dims"])
        tr = Transitions(s_max, n_max, z["episode_id"], z["t"], z["grid"], z["u"], z["power"],
                         z["next_grid"], z["terminal"], z["weight"])
        return assemble_experience(MdpConfig(rep, scl, cost, int(E)), tr, z["cost"])


def experience_cache_key(mdp: MdpConfig, fqi: FqiConfig, episode_ids: Sequence[int], seed: int) -> str:
    payload = repr((mdp, fqi.trajectories_per_episode, tuple(episode_ids), seed)).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def assemble_experience(mdp: MdpConfig, tr: Transitions, cost: np.ndarray) -> ExperienceSet:
    """Encode ``tr`` for ``mdp`` with the given per-transition costs."""
    obs = tr.grid if mdp.representation == "matrix" else _grid_to_flex(tr.grid)
    feats = _state_features(tr.t, obs / tr.n_max, tr.s_max)
    actions = scale(tr.u, tr.flex, mdp.scaling, tr.n_max)
    return ExperienceSet(mdp, tr, np.asarray(cost, dtype=float), np.hstack([feats, actions]))


def build_experience(
    transitions: Transitions,
    mdp: MdpConfig,
    history: Mapping[int, PowerProfile] | None = None,
    order: Sequence[int] | None = None,
) -> ExperienceSet:
    """Attach costs and encodings to raw transitions.

    Linear costs need the optimal profiles of preceding episodes in
    ``history``; episodes without any are skipped with a warning.
    """
    tr = transitions
    if mdp.cost == "quadratic":
        return assemble_experience(mdp, tr, tr.power**2)

    if history is None:
        raise ValueError("linear costs need optimal-profile history")
    statistic = "avg" if mdp.cost == "linear-avg" else "median"
    keep = np.ones(len(tr), dtype=bool)
    ref = np.zeros(len(tr))
    skipped = []
    for e in np.unique(tr.episode_id):
        rows = tr.episode_id == e
        try:
            profile = reference_profile(int(e), mdp.E, history, statistic, order)
        except (InsufficientHistory, ValueError):
            keep[rows] = False
            skipped.append(int(e))
            continue
        ref[rows] = profile[tr.t[rows]]
    if skipped:
        warnings.warn(f"no optimal-profile history for episode(s) {skipped}; skipped")
    if not keep.any():
        raise InsufficientHistory("no episode has optimal-profile history")
    tr = tr.select(keep)
    return assemble_experience(mdp, tr, np.abs(tr.power - ref[keep]))


def generate_experience(
    episodes: Sequence[Episode],
    mdp: MdpConfig,
    trajectories_per_episode: int,
    seed: int = 0,
    history: Mapping[int, PowerProfile] | None = None,
    order: Sequence[int] | None = None,
) -> ExperienceSet:
    return build_experience(
        sample_trajectories(episodes, trajectories_per_episode, seed), mdp, history, order
    )


# --------------------------------------------------------------------------
# Fitted Q-iteration
# --------------------------------------------------------------------------

class ActionSpaceTooLarge(RuntimeError):
    pass


class _SuccessorTable:
    """Unique non-terminal next states grouped by their flexibility counts."""

    def __init__(self, F: ExperienceSet, cap: int):
        tr = F.transitions
        live = ~tr.terminal
        rep = F.mdp.representation
        next_counts = tr.next_grid if rep == "matrix" else tr.next_flex
        key = np.hstack([tr.t[:, None] + 1, next_counts.reshape(len(tr), -1)]).astype(np.int16)
        self.live = live
        self.groups = []
        if not live.any():
            self.inverse = np.zeros(0, dtype=np.int64)
            self.state_features = np.zeros((0, F.x.shape[1] - F.s_max))
            return
        uniq, inverse = np.unique(key[live], axis=0, return_inverse=True)
        self.inverse = inverse.reshape(-1)
        t_next = uniq[:, 0]
        counts = uniq[:, 1:]
        if rep == "matrix":
            grids = counts.reshape(-1, F.s_max, F.s_max)
            flex = _grid_to_flex(grids)
        else:
            flex = counts
        self.state_features = _state_features(t_next, counts / F.n_max, F.s_max)
        flex_keys, group_of = np.unique(flex, axis=0, return_inverse=True)
        group_of = group_of.reshape(-1)
        for g, n in enumerate(flex_keys):
            size = int(np.prod(n[1:].astype(np.int64) + 1))
            if size > cap:
                raise ActionSpaceTooLarge(
                    f"state with flexibility counts {n.tolist()} has {size} actions (cap {cap})"
                )
            actions = scale(enumerate_actions(n), n, F.mdp.scaling, F.n_max)
            self.groups.append((np.flatnonzero(group_of == g), actions))

    def min_q(self, net: QNetwork, chunk_rows: int = 1 << 16) -> np.ndarray:
        ds = self.state_features.shape[1]
        w1, b1 = net.weights[0], net.biases[0]
        hs = self.state_features @ w1[:ds] + b1
        out = np.empty(len(hs))
        for idx, actions in self.groups:
            ha = actions @ w1[ds:]
            step_ = max(1, chunk_rows // len(actions))
            for lo in range(0, len(idx), step_):
                sel = idx[lo:lo + step_]
                h = np.maximum(hs[sel][:, None, :] + ha[None, :, :], 0.0)
                for w, b in zip(net.weights[1:-1], net.biases[1:-1]):
                    h = np.maximum(h @ w + b, 0.0)
                q = (h @ net.weights[-1])[..., 0] + net.biases[-1][0]
                out[sel] = q.min(axis=1)
        return out


@dataclass
class FqiResult:
    networks: list[QNetwork]
    seconds: list[float]
    mdp: MdpConfig

    def __len__(self) -> int:
        return len(self.networks)

    def __getitem__(self, k):
        return self.networks[k]

    def __iter__(self):
        return iter(self.networks)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.seconds))


def fqi(F: ExperienceSet, config: FqiConfig = FqiConfig()) -> FqiResult:
    """Fitted Q-iteration; returns the network of every iteration.

    Iteration 1 regresses the immediate cost. Later iterations regress
    ``cost + min_u' Q_prev(s', u')`` (undiscounted), with the bare cost for
    transitions into the terminal state. Targets are divided by a fixed
    scale while fitting; returned networks predict in cost units.
    """
    if len(F) == 0:
        raise ValueError("empty experience set")
    width = F.x.shape[1]
    w = F.weight
    mean_cost = float(np.average(F.cost, weights=w))
    q_scale = mean_cost * F.s_max if mean_cost > 0 else 1.0
    c = F.cost / q_scale

    t0 = time.perf_counter()
    table = _SuccessorTable(F, config.action_cap)
    setup = time.perf_counter() - t0

    net = QNetwork.initialize(width, config.hidden, rng=np.random.default_rng([config.seed, 0]))
    networks, seconds = [], []
    for k in range(config.iterations):
        t0 = time.perf_counter()
        y = c.copy()
        if k:
            y[table.live] += table.min_q(net)[table.inverse]
            if not config.warm_start:
                net = QNetwork.initialize(width, config.hidden,
                                          rng=np.random.default_rng([config.seed, k]))
        losses = train_network(net, F.x, y, config.train_config(), w,
                               rng=np.random.default_rng([config.seed, 1000 + k]))
        seconds.append(time.perf_counter() - t0 + (setup if k == 0 else 0.0))
        logger.debug("FQI %s iteration %d: loss %.5f (%.2fs)", F.mdp.label, k + 1, losses[-1], seconds[-1])
        networks.append(net.scaled(q_scale))
    return FqiResult(networks, seconds, F.mdp)


# --------------------------------------------------------------------------
# Control
# --------------------------------------------------------------------------

def greedy_action(net: QNetwork, park: ParkState, representation: Representation,
                  scaling: Scaling, cap: int = 50_000) -> np.ndarray:
    """Action minimizing the network's Q-value; ties go to the first (lexicographic) action."""
    n = flex_counts(park)
    size = int(np.prod(n[1:] + 1))
    if size > cap:
        raise ActionSpaceTooLarge(f"{size} actions at t={park.t} (cap {cap})")
    actions = enumerate_actions(n)
    if len(actions) == 1:
        return actions[0].copy()
    s_max = park.config.s_max
    obs = observe(park, representation).ravel()
    feats = np.empty((len(actions), 1 + len(obs) + s_max))
    feats[:, 0] = park.t / s_max
    feats[:, 1:1 + len(obs)] = obs
    feats[:, 1 + len(obs):] = scale(actions, n, scaling, park.config.n_max)
    return actions[int(np.argmin(net.forward(feats)))].copy()


class GreedyPolicy:
    def __init__(self, net: QNetwork, mdp: MdpConfig, cap: int = 50_000):
        self.net = net
        self.mdp = mdp
        self.cap = cap

    def __call__(self, park: ParkState) -> np.ndarray:
        return greedy_action(self.net, park, self.mdp.representation, self.mdp.scaling, self.cap)


def greedy_policy(net: QNetwork, park: ParkState, representation: Representation,
                  scaling: Scaling) -> np.ndarray:
    return greedy_action(net, park, representation, scaling)


def flex_from_observation(obs: np.ndarray, n_max: int) -> np.ndarray:
    """Flexibility counts recovered from a normalized matrix or vector observation."""
    counts = np.rint(np.asarray(obs) * n_max).astype(np.int64)
    return matrix_to_flex(counts) if counts.ndim == 2 else counts
