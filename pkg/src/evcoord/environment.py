"""Car-park simulator with aggregate observations and flexibility-bin actions.

Time is 0-based: ``t = 0`` is the first slot of the episode and ``t = S_max``
is the terminal slot. Every connected EV carries ``depart_remaining`` (slots
until it leaves) and ``charge_remaining`` (slots of charging still needed);
its flexibility is the difference of the two.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Literal, NamedTuple, Sequence

import numpy as np

from .sessions import Episode, SlotConfig

Scaling = Literal["local", "global"]
Representation = Literal["matrix", "vector"]


class ConnectedEv(NamedTuple):
    depart_remaining: int
    charge_remaining: int
    ev_id: int

    @property
    def flex(self) -> int:
        return self.depart_remaining - self.charge_remaining


@dataclass(frozen=True)
class ParkState:
    t: int
    connected: tuple[ConnectedEv, ...]
    pending: tuple[tuple[ConnectedEv, ...], ...]
    episode_id: int = 0
    config: SlotConfig = SlotConfig()

    @property
    def n_connected(self) -> int:
        return len(self.connected)


class InfeasibleAction(ValueError):
    pass


def initial_state(episode: Episode) -> ParkState:
    """Park at ``t = 0`` with the first slot's arrivals connected."""
    cfg = episode.config
    pending: list[list[ConnectedEv]] = [[] for _ in range(cfg.s_max)]
    for i, s in enumerate(episode.sessions):
        pending[s.arrival_slot].append(ConnectedEv(s.window, s.required_slots, i))
    return ParkState(
        t=0,
        connected=tuple(pending[0]),
        pending=tuple(tuple(p) for p in pending),
        episode_id=episode.episode_id,
        config=cfg,
    )


def make_park(evs: Sequence[tuple[int, int]], config: SlotConfig, t: int = 0) -> ParkState:
    """Build a park from ``(depart_remaining, charge_remaining)`` pairs (no future arrivals)."""
    connected = tuple(ConnectedEv(d, c, i) for i, (d, c) in enumerate(evs))
    for ev in connected:
        if ev.charge_remaining < 1 or ev.flex < 0 or ev.depart_remaining > config.s_max - t:
            raise ValueError(f"invalid EV {ev}")
    if len(connected) > config.n_max:
        raise ValueError("more EVs than charging stations")
    return ParkState(t, connected, tuple(() for _ in range(config.s_max)), 0, config)


def flex_counts(park: ParkState) -> np.ndarray:
    """Number of connected EVs per flexibility bin (length S_max)."""
    n = np.zeros(park.config.s_max, dtype=np.int64)
    for ev in park.connected:
        n[ev.flex] += 1
    return n


def matrix_counts(park: ParkState) -> np.ndarray:
    """Raw (unnormalized) count grid; row ``i`` is depart_remaining ``i + 1``,
    column ``j`` is charge_remaining ``j + 1``."""
    s = park.config.s_max
    grid = np.zeros((s, s), dtype=np.int64)
    for ev in park.connected:
        grid[ev.depart_remaining - 1, ev.charge_remaining - 1] += 1
    return grid


def observe_matrix(park: ParkState) -> np.ndarray:
    return matrix_counts(park) / park.config.n_max


def observe_vector(park: ParkState) -> np.ndarray:
    return flex_counts(park) / park.config.n_max


def observe(park: ParkState, representation: Representation) -> np.ndarray:
    if representation == "matrix":
        return observe_matrix(park)
    if representation == "vector":
        return observe_vector(park)
    raise ValueError(f"unknown representation {representation!r}")


def matrix_to_flex(grid: np.ndarray) -> np.ndarray:
    """Collapse a (depart, charge) grid onto flexibility bins (diagonal sums)."""
    s = grid.shape[0]
    return np.array([np.trace(grid, offset=-d) for d in range(s)])


# --------------------------------------------------------------------------
# Actions
# --------------------------------------------------------------------------

@lru_cache(maxsize=65536)
def _enumerate_cached(counts: tuple[int, ...]) -> np.ndarray:
    ranges = [range(c + 1) for c in counts[1:]]
    rows = [(counts[0], *rest) for rest in itertools.product(*ranges)]
    out = np.array(rows, dtype=np.int64).reshape(len(rows), len(counts))
    out.setflags(write=False)
    return out


def enumerate_actions(n: np.ndarray | Sequence[int]) -> np.ndarray:
    """All feasible actions for flexibility counts ``n``, one per row.

    Zero-flexibility EVs are always charged, so column 0 equals ``n[0]``.
    Rows are in lexicographic order; there are ``prod(n[1:] + 1)`` of them.
    """
    return _enumerate_cached(tuple(int(c) for c in n))


def action_space_size(n: np.ndarray | Sequence[int]) -> int:
    return int(np.prod([int(c) + 1 for c in n[1:]], dtype=object))


def check_action(u: np.ndarray, n: np.ndarray) -> None:
    u, n = np.asarray(u), np.asarray(n)
    if u.shape != n.shape:
        raise InfeasibleAction(f"action shape {u.shape} does not match counts {n.shape}")
    if (u < 0).any() or (u > n).any():
        raise InfeasibleAction(f"action {u.tolist()} outside [0, {n.tolist()}]")
    if u[0] != n[0]:
        raise InfeasibleAction(
            f"action {u.tolist()} leaves zero-flexibility EVs uncharged (need u[0]={n[0]})"
        )


def scale(u: np.ndarray, n: np.ndarray, mode: Scaling, n_max: int) -> np.ndarray:
    """Fractional action: ``u / N_d`` (local, 0 for empty bins) or ``u / N_max`` (global).

    Works on a single action or a stack of actions sharing the same ``n``.
    """
    u = np.asarray(u, dtype=float)
    if mode == "global":
        return u / n_max
    if mode == "local":
        n = np.asarray(n, dtype=float)
        return np.divide(u, n, out=np.zeros(np.broadcast_shapes(u.shape, n.shape)), where=n > 0)
    raise ValueError(f"unknown scaling {mode!r}")


# --------------------------------------------------------------------------
# Dynamics
# --------------------------------------------------------------------------

def step(park: ParkState, u: np.ndarray | Sequence[int]) -> tuple[ParkState, int]:
    """Apply action ``u`` for one slot; returns the next park and the power drawn.

    Within each flexibility bin the ``u[d]`` EVs with the earliest departure
    (then lowest ev_id) are charged. Finished or departed EVs leave, then
    the arrivals of the next slot connect.
    """
    s_max = park.config.s_max
    if park.t >= s_max:
        raise InfeasibleAction(f"cannot step past the episode end (t={park.t})")
    u = np.asarray(u, dtype=np.int64)
    check_action(u, flex_counts(park))

    ordered = sorted(park.connected, key=lambda ev: (ev.flex, ev.depart_remaining, ev.ev_id))
    remaining = u.tolist()
    survivors = []
    for ev in ordered:
        d = ev.flex
        if remaining[d] > 0:
            remaining[d] -= 1
            ev = ConnectedEv(ev.depart_remaining - 1, ev.charge_remaining - 1, ev.ev_id)
        else:
            ev = ConnectedEv(ev.depart_remaining - 1, ev.charge_remaining, ev.ev_id)
        if ev.charge_remaining == 0:
            continue
        if ev.depart_remaining == 0:
            # unreachable while u[0] == N_0 is enforced
            raise RuntimeError(f"EV {ev.ev_id} departed with {ev.charge_remaining} slot(s) unmet")
        survivors.append(ev)

    t = park.t + 1
    if t < s_max:
        survivors.extend(park.pending[t])
    survivors.sort(key=lambda ev: ev.ev_id)
    return replace(park, t=t, connected=tuple(survivors)), int(u.sum())


def is_terminal(park: ParkState) -> bool:
    return park.t == park.config.s_max and not park.connected


def violations(park: ParkState) -> list[str]:
    """Safety problems of a park (empty when the state is valid)."""
    out = []
    if len(park.connected) > park.config.n_max:
        out.append(f"t={park.t}: {len(park.connected)} EVs > N_max")
    for ev in park.connected:
        if ev.flex < 0:
            out.append(f"t={park.t}: EV {ev.ev_id} cannot finish charging")
    if park.t == park.config.s_max and park.connected:
        out.append("EVs still connected at episode end")
    return out
