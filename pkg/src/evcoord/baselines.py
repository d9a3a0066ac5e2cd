"""Reference policies that schedule each session on its own.

``bau`` charges a session in the first ``required_slots`` slots after its
arrival. ``heuristic`` spreads the charging slots evenly over the
connection window.
"""
from __future__ import annotations

import numpy as np

from .costs import PowerProfile
from .oracle import Schedule, quadratic_load
from .sessions import Episode


def spread_pattern(c: int, d: int) -> list[bool]:
    """Even spread of ``c`` charging slots over a window of ``d`` slots.

    Slot ``j`` charges iff ``floor((j+1)c/d) - floor(jc/d) == 1``.
    """
    if not 0 <= c <= d:
        raise ValueError(f"cannot fit {c} charging slots into a window of {d}")
    return [((j + 1) * c) // d - (j * c) // d == 1 for j in range(d)]


def _finish(episode: Episode, slots) -> tuple[Schedule, PowerProfile, int]:
    schedule = Schedule(tuple(tuple(s) for s in slots))
    load = schedule.load(episode.config.s_max)
    return schedule, PowerProfile(episode.episode_id, tuple(load)), quadratic_load(load)


def bau_schedule(episode: Episode) -> tuple[Schedule, PowerProfile, int]:
    return _finish(episode, [
        range(s.arrival_slot, s.arrival_slot + s.required_slots) for s in episode.sessions
    ])


def heuristic_schedule(episode: Episode) -> tuple[Schedule, PowerProfile, int]:
    slots = []
    for s in episode.sessions:
        pattern = spread_pattern(s.required_slots, s.window)
        slots.append([s.arrival_slot + j for j, on in enumerate(pattern) if on])
    return _finish(episode, slots)


def schedule_mask(episode: Episode, schedule: Schedule) -> np.ndarray:
    """Boolean (session, slot) matrix of a schedule."""
    mask = np.zeros((len(episode.sessions), episode.config.s_max), dtype=bool)
    for i, slots in enumerate(schedule.slots):
        mask[i, list(slots)] = True
    return mask
