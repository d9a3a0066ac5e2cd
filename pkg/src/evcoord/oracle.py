"""A-posteriori optimal load flattening.

Minimizes ``sum_t load_t ** 2`` over integral schedules in which every
session charges ``required_slots`` distinct slots inside its connection
window. The problem is a min-cost flow on the bipartite session -> slot
graph with a convex cost on each slot -> sink arc, where the k-th unit of
load in a slot costs ``2k - 1``. Successive shortest augmenting paths are
exact for convex arc costs. All arcs between sessions and slots cost zero,
so the shortest path ends at the least-loaded slot reachable along an
alternating path, i.e. a chain of unit exchanges between sessions.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .costs import PowerProfile
from .sessions import Episode

MAX_BRUTE_FORCE = 10**6


@dataclass(frozen=True)
class Schedule:
    """Charging slots of each session, in session order."""

    slots: tuple[tuple[int, ...], ...]

    def load(self, s_max: int) -> np.ndarray:
        load = np.zeros(s_max, dtype=np.int64)
        for slots in self.slots:
            load[list(slots)] += 1
        return load

    def to_dict(self) -> dict:
        return {"slots": [list(s) for s in self.slots]}


def check_schedule(episode: Episode, schedule: Schedule) -> None:
    if len(schedule.slots) != len(episode.sessions):
        raise ValueError("schedule does not cover every session")
    for i, (s, slots) in enumerate(zip(episode.sessions, schedule.slots)):
        if len(set(slots)) != s.required_slots:
            raise ValueError(f"session {i}: {len(set(slots))} slots, needs {s.required_slots}")
        if any(not s.arrival_slot <= k < s.depart_slot for k in slots):
            raise ValueError(f"session {i}: charging outside its connection window")


def quadratic_load(load: np.ndarray) -> int:
    return int(np.sum(np.asarray(load, dtype=np.int64) ** 2))


def solve_optimal(episode: Episode) -> tuple[Schedule, PowerProfile, int]:
    """Optimal schedule, its power profile and its quadratic load L_opt."""
    s_max = episode.config.s_max
    sessions = episode.sessions
    for s in sessions:
        if not 1 <= s.required_slots <= s.window:
            raise ValueError(f"infeasible session {s}")

    n = len(sessions)
    assigned = [set() for _ in range(n)]
    users = [set() for _ in range(s_max)]  # sessions charging in each slot
    residual = [s.required_slots for s in sessions]
    load = np.zeros(s_max, dtype=np.int64)

    for _ in range(sum(residual)):
        # alternating BFS from all sessions with unmet demand
        parent_slot: dict[int, int] = {}   # slot -> session that reaches it
        parent_sess: dict[int, int] = {}   # session -> slot it was reached through
        queue = deque(i for i in range(n) if residual[i] > 0)
        seen_sess = set(queue)
        while queue:
            i = queue.popleft()
            s = sessions[i]
            for k in range(s.arrival_slot, s.depart_slot):
                if k in assigned[i] or k in parent_slot:
                    continue
                parent_slot[k] = i
                for j in sorted(users[k]):
                    if j not in seen_sess:
                        seen_sess.add(j)
                        parent_sess[j] = k
                        queue.append(j)
        target = min(parent_slot, key=lambda k: (load[k], k))

        # flip the alternating path ending at `target`
        k = target
        while True:
            i = parent_slot[k]
            assigned[i].add(k)
            users[k].add(i)
            if i not in parent_sess:
                residual[i] -= 1
                break
            prev = parent_sess[i]
            assigned[i].discard(prev)
            users[prev].discard(i)
            k = prev
        load[target] += 1

    schedule = Schedule(tuple(tuple(sorted(a)) for a in assigned))
    load = schedule.load(s_max)
    return schedule, PowerProfile(episode.episode_id, tuple(load)), quadratic_load(load)


def search_space_size(episode: Episode) -> int:
    return math.prod(math.comb(s.window, s.required_slots) for s in episode.sessions)


def brute_force_optimal(episode: Episode) -> int:
    """Exhaustive minimum of the quadratic load; for testing only."""
    size = search_space_size(episode)
    if size > MAX_BRUTE_FORCE:
        raise ValueError(
            f"search space has {size} schedules (> {MAX_BRUTE_FORCE}); use solve_optimal"
        )
    s_max = episode.config.s_max
    choices = []
    for s in episode.sessions:
        opts = []
        for combo in itertools.combinations(range(s.arrival_slot, s.depart_slot), s.required_slots):
            v = np.zeros(s_max, dtype=np.int64)
            v[list(combo)] = 1
            opts.append(v)
        choices.append(opts)
    best = None
    for pick in itertools.product(*choices):
        load = np.sum(pick, axis=0) if pick else np.zeros(s_max, dtype=np.int64)
        val = quadratic_load(load)
        if best is None or val < best:
            best = val
    return 0 if best is None else best


def exchange_optimal(episode: Episode, schedule: Schedule) -> bool:
    """True when no session can move one charging slot and lower the quadratic load."""
    load = schedule.load(episode.config.s_max)
    for s, slots in zip(episode.sessions, schedule.slots):
        free = set(range(s.arrival_slot, s.depart_slot)) - set(slots)
        for a in slots:
            for b in free:
                # moving a unit from a to b changes the objective by 2(load_b - load_a + 1)
                if load[b] + 1 < load[a]:
                    return False
    return True
