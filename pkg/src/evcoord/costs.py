"""Power and per-transition cost functions.

The quadratic cost penalizes the squared power drawn in a slot. The two
linear costs penalize the absolute deviation from the average or the median
of the optimal power drawn in the same slot over preceding episodes.
"""
from __future__ import annotations

import json
import statistics
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class PowerProfile:
    episode_id: int
    power: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "power", tuple(float(p) for p in self.power))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.power, dtype=float)

    def to_dict(self) -> dict:
        return {"episode_id": self.episode_id,
                "power": [int(p) if float(p).is_integer() else p for p in self.power]}

    @classmethod
    def from_dict(cls, d: dict) -> "PowerProfile":
        return cls(int(d["episode_id"]), tuple(d["power"]))


@dataclass(frozen=True)
class OptimalProfileSet:
    t: int
    e: int
    E: int
    values: tuple[float, ...]

    @property
    def average(self) -> float:
        return float(np.mean(self.values))

    @property
    def median(self) -> float:
        return float(statistics.median(self.values))


class InsufficientHistory(ValueError):
    pass


def power(n: np.ndarray, u_local: np.ndarray) -> float:
    """Aggregate power of a locally scaled action: sum_d N_d * u_d."""
    return float(np.dot(np.asarray(n, dtype=float), np.asarray(u_local, dtype=float)))


def cost_quadratic(p: float) -> float:
    return float(p) ** 2


def cost_linear_avg(p: float, profile_set: OptimalProfileSet) -> float:
    if not profile_set.values:
        raise InsufficientHistory("empty optimal-profile set")
    return abs(float(p) - profile_set.average)


def cost_linear_median(p: float, profile_set: OptimalProfileSet) -> float:
    if not profile_set.values:
        raise InsufficientHistory("empty optimal-profile set")
    return abs(float(p) - profile_set.median)


def preceding_episodes(e: int, E: int, order: Sequence[int] | None = None) -> list[int]:
    """Ids of the ``E`` episodes before ``e``, nearest first.

    With ``order`` (e.g. a weekday-filtered id sequence), "preceding" refers
    to positions in that sequence; otherwise to consecutive ids.
    """
    if E < 1:
        raise ValueError("E must be >= 1")
    if order is None:
        return [e - k for k in range(1, E + 1)]
    order = list(order)
    pos = order.index(e)
    return [order[pos - k] for k in range(1, E + 1) if pos - k >= 0]


def build_profile_set(
    t: int,
    e: int,
    E: int,
    history: Mapping[int, PowerProfile],
    order: Sequence[int] | None = None,
    warn: bool = True,
) -> OptimalProfileSet:
    """Collect the optimal power of slot ``t`` in the ``E`` episodes preceding ``e``.

    Episodes missing from ``history`` are skipped; the set shrinks rather
    than failing unless nothing is left.
    """
    ids = [i for i in preceding_episodes(e, E, order) if i in history]
    if not ids:
        raise InsufficientHistory(f"no optimal profile precedes episode {e}")
    if warn and len(ids) < E:
        warnings.warn(f"episode {e}: only {len(ids)} of E={E} preceding profiles available")
    return OptimalProfileSet(t, e, E, tuple(history[i].power[t] for i in ids))


def reference_profile(
    e: int,
    E: int,
    history: Mapping[int, PowerProfile],
    statistic: str,
    order: Sequence[int] | None = None,
) -> np.ndarray:
    """Per-slot average or median of the preceding optimal profiles."""
    ids = [i for i in preceding_episodes(e, E, order) if i in history]
    if not ids:
        raise InsufficientHistory(f"no optimal profile precedes episode {e}")
    stack = np.array([history[i].power for i in ids], dtype=float)
    if statistic == "avg":
        return stack.mean(axis=0)
    if statistic == "median":
        return np.median(stack, axis=0)
    raise ValueError(f"unknown statistic {statistic!r}")


def dump_profiles(profiles: Iterable[PowerProfile], path: str | Path) -> None:
    with open(path, "w") as fh:
        for p in profiles:
            fh.write(json.dumps(p.to_dict(), separators=(",", ":")) + "\n")


def load_profiles(path: str | Path) -> dict[int, PowerProfile]:
    with open(path) as fh:
        profiles = [PowerProfile.from_dict(json.loads(line)) for line in fh if line.strip()]
    return {p.episode_id: p for p in profiles}
