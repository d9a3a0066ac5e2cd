"""EV charging sessions, their slot discretization, and episode datasets.

An episode is one "day" of sessions starting at ``episode_start_hour`` and
lasting ``horizon_hours``. Sessions are expressed in integer slot indices
relative to the episode start.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# guards float noise in energy / (power * hours) before taking the ceiling
_CEIL_EPS = 1e-9


@dataclass(frozen=True)
class SlotConfig:
    slot_hours: float = 2.0
    slots_per_episode: int = 12
    episode_start_hour: int = 7
    max_stations: int = 10

    def __post_init__(self):
        if self.slot_hours <= 0:
            raise ValueError("slot_hours must be positive")
        if self.slots_per_episode < 1:
            raise ValueError("slots_per_episode must be >= 1")
        if self.max_stations < 1:
            raise ValueError("max_stations must be >= 1")

    @property
    def horizon_hours(self) -> float:
        return self.slot_hours * self.slots_per_episode

    @property
    def s_max(self) -> int:
        return self.slots_per_episode

    @property
    def n_max(self) -> int:
        return self.max_stations

    def to_dict(self) -> dict:
        return {
            "slot_hours": self.slot_hours,
            "slots_per_episode": self.slots_per_episode,
            "episode_start_hour": self.episode_start_hour,
            "max_stations": self.max_stations,
        }


@dataclass(frozen=True)
class SessionRecord:
    station_id: str
    arrival_slot: int
    depart_slot: int
    required_slots: int
    episode_id: int = 0
    is_weekday: bool = True

    @property
    def window(self) -> int:
        return self.depart_slot - self.arrival_slot

    def validate(self, s_max: int) -> None:
        if not 0 <= self.arrival_slot < s_max:
            raise ValueError(f"arrival_slot {self.arrival_slot} outside [0, {s_max})")
        if not self.arrival_slot < self.depart_slot <= s_max:
            raise ValueError(
                f"depart_slot {self.depart_slot} outside ({self.arrival_slot}, {s_max}]"
            )
        if not 1 <= self.required_slots <= self.window:
            raise ValueError(
                f"required_slots {self.required_slots} outside [1, {self.window}]"
            )


@dataclass(frozen=True)
class Episode:
    episode_id: int
    sessions: tuple[SessionRecord, ...]
    config: SlotConfig = field(default_factory=SlotConfig, compare=False)
    is_weekday: bool = True

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))

    def occupancy(self) -> np.ndarray:
        """Number of connected sessions per slot."""
        occ = np.zeros(self.config.s_max, dtype=int)
        for s in self.sessions:
            occ[s.arrival_slot:s.depart_slot] += 1
        return occ

    def total_demand(self) -> int:
        return sum(s.required_slots for s in self.sessions)

    def validate(self) -> None:
        for s in self.sessions:
            s.validate(self.config.s_max)
        peak = int(self.occupancy().max(initial=0))
        if peak > self.config.n_max:
            raise ValueError(
                f"episode {self.episode_id}: {peak} concurrent sessions > N_max={self.config.n_max}"
            )


@dataclass(frozen=True)
class Transaction:
    """One raw charging transaction as logged by a charge point operator."""

    station_id: str
    arrival: datetime
    departure: datetime
    energy_kwh: float


# --------------------------------------------------------------------------
# Discretization of raw transactions
# --------------------------------------------------------------------------

def _episode_start(ts: datetime, start_hour: int) -> datetime:
    day = ts.replace(hour=start_hour, minute=0, second=0, microsecond=0)
    if ts < day:
        day -= timedelta(days=1)
    return day


def _admit(sessions: list[SessionRecord], s_max: int, n_max: int) -> tuple[list[SessionRecord], int]:
    """Drop sessions that would push concurrency above ``n_max``.

    Sessions are considered in arrival order; a session is rejected if the
    car park is already full at its arrival slot.
    """
    occ = np.zeros(s_max, dtype=int)
    kept, rejected = [], 0
    for s in sorted(sessions, key=lambda r: (r.arrival_slot, r.depart_slot, r.station_id)):
        if occ[s.arrival_slot] >= n_max:
            rejected += 1
            continue
        occ[s.arrival_slot:s.depart_slot] += 1
        kept.append(s)
    return kept, rejected


def discretize(
    raw_transactions: Iterable[Transaction | tuple],
    config: SlotConfig = SlotConfig(),
    charger_kw: float = 7.0,
) -> list[Episode]:
    """Map raw transactions onto episodes of integer slots.

    Each transaction is assigned to the episode whose window contains its
    arrival. Arrival is floored to a slot start, departure is ceiled and
    clamped to the end of the episode, and the demand in slots is
    ``ceil(energy / (charger_kw * slot_hours))`` clamped to the connection
    window. Zero-demand transactions are dropped; rows with departure before
    arrival or negative energy are rejected and counted.

    Every calendar day between the first and the last episode yields an
    episode, including days without sessions. Episode ids count days from
    the first episode (id 0).
    """
    if charger_kw <= 0:
        raise ValueError("charger_kw must be positive")
    slot = timedelta(hours=config.slot_hours)
    s_max, n_max = config.s_max, config.n_max

    by_day: dict[datetime, list[SessionRecord]] = {}
    rejected = dropped = 0
    for row in raw_transactions:
        tx = row if isinstance(row, Transaction) else Transaction(*row)
        if tx.departure < tx.arrival or tx.energy_kwh < 0 or not math.isfinite(tx.energy_kwh):
            rejected += 1
            continue
        start = _episode_start(tx.arrival, config.episode_start_hour)
        arrival_slot = int((tx.arrival - start) // slot)
        depart_slot = min(math.ceil((tx.departure - start) / slot - _CEIL_EPS), s_max)
        depart_slot = max(depart_slot, arrival_slot)
        required = math.ceil(tx.energy_kwh / (charger_kw * config.slot_hours) - _CEIL_EPS)
        required = min(max(required, 0), depart_slot - arrival_slot)
        if required == 0:
            dropped += 1
            continue
        by_day.setdefault(start, []).append(
            SessionRecord(str(tx.station_id), arrival_slot, depart_slot, required)
        )
    if rejected:
        warnings.warn(f"discretize: rejected {rejected} malformed transaction(s)")
    if dropped:
        logger.info("discretize: dropped %d zero-demand transaction(s)", dropped)
    if not by_day:
        return []

    first, last = min(by_day), max(by_day)
    episodes, over_capacity = [], 0
    n_days = (last - first).days + 1
    for k in range(n_days):
        day = first + timedelta(days=k)
        weekday = day.weekday() < 5
        kept, rej = _admit(by_day.get(day, []), s_max, n_max)
        over_capacity += rej
        sessions = tuple(
            SessionRecord(s.station_id, s.arrival_slot, s.depart_slot, s.required_slots, k, weekday)
            for s in kept
        )
        episodes.append(Episode(k, sessions, config, weekday))
    if over_capacity:
        warnings.warn(f"discretize: rejected {over_capacity} session(s) exceeding N_max={n_max}")
    return episodes


def select_busiest_stations(records: Iterable[Transaction | tuple], k: int) -> set[str]:
    """Return the ``k`` stations with the most transactions.

    Ties are broken by lexicographic station id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = Counter(
        str(r.station_id if isinstance(r, Transaction) else r[0]) for r in records
    )
    if len(counts) < k:
        warnings.warn(f"only {len(counts)} station(s) available, fewer than k={k}")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {station for station, _ in ranked[:k]}


def weekday_filter(episodes: Iterable[Episode]) -> list[Episode]:
    return [ep for ep in episodes if ep.is_weekday]


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorParams:
    """Parameters of the synthetic session generator.

    arrival_rate
        Expected number of arrivals (Poisson) in each slot of a weekday.
        Its length must equal the number of slots per episode.
    duration_probs
        Probability of a connection lasting 1, 2, ... slots.
    demand_probs
        Probability of needing 1, 2, ... charging slots.
    weekend_factor
        Multiplier applied to ``arrival_rate`` on weekend days.
    """

    arrival_rate: tuple[float, ...] = (
        2.2, 1.6, 0.9, 0.6, 0.7, 1.3, 1.5, 0.9, 0.3, 0.1, 0.05, 0.0,
    )
    duration_probs: tuple[float, ...] = (0.06, 0.12, 0.18, 0.2, 0.16, 0.12, 0.08, 0.05, 0.03)
    demand_probs: tuple[float, ...] = (0.35, 0.35, 0.2, 0.1)
    weekend_factor: float = 0.6

    def __post_init__(self):
        for name in ("duration_probs", "demand_probs"):
            p = np.asarray(getattr(self, name), dtype=float)
            if p.ndim != 1 or len(p) == 0 or (p < 0).any() or not np.isclose(p.sum(), 1.0):
                raise ValueError(f"{name} must be a non-empty probability vector")
        rate = np.asarray(self.arrival_rate, dtype=float)
        if (rate < 0).any():
            raise ValueError("arrival_rate must be non-negative")
        if self.weekend_factor < 0:
            raise ValueError("weekend_factor must be non-negative")

    def to_dict(self) -> dict:
        return {
            "arrival_rate": list(self.arrival_rate),
            "duration_probs": list(self.duration_probs),
            "demand_probs": list(self.demand_probs),
            "weekend_factor": self.weekend_factor,
        }


def generate_synthetic(
    config: SlotConfig = SlotConfig(),
    n_episodes: int = 1,
    gen_params: GeneratorParams = GeneratorParams(),
    seed: int = 0,
) -> list[Episode]:
    """Draw ``n_episodes`` feasible episodes.

    Episode 0 is a Monday; the weekday flag cycles with period 7. Arrivals
    that find the car park full are rejected.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    s_max, n_max = config.s_max, config.n_max
    rate = np.asarray(gen_params.arrival_rate, dtype=float)
    if len(rate) != s_max:
        raise ValueError(f"arrival_rate has {len(rate)} entries, expected {s_max}")
    dur_p = np.asarray(gen_params.duration_probs, dtype=float)
    dem_p = np.asarray(gen_params.demand_probs, dtype=float)
    rng = np.random.default_rng(seed)

    episodes = []
    for e in range(n_episodes):
        weekday = e % 7 < 5
        day_rate = rate if weekday else rate * gen_params.weekend_factor
        occ = np.zeros(s_max, dtype=int)
        sessions = []
        counts = rng.poisson(day_rate)
        for slot in range(s_max):
            for _ in range(counts[slot]):
                duration = 1 + rng.choice(len(dur_p), p=dur_p)
                demand = 1 + rng.choice(len(dem_p), p=dem_p)
                station = int(rng.integers(n_max))
                if occ[slot] >= n_max:
                    continue
                depart = min(slot + duration, s_max)
                required = min(demand, depart - slot)
                occ[slot:depart] += 1
                sessions.append(
                    SessionRecord(f"S{station:02d}", slot, depart, required, e, weekday)
                )
        episodes.append(Episode(e, tuple(sessions), config, weekday))
    return episodes


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------

CSV_FIELDS = ("station_id", "arrival", "departure", "energy_kwh")


def read_transactions_csv(path: str | Path) -> tuple[list[Transaction], int]:
    """Parse a transaction log; returns the valid rows and the rejected-row count."""
    rows, rejected = [], 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"CSV header lacks column(s): {sorted(missing)}")
        for rec in reader:
            try:
                tx = Transaction(
                    rec["station_id"],
                    datetime.fromisoformat(rec["arrival"]),
                    datetime.fromisoformat(rec["departure"]),
                    float(rec["energy_kwh"]),
                )
            except (TypeError, ValueError):
                rejected += 1
                continue
            if tx.departure < tx.arrival or tx.energy_kwh < 0 or not math.isfinite(tx.energy_kwh):
                rejected += 1
                continue
            rows.append(tx)
    if rejected:
        warnings.warn(f"{path}: rejected {rejected} malformed row(s)")
    return rows, rejected


def write_transactions_csv(transactions: Iterable[Transaction], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for tx in transactions:
            w.writerow([tx.station_id, tx.arrival.isoformat(), tx.departure.isoformat(),
                        repr(float(tx.energy_kwh))])


def episodes_to_transactions(
    episodes: Sequence[Episode],
    start_date: datetime,
    charger_kw: float = 7.0,
) -> list[Transaction]:
    """Inverse of :func:`discretize` for episodes on consecutive days.

    Energy is set to exactly ``required_slots`` full slots of charging, so
    discretizing the result reproduces the episodes.
    """
    out = []
    for ep in episodes:
        cfg = ep.config
        day0 = start_date.replace(hour=cfg.episode_start_hour, minute=0, second=0, microsecond=0)
        day = day0 + timedelta(days=ep.episode_id)
        slot = timedelta(hours=cfg.slot_hours)
        for s in ep.sessions:
            out.append(Transaction(
                s.station_id,
                day + s.arrival_slot * slot,
                day + s.depart_slot * slot,
                s.required_slots * charger_kw * cfg.slot_hours,
            ))
    return out


def episode_to_dict(ep: Episode) -> dict:
    return {
        "episode_id": ep.episode_id,
        "is_weekday": ep.is_weekday,
        "sessions": [
            {"station": s.station_id, "arrival_slot": s.arrival_slot,
             "depart_slot": s.depart_slot, "required_slots": s.required_slots}
            for s in ep.sessions
        ],
    }


def episode_from_dict(d: dict, config: SlotConfig = SlotConfig()) -> Episode:
    eid, weekday = int(d["episode_id"]), bool(d["is_weekday"])
    sessions = tuple(
        SessionRecord(str(s["station"]), int(s["arrival_slot"]), int(s["depart_slot"]),
                      int(s["required_slots"]), eid, weekday)
        for s in d["sessions"]
    )
    ep = Episode(eid, sessions, config, weekday)
    ep.validate()
    return ep


def dump_episodes(episodes: Iterable[Episode], path: str | Path) -> None:
    """Write episodes as JSON lines, one episode per line."""
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(json.dumps(episode_to_dict(ep), separators=(",", ":")) + "\n")


def load_episodes(path: str | Path, config: SlotConfig = SlotConfig()) -> list[Episode]:
    with open(path) as fh:
        return [episode_from_dict(json.loads(line), config) for line in fh if line.strip()]
