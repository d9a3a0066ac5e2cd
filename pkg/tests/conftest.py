import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from evcoord.sessions import Episode, SessionRecord, SlotConfig

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def make_episode(pairs, s_max=3, n_max=4, arrivals=None, episode_id=0):
    """Episode from (window, required) pairs; everyone arrives at slot 0 unless given."""
    cfg = SlotConfig(slots_per_episode=s_max, max_stations=n_max)
    arrivals = arrivals or [0] * len(pairs)
    sessions = tuple(
        SessionRecord(f"S{i}", a, a + w, c, episode_id)
        for i, ((w, c), a) in enumerate(zip(pairs, arrivals))
    )
    return Episode(episode_id, sessions, cfg)


def random_episode(rng, s_max=5, n_max=4, max_sessions=5, episode_id=0):
    """Small feasible episode respecting the station limit."""
    cfg = SlotConfig(slots_per_episode=s_max, max_stations=n_max)
    occ = np.zeros(s_max, dtype=int)
    sessions = []
    for i in range(int(rng.integers(0, max_sessions + 1))):
        a = int(rng.integers(s_max))
        d = int(rng.integers(a + 1, s_max + 1))
        if (occ[a:d] >= n_max).any():
            continue
        occ[a:d] += 1
        c = int(rng.integers(1, d - a + 1))
        sessions.append(SessionRecord(f"S{i}", a, d, c, episode_id))
    return Episode(episode_id, tuple(sessions), cfg)


@pytest.fixture
def three_evs():
    """Three EVs at slot 0 with (window, demand) (3,2), (2,1), (2,2) over 3 slots."""
    return make_episode([(3, 2), (2, 1), (2, 2)])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
