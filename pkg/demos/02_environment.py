"""Car park dynamics: flexibility bins, action enumeration and one greedy day."""
import numpy as np

from evcoord.environment import (
    enumerate_actions, flex_counts, initial_state, observe_matrix, observe_vector, scale, step,
)
from evcoord.sessions import Episode, SessionRecord, SlotConfig

cfg = SlotConfig(slots_per_episode=3, max_stations=4)
# three EVs at 7am: (window, demand) = (3,2), (2,1), (2,2)
ep = Episode(0, (SessionRecord("a", 0, 3, 2), SessionRecord("b", 0, 2, 1),
                 SessionRecord("c", 0, 2, 2)), cfg)

park = initial_state(ep)
n = flex_counts(park)
print("EVs per flexibility bin:", n)  # bin 0 must charge now
print("vector observation:", observe_vector(park))
print("matrix observation:\n", observe_matrix(park))

acts = enumerate_actions(n)
print(len(acts), "actions:")
for u in acts:
    print("  ", u, "local", scale(u, n, "local", cfg.n_max), "global", scale(u, n, "global", cfg.n_max))

# charge only what is forced at every step
power = []
while park.t < cfg.s_max:
    u = np.zeros_like(flex_counts(park))
    u[0] = flex_counts(park)[0]
    park, p = step(park, u)
    power.append(p)
print("lazy power profile:", power, "quadratic load", sum(p * p for p in power))
