"""Optimal a-posteriori schedule against business-as-usual and the spreading heuristic."""
import numpy as np

from evcoord.baselines import bau_schedule, heuristic_schedule
from evcoord.evaluation import normalized_load
from evcoord.oracle import brute_force_optimal, solve_optimal
from evcoord.sessions import Episode, SessionRecord, SlotConfig, generate_synthetic

cfg = SlotConfig(slots_per_episode=3, max_stations=4)
ep = Episode(0, (SessionRecord("a", 0, 3, 2), SessionRecord("b", 0, 2, 1),
                 SessionRecord("c", 0, 2, 2)), cfg)
_, opt, l_opt = solve_optimal(ep)
_, bau, l_bau = bau_schedule(ep)
print("optimal", opt.power, l_opt, "| BAU", bau.power, l_bau,
      "| normalized %.4f" % normalized_load(l_bau, l_opt))
print("brute force agrees:", brute_force_optimal(ep) == l_opt)

# a month of synthetic days at full scale
days = generate_synthetic(SlotConfig(), 30, seed=3)
rows = []
for d in days:
    l = solve_optimal(d)[2]
    rows.append((normalized_load(bau_schedule(d)[2], l), normalized_load(heuristic_schedule(d)[2], l)))
rows = np.array(rows)
print("median normalized load  BAU %.3f  heuristic %.3f" % tuple(np.median(rows, axis=0)))
