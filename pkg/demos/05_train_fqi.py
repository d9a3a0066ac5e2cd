"""Train a vector-state policy with fitted Q-iteration and compare it to the baselines.

Small settings so it runs in seconds; the acceptance suite trains at desk scale.
"""
import warnings

import numpy as np

from evcoord.baselines import bau_schedule, heuristic_schedule
from evcoord.evaluation import evaluate_networks, normalized_load, optimal_loads
from evcoord.qlearn import EXPERIENCE_SETS, FqiConfig, build_experience, fqi, sample_trajectories
from evcoord.sessions import SlotConfig, generate_synthetic

warnings.simplefilter("ignore", UserWarning)

days = generate_synthetic(SlotConfig(), 75, seed=1)
train, test = days[:60], days[60:]
cfg = FqiConfig(iterations=6, trajectories_per_episode=60)
mdp = EXPERIENCE_SETS["F2"]  # vector state, locally scaled actions, quadratic cost

F = build_experience(sample_trajectories(train, cfg.trajectories_per_episode, cfg.seed), mdp)
print(len(F.cost), "unique transitions, input width", F.x.shape[1])
result = fqi(F, cfg)

_, l_opt = optimal_loads(test)
loads = evaluate_networks(result, test, l_opt)
for k, row in enumerate(loads, start=1):
    print(f"iteration {k}: median normalized load {np.median(row):.3f}  ({result.seconds[k-1]:.1f}s)")
bau = [normalized_load(bau_schedule(e)[2], l_opt[e.episode_id]) for e in test]
heur = [normalized_load(heuristic_schedule(e)[2], l_opt[e.episode_id]) for e in test]
print(f"BAU {np.median(bau):.3f}  heuristic {np.median(heur):.3f}")
