"""Quadratic versus linear costs built from optimal profiles of earlier days."""
from evcoord.costs import build_profile_set, cost_linear_avg, cost_linear_median, cost_quadratic
from evcoord.evaluation import optimal_loads
from evcoord.sessions import SlotConfig, generate_synthetic, weekday_filter

days = weekday_filter(generate_synthetic(SlotConfig(), 21, seed=2))
order = [d.episode_id for d in days]
history, _ = optimal_loads(days)

target = order[-1]
for E in (1, 5, 10):
    ref = build_profile_set(3, target, E, history, order)  # slot 3 of the last weekday
    print(f"E={E:2d} reference powers {ref.values}")
    for p in (0, 2, 4, 6):
        print(f"   p={p}  quadratic {cost_quadratic(p):4.0f}  "
              f"avg {cost_linear_avg(p, ref):5.2f}  median {cost_linear_median(p, ref):5.2f}")
