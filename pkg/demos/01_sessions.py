"""Synthetic charging days and how raw transactions become slotted episodes."""
from datetime import datetime

import numpy as np

from evcoord.sessions import SlotConfig, Transaction, discretize, generate_synthetic, weekday_filter

cfg = SlotConfig()  # 12 slots of 2 h from 7am, 10 stations
print(cfg)

# a week of synthetic days
days = generate_synthetic(cfg, 7, seed=0)
for ep in days:
    print(ep.episode_id, "weekday" if ep.is_weekday else "weekend",
          len(ep.sessions), "sessions, demand", ep.total_demand(), "slots")
print("weekdays kept for the credit experiment:", [e.episode_id for e in weekday_filter(days)])

# occupancy never exceeds the station count
print("peak occupancy per day:", [int(ep.occupancy().max(initial=0)) for ep in days])

# raw transactions: arrival is floored to a slot, departure ceiled,
# energy turned into whole slots at the charger rate
rows = [
    Transaction("A", datetime(2021, 3, 1, 7, 30), datetime(2021, 3, 1, 13, 0), 20.0),
    Transaction("B", datetime(2021, 3, 1, 9, 10), datetime(2021, 3, 1, 17, 45), 9.0),
]
(ep,) = discretize(rows, cfg, charger_kw=7.0)
for s in ep.sessions:
    print(s.station_id, "slots", s.arrival_slot, "->", s.depart_slot, "needs", s.required_slots)

demand = np.array([e.total_demand() for e in generate_synthetic(cfg, 60, seed=1)])
print("mean daily demand over 60 days: %.1f slots" % demand.mean())
