"""Coordinated charging of an EV fleet with batch reinforcement learning.

Submodules:

- ``sessions``: slot grid, session records, discretization, synthetic data
- ``environment``: car-park MDP (observations, actions, transitions)
- ``costs``: quadratic and reference-tracking linear costs
- ``oracle``: exact load-flattening schedule (min-cost flow)
- ``baselines``: business-as-usual and spreading heuristic
- ``network``, ``qlearn``: numpy Q-network and fitted Q-iteration
- ``evaluation``: metrics, Wilcoxon test, validation windows, experiments
- ``cli``: command-line entry point
"""
from .sessions import Episode, SessionRecord, SlotConfig, generate_synthetic
from .oracle import solve_optimal
from .qlearn import FqiConfig, MdpConfig, fqi

__version__ = "0.1.0"

__all__ = [
    "Episode",
    "FqiConfig",
    "MdpConfig",
    "SessionRecord",
    "SlotConfig",
    "fqi",
    "generate_synthetic",
    "solve_optimal",
]
