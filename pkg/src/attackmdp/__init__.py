"""Optimal cyber-data-attack strategies against power-system state estimation.

The intruder's problem is a discounted MDP over discretized grid states and
measuring-device availability; its optimal policy and the stationary law of
the induced chain give per-line and per-device attack likelihoods.
"""

from .attack import NO_ATTACK, Action, AttackParams, MeasurementModel
from .grid import GridModel, load_grid, pjm5, validate
from .pipeline import ScenarioConfig, build_model, read_scenario, solve, sweep_detect_c

__all__ = [
    "NO_ATTACK", "Action", "AttackParams", "MeasurementModel", "GridModel", "load_grid",
    "pjm5", "validate", "ScenarioConfig", "build_model", "read_scenario", "solve",
    "sweep_detect_c",
]
__version__ = "0.1.0"
