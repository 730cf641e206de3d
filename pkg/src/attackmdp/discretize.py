"""Discrete electrical states, load Markov chains and the MDP state space."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridModel
from .powerflow import DEFAULT_RELAX, OperatingPoint, VoltageCell, solve_dispatch

log = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 10**6


class StateSpaceTooLarge(Exception):
    pass


def quantize_index(value: float, lo: float, hi: float, n: int) -> int:
    """Bin index q with value in [lo + q*w, lo + (q+1)*w), w = (hi-lo)/(n-1).

    Values outside the window are clamped to the edge bins.
    """
    if n < 2:
        raise ValueError("need at least two levels")
    if not lo < hi:
        raise ValueError(f"empty window [{lo}, {hi}]")
    if value >= hi:
        return n - 1
    q = math.floor((value - lo) / ((hi - lo) / (n - 1)))
    return min(max(q, 0), n - 1)


def quantize(value: float, lo: float, hi: float, n: int) -> float:
    return quantize_index(value, lo, hi, n) / (n - 1)


@dataclass(frozen=True)
class DiscretizationScheme:
    n_v: int
    n_theta: int
    v_min: np.ndarray
    v_max: np.ndarray
    theta_min: np.ndarray
    theta_max: np.ndarray

    def __post_init__(self):
        if self.n_v < 2 or self.n_theta < 2:
            raise ValueError("n_v and n_theta must be >= 2")
        if np.any(self.v_max <= self.v_min) or np.any(self.theta_max <= self.theta_min):
            raise ValueError("each bus window needs min < max")

    @property
    def v_step(self) -> np.ndarray:
        return (self.v_max - self.v_min) / (self.n_v - 1)

    @property
    def theta_step(self) -> np.ndarray:
        return (self.theta_max - self.theta_min) / (self.n_theta - 1)

    def levels(self, point: OperatingPoint) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Integer (V, theta) levels of every bus at an operating point."""
        qv = tuple(quantize_index(v, lo, hi, self.n_v)
                   for v, lo, hi in zip(point.v_pu, self.v_min, self.v_max))
        qt = tuple(quantize_index(t, lo, hi, self.n_theta)
                   for t, lo, hi in zip(point.theta_rad, self.theta_min, self.theta_max))
        return qv, qt

    def cell(self, qv, qt) -> VoltageCell:
        qv, qt = np.asarray(qv), np.asarray(qt)
        v_lo = self.v_min + qv * self.v_step
        t_lo = self.theta_min + qt * self.theta_step
        return VoltageCell(v_lo, v_lo + self.v_step, t_lo, t_lo + self.theta_step)


@dataclass(frozen=True)
class DiscreteElectricalState:
    qv: tuple[int, ...]
    qtheta: tuple[int, ...]
    n_v: int
    n_theta: int

    @property
    def v_bar(self) -> tuple[float, ...]:
        return tuple(q / (self.n_v - 1) for q in self.qv)

    @property
    def theta_bar(self) -> tuple[float, ...]:
        return tuple(q / (self.n_theta - 1) for q in self.qtheta)


@dataclass(frozen=True)
class LoadChain:
    bus: int
    levels_mw: tuple[float, ...]
    transition: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        k = len(self.levels_mw)
        if P.shape != (k, k):
            raise ValueError(f"load chain at bus {self.bus}: transition must be {k}x{k}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError(f"load chain at bus {self.bus}: rows must be probability vectors")
        if len(set(self.levels_mw)) != k or any(lv < 0 for lv in self.levels_mw):
            raise ValueError(f"load chain at bus {self.bus}: levels must be distinct and >= 0")
        object.__setattr__(self, "transition", P)

    @property
    def n_levels(self) -> int:
        return len(self.levels_mw)


def default_chains(grid: GridModel, low_fraction: float = 0.5, p_switch: float = 0.5):
    """Two-level chain per load bus: base load and ``low_fraction`` of it."""
    P = np.array([[1 - p_switch, p_switch], [p_switch, 1 - p_switch]])
    return [LoadChain(b, (grid.buses[b].base_load_mw, low_fraction * grid.buses[b].base_load_mw), P)
            for b in grid.load_buses]


def load_scenarios(chains) -> list[tuple[int, ...]]:
    """All level combinations, first chain varying fastest."""
    radices = [c.n_levels for c in chains]
    return [tuple(reversed(combo)) for combo in itertools.product(*(range(r) for r in reversed(radices)))]


def scenario_loads(grid: GridModel, chains, load_idx) -> np.ndarray:
    loads = grid.base_loads()
    for chain, q in zip(chains, load_idx):
        loads[chain.bus] = chain.levels_mw[q]
    return loads


def dispatch_scenarios(grid, chains, relax=DEFAULT_RELAX, mode="dc", v_pu=1.0):
    return [solve_dispatch(grid, scenario_loads(grid, chains, idx), relax, mode, v_pu)
            for idx in load_scenarios(chains)]


def angle_bounds_from_scenarios(grid: GridModel, chains, delta_theta: float,
                                points: list[OperatingPoint] | None = None,
                                relax: float = DEFAULT_RELAX):
    """Per-bus angle windows of width ``delta_theta`` (rad) over all load scenarios.

    Each window is centered on the observed [min, max] of the bus angle;
    buses whose spread exceeds ``delta_theta`` get the observed spread
    instead, with a warning. Returns ``(theta_min, theta_max, warnings)``.
    """
    if points is None:
        points = dispatch_scenarios(grid, chains, relax)
    thetas = np.array([p.theta_rad for p in points])
    lo, hi = thetas.min(axis=0), thetas.max(axis=0)
    mid = 0.5 * (lo + hi)
    warnings = []
    tmin, tmax = mid - delta_theta / 2, mid + delta_theta / 2
    for i in np.flatnonzero(hi - lo > delta_theta):
        warnings.append(f"bus {i}: angle spread {math.degrees(hi[i] - lo[i]):.3f} deg exceeds "
                        f"window {math.degrees(delta_theta):.3f} deg; widened")
        tmin[i], tmax[i] = lo[i], hi[i]
    for w in warnings:
        log.warning(w)
    return tmin, tmax, warnings


def build_scheme(grid, chains, n_v=5, n_theta=10, v_min=1.0, v_max=1.1, delta_theta_deg=5.0,
                 points=None, relax=DEFAULT_RELAX):
    tmin, tmax, warnings = angle_bounds_from_scenarios(grid, chains, math.radians(delta_theta_deg),
                                                       points, relax)
    n = grid.n_buses
    scheme = DiscretizationScheme(n_v, n_theta, np.full(n, float(v_min)), np.full(n, float(v_max)),
                                  tmin, tmax)
    return scheme, warnings


@dataclass(frozen=True)
class SystemState:
    index: int
    scenario: int
    load_idx: tuple[int, ...]
    device_open: tuple[bool, ...]
    electrical: DiscreteElectricalState

    @property
    def open_devices(self) -> frozenset[int]:
        return frozenset(j for j, o in enumerate(self.device_open) if o)


@dataclass
class StateSpace:
    """Canonical enumeration: index = scenario + n_scenarios * device_mask.

    Bit j of the device mask is set when device j is open.
    """

    states: list[SystemState]
    scenarios: list[tuple[int, ...]]
    points: list[OperatingPoint]
    n_devices: int
    electrical: list[DiscreteElectricalState] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i: int) -> SystemState:
        return self.states[i]

    def __iter__(self):
        return iter(self.states)

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    def index_of(self, scenario: int, mask: int) -> int:
        return scenario + self.n_scenarios * mask

    def state_index(self, load_idx, device_open) -> int:
        mask = sum(1 << j for j, o in enumerate(device_open) if o)
        return self.index_of(self.scenarios.index(tuple(load_idx)), mask)


def enumerate_states(grid: GridModel, chains, scheme: DiscretizationScheme,
                     points: list[OperatingPoint] | None = None,
                     max_states: int = DEFAULT_MAX_STATES, relax: float = DEFAULT_RELAX,
                     mode: str = "dc") -> StateSpace:
    n_dev = len(grid.devices)
    scenarios = load_scenarios(chains)
    total = len(scenarios) * 2**n_dev
    if total > max_states:
        raise StateSpaceTooLarge(
            f"{total} states exceed the cap of {max_states}; use fewer load levels or devices")
    if points is None:
        points = dispatch_scenarios(grid, chains, relax, mode)
    elec = [DiscreteElectricalState(*scheme.levels(p), scheme.n_v, scheme.n_theta) for p in points]
    states = []
    for mask in range(2**n_dev):
        device_open = tuple(bool(mask >> j & 1) for j in range(n_dev))
        for k, idx in enumerate(scenarios):
            states.append(SystemState(len(states), k, idx, device_open, elec[k]))
    return StateSpace(states, scenarios, list(points), n_dev, elec)
