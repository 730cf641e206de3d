"""Data-injection actions and their detection probability, reward and cost.

An attack shifts the estimated (V, theta) of up to ``d`` target buses by
whole discretization steps. It pays off on every incident line whose
apparent congestion status flips, and it must forge every measurement
that the shift changes, so every device owning such a measurement has to
be open.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .discretize import DiscretizationScheme, StateSpace, SystemState
from .grid import BusInjection, BusVoltage, GridModel, LineFlow, Measurement
from .powerflow import OperatingPoint, VoltageCell, end_flow, flow_bounds

# Measurement changes at or below this size (MW or p.u.) are float noise.
CHANGE_ATOL = 1e-9


@dataclass(frozen=True)
class AttackParams:
    d: int = 1
    detect_c: float = 0.0
    g_u: float = 0.05
    p_t: float = 0.5

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("d must be >= 0")
        if self.detect_c < 0 or self.g_u < 0:
            raise ValueError("detect_c and g_u must be >= 0")
        if not 0.0 <= self.p_t <= 1.0:
            raise ValueError("p_t must be a probability")


@dataclass(frozen=True)
class Action:
    """An injection, or no attack when ``target_buses`` is empty.

    Errors are signed step counts: multiples of the bus's V and theta bin
    widths. ``target_lines`` and ``line_rewards`` are aligned.
    """

    target_buses: tuple[int, ...] = ()
    e_v_steps: tuple[int, ...] = ()
    e_theta_steps: tuple[int, ...] = ()
    target_lines: tuple[int, ...] = ()
    line_rewards: tuple[float, ...] = ()
    footprint: frozenset[int] = field(default_factory=frozenset)

    @property
    def is_attack(self) -> bool:
        return bool(self.target_buses)

    def describe(self) -> str:
        if not self.is_attack:
            return "no-attack"
        parts = [f"bus{b}(dV{ev:+d},dT{et:+d})"
                 for b, ev, et in zip(self.target_buses, self.e_v_steps, self.e_theta_steps)]
        lines = " ".join(f"L{ln}" for ln in self.target_lines)
        devs = " ".join(f"D{j}" for j in sorted(self.footprint))
        return f"attack {' '.join(parts)} lines[{lines}] devices[{devs}]"


NO_ATTACK = Action()


class MeasurementModel:
    """All device measurements, flattened, with the owning device of each.

    ``sigma`` is kept for reporting (the diagonal of the noise covariance);
    nothing here estimates states.
    """

    def __init__(self, grid: GridModel, sigma: float = 0.01):
        self.grid = grid
        self.entries: list[tuple[int, Measurement]] = [
            (d.id, m) for d in grid.devices for m in d.measured]
        self.sigma = np.full(len(self.entries), float(sigma))

    def __len__(self) -> int:
        return len(self.entries)

    def h(self, point: OperatingPoint) -> np.ndarray:
        return np.array([self._h_one(m, point) for _, m in self.entries])

    def _h_one(self, m: Measurement, point: OperatingPoint) -> float:
        grid = self.grid
        if isinstance(m, BusVoltage):
            return float(point.v_pu[m.bus])
        if isinstance(m, LineFlow):
            return end_flow(point, grid.lines[m.line], m.end, grid.base_mva)
        return sum(end_flow(point, grid.lines[k], "from" if grid.lines[k].from_bus == m.bus else "to",
                            grid.base_mva)
                   for k in grid.incident_lines(m.bus))


def _state_errors(action: Action, scheme: DiscretizationScheme, n: int):
    e_v, e_t = np.zeros(n), np.zeros(n)
    for b, sv, st in zip(action.target_buses, action.e_v_steps, action.e_theta_steps):
        e_v[b] = sv * scheme.v_step[b]
        e_t[b] = st * scheme.theta_step[b]
    return e_v, e_t


def _dc_deltas(mm: MeasurementModel, e_v: np.ndarray, e_t: np.ndarray) -> np.ndarray:
    # DC flows are linear in theta: change each flow by its own increment
    # rather than differencing two large numbers.
    grid = mm.grid

    def dflow(k: int, end: str) -> float:
        ln = grid.lines[k]
        d = grid.base_mva * (e_t[ln.from_bus] - e_t[ln.to_bus]) / ln.reactance_pu
        return d if end == "from" else -d

    out = []
    for _, m in mm.entries:
        if isinstance(m, BusVoltage):
            out.append(e_v[m.bus])
        elif isinstance(m, LineFlow):
            out.append(dflow(m.line, m.end))
        else:
            out.append(sum(dflow(k, "from" if grid.lines[k].from_bus == m.bus else "to")
                           for k in grid.incident_lines(m.bus)))
    return np.array(out)


def measurement_error_vector(point: OperatingPoint, action: Action, mm: MeasurementModel,
                             scheme: DiscretizationScheme) -> np.ndarray:
    """e_z = h(V + e_V, theta + e_theta) - h(V, theta), one entry per measurement.

    Entries whose change is within CHANGE_ATOL are reported as exactly 0.
    """
    e_v, e_t = _state_errors(action, scheme, mm.grid.n_buses)
    if point.mode == "dc":
        ez = _dc_deltas(mm, e_v, e_t)
    else:
        forged = OperatingPoint(point.v_pu + e_v, point.theta_rad + e_t, point.gen_mw,
                                point.flow_mw, point.dispatch_cost, point.mode)
        ez = mm.h(forged) - mm.h(point)
    ez[np.abs(ez) <= CHANGE_ATOL] = 0.0
    return ez


def device_footprint(action: Action, mm: MeasurementModel, scheme: DiscretizationScheme,
                     point: OperatingPoint) -> frozenset[int]:
    """Devices owning at least one measurement the injection changes."""
    if not action.is_attack:
        return frozenset()
    ez = measurement_error_vector(point, action, mm, scheme)
    return frozenset(mm.entries[k][0] for k in np.flatnonzero(ez))


def detection_probability(action: Action, scheme: DiscretizationScheme,
                          params: AttackParams) -> float:
    """p_d = 1 - exp(-C * sum_i (|e_V_i|/dV_i + |e_theta_i|/dtheta_i))."""
    if not action.is_attack:
        return 0.0
    # |e| / window = |steps| / (levels - 1) for every bus.
    load = sum(abs(sv) / (scheme.n_v - 1) + abs(st) / (scheme.n_theta - 1)
               for sv, st in zip(action.e_v_steps, action.e_theta_steps))
    return -math.expm1(-params.detect_c * load)


def _flip_reward(limit: float, weight: float, true_b, forged_b) -> float | None:
    true_min, true_max = true_b
    forged_min, forged_max = forged_b
    if forged_min > limit > true_max:
        return weight * (forged_min - limit) / limit
    if true_min > limit > forged_max:
        return weight * (limit - forged_max) / limit
    return None


def line_reward(line, true_cell: VoltageCell, forged_cell: VoltageCell, mode: str = "dc",
                base_mva: float = 100.0) -> float:
    r = _flip_reward(line.flow_limit_mw, line.reward_weight,
                     flow_bounds(true_cell, line, mode, base_mva),
                     flow_bounds(forged_cell, line, mode, base_mva))
    return 0.0 if r is None else r


def expected_reward(action: Action, scheme: DiscretizationScheme, params: AttackParams) -> float:
    if not action.is_attack:
        return 0.0
    return (1.0 - detection_probability(action, scheme, params)) * sum(action.line_rewards)


def attack_cost(action: Action, params: AttackParams) -> float:
    return params.g_u * len(action.footprint)


class ActionCatalog:
    """Feasible actions per state.

    Everything except the device-availability filter depends only on the
    load scenario, so candidates are built once per scenario and shared by
    the 2^N device masks.
    """

    def __init__(self, grid: GridModel, space: StateSpace, scheme: DiscretizationScheme,
                 d: int, mm: MeasurementModel | None = None, mode: str = "dc"):
        self.grid, self.space, self.scheme, self.d, self.mode = grid, space, scheme, d, mode
        self.mm = mm or MeasurementModel(grid)
        self._candidates: dict[int, list[Action]] = {}

    def candidates(self, scenario: int) -> list[Action]:
        """All attacks with a nonempty target-line set, ignoring device status."""
        if scenario not in self._candidates:
            self._candidates[scenario] = list(self._generate(scenario))
        return self._candidates[scenario]

    def _generate(self, scenario: int):
        grid, scheme, mode = self.grid, self.scheme, self.mode
        elec = self.space.electrical[scenario]
        point = self.space.points[scenario]
        qv, qt = np.array(elec.qv), np.array(elec.qtheta)
        true_cell = scheme.cell(qv, qt)
        true_bounds = [flow_bounds(true_cell, ln, mode, grid.base_mva) for ln in grid.lines]
        per_bus = {b: [(a, c) for a in range(scheme.n_v) for c in range(scheme.n_theta)
                       if (a, c) != (qv[b], qt[b])]
                   for b in range(grid.n_buses)}

        for size in range(1, min(self.d, grid.n_buses) + 1):
            for buses in itertools.combinations(range(grid.n_buses), size):
                lines = [ln for ln in grid.lines if any(ln.touches(b) for b in buses)]
                for levels in itertools.product(*(per_bus[b] for b in buses)):
                    fv, ft = qv.copy(), qt.copy()
                    for b, (a, c) in zip(buses, levels):
                        fv[b], ft[b] = a, c
                    forged = scheme.cell(fv, ft)
                    hits = []
                    for ln in lines:
                        r = _flip_reward(ln.flow_limit_mw, ln.reward_weight, true_bounds[ln.id],
                                         flow_bounds(forged, ln, mode, grid.base_mva))
                        if r is not None:
                            hits.append((ln.id, r))
                    if not hits:
                        continue
                    act = Action(buses,
                                 tuple(int(fv[b] - qv[b]) for b in buses),
                                 tuple(int(ft[b] - qt[b]) for b in buses),
                                 tuple(h[0] for h in hits), tuple(h[1] for h in hits))
                    fp = device_footprint(act, self.mm, scheme, point)
                    yield Action(act.target_buses, act.e_v_steps, act.e_theta_steps,
                                 act.target_lines, act.line_rewards, fp)

    def actions(self, state: SystemState) -> list[Action]:
        """NoAttack followed by every candidate whose devices are all open."""
        open_ = state.open_devices
        return [NO_ATTACK] + [a for a in self.candidates(state.scenario) if a.footprint <= open_]


def enumerate_actions(state: SystemState, grid: GridModel, space: StateSpace,
                      scheme: DiscretizationScheme, params: AttackParams,
                      mm: MeasurementModel | None = None, mode: str = "dc") -> list[Action]:
    return ActionCatalog(grid, space, scheme, params.d, mm, mode).actions(state)
