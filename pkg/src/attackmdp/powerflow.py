"""Economic dispatch, line flows and flow bounds over voltage cells."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridModel, Line, susceptance_matrix
from .lp import LPError, LPInfeasible, LPUnbounded, lp_solve

DEFAULT_RELAX = 1.2


class DispatchError(Exception):
    """Economic dispatch has no (finite) optimum."""

    def __init__(self, message: str, binding: list[str] | None = None):
        self.binding = binding or []
        if self.binding:
            message = f"{message}; binding: {', '.join(self.binding)}"
        super().__init__(message)


class PowerFlowError(Exception):
    pass


@dataclass(frozen=True)
class OperatingPoint:
    v_pu: np.ndarray
    theta_rad: np.ndarray
    gen_mw: np.ndarray
    flow_mw: np.ndarray
    dispatch_cost: float
    mode: str = "dc"


@dataclass(frozen=True)
class VoltageCell:
    """Per-bus intervals [lo, hi) for voltage magnitude and angle."""

    v_lo: np.ndarray
    v_hi: np.ndarray
    theta_lo: np.ndarray
    theta_hi: np.ndarray


def _line_admittance(line: Line) -> tuple[float, float]:
    y = 1.0 / complex(line.resistance_pu, line.reactance_pu)
    return y.real, y.imag


def line_flow(v_i, v_j, theta_i, theta_j, line: Line, mode: str = "dc", base_mva: float = 100.0):
    """Real power (MW) leaving bus i on ``line``; works elementwise on arrays."""
    dtheta = np.subtract(theta_i, theta_j)
    if mode == "dc":
        return base_mva * dtheta / line.reactance_pu
    g, b = _line_admittance(line)
    v_i = np.asarray(v_i, dtype=float)
    return base_mva * (g * v_i**2 - v_i * v_j * (g * np.cos(dtheta) + b * np.sin(dtheta)))


def end_flow(point: OperatingPoint, line: Line, end: str, base_mva: float) -> float:
    i, j = (line.from_bus, line.to_bus) if end == "from" else (line.to_bus, line.from_bus)
    return float(line_flow(point.v_pu[i], point.v_pu[j], point.theta_rad[i], point.theta_rad[j],
                           line, point.mode, base_mva))


def _signed_flow_range(v_i, v_j, dtheta, line: Line, mode: str, base_mva: float):
    """Exact min/max of the signed sending-end flow over a (v_i, v_j, dtheta) box."""
    if mode == "dc":
        ends = [base_mva * t / line.reactance_pu for t in dtheta]
        return min(ends), max(ends)

    g, b = _line_admittance(line)
    # The flow is linear in v_j, depends on dtheta only through
    # c(t) = g cos t + b sin t, and is a convex quadratic in v_i (g >= 0).
    # Any box extremum is coordinatewise optimal, so it lies on this grid.
    thetas = list(dtheta)
    phi = math.atan2(b, g)
    k_lo = math.ceil((dtheta[0] - phi) / math.pi)
    k_hi = math.floor((dtheta[1] - phi) / math.pi)
    thetas += [phi + k * math.pi for k in range(k_lo, k_hi + 1)]
    vals = []
    for vj in v_j:
        for t in thetas:
            c = g * math.cos(t) + b * math.sin(t)
            vis = list(v_i)
            # interior vertex v* = vj*c/(2g), tested without dividing by a tiny g
            if g > 0 and 2 * g * v_i[0] < vj * c < 2 * g * v_i[1]:
                vis.append(vj * c / (2 * g))
            vals += [base_mva * (g * vi * vi - vi * vj * c) for vi in vis]
    return min(vals), max(vals)


def flow_bounds(cell: VoltageCell, line: Line, mode: str = "dc",
                base_mva: float = 100.0) -> tuple[float, float]:
    """Lower and upper bound of |P_ij| over the closure of ``cell``.

    Both modes are exact: the signed flow is bounded by enumerating the
    candidate extremum points of the box, and |P| reaches 0 whenever the
    signed range straddles zero (the cell is connected).
    """
    i, j = line.from_bus, line.to_bus
    dtheta = (cell.theta_lo[i] - cell.theta_hi[j], cell.theta_hi[i] - cell.theta_lo[j])
    lo, hi = _signed_flow_range((cell.v_lo[i], cell.v_hi[i]), (cell.v_lo[j], cell.v_hi[j]),
                                dtheta, line, mode, base_mva)
    if lo <= 0.0 <= hi:
        return 0.0, max(-lo, hi)
    return min(abs(lo), abs(hi)), max(abs(lo), abs(hi))


def dc_angles(grid: GridModel, injections_mw: np.ndarray) -> np.ndarray:
    """Bus angles (rad) for net injections, slack angle pinned at 0."""
    B = susceptance_matrix(grid)
    keep = [i for i in range(grid.n_buses) if i != grid.slack]
    theta = np.zeros(grid.n_buses)
    theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], injections_mw[keep] / grid.base_mva)
    return theta


def _gen_incidence(grid: GridModel) -> np.ndarray:
    A = np.zeros((grid.n_buses, len(grid.generators)))
    for g in grid.generators:
        A[g.bus, g.id] = 1.0
    return A


def _dispatch_lp(grid: GridModel, loads: np.ndarray, relax: float):
    """LP data over x = [P_g (MW), theta (rad)]."""
    n, ng = grid.n_buses, len(grid.generators)
    B = susceptance_matrix(grid)
    A_eq = np.hstack([_gen_incidence(grid), -grid.base_mva * B])
    b_eq = np.asarray(loads, dtype=float)
    rows, rhs, names = [], [], []
    for ln in grid.lines:
        r = np.zeros(ng + n)
        r[ng + ln.from_bus] = grid.base_mva / ln.reactance_pu
        r[ng + ln.to_bus] = -grid.base_mva / ln.reactance_pu
        cap = relax * ln.flow_limit_mw
        rows += [r, -r]
        rhs += [cap, cap]
        names += [f"line {ln.id} forward limit", f"line {ln.id} reverse limit"]
    bounds = [(g.p_min_mw, g.p_max_mw) for g in grid.generators]
    bounds += [(0.0, 0.0) if i == grid.slack else (None, None) for i in range(n)]
    c = np.concatenate([[g.bid_per_mwh for g in grid.generators], np.zeros(n)])
    return c, np.array(rows).reshape(-1, ng + n), np.array(rhs), A_eq, b_eq, bounds, names


def _diagnose(grid: GridModel, loads: np.ndarray, relax: float) -> list[str]:
    """Which constraints must be violated to restore feasibility (phase-1 LP)."""
    n, ng = grid.n_buses, len(grid.generators)
    _, A_ub, b_ub, A_eq, b_eq, bounds, names = _dispatch_lp(grid, loads, relax)
    m = len(b_ub)
    # slack columns: one per flow row, then +/- per bus balance
    A_ub2 = np.hstack([A_ub, -np.eye(m), np.zeros((m, 2 * n))])
    A_eq2 = np.hstack([A_eq, np.zeros((n, m)), np.eye(n), -np.eye(n)])
    # balance slack is dearer, so line limits are blamed before load shedding
    c = np.concatenate([np.zeros(ng + n), np.ones(m), np.full(2 * n, 1e3)])
    res = lp_solve(c, A_ub2, b_ub, A_eq2, b_eq, bounds + [(0, None)] * (m + 2 * n))
    s = res.x[ng + n:]
    out = [names[k] for k in range(m) if s[k] > 1e-7]
    for i in range(n):
        if s[m + i] > 1e-7:
            out.append(f"bus {i} balance (short {s[m + i]:.3f} MW)")
        if s[m + n + i] > 1e-7:
            out.append(f"bus {i} balance (surplus {s[m + n + i]:.3f} MW)")
    total_cap = sum(g.p_max_mw for g in grid.generators)
    if loads.sum() > total_cap:
        out.insert(0, f"total load {loads.sum():.3f} MW exceeds capacity {total_cap:.3f} MW")
    return out


def solve_dispatch(grid: GridModel, loads, relax: float = DEFAULT_RELAX, mode: str = "dc",
                   v_pu: float = 1.0) -> OperatingPoint:
    """Least-bid DC dispatch with line limits relaxed to ``relax`` times P^M.

    Among cost-optimal dispatches the lowest-index generators are loaded
    first (lexicographic tie-break), which makes the result unique.
    """
    loads = np.asarray(loads, dtype=float)
    if loads.shape != (grid.n_buses,) or np.any(loads < 0):
        raise ValueError("loads must be a nonnegative MW vector with one entry per bus")
    ng = len(grid.generators)
    c, A_ub, b_ub, A_eq, b_eq, bounds, _ = _dispatch_lp(grid, loads, relax)
    try:
        best = lp_solve(c, A_ub, b_ub, A_eq, b_eq, bounds)
    except LPInfeasible:
        raise DispatchError("economic dispatch infeasible",
                            _diagnose(grid, loads, relax)) from None
    except LPUnbounded:
        raise DispatchError("economic dispatch unbounded (check bids and limits)") from None
    except LPError as exc:
        raise DispatchError(f"economic dispatch failed: {exc}") from None

    # Lexicographic tie-break on the optimal face.
    budget = best.objective + 1e-8
    A_ub = np.vstack([A_ub, c])
    b_ub = np.append(b_ub, budget)
    x = best.x
    for k in range(ng):
        obj = np.zeros_like(c)
        obj[k] = -1.0
        x = lp_solve(obj, A_ub, b_ub, A_eq, b_eq, bounds).x
        lo = max(x[k] - 1e-9, bounds[k][0])
        bounds[k] = (lo, max(lo, x[k]))
    gen = np.clip(x[:ng], [g.p_min_mw for g in grid.generators],
                  [g.p_max_mw for g in grid.generators])

    inj = _gen_incidence(grid) @ gen - loads
    theta = dc_angles(grid, inj)
    v = np.full(grid.n_buses, float(v_pu))
    if mode == "ac":
        v, theta = newton_raphson(grid, inj, v, theta)
    elif mode != "dc":
        raise ValueError(f"unknown mode {mode!r}")
    flows = np.array([line_flow(v[ln.from_bus], v[ln.to_bus], theta[ln.from_bus],
                                theta[ln.to_bus], ln, mode, grid.base_mva) for ln in grid.lines])
    cost = float(np.dot([g.bid_per_mwh for g in grid.generators], gen))
    return OperatingPoint(v, theta, gen, flows, cost, mode)


def admittance_matrix(grid: GridModel) -> np.ndarray:
    n = grid.n_buses
    Y = np.zeros((n, n), dtype=complex)
    for ln in grid.lines:
        y = 1.0 / complex(ln.resistance_pu, ln.reactance_pu)
        i, j = ln.from_bus, ln.to_bus
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


def newton_raphson(grid: GridModel, injections_mw, v0, theta0, tol: float = 1e-10,
                   max_iter: int = 30):
    """AC power flow: slack fixed, PV at generator buses, PQ (Q=0) elsewhere.

    Real injections at non-slack buses are held at the dispatched values;
    the slack absorbs losses.
    """
    Y = admittance_matrix(grid)
    slack = grid.slack
    gen_buses = {g.bus for g in grid.generators}
    pv = [i for i in range(grid.n_buses) if i in gen_buses and i != slack]
    pq = [i for i in range(grid.n_buses) if i not in gen_buses and i != slack]
    pvpq = pv + pq
    p_spec = np.asarray(injections_mw, dtype=float) / grid.base_mva
    V = np.asarray(v0, dtype=float) * np.exp(1j * np.asarray(theta0, dtype=float))

    for _ in range(max_iter):
        S = V * np.conj(Y @ V)
        mis = np.concatenate([S.real[pvpq] - p_spec[pvpq], S.imag[pq]])
        if np.max(np.abs(mis), initial=0.0) < tol:
            return np.abs(V), np.angle(V) - np.angle(V[slack])
        Ibus = Y @ V
        dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Y @ np.diag(V))
        dS_dVm = np.diag(V) @ np.conj(Y @ np.diag(V / np.abs(V))) + \
            np.diag(np.conj(Ibus)) @ np.diag(V / np.abs(V))
        J = np.block([
            [dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]],
            [dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        dx = np.linalg.solve(J, -mis)
        va, vm = np.angle(V), np.abs(V)
        va[pvpq] += dx[:len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        V = vm * np.exp(1j * va)
    raise PowerFlowError(f"Newton-Raphson did not converge in {max_iter} iterations")
