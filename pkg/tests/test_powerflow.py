import itertools
import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from attackmdp.grid import Line, grid_from_dict, load_grid
from attackmdp.powerflow import (DispatchError, VoltageCell, flow_bounds, line_flow,
                                 newton_raphson, solve_dispatch)
from oracles import vertex_enumeration_dispatch

PJM_SCENARIOS = list(itertools.product([1.0, 0.5], repeat=3))


def pjm_loads(grid, factors):
    loads = grid.base_loads()
    loads[[1, 2, 3]] *= factors
    return loads


def test_single_generator_balance(two_bus_text):
    g = load_grid(two_bus_text)
    op = solve_dispatch(g, [0.0, 100.0])
    np.testing.assert_allclose(op.gen_mw, [100.0])
    np.testing.assert_allclose(op.flow_mw, [100.0])
    assert op.theta_rad[0] == 0.0


def two_gen_doc(two_bus_text):
    doc = yaml.safe_load(two_bus_text)
    doc["lines"][0]["limit_mw"] = 100.0  # relaxed to 120
    doc["generators"].append({"id": 1, "bus": 1, "bid": 30.0, "p_min": 0.0, "p_max": 500.0})
    doc["buses"][1]["base_load_mw"] = 200.0
    return doc


def test_congested_two_generators(two_bus_text):
    # Vertices of {g0 + g1 = 200, 0 <= g0 <= 120, g1 >= 0}: (120, 80) costs 3600,
    # (0, 200) costs 6000, so the cheap unit runs at the line limit.
    g = grid_from_dict(two_gen_doc(two_bus_text))
    op = solve_dispatch(g, [0.0, 200.0])
    np.testing.assert_allclose(op.gen_mw, [120.0, 80.0], atol=1e-7)
    assert op.dispatch_cost == pytest.approx(10 * 120 + 30 * 80)


@pytest.mark.parametrize("factors", PJM_SCENARIOS)
def test_pjm_dispatch_matches_vertex_oracle(grid, factors):
    loads = pjm_loads(grid, factors)
    op = solve_dispatch(grid, loads)
    assert op.dispatch_cost == pytest.approx(vertex_enumeration_dispatch(grid, loads), abs=1e-6)


@pytest.mark.parametrize("factors", PJM_SCENARIOS)
def test_operating_point_invariants(grid, factors):
    loads = pjm_loads(grid, factors)
    op = solve_dispatch(grid, loads)
    assert op.theta_rad[grid.slack] == 0.0
    assert abs(op.gen_mw.sum() - loads.sum()) < 1e-6
    for ln, f in zip(grid.lines, op.flow_mw):
        assert abs(f) <= 1.2 * ln.flow_limit_mw + 1e-6
    for g, p in zip(grid.generators, op.gen_mw):
        assert g.p_min_mw - 1e-9 <= p <= g.p_max_mw + 1e-9


def test_dispatch_deterministic(grid):
    a = solve_dispatch(grid, grid.base_loads())
    b = solve_dispatch(grid, grid.base_loads())
    for f in ("v_pu", "theta_rad", "gen_mw", "flow_mw"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert a.dispatch_cost == b.dispatch_cost


def test_equal_bids_prefer_lowest_index(two_bus_text):
    doc = yaml.safe_load(two_bus_text)
    doc["generators"] = [{"id": k, "bus": 0, "bid": 10.0, "p_min": 0.0, "p_max": 80.0}
                         for k in range(3)]
    op = solve_dispatch(grid_from_dict(doc), [0.0, 100.0])
    np.testing.assert_allclose(op.gen_mw, [80.0, 20.0, 0.0], atol=1e-7)


def test_infeasible_dispatch_lists_constraints(two_bus_text):
    with pytest.raises(DispatchError) as exc:
        solve_dispatch(load_grid(two_bus_text), [0.0, 900.0])
    assert any("exceeds capacity" in b for b in exc.value.binding)
    doc = two_gen_doc(two_bus_text)
    doc["generators"][1]["p_max"] = 10.0
    with pytest.raises(DispatchError) as exc:
        solve_dispatch(grid_from_dict(doc), [0.0, 200.0])
    assert any("line 0" in b for b in exc.value.binding)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_random_small_grid_dispatch_optimal(seed):
    rng = np.random.default_rng(seed)
    doc = random_grid_doc(rng)
    g = grid_from_dict(doc)
    loads = g.base_loads()
    try:
        op = solve_dispatch(g, loads)
    except DispatchError:
        assert vertex_enumeration_dispatch(g, loads) == math.inf
        return
    assert op.dispatch_cost == pytest.approx(vertex_enumeration_dispatch(g, loads), abs=1e-6)


def random_grid_doc(rng, n=4, ng=3):
    lines = [(int(rng.integers(0, i)), i) for i in range(1, n)] + [(0, n - 1)]
    return {
        "base_mva": 100.0,
        "buses": [{"id": i, "name": str(i), "is_slack": i == 0,
                   "base_load_mw": float(rng.uniform(0, 150)) if i else 0.0} for i in range(n)],
        "lines": [{"id": k, "from": a, "to": b, "r_pu": 0.0, "x_pu": float(rng.uniform(0.01, 0.1)),
                   "limit_mw": float(rng.uniform(80, 300)), "reward_weight": 1.0}
                  for k, (a, b) in enumerate(lines)],
        "generators": [{"id": k, "bus": int(rng.integers(0, n)), "bid": float(rng.uniform(5, 50)),
                        "p_min": 0.0, "p_max": float(rng.uniform(100, 400))} for k in range(ng)],
        "devices": [],
    }


# -- line flows ----------------------------------------------------------

LINE = Line(0, 0, 1, 0.0, 0.1, 300.0)


def test_dc_flow_zero_angle():
    assert line_flow(1.0, 1.0, 0.3, 0.3, LINE) == 0.0


def test_dc_flow_linear():
    assert line_flow(1.0, 1.0, 0.05, 0.0, LINE, "dc", 100.0) == pytest.approx(50.0)


def test_ac_flow_lossless_closed_form():
    p = line_flow(1.0, 1.0, 0.05, 0.0, LINE, "ac", 100.0)
    assert p == pytest.approx(100 * 10 * math.sin(0.05), rel=1e-12)
    assert p == pytest.approx(49.979, abs=1e-3)


def test_ac_flow_matches_complex_power():
    ln = Line(0, 0, 1, 0.02, 0.1, 300.0)
    vi, vj, ti, tj = 1.04, 0.98, 0.07, -0.02
    Vi, Vj = vi * np.exp(1j * ti), vj * np.exp(1j * tj)
    s = Vi * np.conj((Vi - Vj) / complex(0.02, 0.1))
    assert line_flow(vi, vj, ti, tj, ln, "ac", 100.0) == pytest.approx(100 * s.real, rel=1e-12)


def cell2(t_i, t_j, v=(1.0, 1.025)):
    return VoltageCell(np.array([v[0], v[0]]), np.array([v[1], v[1]]),
                       np.array([t_i[0], t_j[0]]), np.array([t_i[1], t_j[1]]))


def test_dc_bounds_monotone():
    lo, hi = flow_bounds(cell2((0.02, 0.04), (0.0, 0.0)), LINE, "dc", 100.0)
    assert (lo, hi) == (pytest.approx(20.0), pytest.approx(40.0))


def test_dc_bounds_straddle_zero():
    lo, hi = flow_bounds(cell2((-0.01, 0.02), (0.0, 0.0)), LINE, "dc", 100.0)
    assert lo == 0.0
    assert hi == pytest.approx(20.0)


def sample_cell(rng, cell, i, j, n):
    u = lambda lo, hi: rng.uniform(lo, hi, n)
    return (u(cell.v_lo[i], cell.v_hi[i]), u(cell.v_lo[j], cell.v_hi[j]),
            u(cell.theta_lo[i], cell.theta_hi[i]), u(cell.theta_lo[j], cell.theta_hi[j]))


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(0.001, 0.4), st.floats(0.001, 0.4),
       st.floats(0.0, 0.2), st.floats(0.005, 0.5), st.sampled_from(["dc", "ac"]),
       st.integers(0, 2**32 - 1))
def test_bounds_contain_samples(ti, tj, wi, wj, r, x, mode, seed):
    ln = Line(0, 0, 1, r, x, 300.0)
    cell = cell2((ti, ti + wi), (tj, tj + wj), (0.9, 1.1))
    lo, hi = flow_bounds(cell, ln, mode, 100.0)
    assert 0 <= lo <= hi
    rng = np.random.default_rng(seed)
    p = np.abs(line_flow(*sample_cell(rng, cell, 0, 1, 1000), ln, mode, 100.0))
    scale = max(1.0, hi)
    assert p.min() >= lo - 1e-9 * scale
    assert p.max() <= hi + 1e-9 * scale


def test_ac_bounds_tight_on_grid():
    # the bound should be attained (to sampling resolution) on a fine grid
    ln = Line(0, 0, 1, 0.01, 0.05, 300.0)
    cell = cell2((0.1, 0.15), (0.0, 0.02), (1.0, 1.1))
    lo, hi = flow_bounds(cell, ln, "ac", 100.0)
    g = np.linspace(0, 1, 21)
    vals = [abs(line_flow(1 + 0.1 * a, 1 + 0.1 * b, 0.1 + 0.05 * c, 0.02 * d, ln, "ac", 100.0))
            for a in g for b in g[::5] for c in g for d in g[::5]]
    assert min(vals) == pytest.approx(lo, rel=1e-9)
    assert max(vals) == pytest.approx(hi, rel=1e-9)


def test_newton_raphson_lossless_matches_dc_direction(grid):
    op_dc = solve_dispatch(grid, grid.base_loads())
    op_ac = solve_dispatch(grid, grid.base_loads(), mode="ac")
    assert op_ac.mode == "ac"
    assert np.all(np.sign(op_ac.flow_mw) == np.sign(op_dc.flow_mw))
    assert abs(op_ac.theta_rad[grid.slack]) < 1e-12
    v, t = newton_raphson(grid, op_dc.gen_mw @ np.eye(5)[[g.bus for g in grid.generators]]
                          - grid.base_loads(), op_dc.v_pu, op_dc.theta_rad)
    np.testing.assert_allclose(t, op_ac.theta_rad, atol=1e-9)
