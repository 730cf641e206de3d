"""Scenario configuration and the end-to-end attack-likelihood pipeline.

A scenario file (YAML) looks like::

    grid: pjm5.yaml            # relative to the scenario file, or builtin:pjm5
    mode: dc
    dispatch: {relax: 1.2}
    discretization: {n_v: 5, n_theta: 10, delta_theta_deg: 5.0, v_min: 1.0, v_max: 1.1}
    load_chains:               # optional; default is two levels per load bus
      - {bus: 1, levels_mw: [300, 150], transition: [[0.5, 0.5], [0.5, 0.5]]}
    attack: {d: 1, c: 0.0, c_sweep: [0, 1, 2], g_u: 0.05, p_t: 0.5}
    mdp: {gamma: 0.95, vi_tol: 1.0e-9, vi_max_iters: 100000}
    output: {directory: out, formats: [csv]}

Every block and key is optional; omitted values take the defaults above.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import grid as gridmod
from .analysis import (AnalysisReport, StationaryDistribution, device_intrusion_probabilities,
                       induced_chain, line_attack_probabilities, stationary_distribution)
from .attack import Action, ActionCatalog, AttackParams, MeasurementModel
from .discretize import (DEFAULT_MAX_STATES, DiscretizationScheme, LoadChain, StateSpace,
                         build_scheme, default_chains, dispatch_scenarios, enumerate_states)
from .grid import GridModel
from .mdp import (Policy, TransitionModel, ValueFunction, build_transitions, extract_policy,
                  solve_mdp_lp, value_iteration)
from .powerflow import DEFAULT_RELAX, OperatingPoint

log = logging.getLogger(__name__)

STAGES = ("config", "grid", "dispatch", "discretize", "attack", "mdp", "analysis")


class PipelineError(Exception):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def _obj(props: dict) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props}


_NUM, _INT = {"type": "number"}, {"type": "integer"}
SCENARIO_SCHEMA = _obj({
    "grid": {"type": "string"},
    "mode": {"enum": ["dc", "ac"]},
    "dispatch": _obj({"relax": _NUM}),
    "discretization": _obj({"n_v": _INT, "n_theta": _INT, "delta_theta_deg": _NUM,
                            "v_min": _NUM, "v_max": _NUM, "max_states": _INT}),
    "load_chains": {"type": "array", "items": {
        **_obj({"bus": _INT, "levels_mw": {"type": "array", "items": _NUM},
                "transition": {"type": "array", "items": {"type": "array", "items": _NUM}}}),
        "required": ["bus", "levels_mw", "transition"]}},
    "attack": _obj({"d": _INT, "c": _NUM, "c_sweep": {"type": "array", "items": _NUM},
                    "g_u": _NUM, "p_t": _NUM}),
    "mdp": _obj({"gamma": _NUM, "vi_tol": _NUM, "vi_max_iters": _INT}),
    "output": _obj({"directory": {"type": "string"},
                    "formats": {"type": "array", "items": {"enum": ["csv"]}}}),
})


@dataclass(frozen=True)
class ScenarioConfig:
    grid: str = "builtin:pjm5"
    base_dir: Path = Path(".")
    mode: str = "dc"
    relax: float = DEFAULT_RELAX
    n_v: int = 5
    n_theta: int = 10
    delta_theta_deg: float = 5.0
    v_min: float = 1.0
    v_max: float = 1.1
    max_states: int = DEFAULT_MAX_STATES
    load_chains: tuple | None = None
    d: int = 1
    c: float = 0.0
    c_sweep: tuple[float, ...] = ()
    g_u: float = 0.05
    p_t: float = 0.5
    gamma: float = 0.95
    vi_tol: float = 1e-9
    vi_max_iters: int = 10**5
    out_dir: str = "out"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("mdp.gamma must lie in [0, 1)")
        if not 0.0 <= self.p_t <= 1.0:
            raise ValueError("attack.p_t must lie in [0, 1]")
        if self.c < 0 or any(c < 0 for c in self.c_sweep):
            raise ValueError("detection constants must be >= 0")

    @property
    def params(self) -> AttackParams:
        return AttackParams(self.d, self.c, self.g_u, self.p_t)

    def with_c(self, c: float) -> ScenarioConfig:
        return dataclasses.replace(self, c=float(c))

    def grid_path(self) -> Path | None:
        if self.grid.startswith("builtin:"):
            return None
        return (self.base_dir / self.grid).resolve()

    def load_grid(self) -> GridModel:
        if self.grid == "builtin:pjm5":
            return gridmod.pjm5()
        if self.grid.startswith("builtin:"):
            raise ValueError(f"unknown builtin grid {self.grid!r}")
        return gridmod.read_grid(self.grid_path())


def scenario_from_dict(doc: dict | None, base_dir: Path = Path(".")) -> ScenarioConfig:
    doc = doc or {}
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"scenario {where}: {exc.message}") from None
    disc, att, mdp = doc.get("discretization", {}), doc.get("attack", {}), doc.get("mdp", {})
    kw = dict(base_dir=Path(base_dir))
    if "grid" in doc:
        kw["grid"] = doc["grid"]
    if "mode" in doc:
        kw["mode"] = doc["mode"]
    if "relax" in doc.get("dispatch", {}):
        kw["relax"] = float(doc["dispatch"]["relax"])
    for key in ("n_v", "n_theta", "max_states"):
        if key in disc:
            kw[key] = int(disc[key])
    for key in ("delta_theta_deg", "v_min", "v_max"):
        if key in disc:
            kw[key] = float(disc[key])
    if "load_chains" in doc:
        kw["load_chains"] = tuple(LoadChain(c["bus"], tuple(float(x) for x in c["levels_mw"]),
                                            np.array(c["transition"], dtype=float))
                                  for c in doc["load_chains"])
    if "d" in att:
        kw["d"] = int(att["d"])
    for key in ("c", "g_u", "p_t"):
        if key in att:
            kw[key] = float(att[key])
    if "c_sweep" in att:
        kw["c_sweep"] = tuple(float(x) for x in att["c_sweep"])
    if "gamma" in mdp:
        kw["gamma"] = float(mdp["gamma"])
    if "vi_tol" in mdp:
        kw["vi_tol"] = float(mdp["vi_tol"])
    if "vi_max_iters" in mdp:
        kw["vi_max_iters"] = int(mdp["vi_max_iters"])
    if "directory" in doc.get("output", {}):
        kw["out_dir"] = doc["output"]["directory"]
    return ScenarioConfig(**kw)


def read_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return scenario_from_dict(yaml.safe_load(path.read_text()), path.parent)


@dataclass
class Model:
    """Everything that does not depend on the detection constant."""

    config: ScenarioConfig
    grid: GridModel
    chains: list[LoadChain]
    points: list[OperatingPoint]
    scheme: DiscretizationScheme
    space: StateSpace
    catalog: ActionCatalog
    actions: list[list[Action]]
    warnings: list[str] = field(default_factory=list)


@dataclass
class Solution:
    c: float
    tm: TransitionModel
    values: ValueFunction
    vi_values: ValueFunction
    policy: Policy
    stationary: StationaryDistribution
    report: AnalysisReport
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def lp_vi_gap(self) -> float:
        return float(np.max(np.abs(self.values.q - self.vi_values.q)))


def build_model(cfg: ScenarioConfig) -> Model:
    try:
        grid = cfg.load_grid()
    except (gridmod.GridError, OSError, ValueError) as exc:
        raise PipelineError("grid", str(exc)) from exc
    try:
        chains = list(cfg.load_chains) if cfg.load_chains is not None else default_chains(grid)
        for ch in chains:
            if not 0 <= ch.bus < grid.n_buses:
                raise ValueError(f"load chain references unknown bus {ch.bus}")
    except ValueError as exc:
        raise PipelineError("discretize", str(exc)) from exc
    try:
        points = dispatch_scenarios(grid, chains, cfg.relax, cfg.mode)
    except Exception as exc:
        raise PipelineError("dispatch", str(exc)) from exc
    try:
        scheme, warnings = build_scheme(grid, chains, cfg.n_v, cfg.n_theta, cfg.v_min, cfg.v_max,
                                        cfg.delta_theta_deg, points, cfg.relax)
        space = enumerate_states(grid, chains, scheme, points, cfg.max_states, cfg.relax, cfg.mode)
    except Exception as exc:
        raise PipelineError("discretize", str(exc)) from exc
    try:
        catalog = ActionCatalog(grid, space, scheme, cfg.d, MeasurementModel(grid), cfg.mode)
        actions = [catalog.actions(s) for s in space]
    except Exception as exc:
        raise PipelineError("attack", str(exc)) from exc
    return Model(cfg, grid, chains, points, scheme, space, catalog, actions, warnings)


def solve(model: Model, c: float | None = None) -> Solution:
    cfg = model.config if c is None else model.config.with_c(c)
    t0 = time.perf_counter()
    try:
        tm = build_transitions(model.space, model.actions, model.chains, model.scheme, cfg.params)
        t1 = time.perf_counter()
        vf = solve_mdp_lp(tm, cfg.gamma)
        vi = value_iteration(tm, cfg.gamma, cfg.vi_tol, cfg.vi_max_iters)
        policy = extract_policy(tm, vf)
        t2 = time.perf_counter()
    except Exception as exc:
        raise PipelineError("mdp", str(exc)) from exc
    try:
        dist = stationary_distribution(induced_chain(tm, policy))
        report = AnalysisReport(
            cfg.c, cfg.g_u, cfg.p_t, cfg.gamma,
            line_attack_probabilities(policy.actions, dist.prob, len(model.grid.lines)),
            device_intrusion_probabilities(policy.actions, dist.prob, len(model.grid.devices)),
            [a.describe() for a in policy.actions], dist)
    except Exception as exc:
        raise PipelineError("analysis", str(exc)) from exc
    t3 = time.perf_counter()
    return Solution(cfg.c, tm, vf, vi, policy, dist, report,
                    {"transitions": t1 - t0, "solve": t2 - t1, "analysis": t3 - t2})


@dataclass
class SweepEntry:
    c: float
    solution: Solution | None = None
    error: PipelineError | None = None


def sweep_detect_c(cfg: ScenarioConfig, c_values, model: Model | None = None) -> list[SweepEntry]:
    """Run the pipeline once per detection constant, in input order.

    A failing entry records its error; the remaining entries still run.
    """
    c_values = list(c_values)
    if not c_values:
        raise ValueError("c_values must be nonempty")
    model = model or build_model(cfg)
    out = []
    for c in c_values:
        try:
            out.append(SweepEntry(float(c), solve(model, c)))
        except PipelineError as exc:
            log.error("C=%g failed: %s", c, exc)
            out.append(SweepEntry(float(c), error=exc))
    return out
