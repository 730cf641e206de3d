"""Network model: buses, lines, generators and measuring devices.

Grid documents are YAML (JSON is a subset) with the keys ``base_mva``,
``buses``, ``lines``, ``generators`` and ``devices``. Unknown keys are
rejected.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Union

import jsonschema
import numpy as np
import yaml


class GridError(Exception):
    """Base class for grid ingestion failures."""


class GridParseError(GridError):
    """The document does not match the grid schema."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class GridReferenceError(GridError):
    """A bus or line reference points at nothing."""


class GridValidationError(GridError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Bus:
    id: int
    name: str
    is_slack: bool = False
    base_load_mw: float = 0.0


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    resistance_pu: float
    reactance_pu: float
    flow_limit_mw: float
    reward_weight: float = 1.0

    def touches(self, bus: int) -> bool:
        return bus == self.from_bus or bus == self.to_bus


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    bid_per_mwh: float
    p_min_mw: float
    p_max_mw: float


@dataclass(frozen=True)
class BusVoltage:
    bus: int


@dataclass(frozen=True)
class LineFlow:
    line: int
    end: str = "from"  # "from" | "to"


@dataclass(frozen=True)
class BusInjection:
    bus: int


Measurement = Union[BusVoltage, LineFlow, BusInjection]


@dataclass(frozen=True)
class Device:
    id: int
    name: str
    measured: tuple[Measurement, ...] = ()


@dataclass(frozen=True)
class GridModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    devices: tuple[Device, ...] = ()
    base_mva: float = 100.0

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def slack(self) -> int:
        return next(b.id for b in self.buses if b.is_slack)

    @property
    def load_buses(self) -> list[int]:
        return [b.id for b in self.buses if b.base_load_mw > 0]

    def base_loads(self) -> np.ndarray:
        return np.array([b.base_load_mw for b in self.buses], dtype=float)

    def incident_lines(self, bus: int) -> list[int]:
        return [ln.id for ln in self.lines if ln.touches(bus)]


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str = field(default="", compare=False)

    def __str__(self) -> str:
        return f"{self.code}: {self.message}" if self.message else self.code


_MEASUREMENT_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["bus_voltage", "line_flow", "bus_injection"]},
        "bus": {"type": "integer"},
        "line": {"type": "integer"},
        "end": {"enum": ["from", "to"]},
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "line_flow"}}},
         "then": {"required": ["line"], "not": {"required": ["bus"]}},
         "else": {"required": ["bus"], "not": {"anyOf": [{"required": ["line"]}, {"required": ["end"]}]}}},
    ],
}


def _record(required: dict, optional: dict | None = None) -> dict:
    props = {**required, **(optional or {})}
    return {"type": "object", "required": list(required),
            "additionalProperties": False, "properties": props}


_NUM = {"type": "number"}
_INT = {"type": "integer"}

GRID_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["base_mva", "buses", "lines", "generators", "devices"],
    "properties": {
        "base_mva": _NUM,
        "buses": {"type": "array", "items": _record(
            {"id": _INT, "name": {"type": "string"}, "is_slack": {"type": "boolean"},
             "base_load_mw": _NUM})},
        "lines": {"type": "array", "items": _record(
            {"id": _INT, "from": _INT, "to": _INT, "r_pu": _NUM, "x_pu": _NUM,
             "limit_mw": _NUM, "reward_weight": _NUM})},
        "generators": {"type": "array", "items": _record(
            {"id": _INT, "bus": _INT, "bid": _NUM, "p_min": _NUM, "p_max": _NUM})},
        "devices": {"type": "array", "items": _record(
            {"id": _INT, "name": {"type": "string"},
             "measured": {"type": "array", "items": _MEASUREMENT_SCHEMA}})},
    },
}


def _parse_measurement(m: dict) -> Measurement:
    if m["kind"] == "bus_voltage":
        return BusVoltage(m["bus"])
    if m["kind"] == "bus_injection":
        return BusInjection(m["bus"])
    return LineFlow(m["line"], m.get("end", "from"))


def grid_from_dict(doc: dict, check: bool = True) -> GridModel:
    """Build a GridModel from an already-parsed document.

    With ``check=False`` only schema and reference errors raise; invariant
    violations are left for :func:`validate` to report.
    """
    try:
        jsonschema.validate(doc, GRID_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise GridParseError(where, exc.message) from None

    grid = GridModel(
        buses=tuple(Bus(b["id"], b["name"], b["is_slack"], float(b["base_load_mw"]))
                    for b in doc["buses"]),
        lines=tuple(Line(ln["id"], ln["from"], ln["to"], float(ln["r_pu"]), float(ln["x_pu"]),
                         float(ln["limit_mw"]), float(ln["reward_weight"]))
                    for ln in doc["lines"]),
        generators=tuple(Generator(g["id"], g["bus"], float(g["bid"]), float(g["p_min"]),
                                   float(g["p_max"]))
                         for g in doc["generators"]),
        devices=tuple(Device(d["id"], d["name"], tuple(_parse_measurement(m) for m in d["measured"]))
                      for d in doc["devices"]),
        base_mva=float(doc["base_mva"]),
    )
    dangling = [d for d in validate(grid) if d.code == "DanglingReference"]
    if dangling:
        raise GridReferenceError("; ".join(d.message for d in dangling))
    if check:
        diags = validate(grid)
        if diags:
            raise GridValidationError(diags)
    return grid


def load_grid(document: str, check: bool = True) -> GridModel:
    """Parse a grid document (YAML or JSON text)."""
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise GridParseError("<document>", str(exc)) from None
    if not isinstance(doc, dict):
        raise GridParseError("<root>", "expected a mapping")
    return grid_from_dict(doc, check=check)


def read_grid(path: str | Path, check: bool = True) -> GridModel:
    return load_grid(Path(path).read_text(), check=check)


def pjm5() -> GridModel:
    """The bundled PJM 5-bus fixture."""
    return load_grid(pjm5_text())


def pjm5_text() -> str:
    return resources.files("attackmdp").joinpath("data/pjm5.yaml").read_text()


def _measurement_dict(m: Measurement) -> dict:
    if isinstance(m, BusVoltage):
        return {"kind": "bus_voltage", "bus": m.bus}
    if isinstance(m, BusInjection):
        return {"kind": "bus_injection", "bus": m.bus}
    return {"kind": "line_flow", "line": m.line, "end": m.end}


def grid_to_dict(grid: GridModel) -> dict:
    return {
        "base_mva": grid.base_mva,
        "buses": [{"id": b.id, "name": b.name, "is_slack": b.is_slack,
                   "base_load_mw": b.base_load_mw} for b in grid.buses],
        "lines": [{"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "r_pu": ln.resistance_pu,
                   "x_pu": ln.reactance_pu, "limit_mw": ln.flow_limit_mw,
                   "reward_weight": ln.reward_weight} for ln in grid.lines],
        "generators": [{"id": g.id, "bus": g.bus, "bid": g.bid_per_mwh, "p_min": g.p_min_mw,
                        "p_max": g.p_max_mw} for g in grid.generators],
        "devices": [{"id": d.id, "name": d.name,
                     "measured": [_measurement_dict(m) for m in d.measured]}
                    for d in grid.devices],
    }


def serialize(grid: GridModel) -> str:
    return yaml.safe_dump(grid_to_dict(grid), sort_keys=False)


def _ids_ok(ids: list[int]) -> bool:
    return sorted(ids) == list(range(len(ids)))


def validate(grid: GridModel) -> list[Diagnostic]:
    """Check every GridModel invariant; one diagnostic per violation."""
    out: list[Diagnostic] = []
    if not grid.base_mva > 0:
        out.append(Diagnostic("NonPositiveBase", f"base_mva={grid.base_mva}"))

    for kind, items in (("bus", grid.buses), ("line", grid.lines),
                        ("generator", grid.generators), ("device", grid.devices)):
        if not _ids_ok([it.id for it in items]):
            out.append(Diagnostic("BadIds", f"{kind} ids must be unique and contiguous from 0"))
    if not grid.buses:
        out.append(Diagnostic("NoBuses"))

    n_slack = sum(b.is_slack for b in grid.buses)
    if n_slack > 1:
        out.append(Diagnostic("MultipleSlack", f"{n_slack} slack buses"))
    elif n_slack == 0 and grid.buses:
        out.append(Diagnostic("NoSlack"))
    for b in grid.buses:
        if b.base_load_mw < 0:
            out.append(Diagnostic("NegativeLoad", f"bus {b.id}"))

    bus_ids = {b.id for b in grid.buses}
    line_ids = {ln.id for ln in grid.lines}
    for ln in grid.lines:
        for end in (ln.from_bus, ln.to_bus):
            if end not in bus_ids:
                out.append(Diagnostic("DanglingReference", f"line {ln.id} references bus {end}"))
        if ln.from_bus == ln.to_bus:
            out.append(Diagnostic("SelfLoop", f"line {ln.id}"))
        if ln.reactance_pu == 0:
            out.append(Diagnostic("ZeroReactance", f"line {ln.id}"))
        if not ln.flow_limit_mw > 0:
            out.append(Diagnostic("NonPositiveLimit", f"line {ln.id}"))
        if ln.reward_weight < 0:
            out.append(Diagnostic("NegativeRewardWeight", f"line {ln.id}"))
    for g in grid.generators:
        if g.bus not in bus_ids:
            out.append(Diagnostic("DanglingReference", f"generator {g.id} references bus {g.bus}"))
        if g.p_min_mw > g.p_max_mw:
            out.append(Diagnostic("GeneratorLimits", f"generator {g.id}"))
        if g.bid_per_mwh < 0:
            out.append(Diagnostic("NegativeBid", f"generator {g.id}"))
    for d in grid.devices:
        for m in d.measured:
            if isinstance(m, LineFlow):
                if m.line not in line_ids:
                    out.append(Diagnostic("DanglingReference",
                                          f"device {d.id} references line {m.line}"))
            elif m.bus not in bus_ids:
                out.append(Diagnostic("DanglingReference",
                                      f"device {d.id} references bus {m.bus}"))

    if grid.buses and not _connected(grid):
        out.append(Diagnostic("Disconnected", "network graph has more than one island"))
    return out


def _connected(grid: GridModel) -> bool:
    adj: dict[int, set[int]] = {b.id: set() for b in grid.buses}
    for ln in grid.lines:
        if ln.from_bus in adj and ln.to_bus in adj:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
    start = grid.buses[0].id
    seen = {start}
    todo = deque([start])
    while todo:
        for nb in adj[todo.popleft()] - seen:
            seen.add(nb)
            todo.append(nb)
    return len(seen) == len(adj)


def susceptance_matrix(grid: GridModel) -> np.ndarray:
    """DC power-flow B matrix in per-unit (symmetric, zero row sums)."""
    n = grid.n_buses
    B = np.zeros((n, n))
    for ln in grid.lines:
        if ln.reactance_pu == 0:
            raise GridValidationError([Diagnostic("ZeroReactance", f"line {ln.id}")])
        y = 1.0 / ln.reactance_pu
        i, j = ln.from_bus, ln.to_bus
        B[i, j] -= y
        B[j, i] -= y
        B[i, i] += y
        B[j, j] += y
    return B
