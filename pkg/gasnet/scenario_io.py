"""Network and scenario files, built-in benchmark cases, and CSV trajectories.

Network files are JSON:

    {"gas": {"law": "isothermal", "c": 383.0735, "alpha": 0.0},
     "nodes": [{"id": "in", "type": "pressure_boundary", "signal": "inlet"}, ...],
     "pipes": [{"id": "p1", "from": "in", "to": "out", "length_m": 3000.0,
                "diameter_m": 0.762, "friction": 0.0178, "cells": 30}]}

Pressures at the file interface are in bar, fluxes in kg/s.
"""

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Literal

import networkx as nx
import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from gasnet.errors import DomainError, ScenarioError
from gasnet.gas_model import PipeGeometry, PressureLaw
from gasnet.integrate import IntegratorConfig, Method, Trajectory
from gasnet.network import Network, NetState, Node, NodeKind, Pipe, validate
from gasnet.paths import builtin_network_path
from gasnet.schemes import EigSum, PipeGrid, PipeState, SchemeName, SchemeOptions, SourceMode

logger = logging.getLogger(__name__)

PA_PER_BAR = 1e5
CSV_HEADER = ("t_s", "pipe_id", "cell_index", "x_m", "p_pa", "q_kgs")
BUILTIN_CASES = ("pipe_step", "pipe_wave", "pipe_steady", "diamond_step", "tree46_step")

_UNIT_SCALE = {"bar": PA_PER_BAR, "pa": 1.0, "kg_per_s": 1.0}


class Signal(BaseModel):
    """Boundary time signal; calling it returns the SI value (Pa or kg/s)."""

    points: list[tuple[float, float]]
    interp: Literal["pconst", "linear"] = "pconst"
    unit: Literal["bar", "pa", "kg_per_s"] = "bar"

    @field_validator("points")
    @classmethod
    def _check_points(cls, v: list[tuple[float, float]]) -> list[tuple[float, float]]:
        if not v:
            raise ValueError("signal needs at least one point")
        times = [t for t, _ in v]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("signal times must be strictly increasing")
        return v

    @classmethod
    def constant(cls, value: float, unit: str = "bar") -> "Signal":
        return cls(points=[(0.0, value)], unit=unit)

    @classmethod
    def steps(cls, points: list[tuple[float, float]], unit: str = "bar") -> "Signal":
        return cls(points=points, interp="pconst", unit=unit)

    def value(self, t: float) -> float:
        """Value in file units; pconst is right-continuous, both modes clamp outside the range."""
        times = np.array([p[0] for p in self.points])
        values = np.array([p[1] for p in self.points])
        if self.interp == "linear":
            return float(np.interp(t, times, values))
        k = int(np.searchsorted(times, t, side="right")) - 1
        return float(values[max(k, 0)])

    def __call__(self, t: float) -> float:
        return self.value(t) * _UNIT_SCALE[self.unit]


class InitPolicy(BaseModel):
    kind: Literal["steady", "uniform"] = "steady"
    p_bar: float | None = None
    q_kgs: float = 0.0

    @model_validator(mode="after")
    def _check_uniform(self) -> "InitPolicy":
        if self.kind == "uniform" and not (self.p_bar is not None and self.p_bar > 0):
            raise ValueError("uniform init needs p_bar > 0")
        return self

    @property
    def pressure_pa(self) -> float:
        return float(self.p_bar) * PA_PER_BAR


class Scenario(BaseModel):
    model_config = {"arbitrary_types_allowed": True}

    name: str = "custom"
    network: Network
    signals: dict[str, Signal]
    t_end: float = Field(ge=0)
    output_dt: float = Field(gt=0)
    init: InitPolicy = InitPolicy()
    scheme: SchemeName = "new"
    source: SourceMode = "midpoint"
    eig_sum: EigSum = "printed"
    verbatim_source: bool = False
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)

    @model_validator(mode="after")
    def _check_signals(self) -> "Scenario":
        missing = [n.id for n in self.network.boundary_nodes if n.signal not in self.signals]
        if missing:
            raise ValueError(f"boundary nodes without signal: {missing}")
        return self

    @property
    def options(self) -> SchemeOptions:
        return SchemeOptions(source=self.source, eig_sum=self.eig_sum, verbatim_source=self.verbatim_source)

    def signal_functions(self) -> dict[str, Signal]:
        return dict(self.signals)


# File models ---------------------------------------------------------------


class GasSpec(BaseModel):
    law: Literal["isothermal", "affine"] = "isothermal"
    c: float
    alpha: float = 0.0


class NodeSpec(BaseModel):
    id: str
    type: NodeKind
    signal: str | None = None


class PipeSpec(BaseModel):
    model_config = {"populate_by_name": True}

    id: str
    from_: str = Field(alias="from")
    to: str
    length_m: float
    diameter_m: float
    friction: float
    cells: int


class NetworkFile(BaseModel):
    gas: GasSpec
    nodes: list[NodeSpec]
    pipes: list[PipeSpec]


class IntegratorSpec(BaseModel):
    method: Method = "implicit_euler"
    dt_s: float = 1.0


class ScenarioFile(BaseModel):
    name: str = "custom"
    network: str | None = None
    t_end_s: float
    output_dt_s: float
    init: InitPolicy = InitPolicy()
    scheme: SchemeName = "new"
    source: SourceMode = "midpoint"
    eig_sum: EigSum = "printed"
    verbatim_source: bool = False
    signals: dict[str, Signal]
    integrator: IntegratorSpec = IntegratorSpec()


def _validation_error(exc: ValidationError) -> ScenarioError:
    first = exc.errors()[0]
    field = ".".join(str(part) for part in first["loc"])
    return ScenarioError(first["msg"], field=field or None)


def _line_of(text: str, token: str) -> int | None:
    needle = json.dumps(token)
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def _load_json(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc


def _law_of(gas: GasSpec) -> PressureLaw:
    try:
        if gas.law == "isothermal":
            return PressureLaw.isothermal(gas.c)
        return PressureLaw.affine(gas.c, gas.alpha)
    except DomainError as exc:
        raise ScenarioError(str(exc), field="gas") from exc


def _build_network(spec: NetworkFile, text: str) -> Network:
    law = _law_of(spec.gas)
    nodes = tuple(
        Node(n.id, n.type, n.signal or (n.id if n.type != "junction" else None)) for n in spec.nodes
    )
    known = {n.id for n in nodes}
    pipes = []
    for k, ps in enumerate(spec.pipes):
        for attr, ref in (("from", ps.from_), ("to", ps.to)):
            if ref not in known:
                raise ScenarioError(f"pipe {ps.id!r} references unknown node {ref!r}",
                                    line=_line_of(text, ps.id), field=f"pipes.{k}.{attr}")
        try:
            geom = PipeGeometry(ps.length_m, ps.diameter_m, ps.friction)
            grid = PipeGrid(geom, law, ps.cells)
        except DomainError as exc:
            raise ScenarioError(f"pipe {ps.id!r}: {exc}", line=_line_of(text, ps.id), field=f"pipes.{k}") from exc
        pipes.append(Pipe(ps.id, ps.from_, ps.to, grid))
    return Network(nodes, tuple(pipes))


def parse_network(text: str) -> Network:
    """Parse and validate a network file."""
    spec_raw = _load_json(text)
    try:
        spec = NetworkFile.model_validate(spec_raw)
    except ValidationError as exc:
        raise _validation_error(exc) from exc
    network = _build_network(spec, text)
    report = validate(network)
    if report["status"] != "ok":
        first = next(i for i in report["issues"] if i["severity"] == "high")
        reasons = "; ".join(f"{i['field']}: {i['reason']}" for i in report["issues"] if i["severity"] == "high")
        raise ScenarioError(f"invalid network: {reasons}", field=first["field"])
    return network


def load_network(path: Path) -> Network:
    """Read a network file from disk (FileNotFoundError if absent)."""
    return parse_network(Path(path).read_text(encoding="utf-8"))


def print_network(network: Network) -> str:
    """Canonical network file text; parse_network(print_network(n)) == n."""
    laws = {p.grid.law for p in network.pipes}
    if len(laws) != 1:
        raise ScenarioError(f"network file holds one gas law, network has {len(laws)}")
    (law,) = laws
    payload = {
        "gas": {"law": law.kind, "c": law.c_ref, "alpha": law.alpha},
        "nodes": [{"id": n.id, "type": n.kind, "signal": n.signal} for n in network.nodes],
        "pipes": [
            {
                "id": p.id,
                "from": p.source,
                "to": p.target,
                "length_m": p.geom.length,
                "diameter_m": p.geom.diameter,
                "friction": p.geom.friction,
                "cells": p.n,
            }
            for p in network.pipes
        ],
    }
    return json.dumps(payload, indent=2) + "\n"


def _resolve_network(ref: str, base_dir: Path | None) -> Network:
    bundled = builtin_network_path(ref)
    if bundled.is_file():
        return load_network(bundled)
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return load_network(path)


def parse_scenario(text: str, network: Network | None = None, base_dir: Path | None = None) -> Scenario:
    """Parse a scenario file. The network comes from the argument or the file's `network` key."""
    raw = _load_json(text)
    try:
        spec = ScenarioFile.model_validate(raw)
    except ValidationError as exc:
        raise _validation_error(exc) from exc
    if network is None:
        if not spec.network:
            raise ScenarioError("scenario names no network", field="network")
        network = _resolve_network(spec.network, base_dir)
    try:
        return Scenario(
            name=spec.name,
            network=network,
            signals=spec.signals,
            t_end=spec.t_end_s,
            output_dt=spec.output_dt_s,
            init=spec.init,
            scheme=spec.scheme,
            source=spec.source,
            eig_sum=spec.eig_sum,
            verbatim_source=spec.verbatim_source,
            integrator=IntegratorConfig(method=spec.integrator.method, dt=spec.integrator.dt_s),
        )
    except ValidationError as exc:
        raise _validation_error(exc) from exc


def _single_pipe(cells: int | None) -> Network:
    network = load_network(builtin_network_path("pipe"))
    return network.with_cells(cells) if cells else network


def tree46_network(cells: int = 10) -> Network:
    """Synthetic 46-node supply tree: supply n00 feeds a full ternary tree of 45 nodes.

    The published description gives 1 supply, 13 interior and 23 further "supply" nodes,
    which do not add up to 46; this stand-in has 1 supply, 15 junctions and 30 demand leaves.
    All leaves share the signal "demand".
    """
    law = PressureLaw.isothermal(383.0545)
    geom = PipeGeometry(10_000.0, 0.6, 0.0454)
    grid = PipeGrid(geom, law, cells)
    tree = nx.full_rary_tree(3, 45)
    nodes = [Node("n00", "pressure_boundary", "supply")]
    pipes = [Pipe("t01", "n00", "n01", grid)]
    for v in sorted(tree.nodes):
        name = f"n{v + 1:02d}"
        children = [c for c in tree.neighbors(v) if c > v]
        if children:
            nodes.append(Node(name, "junction"))
        else:
            nodes.append(Node(name, "flux_boundary", "demand"))
        for c in sorted(children):
            pipes.append(Pipe(f"t{c + 1:02d}", name, f"n{c + 1:02d}", grid))
    return Network(tuple(nodes), tuple(pipes))


def builtin_case(name: str, cells: int | None = None) -> Scenario:
    """Fully parameterized benchmark scenario; `cells` overrides the per-pipe interval count."""
    if name == "pipe_step":
        return Scenario(
            name=name,
            network=_single_pipe(cells),
            signals={
                "inlet": Signal.steps([(0.0, 75.0), (10.0, 70.0)]),
                "outlet": Signal.constant(150.0, "kg_per_s"),
            },
            t_end=600.0,
            output_dt=2.0,
            integrator=IntegratorConfig(dt=1.0),
        )
    if name == "pipe_wave":
        fluxes = [150.0, 180.0, 130.0, 200.0, 160.0, 150.0]
        return Scenario(
            name=name,
            network=_single_pipe(cells),
            signals={
                "inlet": Signal.constant(75.0),
                "outlet": Signal.steps([(1000.0 * k, v) for k, v in enumerate(fluxes)], "kg_per_s"),
            },
            t_end=6000.0,
            output_dt=20.0,
            integrator=IntegratorConfig(dt=2.0),
        )
    if name == "pipe_steady":
        return Scenario(
            name=name,
            network=_single_pipe(cells or 60),
            signals={
                "inlet": Signal.constant(155.0),
                "outlet": Signal.constant(150.0, "kg_per_s"),
            },
            t_end=1.0e4,
            output_dt=50.0,
            init=InitPolicy(kind="uniform", p_bar=155.0, q_kgs=150.0),
            integrator=IntegratorConfig(dt=1.0),
        )
    if name == "diamond_step":
        network = load_network(builtin_network_path("diamond"))
        return Scenario(
            name=name,
            network=network.with_cells(cells) if cells else network,
            signals={
                "supply": Signal.constant(70.0),
                "demand": Signal.steps([(0.0, 30.0), (10.0, 40.0)], "kg_per_s"),
            },
            t_end=300.0,
            output_dt=2.0,
            integrator=IntegratorConfig(dt=1.0),
        )
    if name == "tree46_step":
        return Scenario(
            name=name,
            network=tree46_network(cells or 10),
            signals={
                "supply": Signal.constant(800.0),
                "demand": Signal.steps([(0.0, 0.0), (10.0, 40.0)], "kg_per_s"),
            },
            t_end=300.0,
            output_dt=5.0,
            init=InitPolicy(kind="uniform", p_bar=800.0, q_kgs=0.0),
            integrator=IntegratorConfig(dt=1.0),
        )
    raise ScenarioError(f"unknown built-in case {name!r}; expected one of {list(BUILTIN_CASES)}", field="case")


def write_csv(trajectory: Trajectory, destination: Path) -> int:
    """Write one row per (sample, pipe, cell); returns the number of data rows."""
    if not trajectory.states:
        raise ValueError("trajectory has no samples")
    destination = Path(destination)
    rows = 0
    with destination.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for t, state in zip(trajectory.times, trajectory.states):
            for pipe in trajectory.network.pipes:
                st, x = state.states[pipe.id], pipe.grid.x
                for i in range(pipe.n + 1):
                    writer.writerow((f"{t:.16e}", pipe.id, i, f"{x[i]:.16e}", f"{st.p[i]:.16e}", f"{st.q[i]:.16e}"))
                    rows += 1
    logger.info("Wrote %d rows to %s", rows, destination)
    return rows


def read_csv(source: Path) -> tuple[list[float], list[NetState]]:
    """Read a trajectory CSV back into sample times and network states."""
    samples: dict[float, dict[str, list[tuple[int, float, float]]]] = defaultdict(lambda: defaultdict(list))
    with Path(source).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ScenarioError(f"unexpected CSV header {header}", line=1)
        for line_no, row in enumerate(reader, start=2):
            try:
                t, pid, i, _x, p, q = row
                samples[float(t)][pid].append((int(i), float(p), float(q)))
            except ValueError as exc:
                raise ScenarioError(f"malformed CSV row: {exc}", line=line_no) from exc
    times = sorted(samples)
    states = []
    for t in times:
        pipes = {}
        for pid, cells in samples[t].items():
            cells.sort()
            pipes[pid] = PipeState(np.array([c[1] for c in cells]), np.array([c[2] for c in cells]))
        states.append(NetState(pipes))
    return times, states
