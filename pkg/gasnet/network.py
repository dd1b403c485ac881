"""Directed pipe networks, coupling conditions and assembly of the global DAE.

Global unknowns are the per-pipe interleaved states stacked in ascending pipe id order.
Every pipe end contributes one algebraic row, placed in the pipe's placeholder slot
(p_0 slot at the inlet, q_n slot at the outlet):

    pressure_boundary   p_end - p_BC(t) = 0
    flux_boundary       q_n - w(t) = 0 at an outlet, q_0 + w(t) = 0 at an inlet (w = withdrawal)
    junction            p_end - p_ref = 0 for every non-reference end, sum q_in - sum q_out = 0

A flux boundary attached to several pipes takes the junction rows with its withdrawal
on the right-hand side of the balance.
"""

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, Callable, Iterator, Literal, Mapping

import networkx as nx
import numpy as np
from scipy import sparse

from gasnet.errors import AssemblyError, StateError
from gasnet.gas_model import PipeGeometry
from gasnet.newton import color_columns, fd_jacobian, newton_solve
from gasnet.schemes import (
    PipeGrid,
    PipeState,
    SchemeName,
    SchemeOptions,
    SemiDiscreteRows,
    scheme_rows,
)
from gasnet.settings import get_settings

logger = logging.getLogger(__name__)

NodeKind = Literal["junction", "pressure_boundary", "flux_boundary"]
EndName = Literal["inlet", "outlet"]
SignalFn = Callable[[float], float]

BOUNDARY_KINDS = frozenset({"pressure_boundary", "flux_boundary"})


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    signal: str | None = None

    @property
    def is_boundary(self) -> bool:
        return self.kind in BOUNDARY_KINDS


@dataclass(frozen=True)
class Pipe:
    id: str
    source: str
    target: str
    grid: PipeGrid

    @property
    def geom(self) -> PipeGeometry:
        return self.grid.geom

    @property
    def n(self) -> int:
        return self.grid.n


@dataclass(frozen=True)
class Endpoint:
    pipe_id: str
    end: EndName


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(sorted(self.pipes, key=lambda p: p.id)))

    @cached_property
    def graph(self) -> nx.MultiDiGraph:
        g = nx.MultiDiGraph()
        for node in self.nodes:
            g.add_node(node.id, kind=node.kind)
        for pipe in self.pipes:
            g.add_edge(pipe.source, pipe.target, key=pipe.id)
        return g

    @cached_property
    def _node_index(self) -> dict[str, Node]:
        return {node.id: node for node in self.nodes}

    @cached_property
    def _pipe_index(self) -> dict[str, Pipe]:
        return {pipe.id: pipe for pipe in self.pipes}

    def node(self, node_id: str) -> Node:
        return self._node_index[node_id]

    def pipe(self, pipe_id: str) -> Pipe:
        return self._pipe_index[pipe_id]

    def incoming(self, node_id: str) -> list[Pipe]:
        return [p for p in self.pipes if p.target == node_id]

    def outgoing(self, node_id: str) -> list[Pipe]:
        return [p for p in self.pipes if p.source == node_id]

    def degree(self, node_id: str) -> int:
        return len(self.incoming(node_id)) + len(self.outgoing(node_id))

    def endpoints(self, node_id: str) -> list[Endpoint]:
        """Pipe ends attached to a node, ordered by pipe id; the first one is the reference end."""
        ends = [Endpoint(p.id, "outlet") for p in self.incoming(node_id)]
        ends += [Endpoint(p.id, "inlet") for p in self.outgoing(node_id)]
        return sorted(ends, key=lambda e: (e.pipe_id, e.end))

    @property
    def junctions(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "junction"]

    @property
    def boundary_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.is_boundary]

    def with_cells(self, n: int) -> "Network":
        """Same network with every pipe discretized into n intervals."""
        pipes = tuple(replace(p, grid=replace(p.grid, n=n)) for p in self.pipes)
        return Network(self.nodes, pipes)


@dataclass(frozen=True)
class StateLayout:
    pipe_ids: tuple[str, ...]
    cells: tuple[int, ...]

    @cached_property
    def offsets(self) -> dict[str, int]:
        out, pos = {}, 0
        for pid, n in zip(self.pipe_ids, self.cells):
            out[pid] = pos
            pos += 2 * (n + 1)
        return out

    @property
    def size(self) -> int:
        return sum(2 * (n + 1) for n in self.cells)

    def n_of(self, pipe_id: str) -> int:
        return self.cells[self.pipe_ids.index(pipe_id)]

    def block(self, pipe_id: str) -> slice:
        start = self.offsets[pipe_id]
        return slice(start, start + 2 * (self.n_of(pipe_id) + 1))

    def p_index(self, pipe_id: str, i: int) -> int:
        return self.offsets[pipe_id] + 2 * i

    def q_index(self, pipe_id: str, i: int) -> int:
        return self.offsets[pipe_id] + 2 * i + 1

    def end_cell(self, end: Endpoint) -> int:
        return 0 if end.end == "inlet" else self.n_of(end.pipe_id)

    def placeholder_row(self, end: Endpoint) -> int:
        if end.end == "inlet":
            return self.p_index(end.pipe_id, 0)
        return self.q_index(end.pipe_id, self.n_of(end.pipe_id))


@dataclass
class NetState:
    states: dict[str, PipeState]

    def to_vector(self, layout: StateLayout) -> np.ndarray:
        return np.concatenate([self.states[pid].to_vector() for pid in layout.pipe_ids])

    @classmethod
    def from_vector(cls, layout: StateLayout, u: np.ndarray) -> "NetState":
        return cls({pid: PipeState.from_vector(u[layout.block(pid)]) for pid in layout.pipe_ids})

    @classmethod
    def uniform(cls, network: Network, p: float, q: float) -> "NetState":
        return cls({pipe.id: PipeState.uniform(pipe.grid, p, q) for pipe in network.pipes})

    def endpoint_values(self, network: Network, end: Endpoint) -> tuple[float, float]:
        state = self.states[end.pipe_id]
        i = 0 if end.end == "inlet" else network.pipe(end.pipe_id).n
        return float(state.p[i]), float(state.q[i])


def layout_of(network: Network) -> StateLayout:
    return StateLayout(tuple(p.id for p in network.pipes), tuple(p.n for p in network.pipes))


def _issues_append(issues: list[dict[str, str]], severity: str, field: str, reason: str) -> None:
    issues.append({"severity": severity, "field": field, "reason": reason})


def validate(network: Network) -> dict[str, Any]:
    """
    Check topology and boundary typing.
    Returns {"status": "ok"|"invalid", "issues": [{"severity","field","reason"}]}.
    """
    issues: list[dict[str, str]] = []
    node_ids = [n.id for n in network.nodes]
    known = set(node_ids)

    seen: set[str] = set()
    for nid in node_ids:
        if nid in seen:
            _issues_append(issues, "high", f"nodes[{nid}]", "duplicate node id")
        seen.add(nid)
    seen = set()
    for pipe in network.pipes:
        field = f"pipes[{pipe.id}]"
        if pipe.id in seen:
            _issues_append(issues, "high", field, "duplicate pipe id")
        seen.add(pipe.id)
        if pipe.source == pipe.target:
            _issues_append(issues, "high", field, "pipe starts and ends at the same node")
        for end in (pipe.source, pipe.target):
            if end not in known:
                _issues_append(issues, "high", field, f"unknown node {end!r}")

    for node in network.nodes:
        field = f"nodes[{node.id}]"
        deg = network.degree(node.id)
        if node.is_boundary and not node.signal:
            _issues_append(issues, "high", field, "boundary node has no signal")
        if node.kind == "junction" and node.signal:
            _issues_append(issues, "low", field, "junction carries a signal that is ignored")
        if deg == 0:
            _issues_append(issues, "high", field, "node has no pipes")
        elif deg == 1 and node.kind == "junction":
            _issues_append(issues, "high", field, "dangling junction: degree-1 node must be a boundary")

    if not any(n.kind == "pressure_boundary" for n in network.nodes):
        _issues_append(issues, "high", "network", "no pressure boundary anchors the pressure level")
    if network.nodes and not nx.is_weakly_connected(network.graph):
        parts = nx.number_weakly_connected_components(network.graph)
        _issues_append(issues, "high", "network", f"network is disconnected ({parts} components)")

    status = "invalid" if any(i["severity"] == "high" for i in issues) else "ok"
    return {"status": status, "issues": issues}


def coupling_residual(network: Network, state: NetState, vertex: str) -> np.ndarray:
    """deg(v)-1 pressure equalities against the lowest-id pipe end, then the flux balance."""
    node = network.node(vertex)
    if node.kind != "junction":
        raise AssemblyError(f"node {vertex!r} is not a junction")
    ends = network.endpoints(vertex)
    values = [state.endpoint_values(network, e) for e in ends]
    p_ref = values[0][0]
    out = [p - p_ref for p, _ in values[1:]]
    balance = sum(q for e, (_, q) in zip(ends, values) if e.end == "outlet")
    balance -= sum(q for e, (_, q) in zip(ends, values) if e.end == "inlet")
    out.append(balance)
    return np.array(out)


@dataclass(frozen=True)
class AlgebraicRow:
    """One linear row  sum_j coef_j u_{col_j} - sign * signal(t) = 0."""

    row: int
    cols: tuple[int, ...]
    coefs: tuple[float, ...]
    kind: Literal["pressure_bc", "flux_bc", "pressure_eq", "flux_balance"]
    node: str
    signal: str | None = None
    sign: float = 1.0


@dataclass(frozen=True)
class DAESystem:
    """E(u) du/dt = F(u) on differential rows, C u = b(t) on algebraic rows."""

    network: Network
    scheme: SchemeName
    options: SchemeOptions
    layout: StateLayout
    algebraic_rows: tuple[AlgebraicRow, ...]
    signals: Mapping[str, SignalFn]

    @property
    def size(self) -> int:
        return self.layout.size

    @property
    def n_algebraic(self) -> int:
        return len(self.algebraic_rows)

    @property
    def n_differential(self) -> int:
        return self.size - self.n_algebraic

    @cached_property
    def algebraic_index(self) -> np.ndarray:
        return np.array([r.row for r in self.algebraic_rows], dtype=np.intp)

    @cached_property
    def differential_mask(self) -> np.ndarray:
        mask = np.ones(self.size, dtype=bool)
        mask[self.algebraic_index] = False
        return mask

    @cached_property
    def constraint_matrix(self) -> sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for k, r in enumerate(self.algebraic_rows):
            rows += [k] * len(r.cols)
            cols += list(r.cols)
            vals += list(r.coefs)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n_algebraic, self.size))

    @cached_property
    def constraint_dense(self) -> np.ndarray:
        return self.constraint_matrix.toarray()

    @cached_property
    def jacobian_pattern(self) -> sparse.csr_matrix:
        rows, cols = [], []
        for pipe in self.network.pipes:
            o, n = self.layout.offsets[pipe.id], pipe.n
            for r in range(2 * (n + 1)):
                cell = r // 2
                lo, hi = max(cell - 1, 0), min(cell + 1, n)
                span = range(o + 2 * lo, o + 2 * hi + 2)
                rows += [o + r] * len(span)
                cols += list(span)
        keep = self.differential_mask[rows]
        rows = list(np.asarray(rows)[keep])
        cols = list(np.asarray(cols)[keep])
        for r in self.algebraic_rows:
            rows += [r.row] * len(r.cols)
            cols += list(r.cols)
        data = np.ones(len(rows), dtype=bool)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.size, self.size))

    @cached_property
    def jacobian_colors(self) -> np.ndarray:
        return color_columns(self.jacobian_pattern)

    @cached_property
    def typical(self) -> np.ndarray:
        """Per-unknown magnitude floor for finite-difference steps and step norms."""
        scale = np.ones(self.size)
        scale[0::2] = max(self.anchor_pressure(0.0), 1.0)
        return scale

    @property
    def is_ode_reducible(self) -> bool:
        """True when every algebraic row pins a single unknown to a signal."""
        return all(r.kind in ("pressure_bc", "flux_bc") for r in self.algebraic_rows)

    @cached_property
    def pinned_columns(self) -> np.ndarray:
        if not self.is_ode_reducible:
            raise AssemblyError("system has coupling rows; unknowns are not directly pinned")
        return np.array([r.cols[0] for r in self.algebraic_rows], dtype=np.intp)

    def split(self, u: np.ndarray) -> list[PipeState]:
        return [PipeState.from_vector(u[self.layout.block(pid)]) for pid in self.layout.pipe_ids]

    def state(self, u: np.ndarray) -> NetState:
        return NetState.from_vector(self.layout, u)

    def vector(self, state: NetState) -> np.ndarray:
        return state.to_vector(self.layout)

    def pipe_rows(self, u: np.ndarray) -> list[SemiDiscreteRows]:
        return [scheme_rows(self.scheme, pipe.grid, st, self.options)
                for pipe, st in zip(self.network.pipes, self.split(u))]

    def differential_parts(self, u: np.ndarray, v: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(E(u) v, F(u)) as global vectors; algebraic rows hold zeros. E v is zero when v is None."""
        ev = np.zeros(self.size)
        f = np.zeros(self.size)
        for pid, rows in zip(self.layout.pipe_ids, self.pipe_rows(u)):
            block = self.layout.block(pid)
            f[block] = rows.rhs
            if v is not None:
                ev[block] = rows.apply_mass(v[block])
        return ev, f

    def mass_matrix(self, u: np.ndarray) -> sparse.csr_matrix:
        blocks = [rows.mass_matrix() for rows in self.pipe_rows(u)]
        return sparse.block_diag(blocks, format="csr")

    def boundary_values(self, t: float) -> np.ndarray:
        b = np.zeros(self.n_algebraic)
        for k, r in enumerate(self.algebraic_rows):
            if r.signal is not None:
                b[k] = r.sign * float(self.signals[r.signal](t))
        return b

    def algebraic_residual(self, u: np.ndarray, t: float) -> np.ndarray:
        return self.constraint_matrix @ u - self.boundary_values(t)

    def constraint_residual(self, u: np.ndarray, t: float) -> float:
        """Largest scaled junction/boundary residual.

        Pressure rows are scaled by 1 + |p_ref| (or 1 + |p_BC|), flux balances by 1 + sum |q|.
        """
        raw = np.abs(self.algebraic_residual(u, t))
        b = self.boundary_values(t)
        worst = 0.0
        for k, r in enumerate(self.algebraic_rows):
            if r.kind == "flux_balance":
                scale = 1.0 + float(np.sum(np.abs(u[list(r.cols)])))
            elif r.kind == "pressure_eq":
                scale = 1.0 + abs(float(u[r.cols[1]]))
            else:
                scale = 1.0 + abs(float(b[k]))
            worst = max(worst, raw[k] / scale)
        return worst

    def index_matrix(self, u: np.ndarray) -> np.ndarray:
        """Dense [E(u); dA/du]: mass rows on differential rows, constraint rows on algebraic rows."""
        out = self.mass_matrix(u).toarray()
        out[self.algebraic_index] = self.constraint_dense
        return out

    def anchor_pressure(self, t: float) -> float:
        for r in self.algebraic_rows:
            if r.kind == "pressure_bc":
                return float(self.signals[r.signal](t))
        raise AssemblyError("network has no pressure boundary")

    def fd_jacobian(self, fun: Callable[[np.ndarray], np.ndarray], u: np.ndarray, f0: np.ndarray,
                    rel_step: float) -> np.ndarray:
        """Column-grouped finite differences; algebraic rows are replaced by the exact constraint rows."""
        jac = fd_jacobian(fun, u, f0, self.jacobian_pattern, self.jacobian_colors, rel_step, self.typical)
        jac[self.algebraic_index] = self.constraint_dense
        return jac


def _node_rows(layout: StateLayout, network: Network, node: Node) -> list[AlgebraicRow]:
    """deg(v) algebraic rows for a node, one per attached pipe end, in pipe-id order."""
    ends = network.endpoints(node.id)
    p_cols = [layout.p_index(e.pipe_id, layout.end_cell(e)) for e in ends]
    q_cols = [layout.q_index(e.pipe_id, layout.end_cell(e)) for e in ends]
    placeholders = [layout.placeholder_row(e) for e in ends]
    if node.kind == "pressure_boundary":
        return [AlgebraicRow(row, (col,), (1.0,), "pressure_bc", node.id, node.signal)
                for row, col in zip(placeholders, p_cols)]
    signs = tuple(1.0 if e.end == "outlet" else -1.0 for e in ends)
    if node.kind == "flux_boundary" and len(ends) == 1:
        return [AlgebraicRow(placeholders[0], (q_cols[0],), (1.0,), "flux_bc", node.id, node.signal, signs[0])]
    rows = [
        AlgebraicRow(placeholders[k - 1], (p_cols[k], p_cols[0]), (1.0, -1.0), "pressure_eq", node.id)
        for k in range(1, len(ends))
    ]
    # a flux boundary fed by several pipes balances against its withdrawal
    signal = node.signal if node.kind == "flux_boundary" else None
    rows.append(AlgebraicRow(placeholders[-1], tuple(q_cols), signs, "flux_balance", node.id, signal))
    return rows


def assemble_dae(
    network: Network,
    scheme: SchemeName = "new",
    signals: Mapping[str, SignalFn] | None = None,
    options: SchemeOptions = SchemeOptions(),
) -> DAESystem:
    """Stack per-pipe scheme rows and replace every placeholder with its node's algebraic row."""
    report = validate(network)
    if report["status"] != "ok":
        reasons = "; ".join(f"{i['field']}: {i['reason']}" for i in report["issues"] if i["severity"] == "high")
        raise AssemblyError(f"invalid network: {reasons}")
    signals = dict(signals or {})
    for node in network.boundary_nodes:
        if node.signal not in signals:
            raise AssemblyError(f"no signal {node.signal!r} for boundary node {node.id!r}")
    if scheme in ("mid", "end"):
        short = [p.id for p in network.pipes if p.n < 3]
        if short:
            raise AssemblyError(f"scheme {scheme!r} needs n >= 3 on pipes {short}")

    layout = layout_of(network)
    alg: list[AlgebraicRow] = []
    for node in network.nodes:
        alg.extend(_node_rows(layout, network, node))
    alg.sort(key=lambda r: r.row)

    placeholders = 2 * len(network.pipes)
    if len(alg) != placeholders or len({r.row for r in alg}) != placeholders:
        raise AssemblyError(f"{len(alg)} algebraic rows for {placeholders} pipe-end placeholders")
    dae = DAESystem(network, scheme, options, layout, tuple(alg), signals)
    logger.debug("assembled %s system: %d unknowns, %d algebraic rows", scheme, dae.size, dae.n_algebraic)
    return dae


def _walk_reverse_topological(graph: nx.MultiDiGraph) -> Iterator[str]:
    return reversed(list(nx.topological_sort(graph)))


def flux_guess(dae: DAESystem, t: float) -> dict[str, float]:
    """Per-pipe flux that carries every withdrawal back towards the sources.

    Demand at a node is split evenly over its incoming pipes. Networks with directed
    cycles fall back to zero flux.
    """
    network = dae.network
    flow = {p.id: 0.0 for p in network.pipes}
    if not nx.is_directed_acyclic_graph(network.graph):
        return flow
    withdrawal = {n.id: 0.0 for n in network.nodes}
    for r in dae.algebraic_rows:
        if r.signal is not None and r.kind != "pressure_bc":
            withdrawal[r.node] = float(dae.signals[r.signal](t))
    for node_id in _walk_reverse_topological(network.graph):
        need = withdrawal[node_id] + sum(flow[p.id] for p in network.outgoing(node_id))
        incoming = network.incoming(node_id)
        for p in incoming:
            flow[p.id] = need / len(incoming)
    return flow


def steady_solve(dae: DAESystem, t0: float = 0.0, tol: float | None = None,
                 max_iter: int | None = None) -> NetState:
    """Newton solve of F(u) = 0 together with the algebraic rows at t0.

    Start: every pressure equals the anchor pressure, fluxes follow flux_guess.
    """
    settings = get_settings()
    tol = settings.newton_tol if tol is None else tol
    max_iter = settings.newton_max_iter if max_iter is None else max_iter
    p_anchor = dae.anchor_pressure(t0)
    if not p_anchor > 0:
        raise StateError(f"anchor pressure must be > 0, got {p_anchor}")

    flows = flux_guess(dae, t0)
    u0 = np.concatenate([
        PipeState(np.full(p.n + 1, p_anchor), np.full(p.n + 1, flows[p.id])).to_vector()
        for p in dae.network.pipes
    ])
    b = dae.boundary_values(t0)
    alg = dae.algebraic_index
    C = dae.constraint_matrix

    def residual(u: np.ndarray) -> np.ndarray:
        _, f = dae.differential_parts(u)
        f[alg] = C @ u - b
        return f

    def jacobian(u: np.ndarray, f0: np.ndarray) -> np.ndarray:
        return dae.fd_jacobian(residual, u, f0, settings.jacobian_step)

    result = newton_solve(residual, u0, jacobian, tol=tol, max_iter=max_iter, typical=dae.typical,
                          reuse_below=0.0)
    logger.info("steady state found in %d Newton iterations (constraint residual %.2e)",
                result.iterations, dae.constraint_residual(result.x, t0))
    return dae.state(result.x)
