"""Tests for signals, network/scenario files, built-in cases and trajectory CSV files."""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from gasnet.errors import ScenarioError
from gasnet.integrate import Trajectory
from gasnet.network import NetState
from gasnet.paths import builtin_network_path
from gasnet.scenario_io import (
    BUILTIN_CASES,
    CSV_HEADER,
    InitPolicy,
    Signal,
    builtin_case,
    load_network,
    parse_network,
    parse_scenario,
    print_network,
    read_csv,
    tree46_network,
    write_csv,
)

PIPE_FILE = {
    "gas": {"law": "isothermal", "c": 383.0735},
    "nodes": [
        {"id": "in", "type": "pressure_boundary", "signal": "inlet"},
        {"id": "out", "type": "flux_boundary", "signal": "outlet"},
    ],
    "pipes": [{"id": "p1", "from": "in", "to": "out", "length_m": 3000.0,
               "diameter_m": 0.762, "friction": 0.0178, "cells": 4}],
}


def _network_text(**changes) -> str:
    payload = json.loads(json.dumps(PIPE_FILE))
    payload.update(changes)
    return json.dumps(payload, indent=2)


def test_piecewise_constant_signal_is_right_continuous():
    signal = Signal.steps([(0.0, 75.0), (10.0, 70.0)])
    assert signal.value(9.999) == 75.0
    assert signal.value(10.0) == 70.0
    assert signal.value(-5.0) == 75.0
    assert signal.value(1e6) == 70.0
    assert signal(10.0) == pytest.approx(70e5)


def test_linear_signal_and_units():
    signal = Signal(points=[(0.0, 100.0), (10.0, 200.0)], interp="linear", unit="kg_per_s")
    assert signal(5.0) == pytest.approx(150.0)
    assert signal(20.0) == pytest.approx(200.0)
    assert Signal.constant(2.0e6, "pa")(3.0) == 2.0e6


def test_signal_points_are_checked():
    with pytest.raises(ValidationError):
        Signal(points=[])
    with pytest.raises(ValidationError):
        Signal(points=[(0.0, 1.0), (0.0, 2.0)])


def test_uniform_init_needs_pressure():
    with pytest.raises(ValidationError):
        InitPolicy(kind="uniform")
    assert InitPolicy(kind="uniform", p_bar=155.0).pressure_pa == pytest.approx(155e5)


def test_parse_network_reads_the_file():
    network = parse_network(_network_text())
    pipe = network.pipe("p1")
    assert pipe.n == 4
    assert pipe.grid.law.c_ref == 383.0735
    assert network.node("out").kind == "flux_boundary"


def test_invalid_json_reports_the_line():
    with pytest.raises(ScenarioError) as excinfo:
        parse_network('{\n  "gas": {\n    "law": "isothermal",,\n  }\n}')
    assert excinfo.value.line == 3


def test_unknown_node_reports_field_and_line():
    text = _network_text(pipes=[dict(PIPE_FILE["pipes"][0], to="nowhere")])
    with pytest.raises(ScenarioError) as excinfo:
        parse_network(text)
    assert excinfo.value.field == "pipes.0.to"
    assert excinfo.value.line is not None
    assert "unknown node 'nowhere'" in str(excinfo.value)


def test_schema_errors_name_the_field():
    pipe = {k: v for k, v in PIPE_FILE["pipes"][0].items() if k != "diameter_m"}
    with pytest.raises(ScenarioError) as excinfo:
        parse_network(_network_text(pipes=[pipe]))
    assert excinfo.value.field == "pipes.0.diameter_m"


def test_bad_geometry_and_topology_are_rejected():
    with pytest.raises(ScenarioError, match="p1"):
        parse_network(_network_text(pipes=[dict(PIPE_FILE["pipes"][0], cells=1)]))
    nodes = [{"id": "in", "type": "pressure_boundary"}, {"id": "out", "type": "junction"}]
    with pytest.raises(ScenarioError, match="dangling junction"):
        parse_network(_network_text(nodes=nodes))
    with pytest.raises(ScenarioError) as excinfo:
        parse_network(_network_text(gas={"law": "affine", "c": 383.0, "alpha": 1e-8}))
    assert excinfo.value.field == "gas"


def test_boundary_signal_defaults_to_node_id():
    nodes = [{"id": "in", "type": "pressure_boundary"}, {"id": "out", "type": "flux_boundary"}]
    network = parse_network(_network_text(nodes=nodes))
    assert network.node("in").signal == "in"


def test_diamond_network_shape():
    network = load_network(builtin_network_path("diamond"))
    assert len(network.nodes) == 8
    assert len(network.pipes) == 9
    assert len(network.junctions) == 6
    assert network.degree("7") == 2
    assert network.degree("4") == 4


def test_tree_network_shape():
    network = tree46_network(4)
    assert len(network.nodes) == 46
    assert len(network.pipes) == 45
    assert len(network.junctions) == 15
    leaves = [n for n in network.nodes if n.kind == "flux_boundary"]
    assert len(leaves) == 30
    assert {n.signal for n in leaves} == {"demand"}


@pytest.mark.parametrize("name", ["pipe", "diamond"])
def test_print_then_parse_gives_the_same_network(name):
    network = load_network(builtin_network_path(name))
    text = print_network(network)
    assert text.endswith("\n")
    assert parse_network(text) == network


def test_builtin_cases():
    for name in BUILTIN_CASES:
        scenario = builtin_case(name, cells=4)
        assert scenario.name == name
        assert all(p.n == 4 for p in scenario.network.pipes)
    step = builtin_case("pipe_step")
    assert step.signals["inlet"](0.0) == pytest.approx(75e5)
    assert step.signals["inlet"](10.0) == pytest.approx(70e5)
    assert step.signals["outlet"](50.0) == 150.0
    assert step.t_end == 600.0 and step.output_dt == 2.0
    wave = builtin_case("pipe_wave")
    assert [wave.signals["outlet"](1000.0 * k + 1.0) for k in range(6)] == [150.0, 180.0, 130.0, 200.0, 160.0, 150.0]
    steady = builtin_case("pipe_steady")
    assert steady.network.pipes[0].n == 60
    assert steady.init.kind == "uniform" and steady.init.pressure_pa == pytest.approx(155e5)
    with pytest.raises(ScenarioError):
        builtin_case("pipe_nope")


def test_parse_scenario_with_bundled_network():
    text = json.dumps({
        "name": "mine",
        "network": "pipe",
        "t_end_s": 30.0,
        "output_dt_s": 5.0,
        "scheme": "end",
        "signals": {
            "inlet": {"points": [[0.0, 60.0]]},
            "outlet": {"points": [[0.0, 100.0], [10.0, 120.0]], "interp": "linear", "unit": "kg_per_s"},
        },
        "integrator": {"method": "bdf2", "dt_s": 0.5},
    })
    scenario = parse_scenario(text)
    assert scenario.name == "mine"
    assert scenario.scheme == "end"
    assert scenario.integrator.method == "bdf2"
    assert scenario.integrator.dt == 0.5
    assert scenario.signals["outlet"](5.0) == pytest.approx(110.0)
    assert scenario.network.pipe("p1").n == 30


def test_parse_scenario_errors():
    base = {"t_end_s": 30.0, "output_dt_s": 5.0, "signals": {"inlet": {"points": [[0.0, 60.0]]}}}
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenario(json.dumps(base))
    assert excinfo.value.field == "network"
    with pytest.raises(ScenarioError, match="without signal"):
        parse_scenario(json.dumps(base | {"network": "pipe"}))
    with pytest.raises(ScenarioError):
        parse_scenario(json.dumps(base | {"network": "pipe", "output_dt_s": 0.0}))


def test_parse_scenario_resolves_relative_network(tmp_path):
    (tmp_path / "mine.json").write_text(_network_text(), encoding="utf-8")
    text = json.dumps({
        "network": "mine.json", "t_end_s": 1.0, "output_dt_s": 1.0,
        "signals": {"inlet": {"points": [[0.0, 60.0]]}, "outlet": {"points": [[0.0, 0.0]]}},
    })
    scenario = parse_scenario(text, base_dir=tmp_path)
    assert scenario.network.pipe("p1").n == 4


def test_csv_rows_and_round_trip(tmp_path):
    network = parse_network(_network_text())
    state = NetState.uniform(network, 60e5, 0.0)
    state.states["p1"].p[:] = np.linspace(60e5, 59.1e5, 5) + 1.0 / 3.0
    state.states["p1"].q[:] = [150.0, 150.1, 149.9, 150.0, 1.0 / 7.0]
    trajectory = Trajectory(network=network)
    trajectory.record(0.0, state)

    path = tmp_path / "trajectory.csv"
    assert write_csv(trajectory, path) == 5
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 6
    assert tuple(lines[0].split(",")) == CSV_HEADER

    times, states = read_csv(path)
    assert times == [0.0]
    np.testing.assert_array_equal(states[0].states["p1"].p, state.states["p1"].p)
    np.testing.assert_array_equal(states[0].states["p1"].q, state.states["p1"].q)


def test_csv_header_is_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,pipe,cell\n0,p1,0\n", encoding="utf-8")
    with pytest.raises(ScenarioError):
        read_csv(path)
