"""Tests for implicit and explicit stepping, step-size control and full scenario runs."""

import numpy as np
import pytest
from pydantic import ValidationError

from gasnet.driver import _with, fitted_slope, uniform_flow_errors
from gasnet.errors import CFLViolation, DomainError, IntegrationAborted, NewtonDiverged
from gasnet.gas_model import PipeGeometry, PressureLaw
from gasnet.integrate import IntegratorConfig, Stepper, Trajectory, simulate, step_explicit, step_implicit
from gasnet.network import NetState, Network, Node, Pipe, assemble_dae, steady_solve
from gasnet.paths import builtin_network_path
from gasnet.scenario_io import builtin_case, load_network
from gasnet.schemes import PipeGrid, cfl_dt, continuous_steady_profile

PIPE_SIGNALS = {"inlet": lambda t: 75e5, "outlet": lambda t: 150.0}


def _pipe_dae(cells: int = 10, scheme: str = "new", signals=None):
    network = load_network(builtin_network_path("pipe")).with_cells(cells)
    return assemble_dae(network, scheme, signals or PIPE_SIGNALS)


def test_config_validation():
    with pytest.raises(ValidationError):
        IntegratorConfig(dt=1e-7)
    with pytest.raises(ValidationError):
        IntegratorConfig(cfl_safety=1.5)
    with pytest.raises(ValidationError):
        IntegratorConfig(newton_max_iter=0)
    assert IntegratorConfig().newton_tol == pytest.approx(1e-10)


def test_trajectory_times_must_increase():
    dae = _pipe_dae(4)
    trajectory = Trajectory(network=dae.network)
    state = NetState.uniform(dae.network, 75e5, 150.0)
    trajectory.record(0.0, state)
    with pytest.raises(ValueError):
        trajectory.record(0.0, state)
    assert trajectory.cell_series("p1", 4, "q").tolist() == [150.0]


@pytest.mark.parametrize("method", ["implicit_euler", "bdf2"])
def test_steady_state_is_a_fixed_point(method):
    dae = _pipe_dae(10)
    u0 = dae.vector(steady_solve(dae))
    stepper = Stepper(dae, IntegratorConfig(method=method, dt=2.0), u0)
    u = stepper.advance_to(40.0)
    assert stepper.t == 40.0
    np.testing.assert_allclose(u, u0, rtol=1e-8, atol=1e-8)
    assert max(d.residual for d in stepper.diagnostics) <= 1e-9


def test_single_implicit_step_keeps_the_steady_state():
    dae = _pipe_dae(8)
    u0 = dae.vector(steady_solve(dae))
    u1, _ = step_implicit(dae, u0, 0.0, 5.0, IntegratorConfig(dt=5.0))
    np.testing.assert_allclose(u1, u0, rtol=1e-8, atol=1e-8)


def test_implicit_step_below_dt_min_aborts():
    dae = _pipe_dae(4)
    u0 = dae.vector(NetState.uniform(dae.network, 75e5, 150.0))
    with pytest.raises(IntegrationAborted):
        step_implicit(dae, u0, 0.0, 1e-3, IntegratorConfig(dt=1.0, dt_min=0.01))


def test_output_times_are_hit_exactly():
    dae = _pipe_dae(6)
    stepper = Stepper(dae, IntegratorConfig(dt=0.75), dae.vector(steady_solve(dae)))
    stepper.advance_to(2.0)
    assert stepper.t == 2.0
    assert [d.dt for d in stepper.diagnostics] == pytest.approx([0.75, 0.75, 0.5])


def test_failed_steps_are_retried_with_half_the_step(monkeypatch):
    dae = _pipe_dae(6)
    stepper = Stepper(dae, IntegratorConfig(dt=1.0), dae.vector(steady_solve(dae)))
    real_step = stepper._step
    calls = []

    def flaky(dt):
        calls.append(dt)
        if len(calls) == 1:
            raise NewtonDiverged("forced", iterations=3)
        return real_step(dt)

    monkeypatch.setattr(stepper, "_step", flaky)
    stepper.advance_to(1.0)
    assert calls[:2] == [1.0, 0.5]
    assert stepper.t == 1.0


def test_persistent_failure_aborts(monkeypatch):
    dae = _pipe_dae(6)
    stepper = Stepper(dae, IntegratorConfig(dt=1.0, dt_min=0.1), dae.vector(steady_solve(dae)))

    def always_fails(dt):
        raise NewtonDiverged("forced")

    monkeypatch.setattr(stepper, "_step", always_fails)
    with pytest.raises(IntegrationAborted):
        stepper.advance_to(1.0)


def test_explicit_step_refuses_cfl_violation():
    dae = _pipe_dae(10)
    u0 = dae.vector(steady_solve(dae))
    bound = cfl_dt(dae.split(u0), [p.grid for p in dae.network.pipes])
    config = IntegratorConfig(method="explicit_euler", dt=1.05 * bound)
    with pytest.raises(CFLViolation) as excinfo:
        step_explicit(dae, u0, 0.0, config)
    assert excinfo.value.dt_cfl == pytest.approx(bound)


def test_explicit_step_needs_pinned_boundaries():
    network = load_network(builtin_network_path("diamond")).with_cells(4)
    dae = assemble_dae(network, "new", {"supply": lambda t: 70e5, "demand": lambda t: 30.0})
    u0 = dae.vector(NetState.uniform(network, 70e5, 0.0))
    with pytest.raises(DomainError):
        step_explicit(dae, u0, 0.0, IntegratorConfig(method="explicit_euler", dt=0.01))


def _explicit_growth(ratio: float, steps: int, limit: float = np.inf) -> tuple[float, float]:
    """Largest (state max-norm, perturbation max-norm) over a run, each relative to its start.

    Stops early once the perturbation has grown past `limit`.
    """
    signals = {"inlet": lambda t: 50e5, "outlet": lambda t: 0.0}
    dae = _pipe_dae(20, "upwind", signals)
    base = dae.vector(NetState.uniform(dae.network, 50e5, 0.0))
    u = base.copy()
    interior = np.arange(2, dae.size - 2, 2)
    u[interior] += 10.0 * (-1.0) ** np.arange(interior.size)
    norm0, start = np.max(np.abs(u)), np.max(np.abs(u - base))
    dt = ratio * cfl_dt(dae.split(base), [p.grid for p in dae.network.pipes])
    config = IntegratorConfig(method="explicit_euler", dt=dt, check_cfl=False)
    state_growth = perturbation_growth = 1.0
    for k in range(steps):
        u = step_explicit(dae, u, k * dt, config)
        state_growth = max(state_growth, np.max(np.abs(u)) / norm0)
        perturbation_growth = max(perturbation_growth, np.max(np.abs(u - base)) / start)
        if perturbation_growth > limit:
            break
    return float(state_growth), float(perturbation_growth)


def test_explicit_upwind_is_stable_below_cfl():
    state_growth, perturbation_growth = _explicit_growth(0.9, 1000)
    assert state_growth <= 1.0 + 1e-6
    assert perturbation_growth <= 1.01


def test_explicit_upwind_grows_above_cfl():
    _, perturbation_growth = _explicit_growth(1.5, 1000, limit=10.0)
    assert perturbation_growth > 10.0


def test_explicit_new_scheme_keeps_the_steady_state():
    dae = _pipe_dae(30)
    u0 = dae.vector(steady_solve(dae))
    dt = 0.05 * cfl_dt(dae.split(u0), [p.grid for p in dae.network.pipes])
    config = IntegratorConfig(method="explicit_euler", dt=dt)
    u = u0.copy()
    for k in range(200):
        u = step_explicit(dae, u, k * dt, config)
    np.testing.assert_allclose(u, u0, rtol=1e-12)


def test_uniform_flow_first_order_in_time():
    dts = [2.0, 1.0, 0.5]
    errors = uniform_flow_errors(dts)
    assert 0.8 <= fitted_slope(dts, errors) <= 1.2


def test_uniform_flow_second_order_with_bdf2():
    dts = [2.0, 1.0, 0.5]
    errors = uniform_flow_errors(dts, method="bdf2")
    assert 1.7 <= fitted_slope(dts, errors) <= 2.3
    assert errors[-1] < uniform_flow_errors([0.5])[0]


def test_zero_length_run_records_initial_state_only():
    scenario = _with(builtin_case("pipe_step", cells=6), t_end=0.0)
    trajectory = simulate(scenario)
    assert trajectory.times == [0.0]
    assert trajectory.diagnostics == []


def test_pipe_step_samples_on_output_grid():
    scenario = _with(builtin_case("pipe_step", cells=6), t_end=20.0, output_dt=4.0)
    trajectory = simulate(scenario)
    assert trajectory.times == pytest.approx([0.0, 4.0, 8.0, 12.0, 16.0, 20.0])
    assert trajectory.final.states["p1"].p[0] == pytest.approx(70e5)
    assert trajectory.wall_time > 0


@pytest.mark.parametrize("case", ["diamond_step", "tree46_step"])
def test_network_runs_keep_coupling_rows(case):
    scenario = _with(builtin_case(case, cells=4), t_end=20.0, output_dt=5.0)
    trajectory = simulate(scenario)
    assert len(trajectory.times) == 5
    assert trajectory.max_residual <= 1e-9


def test_long_run_settles_on_the_steady_state():
    scenario = builtin_case("pipe_steady", cells=20)
    scenario = _with(scenario, t_end=2000.0, output_dt=500.0,
                     integrator=IntegratorConfig(dt=20.0))
    trajectory = simulate(scenario)
    dae = assemble_dae(scenario.network, "new", scenario.signal_functions())
    steady = steady_solve(dae).states["p1"]
    final = trajectory.final.states["p1"]
    np.testing.assert_allclose(final.p, steady.p, rtol=1e-6)
    np.testing.assert_allclose(final.q, steady.q, rtol=1e-4)


def test_pipe_steady_run_reaches_the_steady_profile():
    scenario = _with(builtin_case("pipe_steady"), output_dt=10_000.0)
    assert (scenario.network.pipes[0].n, scenario.integrator.dt, scenario.t_end) == (60, 1.0, 10_000.0)
    trajectory = simulate(scenario)
    pipe = scenario.network.pipes[0]
    final = trajectory.final.states["p1"]
    np.testing.assert_allclose(final.q, 150.0, rtol=1e-6)
    oracle = continuous_steady_profile(pipe.grid, 150.0, 155e5, [pipe.geom.length])[0]
    assert abs(final.p[-1] - oracle) <= 5e-3 * oracle


def test_repeated_runs_are_bit_identical():
    scenario = _with(builtin_case("diamond_step", cells=4), t_end=20.0, output_dt=5.0)
    first, second = simulate(scenario), simulate(scenario)
    assert first.times == second.times
    for a, b in zip(first.states, second.states):
        for pid in a.states:
            np.testing.assert_array_equal(a.states[pid].p, b.states[pid].p)
            np.testing.assert_array_equal(a.states[pid].q, b.states[pid].q)
    assert [d.newton_iterations for d in first.diagnostics] == [d.newton_iterations for d in second.diagnostics]


def test_frictionless_pipe_conserves_interior_mass():
    """a dx sum p_i / lambda_i^2 over interior cells changes only through the end-flux telescoping terms."""
    law = PressureLaw.isothermal(383.0735)
    grid = PipeGrid(PipeGeometry(3000.0, 0.762, 0.0), law, 20)
    network = Network(
        (Node("in", "pressure_boundary", "inlet"), Node("out", "flux_boundary", "outlet")),
        (Pipe("p1", "in", "out", grid),),
    )
    dae = assemble_dae(network, "new", PIPE_SIGNALS)
    stepper = Stepper(dae, IntegratorConfig(dt=1.0), dae.vector(NetState.uniform(network, 75e5, 0.0)))
    a, dx, lam2 = grid.geom.cross_section, grid.dx, law.c_ref**2

    def interior_mass(u):
        return a * dx * float(np.sum(dae.state(u).states["p1"].p[1:-1])) / lam2

    mass0 = interior_mass(stepper.u)
    outflow = 0.0
    for k in range(1, 31):
        stepper.advance_to(float(k))
        q = dae.state(stepper.u).states["p1"].q
        outflow += 0.5 * (q[-1] + q[-2] - q[1] - q[0])
    assert stepper.diagnostics[-1].t == 30.0
    assert len(stepper.diagnostics) == 30
    assert abs(interior_mass(stepper.u) - mass0 + outflow) <= 1e-8 * mass0
