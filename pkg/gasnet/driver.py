"""Command-line entry point: run, compare, convergence, steady and bench.

Usage: python -m gasnet run --case pipe_steady --scheme new [--out DIR]
"""

import argparse
import csv
import io
import logging
from dataclasses import dataclass, field
from functools import wraps
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from gasnet.errors import (
    AssemblyError,
    CFLViolation,
    DomainError,
    IntegrationAborted,
    NewtonDiverged,
    ScenarioError,
    StateError,
)
from gasnet.gas_model import (
    PipeGeometry,
    PressureLaw,
    p_of_rho,
    traveling_wave_fields,
    uniform_flow_reference,
)
from gasnet.integrate import IntegratorConfig, Method, Stepper, Trajectory, simulate
from gasnet.network import Endpoint, NetState, Network, Node, Pipe, assemble_dae, steady_solve
from gasnet.scenario_io import (
    BUILTIN_CASES,
    PA_PER_BAR,
    Scenario,
    builtin_case,
    load_network,
    parse_scenario,
    write_csv,
)
from gasnet.schemes import PipeGrid, SchemeOptions, continuous_steady_profile, well_balance_residual
from gasnet.settings import get_settings
from gasnet.storage_local import artifact_path, output_dir, write_artifact

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_INPUT = 2

OSCILLATION_THRESHOLD = 1e-6
OSCILLATION_WINDOW = 0.2
PUBLISHED_STEADY_OUTLET_BAR = 153.8887
PUBLISHED_STEADY_TOLERANCE_BAR = 1.5
PUBLISHED_TIMES_S = {"new": 0.50, "end": 1.27, "mid": 202.57}
SCHEME_CHOICES = ("new", "mid", "end", "upwind")
CONVERGENCE_TARGETS = ("uniform_flow", "traveling_wave", "steady_residual")


@dataclass
class CommandResult:
    exit_code: int
    summary: str
    artifacts: list[Path] = field(default_factory=list)


def _guarded(fn: Callable[..., CommandResult]) -> Callable[..., CommandResult]:
    """Map input errors to exit 2 and numerical failures to exit 1."""

    @wraps(fn)
    def wrapper(*args, **kwargs) -> CommandResult:
        try:
            return fn(*args, **kwargs)
        except (ScenarioError, AssemblyError, FileNotFoundError, ValidationError, DomainError) as exc:
            logger.error("%s: input error: %s", fn.__name__, exc)
            return CommandResult(EXIT_INPUT, f"input error: {exc}")
        except (IntegrationAborted, NewtonDiverged, CFLViolation, StateError) as exc:
            logger.exception("%s: numerical failure", fn.__name__)
            return CommandResult(EXIT_NUMERICAL, f"numerical failure: {exc}")

    return wrapper


# Scenario loading ------------------------------------------------------------


def _with(scenario: Scenario, **update) -> Scenario:
    """Validated copy of a scenario with some fields replaced."""
    fields = {name: getattr(scenario, name) for name in Scenario.model_fields}
    return Scenario(**(fields | update))


def load_scenario(case: str | None = None, network: str | Path | None = None,
                  scenario: str | Path | None = None, cells: int | None = None) -> Scenario:
    """Scenario from a file (optionally with a separate network file) or a built-in case."""
    if scenario:
        path = Path(scenario)
        net = load_network(Path(network)) if network else None
        sc = parse_scenario(path.read_text(encoding="utf-8"), network=net, base_dir=path.parent)
        return _with(sc, network=sc.network.with_cells(cells)) if cells else sc
    if case:
        return builtin_case(case, cells)
    if network:
        load_network(Path(network))
        raise ScenarioError("a network file needs --scenario for its boundary signals", field="scenario")
    raise ScenarioError("one of --case or --scenario is required")


def apply_overrides(scenario: Scenario, scheme: str | None = None, dt: float | None = None,
                    t_end: float | None = None, source: str | None = None, eig_sum: str | None = None,
                    verbatim_source: bool | None = None) -> Scenario:
    update: dict = {}
    if scheme:
        update["scheme"] = scheme
    if t_end is not None:
        update["t_end"] = t_end
    if source:
        update["source"] = source
    if eig_sum:
        update["eig_sum"] = eig_sum
    if verbatim_source:
        update["verbatim_source"] = True
    if dt is not None:
        update["integrator"] = IntegratorConfig(**(scenario.integrator.model_dump() | {"dt": dt}))
    return _with(scenario, **update) if update else scenario


# Series and metrics ----------------------------------------------------------


def _boundary_end(network: Network, kind: str) -> Endpoint:
    node = next(n for n in network.nodes if n.kind == kind)
    return network.endpoints(node.id)[0]


def _series(trajectory: Trajectory, end: Endpoint, quantity: str) -> np.ndarray:
    cell = 0 if end.end == "inlet" else trajectory.network.pipe(end.pipe_id).n
    return trajectory.cell_series(end.pipe_id, cell, quantity)


def supply_flux(trajectory: Trajectory) -> np.ndarray:
    """Mass flux at the first pressure boundary (the pipe inlet for single-pipe cases)."""
    return _series(trajectory, _boundary_end(trajectory.network, "pressure_boundary"), "q")


def outlet_pressure(trajectory: Trajectory) -> np.ndarray:
    """Pressure at the first flux boundary."""
    return _series(trajectory, _boundary_end(trajectory.network, "flux_boundary"), "p")


def oscillation_metric(signal: np.ndarray, window: float = OSCILLATION_WINDOW) -> float:
    """Total variation over the final `window` share of the samples, over the mean magnitude."""
    signal = np.asarray(signal, dtype=float)
    tail = signal[int(np.floor(signal.size * (1.0 - window))):]
    if tail.size < 2:
        return 0.0
    variation = float(np.sum(np.abs(np.diff(tail))))
    mean = float(np.mean(np.abs(tail)))
    return variation / mean if mean > 0 else variation


def solver_work(trajectory: Trajectory) -> tuple[int, int, int]:
    """(steps, Newton iterations, Jacobian evaluations) spent on a trajectory."""
    d = trajectory.diagnostics
    return len(d), sum(s.newton_iterations for s in d), trajectory.jacobian_evaluations


def fitted_slope(h: Sequence[float], err: Sequence[float]) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(np.asarray(h)), np.log(np.asarray(err)), 1)[0])


def _final_state_lines(trajectory: Trajectory) -> list[str]:
    lines = []
    for pipe in trajectory.network.pipes:
        st = trajectory.final.states[pipe.id]
        lines.append(
            f"  {pipe.id}: p_in={st.p[0] / PA_PER_BAR:.6f} bar p_out={st.p[-1] / PA_PER_BAR:.6f} bar "
            f"q_in={st.q[0]:.6f} kg/s q_out={st.q[-1]:.6f} kg/s"
        )
    return lines


def _artifact_lines(paths: list[Path]) -> list[str]:
    return ["artifacts:"] + [f"  {p}" for p in paths]


def _table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# Commands --------------------------------------------------------------------


@_guarded
def cmd_run(case: str | None = None, network: str | None = None, scenario: str | None = None,
            scheme: str | None = None, cells: int | None = None, dt: float | None = None,
            t_end: float | None = None, source: str | None = None, eig_sum: str | None = None,
            verbatim_source: bool = False, out: str | Path | None = None) -> CommandResult:
    """Simulate one scenario; write trajectory.csv and summary.txt."""
    sc = apply_overrides(load_scenario(case, network, scenario, cells), scheme, dt, t_end,
                         source, eig_sum, verbatim_source)
    trajectory = simulate(sc)
    out_dir = output_dir(f"run_{sc.name}_{sc.scheme}", out)
    csv_path = artifact_path(out_dir, "trajectory.csv")
    write_csv(trajectory, csv_path)

    metric = oscillation_metric(supply_flux(trajectory))
    flag = ("persistent oscillation above threshold" if metric > OSCILLATION_THRESHOLD
            else "no persistent oscillation")
    lines = [
        f"case={sc.name} scheme={sc.scheme} method={sc.integrator.method} dt={sc.integrator.dt:g} s",
        f"samples={len(trajectory.times)} steps={len(trajectory.diagnostics)} wall_time_s={trajectory.wall_time:.3f}",
        f"max_constraint_residual={trajectory.max_residual:.3e}",
        f"oscillation_metric={metric:.3e} ({flag}, threshold {OSCILLATION_THRESHOLD:g})",
        "final state:",
        *_final_state_lines(trajectory),
    ]
    summary_path = artifact_path(out_dir, "summary.txt")
    artifacts = [csv_path, summary_path]
    text = "\n".join(lines + _artifact_lines(artifacts)) + "\n"
    write_artifact(out_dir, "summary.txt", text)
    return CommandResult(EXIT_OK, text, artifacts)


def _run_schemes(base: Scenario, schemes: Sequence[str]) -> dict[str, Trajectory]:
    return {s: simulate(_with(base, scheme=s)) for s in schemes}


@_guarded
def cmd_compare(case: str | None = None, schemes: Sequence[str] = ("new", "mid", "end"),
                network: str | None = None, scenario: str | None = None, cells: int | None = None,
                dt: float | None = None, t_end: float | None = None, source: str | None = None,
                eig_sum: str | None = None, verbatim_source: bool = False,
                out: str | Path | None = None) -> CommandResult:
    """Same scenario under several schemes: wall time, oscillation metric, outlet-pressure deviation."""
    schemes = list(dict.fromkeys(schemes))
    if len(schemes) < 2:
        raise ScenarioError("compare needs at least two schemes", field="schemes")
    base = apply_overrides(load_scenario(case, network, scenario, cells), None, dt, t_end,
                           source, eig_sum, verbatim_source)
    runs = _run_schemes(base, schemes)
    out_dir = output_dir(f"compare_{base.name}", out)

    artifacts: list[Path] = []
    reference = outlet_pressure(runs[schemes[0]])
    rows = []
    metrics: dict[str, float] = {}
    for s, trajectory in runs.items():
        path = artifact_path(out_dir, f"trajectory_{s}.csv")
        write_csv(trajectory, path)
        artifacts.append(path)
        p_out = outlet_pressure(trajectory)
        deviation = float(np.max(np.abs(p_out - reference) / np.abs(reference)))
        metrics[s] = oscillation_metric(supply_flux(trajectory))
        rows.append((s, f"{trajectory.wall_time:.6f}", f"{metrics[s]:.6e}",
                     f"{p_out[-1]:.16e}", f"{deviation:.6e}"))
    header = ("scheme", "wall_time_s", "oscillation", "outlet_p_final_pa", "max_outlet_dev_rel")
    artifacts.append(write_artifact(out_dir, "compare.csv", _table(header, rows)))

    max_dev = max(float(r[4]) for r in rows)
    lines = [f"case={base.name} schemes={','.join(schemes)}",
             f"max cross-scheme outlet pressure deviation={max_dev:.3e}"]
    lines += [f"  {r[0]}: wall_time_s={r[1]} oscillation={r[2]}" for r in rows]
    ringing = [s for s, m in metrics.items() if m > OSCILLATION_THRESHOLD]
    lines.append(f"persistent oscillation above {OSCILLATION_THRESHOLD:g}: {', '.join(ringing) or 'none'}")
    if {"new", "mid", "end"} <= set(runs):
        wall = {s: runs[s].wall_time for s in ("new", "mid", "end")}
        holds = wall["new"] <= wall["end"] < wall["mid"]
        lines.append(f"timing ordering new <= end < mid: {'holds' if holds else 'does not hold'}")
    text = "\n".join(lines + _artifact_lines(artifacts)) + "\n"
    return CommandResult(EXIT_OK, text, artifacts)


def uniform_flow_errors(dts: Sequence[float], method: Method = "implicit_euler",
                        t_end: float = 100.0, cells: int = 10) -> list[float]:
    """Max flux error at t_end of a single a = 1 pipe against q(t) = 1/(C0 + C1 t).

    Both ends hold the constant-density pressure, so every cell follows the same
    time-discretized friction ODE and the error is the time error alone.
    """
    law = PressureLaw.isothermal(383.0735)
    geom = PipeGeometry(3000.0, 0.762, 0.0178, cross_section=1.0)
    rho0, c0 = 50.0, 1.0 / 150.0
    p0 = float(p_of_rho(law, rho0))
    network = Network(
        (Node("in", "pressure_boundary", "inlet"), Node("out", "pressure_boundary", "outlet")),
        (Pipe("p1", "in", "out", PipeGrid(geom, law, cells)),),
    )
    dae = assemble_dae(network, "new", {"inlet": lambda _t: p0, "outlet": lambda _t: p0})
    u0 = dae.vector(NetState.uniform(network, p0, 1.0 / c0))
    q_exact = float(uniform_flow_reference(rho0, c0, geom, t_end)[1])
    errors = []
    for dt in dts:
        stepper = Stepper(dae, IntegratorConfig(method=method, dt=dt), u0)
        q = dae.state(stepper.advance_to(t_end)).states["p1"].q
        errors.append(float(np.max(np.abs(q - q_exact))))
    return errors


def traveling_wave_residuals(hs: Sequence[float], C: float = 1.0, y0: float = 0.5,
                             speed: float = 1.0, t: float = 0.5) -> list[float]:
    """Central-difference mass-conservation residual of the traveling wave, d_t rho + d_x q."""
    x = np.linspace(0.1, 0.9, 9)
    out = []
    for h in hs:
        _, rho_next, _ = traveling_wave_fields(C, y0, speed, t + h, x)
        _, rho_prev, _ = traveling_wave_fields(C, y0, speed, t - h, x)
        _, _, q_right = traveling_wave_fields(C, y0, speed, t, x + h)
        _, _, q_left = traveling_wave_fields(C, y0, speed, t, x - h)
        out.append(float(np.max(np.abs((rho_next - rho_prev) / (2 * h) + (q_right - q_left) / (2 * h)))))
    return out


def steady_residuals(cells: Sequence[int], source: str = "midpoint") -> list[float]:
    """Interior dq/dt of the new scheme on the sampled continuous steady state (nondimensional pipe)."""
    law = PressureLaw.isothermal(1.0)
    geom = PipeGeometry(1.0, 1.0, 0.75, cross_section=1.0)
    options = SchemeOptions(source=source)
    return [well_balance_residual(PipeGrid(geom, law, n), 1.0, 1.0, options) for n in cells]


@_guarded
def cmd_convergence(target: str, levels: int = 4, out: str | Path | None = None,
                    source: str = "midpoint", method: Method = "implicit_euler") -> CommandResult:
    """Refinement study with fitted log-log slope checked against its target."""
    if levels < 3:
        raise ScenarioError(f"convergence needs at least 3 levels, got {levels}", field="levels")
    k = np.arange(levels)
    if target == "uniform_flow":
        h = list(2.0 * 0.5**k)
        err = uniform_flow_errors(h, method=method)
        lo, hi = (0.8, 1.2) if method != "bdf2" else (1.7, 2.3)
        slope = fitted_slope(h, err)
        ok = lo <= slope <= hi
        check = f"slope {slope:.3f} in [{lo}, {hi}]"
    elif target == "traveling_wave":
        h = list(0.1 * 0.5**k)
        err = traveling_wave_residuals(h)
        slope = float("nan")
        ok = max(err) <= 1e-6
        check = f"max residual {max(err):.3e} <= 1e-6"
    elif target == "steady_residual":
        cells = [10 * 2**int(i) for i in k]
        h = [1.0 / n for n in cells]
        err = steady_residuals(cells, source)
        lo, hi = (3.0, np.inf) if source == "simpson" else (1.7, 2.3)
        slope = fitted_slope(h, err)
        ok = lo <= slope <= hi
        check = f"slope {slope:.3f} in [{lo}, {hi}] ({source} source)"
    else:
        raise ScenarioError(f"unknown convergence target {target!r}", field="target")

    rates = [""] + [f"{np.log(err[i - 1] / err[i]) / np.log(h[i - 1] / h[i]):.4f}"
                    if err[i] > 0 and err[i - 1] > 0 else "" for i in range(1, len(h))]
    rows = [(i, f"{h[i]:.6e}", f"{err[i]:.6e}", rates[i]) for i in range(len(h))]
    out_dir = output_dir(f"convergence_{target}", out)
    path = write_artifact(out_dir, "rates.csv", _table(("level", "h", "error", "observed_rate"), rows))
    lines = [f"target={target} levels={levels}", f"{check}: {'pass' if ok else 'FAIL'}"]
    text = "\n".join(lines + _artifact_lines([path])) + "\n"
    return CommandResult(EXIT_OK if ok else EXIT_NUMERICAL, text, [path])


@_guarded
def cmd_steady(cells: int = 60, scheme: str = "new", out: str | Path | None = None) -> CommandResult:
    """Steady state of pipe_steady against the steady ODE and the published outlet pressure."""
    sc = builtin_case("pipe_steady", cells)
    dae = assemble_dae(sc.network, scheme, sc.signal_functions(), sc.options)
    state = steady_solve(dae, 0.0)
    pipe = sc.network.pipes[0]
    st = state.states[pipe.id]
    c_q = sc.signals["outlet"](0.0)
    p_in = sc.signals["inlet"](0.0)
    oracle = float(continuous_steady_profile(pipe.grid, c_q, p_in, [pipe.geom.length])[0])
    rel = abs(st.p[-1] - oracle) / oracle
    flux_dev = float(np.max(np.abs(st.q - c_q)) / c_q)
    published_dev = oracle / PA_PER_BAR - PUBLISHED_STEADY_OUTLET_BAR
    outside = abs(published_dev) > PUBLISHED_STEADY_TOLERANCE_BAR

    trajectory = Trajectory(network=sc.network)
    trajectory.record(0.0, state)
    out_dir = output_dir(f"steady_{scheme}", out)
    csv_path = artifact_path(out_dir, "steady.csv")
    write_csv(trajectory, csv_path)
    lines = [
        f"scheme={scheme} cells={pipe.n}",
        f"outlet pressure={st.p[-1] / PA_PER_BAR:.6f} bar, steady ODE={oracle / PA_PER_BAR:.6f} bar, "
        f"relative deviation={rel:.3e}",
        f"max relative flux deviation from {c_q:g} kg/s={flux_dev:.3e}",
        f"published outlet pressure={PUBLISHED_STEADY_OUTLET_BAR} bar, ODE minus published={published_dev:+.4f} bar"
        + (f" (outside +/-{PUBLISHED_STEADY_TOLERANCE_BAR} bar)" if outside else ""),
    ]
    text = "\n".join(lines + _artifact_lines([csv_path])) + "\n"
    summary = write_artifact(out_dir, "summary.txt", text)
    return CommandResult(EXIT_OK, text, [csv_path, summary])


@_guarded
def cmd_bench(case: str = "pipe_wave", schemes: Sequence[str] = ("new", "end", "mid"),
              cells: int | None = None, dt: float | None = None, t_end: float | None = None,
              out: str | Path | None = None) -> CommandResult:
    """Wall time and solver work of simulate per scheme; published times are listed for reference only.

    Steps, Newton iterations and Jacobian evaluations are deterministic, unlike wall time.
    """
    base = apply_overrides(builtin_case(case, cells), None, dt, t_end)
    runs = _run_schemes(base, list(dict.fromkeys(schemes)))
    rows = [(s, f"{tr.wall_time:.6f}", *solver_work(tr), PUBLISHED_TIMES_S.get(s, "")) for s, tr in runs.items()]
    out_dir = output_dir(f"bench_{case}", out)
    header = ("scheme", "wall_time_s", "steps", "newton_iterations", "jacobian_evaluations", "published_s")
    path = write_artifact(out_dir, "bench.csv", _table(header, rows))
    lines = [f"case={case}"] + [
        f"  {r[0]}: {r[1]} s, {r[2]} steps, {r[3]} Newton iterations, {r[4]} Jacobians (published {r[5] or 'n/a'})"
        for r in rows
    ]
    if {"new", "mid", "end"} <= set(runs):
        holds = runs["new"].wall_time <= runs["end"].wall_time < runs["mid"].wall_time
        lines.append(f"timing ordering new <= end < mid: {'holds' if holds else 'does not hold'}")
    text = "\n".join(lines + _artifact_lines([path])) + "\n"
    return CommandResult(EXIT_OK, text, [path])


# CLI -------------------------------------------------------------------------


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", choices=BUILTIN_CASES, default=None, help="Built-in benchmark case")
    p.add_argument("--network", default=None, help="Path to a network JSON file")
    p.add_argument("--scenario", default=None, help="Path to a scenario JSON file")
    p.add_argument("--cells", type=int, default=None, help="Intervals per pipe")
    p.add_argument("--dt", type=float, default=None, help="Time step in seconds")
    p.add_argument("--t-end", type=float, default=None, help="End time in seconds")
    p.add_argument("--source", choices=("midpoint", "simpson"), default=None)
    p.add_argument("--eig-sum", choices=("printed", "derived"), default=None)
    p.add_argument("--verbatim-source", action="store_true", help="Printed source terms for mid/end")
    p.add_argument("--out", default=None, help="Output directory (default results/<run>/)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gasnet", description="Transient gas pipe network simulator")
    parser.add_argument("--log-level", default=None, help="Logging level (default from GASNET_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Simulate one scenario")
    _add_scenario_flags(run)
    run.add_argument("--scheme", choices=SCHEME_CHOICES, default=None)

    compare = sub.add_parser("compare", help="Run a scenario under several schemes")
    _add_scenario_flags(compare)
    compare.add_argument("--schemes", nargs="+", choices=SCHEME_CHOICES, default=["new", "mid", "end"])

    conv = sub.add_parser("convergence", help="Refinement study")
    conv.add_argument("target", choices=CONVERGENCE_TARGETS)
    conv.add_argument("--levels", type=int, default=4)
    conv.add_argument("--source", choices=("midpoint", "simpson"), default="midpoint")
    conv.add_argument("--method", choices=("implicit_euler", "bdf2"), default="implicit_euler")
    conv.add_argument("--out", default=None)

    steady = sub.add_parser("steady", help="Steady-state audit of pipe_steady")
    steady.add_argument("--cells", type=int, default=60)
    steady.add_argument("--scheme", choices=SCHEME_CHOICES, default="new")
    steady.add_argument("--out", default=None)

    bench = sub.add_parser("bench", help="Wall time and solver work per scheme")
    bench.add_argument("--case", choices=BUILTIN_CASES, default="pipe_wave")
    bench.add_argument("--schemes", nargs="+", choices=SCHEME_CHOICES, default=["new", "end", "mid"])
    bench.add_argument("--cells", type=int, default=None)
    bench.add_argument("--dt", type=float, default=None)
    bench.add_argument("--t-end", type=float, default=None)
    bench.add_argument("--out", default=None)
    return parser


def dispatch(args: argparse.Namespace) -> CommandResult:
    scenario_kwargs = {}
    if args.command in ("run", "compare"):
        scenario_kwargs = dict(
            case=args.case, network=args.network, scenario=args.scenario, cells=args.cells, dt=args.dt,
            t_end=args.t_end, source=args.source, eig_sum=args.eig_sum,
            verbatim_source=args.verbatim_source, out=args.out,
        )
    if args.command == "run":
        return cmd_run(scheme=args.scheme, **scenario_kwargs)
    if args.command == "compare":
        return cmd_compare(schemes=args.schemes, **scenario_kwargs)
    if args.command == "convergence":
        return cmd_convergence(args.target, levels=args.levels, out=args.out, source=args.source,
                               method=args.method)
    if args.command == "steady":
        return cmd_steady(cells=args.cells, scheme=args.scheme, out=args.out)
    return cmd_bench(case=args.case, schemes=args.schemes, cells=args.cells, dt=args.dt,
                     t_end=args.t_end, out=args.out)


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or get_settings().log_level).upper(),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    result = dispatch(args)
    print(result.summary, end="")
    return result.exit_code
