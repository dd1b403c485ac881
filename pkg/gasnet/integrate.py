"""Time stepping of assembled systems: implicit Euler / BDF2 on the DAE, forward Euler on pinned single pipes."""

import logging
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.sparse.linalg import spsolve
from tenacity import RetryCallState, Retrying, retry_if_exception_type

from gasnet.errors import CFLViolation, DomainError, IntegrationAborted, NewtonDiverged
from gasnet.network import DAESystem, NetState, Network, assemble_dae, steady_solve
from gasnet.newton import LUFactors, newton_solve
from gasnet.schemes import cfl_dt
from gasnet.settings import get_settings

if TYPE_CHECKING:
    from gasnet.scenario_io import Scenario

logger = logging.getLogger(__name__)

Method = Literal["implicit_euler", "bdf2", "explicit_euler"]

# consecutive accepted steps before a halved dt is doubled again
_RESTORE_AFTER = 3
# largest step ratio dt_k / dt_{k-1} for which the two-step formula is used
_BDF2_MAX_RATIO = 2.0


class IntegratorConfig(BaseModel):
    method: Method = "implicit_euler"
    dt: float = 1.0
    newton_tol: float = Field(default_factory=lambda: get_settings().newton_tol)
    newton_max_iter: int = Field(default_factory=lambda: get_settings().newton_max_iter)
    dt_min: float = Field(default_factory=lambda: get_settings().dt_min)
    cfl_safety: float = Field(default_factory=lambda: get_settings().cfl_safety)
    jacobian_step: float = Field(default_factory=lambda: get_settings().jacobian_step)
    check_cfl: bool = True

    @model_validator(mode="after")
    def _check_ranges(self) -> "IntegratorConfig":
        if not self.dt_min > 0:
            raise ValueError(f"dt_min must be > 0, got {self.dt_min}")
        if not self.dt > self.dt_min:
            raise ValueError(f"dt={self.dt} must exceed dt_min={self.dt_min}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")
        return self


@dataclass(frozen=True)
class StepDiagnostics:
    t: float
    dt: float
    newton_iterations: int
    residual: float


@dataclass
class Trajectory:
    network: Network
    times: list[float] = field(default_factory=list)
    states: list[NetState] = field(default_factory=list)
    diagnostics: list[StepDiagnostics] = field(default_factory=list)
    wall_time: float = 0.0
    jacobian_evaluations: int = 0

    def record(self, t: float, state: NetState) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError(f"sample time {t} does not increase past {self.times[-1]}")
        self.times.append(float(t))
        self.states.append(state)

    @property
    def final(self) -> NetState:
        return self.states[-1]

    @property
    def max_residual(self) -> float:
        return max((d.residual for d in self.diagnostics), default=0.0)

    def cell_series(self, pipe_id: str, cell: int, quantity: Literal["p", "q"]) -> np.ndarray:
        """Time series of one cell value over the recorded samples."""
        return np.array([getattr(s.states[pipe_id], quantity)[cell] for s in self.states])


def _bdf_weights(dt: float, dt_prev: float | None) -> tuple[float, float, float]:
    """(c_k, c_km1, beta) of  u - c_k u_k + c_km1 u_km1 = dt beta F(u)."""
    if dt_prev is None:
        return 1.0, 0.0, 1.0
    w = dt / dt_prev
    denom = 1.0 + 2.0 * w
    return (1.0 + w) ** 2 / denom, w**2 / denom, (1.0 + w) / denom


@dataclass
class JacobianCache:
    """Factorized step Jacobian of the last implicit step, keyed by its weight dt * beta."""

    weight: float | None = None
    factors: LUFactors | None = None
    evaluations: int = 0

    def lookup(self, weight: float) -> LUFactors | None:
        return self.factors if weight == self.weight else None

    def store(self, weight: float, factors: LUFactors | None, evaluations: int = 0) -> None:
        self.weight, self.factors = weight, factors
        self.evaluations += evaluations


def step_implicit(
    dae: DAESystem,
    u_k: np.ndarray,
    t_k: float,
    dt: float,
    config: IntegratorConfig,
    u_km1: np.ndarray | None = None,
    dt_prev: float | None = None,
    cache: JacobianCache | None = None,
) -> tuple[np.ndarray, int]:
    """One implicit step; returns (u_{k+1}, Newton iterations).

    Differential rows read E(u)(u - u_k) - dt F(u) for implicit Euler, and the variable-step
    two-step formula for BDF2 when u_km1 and dt_prev are given. Algebraic rows read A(u, t_k + dt).
    With a cache, Newton starts from the previous factorization when the step weight is unchanged.
    """
    if dt < config.dt_min:
        raise IntegrationAborted(f"dt={dt:.3g} s below dt_min={config.dt_min:.3g} s")
    use_two_step = (config.method == "bdf2" and u_km1 is not None and dt_prev is not None
                    and dt / dt_prev <= _BDF2_MAX_RATIO)
    c_k, c_km1, beta = _bdf_weights(dt, dt_prev if use_two_step else None)
    history = c_k * u_k - (c_km1 * u_km1 if use_two_step else 0.0)
    t_new = t_k + dt
    b = dae.boundary_values(t_new)
    alg = dae.algebraic_index
    C = dae.constraint_matrix

    def residual(u: np.ndarray) -> np.ndarray:
        ev, f = dae.differential_parts(u, u - history)
        r = ev - dt * beta * f
        r[alg] = C @ u - b
        return r

    def jacobian(u: np.ndarray, f0: np.ndarray) -> np.ndarray:
        return dae.fd_jacobian(residual, u, f0, config.jacobian_step)

    weight = dt * beta
    result = newton_solve(residual, u_k, jacobian, tol=config.newton_tol,
                          max_iter=config.newton_max_iter, typical=dae.typical,
                          factors=cache.lookup(weight) if cache else None)
    if cache is not None:
        cache.store(weight, result.factors, result.jacobian_evaluations)
    return result.x, result.iterations


def step_explicit(dae: DAESystem, u_k: np.ndarray, t_k: float, config: IntegratorConfig,
                  dt: float | None = None) -> np.ndarray:
    """Forward Euler on the differential rows with pinned unknowns taken from the signals.

    The mass matrix is inverted on the differential block; pinned unknowns jump to their
    values at t_k + dt.
    """
    if not dae.is_ode_reducible:
        raise DomainError("explicit stepping needs every algebraic row to pin one unknown")
    dt = config.dt if dt is None else dt
    bound = cfl_dt(dae.split(u_k), [p.grid for p in dae.network.pipes])
    if config.check_cfl and dt > bound:
        raise CFLViolation(dt, bound)
    if dt > config.cfl_safety * bound:
        logger.debug("dt=%.4g s above %.2f of the CFL bound %.4g s", dt, config.cfl_safety, bound)

    pinned = dae.pinned_columns
    rows = dae.differential_mask
    cols = np.ones(dae.size, dtype=bool)
    cols[pinned] = False

    u_new = u_k.copy()
    u_new[pinned] = dae.boundary_values(t_k + dt)
    jump = u_new - u_k
    _, f = dae.differential_parts(u_k)
    mass = dae.mass_matrix(u_k)
    rhs = dt * f[rows] - mass[rows][:, pinned] @ jump[pinned]
    delta = spsolve(mass[rows][:, cols].tocsc(), rhs)
    u_new[cols] = u_k[cols] + np.atleast_1d(delta)
    return u_new


class _StepController:
    """Current dt with halving on failure and doubling back after a streak of accepted steps."""

    def __init__(self, nominal: float):
        self.nominal = nominal
        self.dt = nominal
        self.streak = 0

    def halve(self, retry_state: RetryCallState) -> None:
        self.dt *= 0.5
        self.streak = 0
        logger.warning("step failed (%s); retrying with dt=%.4g s",
                       retry_state.outcome.exception(), self.dt)

    def accepted(self) -> None:
        self.streak += 1
        if self.dt < self.nominal and self.streak >= _RESTORE_AFTER:
            self.dt = min(self.nominal, 2.0 * self.dt)
            self.streak = 0


class Stepper:
    """Advances one assembled system in time, halving dt when Newton fails."""

    def __init__(self, dae: DAESystem, config: IntegratorConfig, u0: np.ndarray, t0: float = 0.0):
        self.dae = dae
        self.config = config
        self.u = np.array(u0, dtype=float)
        self.t = float(t0)
        self.diagnostics: list[StepDiagnostics] = []
        self._controller = _StepController(config.dt)
        self._u_prev: np.ndarray | None = None
        self._dt_prev: float | None = None
        self._jacobian = JacobianCache()

    @property
    def jacobian_evaluations(self) -> int:
        return self._jacobian.evaluations

    def _step(self, dt: float) -> tuple[np.ndarray, int]:
        if self.config.method == "explicit_euler":
            return step_explicit(self.dae, self.u, self.t, self.config, dt=dt), 0
        return step_implicit(self.dae, self.u, self.t, dt, self.config, self._u_prev, self._dt_prev,
                             self._jacobian)

    def advance_to(self, t_out: float) -> np.ndarray:
        config, controller = self.config, self._controller
        tol = 1e-12 * max(1.0, abs(t_out))
        while self.t < t_out - tol:
            retrying = Retrying(
                retry=retry_if_exception_type(NewtonDiverged),
                after=controller.halve,
                stop=lambda _state: controller.dt < config.dt_min,
                reraise=True,
            )
            try:
                for attempt in retrying:
                    with attempt:
                        dt = min(controller.dt, t_out - self.t)
                        if t_out - self.t - dt < config.dt_min:
                            dt = t_out - self.t
                        u_next, iters = self._step(dt)
            except NewtonDiverged as exc:
                raise IntegrationAborted(
                    f"step at t={self.t:.6g} s failed down to dt_min={config.dt_min:g} s: {exc}"
                ) from exc
            self._u_prev, self._dt_prev, self.u = self.u, dt, u_next
            self.t = t_out if self.t + dt >= t_out - tol else self.t + dt
            controller.accepted()
            self.diagnostics.append(StepDiagnostics(
                t=self.t, dt=dt, newton_iterations=iters,
                residual=self.dae.constraint_residual(self.u, self.t),
            ))
        return self.u


def _initial_vector(dae: DAESystem, scenario: "Scenario") -> np.ndarray:
    init = scenario.init
    if init.kind == "steady":
        return dae.vector(steady_solve(dae, 0.0))
    return dae.vector(NetState.uniform(dae.network, init.pressure_pa, init.q_kgs))


def simulate(scenario: "Scenario") -> Trajectory:
    """Run a scenario from its initial state to t_end, sampling every output_dt."""
    config = scenario.integrator
    dae = assemble_dae(scenario.network, scenario.scheme, scenario.signal_functions(), scenario.options)
    trajectory = Trajectory(network=scenario.network)
    logger.info("simulating %s: scheme=%s method=%s dt=%g t_end=%g",
                scenario.name, scenario.scheme, config.method, config.dt, scenario.t_end)

    started = time.monotonic()
    stepper = Stepper(dae, config, _initial_vector(dae, scenario))
    trajectory.record(0.0, dae.state(stepper.u))
    n_out = int(np.ceil(scenario.t_end / scenario.output_dt - 1e-9)) if scenario.t_end > 0 else 0
    for k in range(1, n_out + 1):
        stepper.advance_to(min(k * scenario.output_dt, scenario.t_end))
        trajectory.record(stepper.t, dae.state(stepper.u))
    trajectory.diagnostics = stepper.diagnostics
    trajectory.jacobian_evaluations = stepper.jacobian_evaluations

    trajectory.wall_time = time.monotonic() - started
    logger.info("finished %s in %.2f s: %d steps, max constraint residual %.2e",
                scenario.name, trajectory.wall_time, len(trajectory.diagnostics), trajectory.max_residual)
    return trajectory
