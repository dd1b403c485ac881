"""Per-pipe spatial semi-discretizations, CFL bound, source quadrature and steady-state profiles.

Each scheme maps (grid, state) to SemiDiscreteRows: one row per state entry, written as
sparse mass coefficients times the time derivative equal to a right-hand side. The local
state layout is interleaved, [p_0, q_0, p_1, q_1, ..., p_n, q_n]. Two rows per pipe are
algebraic placeholders (slot of p_0 and slot of q_n) that the network fills with boundary
or coupling conditions.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Literal

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from gasnet.errors import DomainError, StateError
from gasnet.gas_model import (
    PipeGeometry,
    PressureLaw,
    friction_source,
    lambda_of_rho,
    rho_of_p,
    to_riemann,
    z_of_p,
)

logger = logging.getLogger(__name__)

SchemeName = Literal["new", "mid", "end", "upwind"]
SourceMode = Literal["midpoint", "simpson"]
EigSum = Literal["printed", "derived"]

SOURCE_WEIGHTS: dict[str, tuple[float, float, float]] = {
    "midpoint": (0.0, 1.0, 0.0),
    "simpson": (1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0),
}


@dataclass(frozen=True)
class SchemeOptions:
    source: SourceMode = "midpoint"
    eig_sum: EigSum = "printed"
    verbatim_source: bool = False

    def __post_init__(self) -> None:
        if self.source not in SOURCE_WEIGHTS:
            raise ValueError(f"unknown source quadrature: {self.source!r}")
        if self.eig_sum not in ("printed", "derived"):
            raise ValueError(f"unknown eigenvalue-sum variant: {self.eig_sum!r}")


@dataclass(frozen=True)
class PipeGrid:
    geom: PipeGeometry
    law: PressureLaw
    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"grid needs n >= 2 intervals, got {self.n}")

    @property
    def dx(self) -> float:
        return self.geom.length / self.n

    @property
    def x(self) -> np.ndarray:
        """Grid points x_i = i dx, i = 0..n."""
        return np.arange(self.n + 1) * self.dx

    @property
    def size(self) -> int:
        return 2 * (self.n + 1)


@dataclass
class PipeState:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)

    def validate(self, grid: PipeGrid) -> None:
        shape = (grid.n + 1,)
        if self.p.shape != shape or self.q.shape != shape:
            raise StateError(f"state shape {self.p.shape}/{self.q.shape} does not match grid {shape}")
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.q))):
            raise StateError("state has non-finite entries")
        if np.any(self.p <= 0):
            raise StateError("state has nonpositive pressure")

    def to_vector(self) -> np.ndarray:
        u = np.empty(2 * self.p.size)
        u[0::2] = self.p
        u[1::2] = self.q
        return u

    @classmethod
    def from_vector(cls, u: np.ndarray) -> "PipeState":
        return cls(np.array(u[0::2]), np.array(u[1::2]))

    @classmethod
    def uniform(cls, grid: PipeGrid, p: float, q: float) -> "PipeState":
        return cls(np.full(grid.n + 1, float(p)), np.full(grid.n + 1, float(q)))


@dataclass(frozen=True)
class SemiDiscreteRows:
    """Rows  sum_j mass[r, j] du_j/dt = rhs[r]  for differential r; algebraic rows are placeholders."""

    mass_row: np.ndarray
    mass_col: np.ndarray
    mass_val: np.ndarray
    rhs: np.ndarray
    algebraic: np.ndarray
    inlet_row: int
    outlet_row: int

    @property
    def size(self) -> int:
        return self.rhs.size

    def apply_mass(self, v: np.ndarray) -> np.ndarray:
        return np.bincount(self.mass_row, weights=self.mass_val * v[self.mass_col], minlength=self.size)

    def mass_matrix(self) -> sparse.csr_matrix:
        return sparse.coo_matrix((self.mass_val, (self.mass_row, self.mass_col)),
                                 shape=(self.size, self.size)).tocsr()


def source_weights(mode: SourceMode) -> tuple[float, float, float]:
    """Quadrature weights (w_{i-1}, w_i, w_{i+1}) of the interior source term."""
    try:
        return SOURCE_WEIGHTS[mode]
    except KeyError:
        raise ValueError(f"unknown source quadrature: {mode!r}") from None


def _rows(n: int, entries: Iterable[tuple], rhs: np.ndarray) -> SemiDiscreteRows:
    rows, cols, vals = [], [], []
    for r, c, v in entries:
        r, c, v = np.broadcast_arrays(np.atleast_1d(r), np.atleast_1d(c), np.atleast_1d(v))
        rows.append(r)
        cols.append(c)
        vals.append(v.astype(float))
    algebraic = np.zeros(2 * (n + 1), dtype=bool)
    algebraic[0] = algebraic[-1] = True
    return SemiDiscreteRows(
        mass_row=np.concatenate(rows).astype(np.intp),
        mass_col=np.concatenate(cols).astype(np.intp),
        mass_val=np.concatenate(vals),
        rhs=rhs,
        algebraic=algebraic,
        inlet_row=0,
        outlet_row=2 * n + 1,
    )


def _cell_quantities(grid: PipeGrid, state: PipeState):
    state.validate(grid)
    p, q = state.p, state.q
    z = np.asarray(z_of_p(grid.law, p))
    rho = p / z
    lam = np.asarray(lambda_of_rho(grid.law, rho))
    f = np.asarray(friction_source(grid.law, grid.geom, rho, q))
    return p, q, rho, lam, f


def _interior_source(f: np.ndarray, options: SchemeOptions) -> np.ndarray:
    w_left, w_mid, w_right = source_weights(options.source)
    return w_left * f[:-2] + w_mid * f[1:-1] + w_right * f[2:]


def rhs_new(grid: PipeGrid, state: PipeState, options: SchemeOptions = SchemeOptions()) -> SemiDiscreteRows:
    """Riemann-invariant upwind scheme written in (p, q) with characteristic boundary closures."""
    p, q, r, lam, f = _cell_quantities(grid, state)
    n, dx, a = grid.n, grid.dx, grid.geom.cross_section
    i = np.arange(1, n)
    if options.eig_sum == "printed":
        lam_sum = lam[i] + lam[i + 1]
    else:
        lam_sum = lam[i + 1] + lam[i - 1]

    rhs = np.zeros(grid.size)
    rhs[2 * i] = -lam[i] ** 2 / (2.0 * dx * a) * (q[i + 1] - q[i - 1])
    rhs[2 * i + 1] = -(lam[i] * a / (4.0 * dx)) * (r[i + 1] - r[i - 1]) * lam_sum + a * _interior_source(f, options)
    # outlet closure lives in the p_n slot, inlet closure in the q_0 slot
    rhs[2 * n] = (-lam[n] * (q[n] - q[n - 1]) / (a * dx)
                  - lam[n] / (2.0 * dx) * (r[n] - r[n - 1]) * (lam[n] + lam[n - 1]) + f[n])
    rhs[1] = (lam[0] * (q[1] - q[0]) / (a * dx)
              - lam[0] / (2.0 * dx) * (r[1] - r[0]) * (lam[1] + lam[0]) + f[0])
    entries = [
        (2 * i, 2 * i, 1.0),
        (2 * i + 1, 2 * i + 1, 1.0),
        ([2 * n, 2 * n], [2 * n + 1, 2 * n], [1.0 / a, 1.0 / lam[n]]),
        ([1, 1], [1, 0], [1.0 / a, -1.0 / lam[0]]),
    ]
    return _rows(n, entries, rhs)


def rhs_upwind(grid: PipeGrid, state: PipeState, options: SchemeOptions = SchemeOptions()) -> SemiDiscreteRows:
    """Upwind transport of the Riemann invariants, mapped back to (p, q) rows without truncation."""
    p, q, rho, lam, f = _cell_quantities(grid, state)
    n, dx, a = grid.n, grid.dx, grid.geom.cross_section
    pair = to_riemann(grid.law, grid.geom, rho, q)
    w_plus, w_minus = np.asarray(pair.w_plus), np.asarray(pair.w_minus)
    src = f.copy()
    src[1:-1] = _interior_source(f, options)

    dw_plus = np.zeros(n + 1)
    dw_minus = np.zeros(n + 1)
    dw_plus[1:] = -lam[1:] / dx * (w_plus[1:] - w_plus[:-1]) + 0.5 * src[1:]
    dw_minus[:-1] = lam[:-1] / dx * (w_minus[1:] - w_minus[:-1]) + 0.5 * src[:-1]

    i = np.arange(1, n)
    rhs = np.zeros(grid.size)
    rhs[2 * i] = lam[i] * (dw_plus[i] - dw_minus[i])
    rhs[2 * i + 1] = a * (dw_plus[i] + dw_minus[i])
    rhs[2 * n] = 2.0 * dw_plus[n]
    rhs[1] = 2.0 * dw_minus[0]
    entries = [
        (2 * i, 2 * i, 1.0),
        (2 * i + 1, 2 * i + 1, 1.0),
        ([2 * n, 2 * n], [2 * n + 1, 2 * n], [1.0 / a, 1.0 / lam[n]]),
        ([1, 1], [1, 0], [1.0 / a, -1.0 / lam[0]]),
    ]
    return _rows(n, entries, rhs)


def _require_staggered(grid: PipeGrid, name: str) -> None:
    if grid.n < 3:
        raise DomainError(f"{name} scheme needs n >= 3 intervals, got {grid.n}")


def rhs_midpoint(grid: PipeGrid, state: PipeState, options: SchemeOptions = SchemeOptions()) -> SemiDiscreteRows:
    """Box scheme: cell-pair averages of the time derivatives."""
    _require_staggered(grid, "midpoint")
    p, q, rho, lam, _ = _cell_quantities(grid, state)
    geom = grid.geom
    n, dx, a = grid.n, grid.dx, geom.cross_section
    i = np.arange(n)
    q_sum = q[i] + q[i + 1]
    if options.verbatim_source:
        source = -geom.friction / (4.0 * geom.diameter * a) * q_sum * np.abs(q_sum) / (p[i] + p[i + 1])
    else:
        rho_mid = 0.5 * (rho[i] + rho[i + 1])
        source = a * np.asarray(friction_source(grid.law, geom, rho_mid, 0.5 * q_sum))

    rhs = np.zeros(grid.size)
    rhs[2 * (i + 1)] = -(q[i + 1] - q[i]) / (dx * a)
    rhs[2 * i + 1] = -(a / dx) * (p[i + 1] - p[i]) + source
    entries = [
        (2 * (i + 1), 2 * (i + 1), 1.0 / (2.0 * lam[i + 1] ** 2)),
        (2 * (i + 1), 2 * i, 1.0 / (2.0 * lam[i] ** 2)),
        (2 * i + 1, 2 * i + 1, 0.5),
        (2 * i + 1, 2 * i + 3, 0.5),
    ]
    return _rows(n, entries, rhs)


def rhs_endpoint(grid: PipeGrid, state: PipeState, options: SchemeOptions = SchemeOptions()) -> SemiDiscreteRows:
    """One-sided staggered scheme: pressure rows backward, flux rows forward."""
    _require_staggered(grid, "endpoint")
    p, q, rho, lam, _ = _cell_quantities(grid, state)
    geom = grid.geom
    n, dx, a = grid.n, grid.dx, geom.cross_section
    ip = np.arange(1, n + 1)
    iq = np.arange(n)
    if options.verbatim_source:
        source = -geom.friction / (2.0 * geom.diameter * a) * q[iq] * np.abs(q[iq]) / p[iq + 1]
    else:
        source = a * np.asarray(friction_source(grid.law, geom, rho[iq + 1], q[iq]))

    rhs = np.zeros(grid.size)
    rhs[2 * ip] = -(lam[ip] ** 2 / (dx * a)) * (q[ip] - q[ip - 1])
    rhs[2 * iq + 1] = -(a / dx) * (p[iq + 1] - p[iq]) + source
    entries = [(2 * ip, 2 * ip, 1.0), (2 * iq + 1, 2 * iq + 1, 1.0)]
    return _rows(n, entries, rhs)


SCHEMES: dict[str, Callable[[PipeGrid, PipeState, SchemeOptions], SemiDiscreteRows]] = {
    "new": rhs_new,
    "mid": rhs_midpoint,
    "end": rhs_endpoint,
    "upwind": rhs_upwind,
}


def scheme_rows(scheme: SchemeName, grid: PipeGrid, state: PipeState,
                options: SchemeOptions = SchemeOptions()) -> SemiDiscreteRows:
    try:
        fn = SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {sorted(SCHEMES)}") from None
    return fn(grid, state, options)


def cfl_dt(states: Iterable[PipeState], grids: Iterable[PipeGrid]) -> float:
    """Largest explicit step dx / max lambda over all pipes."""
    bound = np.inf
    for state, grid in zip(states, grids, strict=True):
        state.validate(grid)
        lam = np.asarray(lambda_of_rho(grid.law, np.asarray(rho_of_p(grid.law, state.p))))
        bound = min(bound, grid.dx / float(lam.max()))
    return float(bound)


def discrete_steady_profile(grid: PipeGrid, c_q: float, p0: float, p1: float) -> PipeState:
    """Pressures of the exact steady state of the isothermal scheme with constant flux c_q."""
    if grid.law.kind != "isothermal":
        raise DomainError("discrete steady profile is defined for the isothermal law")
    if not (p0 > 0 and p1 > 0):
        raise StateError("p0 and p1 must be > 0")
    geom = grid.geom
    k = grid.dx * geom.friction * grid.law.c_ref**2 * c_q * abs(c_q) / (geom.diameter * geom.cross_section**2)
    p = np.empty(grid.n + 1)
    p[0], p[1] = p0, p1
    for i in range(1, grid.n):
        p[i + 1] = p[i - 1] - k / p[i]
        if p[i + 1] <= 0:
            raise StateError(f"discrete steady recurrence reaches nonpositive pressure at cell {i + 1}")
    return PipeState(p, np.full(grid.n + 1, float(c_q)))


def steady_profile_closed_form(grid: PipeGrid, c_q: float, p_inlet: float, x) -> np.ndarray:
    """Isothermal steady pressure p(x) = sqrt(p_in^2 - 2 K x), K = f_g c^2 C_q|C_q| / (2 d a^2)."""
    if grid.law.kind != "isothermal":
        raise DomainError("closed-form steady profile is defined for the isothermal law")
    geom = grid.geom
    k = geom.friction * grid.law.c_ref**2 * c_q * abs(c_q) / (2.0 * geom.diameter * geom.cross_section**2)
    square = p_inlet**2 - 2.0 * k * np.asarray(x, dtype=float)
    if np.any(square <= 0):
        raise StateError("steady pressure reaches zero within the pipe")
    return np.sqrt(square)


def continuous_steady_profile(grid: PipeGrid, c_q: float, p_inlet: float, x_samples,
                              rtol: float = 1e-10) -> np.ndarray:
    """Integrate dp/dx = f(rho(p), C_q) from the inlet and sample at x_samples."""
    if not p_inlet > 0:
        raise StateError("inlet pressure must be > 0")
    x = np.asarray(x_samples, dtype=float)
    if c_q == 0.0:
        return np.full_like(x, p_inlet)
    law, geom = grid.law, grid.geom
    floor = 1e-9 * p_inlet

    def rhs(_x, y):
        return [friction_source(law, geom, rho_of_p(law, max(y[0], floor)), c_q)]

    def hits_zero(_x, y):
        return y[0] - floor

    hits_zero.terminal = True
    x_end = float(max(x.max(initial=0.0), 0.0))
    if x_end == 0.0:
        return np.full_like(x, p_inlet)
    sol = solve_ivp(rhs, (0.0, x_end), [p_inlet], method="DOP853", rtol=rtol,
                    atol=rtol * 1e-3 * p_inlet, dense_output=True, events=hits_zero)
    if sol.status != 0:
        raise StateError(f"steady pressure reaches zero within the pipe ({sol.message})")
    return sol.sol(x)[0]


def well_balance_residual(grid: PipeGrid, c_q: float, p_inlet: float,
                          options: SchemeOptions = SchemeOptions()) -> float:
    """max |dq_i/dt| over interior cells of the new scheme on the sampled continuous steady state."""
    if grid.law.kind == "isothermal":
        p = steady_profile_closed_form(grid, c_q, p_inlet, grid.x)
    else:
        p = continuous_steady_profile(grid, c_q, p_inlet, grid.x, rtol=1e-13)
    rows = rhs_new(grid, PipeState(p, np.full(grid.n + 1, float(c_q))), options)
    return float(np.max(np.abs(rows.rhs[3:2 * grid.n:2])))
