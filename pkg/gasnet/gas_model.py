"""Pressure laws, eigenvalues, Riemann invariants, friction source and closed-form reference solutions.

All functions accept scalars or numpy arrays and return the same shape.
Units are SI: pressure Pa, density kg/m^3, mass flux kg/s, lengths m.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

from gasnet.errors import DomainError, GasnetError

logger = logging.getLogger(__name__)

LawKind = Literal["isothermal", "affine"]

# Laws with a closed-form invariant integral. Anything else goes through quadrature.
_CLOSED_FORM_KINDS = frozenset({"isothermal", "affine"})


@dataclass(frozen=True)
class PressureLaw:
    """Compressibility model p = z(p) rho with z(p) = c_ref^2 (1 + alpha p)."""

    kind: LawKind
    c_ref: float
    alpha: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("isothermal", "affine"):
            raise DomainError(f"unknown pressure law kind: {self.kind!r}")
        if not self.c_ref > 0:
            raise DomainError(f"c_ref must be > 0, got {self.c_ref}")
        if self.kind == "isothermal" and self.alpha != 0.0:
            raise DomainError("isothermal law takes alpha=0")
        if self.alpha > 0:
            raise DomainError(f"alpha must be <= 0 for hyperbolicity, got {self.alpha}")

    @classmethod
    def isothermal(cls, c: float) -> "PressureLaw":
        return cls("isothermal", float(c), 0.0)

    @classmethod
    def affine(cls, c: float, alpha: float) -> "PressureLaw":
        return cls("affine", float(c), float(alpha))

    @property
    def beta(self) -> float:
        """alpha * c_ref^2, the density coefficient of the closed forms (1/(kg/m^3))."""
        return self.alpha * self.c_ref**2


@dataclass(frozen=True)
class PipeGeometry:
    length: float
    diameter: float
    friction: float
    cross_section: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.cross_section is None:
            object.__setattr__(self, "cross_section", math.pi * self.diameter**2 / 4.0)
        for name in ("length", "diameter", "cross_section"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"pipe {name} must be > 0, got {value}")
        if not (np.isfinite(self.friction) and self.friction >= 0):
            raise DomainError(f"pipe friction must be >= 0, got {self.friction}")


@dataclass(frozen=True)
class RiemannPair:
    w_plus: np.ndarray | float
    w_minus: np.ndarray | float


def _check_admissible_pressure(law: PressureLaw, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(1.0 + law.alpha * p <= 0):
        raise DomainError("pressure outside admissible range (1 + alpha p <= 0)")
    return p


def _check_density(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if np.any(~(rho > 0)):
        raise DomainError("density must be > 0")
    return rho


def _out(x: np.ndarray):
    return x.item() if x.ndim == 0 else x


def z_of_p(law: PressureLaw, p):
    """Compressibility factor z(p) in m^2/s^2."""
    p = _check_admissible_pressure(law, p)
    return _out(law.c_ref**2 * (1.0 + law.alpha * p))


def p_of_rho(law: PressureLaw, rho):
    """Pressure from density, solving p = z(p) rho in closed form."""
    rho = _check_density(rho)
    denom = 1.0 - law.beta * rho
    if np.any(denom <= 0):
        raise DomainError("1 - alpha c^2 rho <= 0")
    return _out(law.c_ref**2 * rho / denom)


def rho_of_p(law: PressureLaw, p):
    """Density from pressure, rho = p / z(p)."""
    p = _check_admissible_pressure(law, p)
    if np.any(~(p > 0)):
        raise DomainError("pressure must be > 0")
    return _out(p / (law.c_ref**2 * (1.0 + law.alpha * p)))


def lambda_of_rho(law: PressureLaw, rho):
    """Positive eigenvalue sqrt(d p / d rho); the negative one is its negation."""
    rho = _check_density(rho)
    # d p / d rho = z / (1 - rho z') = c^2 / (1 - beta rho)^2
    denom = 1.0 - law.beta * rho
    if np.any(denom <= 0):
        raise DomainError("d p / d rho <= 0: state is not hyperbolic")
    return _out(law.c_ref / denom)


def _invariant_integral_quadrature(law: PressureLaw, rho: float, tol: float = 1e-10) -> float:
    value, _ = quad(lambda s: lambda_of_rho(law, s) if s > 0 else law.c_ref, 0.0, rho,
                    epsabs=0.0, epsrel=tol, limit=200)
    return value


def _invariant_integral_inv_bracket(law: PressureLaw, target: float, tol: float = 1e-10) -> float:
    # lambda >= c_ref for alpha <= 0, so rho <= target / c_ref
    hi = target / law.c_ref
    if hi <= 0:
        raise DomainError("invariant integral must be > 0")
    return brentq(lambda r: _invariant_integral_quadrature(law, r, tol) - target,
                  0.0, hi, xtol=1e-14, rtol=1e-14, maxiter=200)


def invariant_integral(law: PressureLaw, rho):
    """I(rho) = integral of lambda from 0 to rho."""
    rho = _check_density(rho)
    if law.kind not in _CLOSED_FORM_KINDS:
        return _out(np.vectorize(lambda r: _invariant_integral_quadrature(law, r))(rho))
    c, beta = law.c_ref, law.beta
    if beta == 0.0:
        return _out(c * rho)
    return _out(-(c / beta) * np.log1p(-beta * rho))


def invariant_integral_inv(law: PressureLaw, value):
    """Density whose invariant integral equals value."""
    value = np.asarray(value, dtype=float)
    if np.any(~(value > 0)):
        raise DomainError("invariant integral must be > 0")
    if law.kind not in _CLOSED_FORM_KINDS:
        return _out(np.vectorize(lambda v: _invariant_integral_inv_bracket(law, v))(value))
    c, beta = law.c_ref, law.beta
    if beta == 0.0:
        return _out(value / c)
    return _out(-np.expm1(-beta * value / c) / beta)


def to_riemann(law: PressureLaw, geom: PipeGeometry, rho, q) -> RiemannPair:
    integral = np.asarray(invariant_integral(law, rho))
    u = np.asarray(q, dtype=float) / geom.cross_section
    return RiemannPair(_out(0.5 * (u + integral)), _out(0.5 * (u - integral)))


def from_riemann(law: PressureLaw, geom: PipeGeometry, pair: RiemannPair):
    """Invert the invariants. Returns (rho, q)."""
    w_plus = np.asarray(pair.w_plus, dtype=float)
    w_minus = np.asarray(pair.w_minus, dtype=float)
    spread = w_plus - w_minus
    if np.any(~(spread > 0)):
        raise DomainError("w+ - w- <= 0: nonphysical state")
    rho = np.asarray(invariant_integral_inv(law, spread))
    q = geom.cross_section * (w_plus + w_minus)
    return _out(rho), _out(q)


def friction_source(law: PressureLaw, geom: PipeGeometry, rho, q):
    """Momentum source -f_g/(2 d a^2) q|q|/rho, in Pa/m."""
    rho = _check_density(rho)
    q = np.asarray(q, dtype=float)
    k = geom.friction / (2.0 * geom.diameter * geom.cross_section**2)
    return _out(-k * q * np.abs(q) / rho)


def friction_source_pz(law: PressureLaw, geom: PipeGeometry, p, q):
    """Same source written as -f_g/(2 d a^2) q|q| z(p)/p."""
    z = np.asarray(z_of_p(law, p))
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    k = geom.friction / (2.0 * geom.diameter * geom.cross_section**2)
    return _out(-k * q * np.abs(q) * z / p)


def uniform_flow_reference(rho0: float, c0: float, geom: PipeGeometry, t):
    """Constant-density solution q(t) = 1/(C0 + C1 t), C1 = f_g/(2 d a rho0).

    Reduces to the a = 1 form C1 = f_g/(2 d rho0). Returns (rho, q).
    """
    if not rho0 > 0 or not c0 > 0:
        raise DomainError("rho0 and C0 must be > 0")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be >= 0")
    c1 = uniform_flow_decay(rho0, geom)
    q = 1.0 / (c0 + c1 * t)
    return _out(np.full_like(t, rho0)), _out(q)


def uniform_flow_decay(rho0: float, geom: PipeGeometry) -> float:
    """C1 of the constant-density solution."""
    return geom.friction / (2.0 * geom.diameter * geom.cross_section * rho0)


def _traveling_wave_rhs(C: float):
    # y'(1 - (1-y)^2) = -C y (1-y)  <=>  y' = -C (1-y)/(2-y) on (0, 1)
    def rhs(_s, y):
        return -C * (1.0 - y) / (2.0 - y)

    return rhs


def traveling_wave_reference(C: float, y0: float, s_values, rtol: float = 1e-10, atol: float = 1e-13):
    """Profile y(s) of the traveling wave g(t, x) = y(c t - c x), integrated numerically."""
    if not 0.0 < y0 < 1.0:
        raise DomainError(f"y0 must lie in (0, 1), got {y0}")
    if C < 0:
        raise DomainError(f"C must be >= 0, got {C}")
    s = np.asarray(s_values, dtype=float)
    out = np.empty_like(s)
    if C == 0.0:
        out[...] = y0
        return _out(out)

    def leaves_interval(_s, y):
        return min(y[0], 1.0 - y[0])

    leaves_interval.terminal = True

    for mask, bound in ((s >= 0, s.max(initial=0.0)), (s < 0, s.min(initial=0.0))):
        if not np.any(mask) or bound == 0.0:
            out[mask] = y0
            continue
        sol = solve_ivp(_traveling_wave_rhs(C), (0.0, bound), [y0], method="DOP853",
                        rtol=rtol, atol=atol, dense_output=True, events=leaves_interval)
        if sol.status != 0:
            raise GasnetError(f"traveling wave integration failed: {sol.message}")
        out[mask] = sol.sol(s[mask])[0]
    return _out(out)


def traveling_wave_fields(C: float, y0: float, speed: float, t, x):
    """Map the wave profile to (p, rho, q) for the law z(p) = 1 - p (c_ref = 1, alpha = -1)."""
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    g = np.asarray(traveling_wave_reference(C, y0, (speed * t - speed * x).ravel())).reshape(t.shape)
    rho = g / (1.0 - g)
    return _out(g), _out(rho), _out(rho.copy())


def traveling_wave_closed_form(C: float, y0: float, s):
    """Lambert-W evaluation of (y - 1) exp(y) = C s + (y0 - 1) exp(y0).

    Provided as a utility only; it does not solve the wave ODE above.
    """
    s = np.asarray(s, dtype=float)
    k = (y0 - 1.0) * math.exp(y0)
    return _out(1.0 + np.asarray(lambert_w((C * s + k) / math.e)))


def lambert_w(x, tol: float = 1e-14, max_iter: int = 100):
    """Principal branch W(x), W exp(W) = x, by Halley iteration."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -1.0 / math.e - 1e-15):
        raise DomainError("lambert_w requires x >= -1/e")
    x = np.maximum(x, -1.0 / math.e)
    # branch-point series near -1/e, log1p in the middle, log asymptotics for large x
    p = np.sqrt(np.maximum(2.0 * (math.e * x + 1.0), 0.0))
    big = np.maximum(x, math.e)
    w = np.where(x < -0.25, -1.0 + p - p**2 / 3.0 + 11.0 / 72.0 * p**3,
                 np.where(x < math.e, np.log1p(np.maximum(x, -0.25)), np.log(big) - np.log(np.log(big))))
    for _ in range(max_iter):
        ew = np.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        safe = np.abs(wp1) > 1e-300
        denom = np.where(safe, ew * wp1 - (w + 2.0) * f / (2.0 * np.where(safe, wp1, 1.0)), 1.0)
        step = np.where(safe & (denom != 0.0), f / denom, 0.0)
        w = w - step
        if np.all(np.abs(step) <= tol * (1.0 + np.abs(w))):
            break
    return _out(w)
