"""Tests for pressure laws, invariants, friction source and reference solutions."""

import math

import numpy as np
import pytest
from scipy.special import lambertw

from gasnet.errors import DomainError
from gasnet.gas_model import (
    PipeGeometry,
    PressureLaw,
    RiemannPair,
    friction_source,
    friction_source_pz,
    from_riemann,
    invariant_integral,
    invariant_integral_inv,
    lambda_of_rho,
    lambert_w,
    p_of_rho,
    rho_of_p,
    to_riemann,
    traveling_wave_closed_form,
    traveling_wave_fields,
    traveling_wave_reference,
    uniform_flow_decay,
    uniform_flow_reference,
    z_of_p,
)

ISO = PressureLaw.isothermal(383.0735)
AFFINE = PressureLaw.affine(383.0735, -2.0e-8)
GEOM = PipeGeometry(3000.0, 0.762, 0.0178)


def test_law_rejects_bad_parameters():
    with pytest.raises(DomainError):
        PressureLaw.isothermal(0.0)
    with pytest.raises(DomainError):
        PressureLaw.affine(300.0, 1e-8)
    with pytest.raises(DomainError):
        PressureLaw("isothermal", 300.0, -1e-8)


def test_geometry_defaults_cross_section_to_circle():
    assert GEOM.cross_section == pytest.approx(math.pi * 0.762**2 / 4, rel=1e-15)
    assert PipeGeometry(1.0, 1.0, 0.1, cross_section=1.0).cross_section == 1.0
    with pytest.raises(DomainError):
        PipeGeometry(-1.0, 1.0, 0.1)
    with pytest.raises(DomainError):
        PipeGeometry(1.0, 1.0, -0.1)
    assert PipeGeometry(1.0, 1.0, 0.0).friction == 0.0


def test_isothermal_conversions():
    p = 70e5
    rho = rho_of_p(ISO, p)
    assert rho == pytest.approx(p / 383.0735**2, rel=1e-15)
    assert z_of_p(ISO, p) == pytest.approx(383.0735**2, rel=1e-15)
    assert lambda_of_rho(ISO, rho) == pytest.approx(383.0735, rel=1e-15)


@pytest.mark.parametrize("law", [ISO, AFFINE])
def test_conversion_inverses(law):
    """p_of_rho and rho_of_p invert each other to 1e-12 over a pressure sweep."""
    p = np.linspace(1e5, 9e6, 200)
    back = p_of_rho(law, rho_of_p(law, p))
    np.testing.assert_allclose(back, p, rtol=1e-12)


def test_affine_density_matches_fixed_point():
    p = 5e6
    rho = rho_of_p(AFFINE, p)
    assert p == pytest.approx(z_of_p(AFFINE, p) * rho, rel=1e-14)


@pytest.mark.parametrize("law", [ISO, AFFINE])
def test_eigenvalue_matches_finite_difference(law):
    """lambda^2 = dp/drho, checked by a central difference."""
    rng = np.random.default_rng(7)
    for rho in rng.uniform(5.0, 60.0, 20):
        h = 1e-4 * rho
        dp = (p_of_rho(law, rho + h) - p_of_rho(law, rho - h)) / (2 * h)
        assert lambda_of_rho(law, rho) ** 2 == pytest.approx(dp, rel=1e-5)


@pytest.mark.parametrize("law", [ISO, AFFINE])
def test_riemann_round_trip(law):
    """from_riemann(to_riemann(rho, q)) recovers the state on 1000 random states."""
    rng = np.random.default_rng(11)
    rho = rng.uniform(1.0, 60.0, 1000)
    q = rng.uniform(-400.0, 400.0, 1000)
    pair = to_riemann(law, GEOM, rho, q)
    rho_back, q_back = from_riemann(law, GEOM, pair)
    np.testing.assert_allclose(rho_back, rho, rtol=1e-10)
    np.testing.assert_allclose(q_back, q, rtol=1e-10, atol=1e-10 * 400)


def test_invariant_integral_closed_forms():
    rho = 40.0
    assert invariant_integral(ISO, rho) == pytest.approx(383.0735 * rho, rel=1e-15)
    beta = AFFINE.beta
    expected = -(383.0735 / beta) * math.log1p(-beta * rho)
    assert invariant_integral(AFFINE, rho) == pytest.approx(expected, rel=1e-13)
    assert invariant_integral_inv(AFFINE, expected) == pytest.approx(rho, rel=1e-12)


def test_invariant_integral_derivative_is_eigenvalue():
    rho, h = 30.0, 1e-3
    slope = (invariant_integral(AFFINE, rho + h) - invariant_integral(AFFINE, rho - h)) / (2 * h)
    assert slope == pytest.approx(lambda_of_rho(AFFINE, rho), rel=1e-8)


def test_from_riemann_rejects_nonphysical_pair():
    with pytest.raises(DomainError):
        from_riemann(ISO, GEOM, RiemannPair(1.0, 1.0))


def test_nonpositive_pressure_rejected():
    with pytest.raises(DomainError):
        rho_of_p(ISO, 0.0)
    with pytest.raises(DomainError):
        lambda_of_rho(ISO, -1.0)


def test_friction_source_forms_agree():
    p = np.array([50e5, 70e5])
    q = np.array([150.0, -80.0])
    direct = friction_source(ISO, GEOM, rho_of_p(ISO, p), q)
    via_p = friction_source_pz(ISO, GEOM, p, q)
    np.testing.assert_allclose(direct, via_p, rtol=1e-14)
    assert direct[0] < 0 < direct[1]


def test_friction_source_zero_flux():
    assert friction_source(ISO, GEOM, 40.0, 0.0) == 0.0


def test_uniform_flow_reference_solves_its_ode():
    geom = PipeGeometry(3000.0, 0.762, 0.0178, cross_section=1.0)
    rho0, c0 = 50.0, 1.0 / 150.0
    _, q0 = uniform_flow_reference(rho0, c0, geom, 0.0)
    assert q0 == pytest.approx(150.0)
    t, h = 20.0, 1e-3
    _, qp = uniform_flow_reference(rho0, c0, geom, t + h)
    _, qm = uniform_flow_reference(rho0, c0, geom, t - h)
    _, q = uniform_flow_reference(rho0, c0, geom, t)
    # dq/dt = a f(rho0, q)
    assert (qp - qm) / (2 * h) == pytest.approx(friction_source(ISO, geom, rho0, q), rel=1e-6)
    assert uniform_flow_decay(rho0, geom) == pytest.approx(0.0178 / (2 * 0.762 * rho0))


def test_uniform_flow_reference_rejects_negative_time():
    with pytest.raises(DomainError):
        uniform_flow_reference(50.0, 0.01, GEOM, -1.0)


def test_traveling_wave_reference_satisfies_profile_ode():
    C, y0 = 1.0, 0.5
    s = np.linspace(-0.3, 0.3, 13)
    h = 1e-5
    y = traveling_wave_reference(C, y0, s)
    dy = (traveling_wave_reference(C, y0, s + h) - traveling_wave_reference(C, y0, s - h)) / (2 * h)
    np.testing.assert_allclose(dy, -C * (1 - y) / (2 - y), rtol=1e-6)
    assert traveling_wave_reference(C, y0, 0.0) == pytest.approx(y0, abs=1e-14)


def test_traveling_wave_trivial_cases():
    np.testing.assert_array_equal(traveling_wave_reference(0.0, 0.3, [-1.0, 0.0, 2.0]), [0.3, 0.3, 0.3])
    with pytest.raises(DomainError):
        traveling_wave_reference(1.0, 1.5, [0.0])


def test_traveling_wave_fields_conserve_mass():
    """d_t rho + d_x q = 0 for the mapped wave (a = 1)."""
    t, x, h = 0.4, np.linspace(0.0, 1.0, 7), 1e-4
    _, rho_next, _ = traveling_wave_fields(1.0, 0.5, 1.0, t + h, x)
    _, rho_prev, _ = traveling_wave_fields(1.0, 0.5, 1.0, t - h, x)
    _, _, q_right = traveling_wave_fields(1.0, 0.5, 1.0, t, x + h)
    _, _, q_left = traveling_wave_fields(1.0, 0.5, 1.0, t, x - h)
    residual = (rho_next - rho_prev) / (2 * h) + (q_right - q_left) / (2 * h)
    assert np.max(np.abs(residual)) <= 1e-6


def test_traveling_wave_pressure_law():
    """With z(p) = 1 - p the pressure equals the profile and rho = g / (1 - g)."""
    g, rho, q = traveling_wave_fields(1.0, 0.5, 1.0, 0.0, 0.0)
    assert g == pytest.approx(0.5)
    assert rho == pytest.approx(1.0)
    assert q == rho


@pytest.mark.parametrize("x", [-1.0 / math.e + 1e-12, -0.3, -0.1, 0.0, 0.5, 1.0, math.e, 10.0, 1e6])
def test_lambert_w_matches_scipy(x):
    assert lambert_w(x) == pytest.approx(lambertw(x).real, rel=1e-12, abs=1e-12)


def test_lambert_w_vectorized_and_domain():
    x = np.array([0.0, 1.0, 5.0])
    w = lambert_w(x)
    np.testing.assert_allclose(w * np.exp(w), x, atol=1e-13)
    with pytest.raises(DomainError):
        lambert_w(-1.0)


def test_traveling_wave_closed_form_identity():
    """The closed form satisfies (y - 1) e^y = C s + (y0 - 1) e^y0."""
    C, y0, s = 0.5, 0.4, np.array([-0.2, 0.0, 0.3])
    y = traveling_wave_closed_form(C, y0, s)
    np.testing.assert_allclose((y - 1) * np.exp(y), C * s + (y0 - 1) * math.exp(y0), rtol=1e-12, atol=1e-14)
