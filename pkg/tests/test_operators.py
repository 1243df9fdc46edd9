import numpy as np
import pytest

from cbfed.errors import GridMismatch, RegimeError
from cbfed.operators import (
    ActiveTerms, PhysParams, constants, convective, damping, default_theta, drift, dual_norm_surrogate,
    monotonicity_terms, power_kernel, sandwich_check, trilinear,
)
from cbfed.spectral import (
    SpectralField, TorusConfig, inner, leray_project, norm, random_field, stokes_apply,
    transform_forward,
)


def _field(cfg, f):
    return transform_forward(np.stack(f(cfg.grid())), cfg)


# -- regime gates -------------------------------------------------------------
def test_params_validation():
    with pytest.raises(RegimeError):
        PhysParams(mu=0, beta=1)
    with pytest.raises(RegimeError):
        PhysParams(mu=1, beta=1, r=3, q=3)
    PhysParams(1, 1, r=1.5, q=1).validate(2)


@pytest.mark.parametrize(
    "mu,beta,r,msg",
    [(1, 1, 2, "d=3 requires r>=3"), (0.5, 0.5, 3, r"2\*beta\*mu>1"), (0.5, 1, 3, "ambiguous")],
)
def test_three_dimensional_gates(mu, beta, r, msg):
    with pytest.raises(RegimeError, match=msg):
        PhysParams(mu, beta, r=r).validate(3)


def test_three_dimensional_ok():
    PhysParams(1, 1, r=3).validate(3)
    PhysParams(0.1, 0.1, r=4).validate(3)


# -- trilinear form and convection ---------------------------------------------
def test_trilinear_closed_form(cfg2):
    # b(u,v,w) with u=(sin y,0), v=(0,sin x), w=(0, sin y cos x) equals pi**2
    u = _field(cfg2, lambda x: (np.sin(x[1]), 0 * x[0]))
    v = _field(cfg2, lambda x: (0 * x[0], np.sin(x[0])))
    w = _field(cfg2, lambda x: (0 * x[0], np.sin(x[1]) * np.cos(x[0])))
    assert trilinear(u, v, w) == pytest.approx(np.pi**2, rel=1e-13)


def test_trilinear_antisymmetry(cfg2, rng):
    u = random_field(cfg2, rng)
    v = random_field(cfg2, rng, divfree=False)
    w = random_field(cfg2, rng, divfree=False)
    scale = norm(u) * norm(v, "V", check=False) * norm(w)
    assert abs(trilinear(u, v, v)) <= 1e-10 * scale
    assert trilinear(u, v, w) == pytest.approx(-trilinear(u, w, v), abs=1e-10 * scale)
    assert trilinear(SpectralField.zeros(cfg2), v, w) == 0


def test_trilinear_grid_mismatch(cfg2, cfg_small, rng):
    with pytest.raises(GridMismatch):
        trilinear(random_field(cfg2, rng), random_field(cfg2, rng), random_field(cfg_small, rng))


def test_taylor_green_is_steady(tg):
    b = convective(tg)
    assert norm(b) <= 1e-12 * norm(tg) ** 2


def test_convective_of_zero(cfg2):
    assert np.all(convective(SpectralField.zeros(cfg2)).coeffs == 0)


def test_convective_matches_trilinear(cfg2, rng):
    u = random_field(cfg2, rng)
    v = random_field(cfg2, rng)
    bu = convective(u)
    assert bu.divergence_residual() < 1e-12
    assert abs(inner(bu, u)) <= 1e-10 * norm(bu) * norm(u)
    assert inner(bu, v) == pytest.approx(trilinear(u, u, v), rel=1e-10)


def test_convective_3d(cfg3, rng):
    u = random_field(cfg3, rng)
    v = random_field(cfg3, rng)
    bu = convective(u)
    assert abs(inner(bu, u)) <= 1e-10 * norm(bu) * norm(u)
    assert inner(bu, v) == pytest.approx(trilinear(u, u, v), rel=1e-10)


def test_convective_dual_bound(cfg2, rng):
    u = random_field(cfg2, rng)
    probes = [random_field(cfg2, rng) for _ in range(20)]
    bu = convective(u)
    sup = dual_norm_surrogate(lambda v: inner(bu, v), probes)
    assert sup <= norm(u, "Lp", p=4) ** 2


# -- damping --------------------------------------------------------------------
def test_power_kernel_arithmetic():
    out = power_kernel(np.array([3.0, 4.0]), 3, axis=0)
    assert np.allclose(out, [75.0, 100.0])
    assert np.allclose(power_kernel(np.array([3.0, 4.0]), 2.5, axis=0), 5**1.5 * np.array([3.0, 4.0]))
    assert np.all(power_kernel(np.zeros(2), 1.5, axis=0) == 0)


def test_damping_linear_case(field2):
    assert np.allclose(damping(field2, 1).coeffs, field2.coeffs, atol=1e-14)


@pytest.mark.parametrize("s", [1.5, 2, 3, 5])
def test_damping_pairing_is_lp_norm(field2, s):
    c = damping(field2, s)
    assert c.divergence_residual() < 1e-12
    assert c.hermitian_residual() < 1e-14
    assert inner(c, field2) == pytest.approx(norm(field2, "Lp", p=s + 1) ** (s + 1), rel=1e-10)


@pytest.mark.parametrize("r", [2, 3, 4.5])
def test_monotonicity(cfg2, rng, r):
    u = random_field(cfg2, rng)
    v = random_field(cfg2, rng)
    lhs, mid, low = monotonicity_terms(u, v, r)
    assert lhs >= mid * (1 - 1e-12) and mid >= low * (1 - 1e-12) and low > 0


def test_local_lipschitz_of_damping(cfg2, rng):
    r = 3
    u, v, w = (random_field(cfg2, rng) for _ in range(3))
    lhs = abs(inner(damping(u, r) - damping(v, r), w))
    lp = lambda f: norm(f, "Lp", p=r + 1)  # noqa: E731
    assert lhs <= r * (lp(u) + lp(v)) ** (r - 1) * lp(u - v) * lp(w)


# -- drift ----------------------------------------------------------------------
def test_drift_forcing_only(cfg2, rng):
    g = random_field(cfg2, rng, divfree=False)
    out = drift(SpectralField.zeros(cfg2), PhysParams(1, 1), F=g)
    assert np.allclose(out.coeffs, leray_project(g).coeffs, atol=1e-15)


def test_drift_navier_stokes_terms(field2):
    p = PhysParams(0.7, 1.0)
    terms = ActiveTerms(absorption=False, pumping=False)
    out = drift(field2, p, terms=terms)
    ref = -0.7 * stokes_apply(field2) - convective(field2)
    assert np.abs(out.coeffs - ref.coeffs).max() < 1e-13 * np.abs(ref.coeffs).max()


def test_drift_energy_rate(cfg2, rng):
    u = random_field(cfg2, rng)
    g = random_field(cfg2, rng)
    p = PhysParams(mu=0.8, beta=1.3, alpha=-0.4, r=3, q=2)
    rate = inner(drift(u, p, F=g), u)
    expect = (-p.mu * norm(u, "V") ** 2 - p.beta * norm(u, "Lp", p=4) ** 4
              - p.alpha * norm(u, "Lp", p=3) ** 3 + inner(g, u))
    assert rate == pytest.approx(expect, rel=1e-9)


# -- constants ------------------------------------------------------------------
def test_constants_reference_case(cfg2):
    c = constants(PhysParams(mu=1, beta=1, alpha=1, r=3, q=1), cfg2)
    assert c.C_alpha_beta == pytest.approx(4 * np.pi**2, rel=1e-14)
    assert c.lambda1 == pytest.approx(1.0)
    assert c.vartheta == 0.0 and c.eta == 0.0
    assert c.zeta == pytest.approx(2.0)
    assert c.chi is None
    assert c.monotonicity == 0.25


def test_constants_frozen_values():
    # reference values from an independent 30-digit evaluation
    cfg = TorusConfig(2, 1.0, 16)
    c = constants(PhysParams(mu=0.75, beta=2, alpha=0.5, r=4, q=2), cfg)
    assert c.C_alpha_beta == pytest.approx(0.0657267069006199336, rel=1e-13)
    assert c.zeta == pytest.approx(1.0886621079036347103, rel=1e-13)
    assert c.vartheta == pytest.approx(1.0534979423868312757, rel=1e-13)
    c = constants(PhysParams(mu=1, beta=1, alpha=1, r=5, q=3), cfg)
    assert c.chi == pytest.approx(9.125, rel=1e-13)


def test_constants_three_dimensional_branch():
    cfg = TorusConfig(3, 2 * np.pi, 8)
    p = PhysParams(mu=1, beta=1, alpha=1, r=3, q=2)
    assert default_theta(p) == pytest.approx(0.75)
    c = constants(p, cfg)
    assert c.theta == pytest.approx(0.75)
    assert c.zeta_tilde == pytest.approx(1.0)
    assert c.critical_coefficient == pytest.approx(1 / 6)
    with pytest.raises(RegimeError):
        constants(p, cfg, theta=0.4)


def test_constants_outside_regime():
    with pytest.raises(RegimeError):
        constants(PhysParams(1, 1, r=2), TorusConfig(3, 1.0, 8))


def test_constants_below_cubic_vartheta_undefined(cfg2):
    c = constants(PhysParams(1, 1, alpha=0.3, r=2, q=1), cfg2)
    assert c.vartheta is None and c.eta is None


# -- sandwich -------------------------------------------------------------------
def test_sandwich_zero(cfg2):
    assert tuple(sandwich_check(SpectralField.zeros(cfg2), 3)) == (0.0, 0.0, 0.0)


def test_sandwich_linear_case(field2):
    res = sandwich_check(field2, 1)
    v2 = norm(field2, "V") ** 2
    assert res.I0 == pytest.approx(v2, rel=1e-12)
    assert res.I1 == pytest.approx(v2, rel=1e-12)
    assert res.I2 == pytest.approx(v2, rel=1e-12)


@pytest.mark.parametrize("r", [2, 3, 5])
def test_sandwich_ordering(cfg2, rng, r):
    for _ in range(5):
        assert sandwich_check(random_field(cfg2, rng), r).ordered()
