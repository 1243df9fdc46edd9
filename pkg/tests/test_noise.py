import numpy as np
import pytest

from cbfed.errors import ChannelOutOfRange, RateBudgetExceeded, ZeroJumpSize
from cbfed.noise import (
    AffineMap, KickFamily, NoiseSpec, brownian_generator, brownian_increments, check_hypotheses,
    compensator_drift, generator_gap, jump_generator, kick_apply, kick_sample, sigma_apply,
)
from cbfed.operators import PhysParams
from cbfed.spectral import inner, norm, random_field


@pytest.fixture
def additive(basis2):
    a = basis2.field(np.r_[0.6, 0.3, -0.2, np.zeros(basis2.n - 3)])
    return NoiseSpec((AffineMap(a),))


@pytest.fixture
def mixed(cfg2, rng):
    a = random_field(cfg2, rng) * 0.1
    decay = lambda lam: 1.0 / (1.0 + lam)  # noqa: E731
    return NoiseSpec((AffineMap(a, 0.4, decay), AffineMap(None, -0.3)), forcing=AffineMap(a, 0.2))


def test_sigma_additive_is_constant(additive, field2):
    s = sigma_apply(additive, 0, field2)
    assert np.array_equal(s.coeffs, additive.channels[0].additive.coeffs)


def test_sigma_identity(field2):
    spec = NoiseSpec((AffineMap(None, 1.0),))
    assert np.allclose(sigma_apply(spec, 0, field2).coeffs, field2.coeffs)


def test_channel_out_of_range(additive, field2):
    with pytest.raises(ChannelOutOfRange):
        sigma_apply(additive, 1, field2)


def test_symbol_clipped(cfg2):
    m = AffineMap(None, 2.0, 5.0)
    assert m.op_norm(cfg2) == 1.0
    assert m.lipschitz(cfg2) == 2.0


def test_lipschitz_ratio(mixed, cfg2, rng):
    for _ in range(100):
        u, v = random_field(cfg2, rng), random_field(cfg2, rng)
        for i, ch in enumerate(mixed.channels):
            num = norm(mixed.sigma(i, u) - mixed.sigma(i, v))
            assert num <= abs(ch.gain) * norm(u - v) * (1 + 1e-12)


def test_growth_constant_closed_form(mixed, cfg2, rng):
    K = mixed.growth_constant(cfg2)
    for _ in range(20):
        u = random_field(cfg2, rng) * float(rng.uniform(0.1, 10))
        lhs = norm(mixed.forcing_value(u)) ** 2 + sum(norm(mixed.sigma(i, u)) ** 2 for i in range(mixed.m))
        assert lhs <= K * (1 + norm(u) ** 2)


def test_additive_part_must_be_divergence_free(cfg2, rng):
    with pytest.raises(ValueError):
        AffineMap(random_field(cfg2, rng, divfree=False))


# -- kicks ----------------------------------------------------------------------
def test_kick_unit(additive, field2):
    fam = KickFamily(additive, 1.0)
    assert np.allclose(kick_apply(fam, 0, field2, 1.0).coeffs, additive.sigma(0, field2).coeffs)


def test_kick_linear_in_z(mixed, field2):
    fam = KickFamily(mixed, 0.3)
    k1 = kick_apply(fam, 0, field2, 0.7)
    k2 = kick_apply(fam, 0, field2, 1.4)
    assert np.allclose(k2.coeffs, 2 * k1.coeffs, rtol=1e-14, atol=0)


@pytest.mark.parametrize("eps,z", [(0.4, 1.0), (0.05, -1.0), (0.2, 2.5)])
def test_kick_norm(mixed, field2, eps, z):
    fam = KickFamily(mixed, eps)
    got = norm(kick_apply(fam, 0, field2, z))
    assert got == pytest.approx(eps * abs(z) * norm(mixed.sigma(0, field2)), rel=1e-13)


def test_zero_jump(additive, field2):
    with pytest.raises(ZeroJumpSize):
        kick_apply(KickFamily(additive, 0.5), 0, field2, 0.0)
    with pytest.raises(ZeroJumpSize):
        KickFamily(additive, 0.5, atoms=((0.0, 1.0),))


def test_family_properties(additive):
    fam = KickFamily(additive, 0.2)
    assert fam.rate == pytest.approx(25.0)
    assert fam.moment(2) == 1.0 and fam.first_moment == 0.0 and fam.z_max == 1.0
    with pytest.raises(ValueError):
        KickFamily(additive, 1.5)


def test_brownian_increments():
    dt = 1e-3
    x = brownian_increments(np.random.default_rng(1), 10**6, dt)
    assert abs(x.mean()) < 4 * np.sqrt(dt / 1e6)
    assert x.var() == pytest.approx(dt, rel=0.01)
    y = brownian_increments(np.random.default_rng(1), 10**6, dt)
    assert np.array_equal(x, y)
    with pytest.raises(ValueError):
        brownian_increments(np.random.default_rng(1), 3, 0.0)


def test_poisson_zero_count(additive):
    fam = KickFamily(additive, 1.0)
    rng = np.random.default_rng(7)
    n = 10**5
    counts = np.array([len(kick_sample(fam, rng, (0.0, 1.0))) for _ in range(n)])
    p0 = np.mean(counts == 0)
    se = np.sqrt(np.exp(-1) * (1 - np.exp(-1)) / n)
    assert abs(p0 - np.exp(-1)) < 3 * se


def test_kick_stream_structure(mixed):
    fam = KickFamily(mixed, 0.1)
    s = kick_sample(fam, np.random.default_rng(3), (0.5, 1.5))
    assert np.all(np.diff(s.times) >= 0)
    assert np.all((s.times > 0.5) & (s.times <= 1.5))
    assert set(np.unique(s.channels)) <= {0, 1}
    assert set(np.unique(s.z)) <= {-1.0, 1.0}
    assert list(s)[0] == (s.times[0], int(s.channels[0]), s.z[0])
    assert len(kick_sample(fam, np.random.default_rng(3), (1.0, 1.0))) == 0


def test_symmetric_sizes_mean_zero(additive):
    fam = KickFamily(additive, 1.0)
    z = kick_sample(fam, np.random.default_rng(11), (0.0, 1e5)).z[: 10**5]
    assert abs(z.mean()) < 3 / np.sqrt(z.size)


def test_rate_budget(additive):
    fam = KickFamily(additive, 0.01, rate_cap=1e3)
    with pytest.raises(RateBudgetExceeded):
        kick_sample(fam, np.random.default_rng(0), (0.0, 1.0))


def test_compensator(additive, mixed, field2):
    assert np.all(compensator_drift(KickFamily(mixed, 0.3), field2).coeffs == 0)
    one = KickFamily(mixed, 0.5, atoms=((1.0, 1.0),))
    expect = (mixed.sigma(0, field2) + mixed.sigma(1, field2)) * 2.0
    assert np.allclose(compensator_drift(one, field2).coeffs, expect.coeffs, atol=1e-15)
    two = KickFamily(mixed, 0.5, atoms=((2.0, 1.0),))
    assert np.allclose(compensator_drift(two, field2).coeffs, 2 * compensator_drift(one, field2).coeffs)


def test_compensated_increments_mean_zero(basis2):
    # nu = delta_1 has nonzero mean, so the compensator matters
    a = basis2.realize(1)
    spec = NoiseSpec((AffineMap(a),))
    fam = KickFamily(spec, 0.5, atoms=((1.0, 1.0),))
    rng = np.random.default_rng(5)
    dt = 0.1
    comp = fam.first_moment / fam.eps  # pairing of the compensator with e_1
    vals = np.array([fam.eps * kick_sample(fam, rng, (0, dt)).z.sum() - dt * comp for _ in range(10**4)])
    assert abs(vals.mean()) < 4 * vals.std() / np.sqrt(vals.size)


# -- hypotheses -----------------------------------------------------------------
def test_hypotheses_default_family(mixed, cfg2, rng):
    probes = [random_field(cfg2, rng) for _ in range(6)]
    rep = check_hypotheses(mixed, KickFamily(mixed, 0.5), probes, p_moment=4)
    assert rep.h4_gap < 1e-13
    assert np.all(rep.h2_moment_ratio <= rep.h2_moment_bound)
    # sup kick bound is linear in eps
    assert np.allclose(rep.h3_sup / rep.eps_grid, rep.h3_sup[0] / rep.eps_grid[0], rtol=1e-13)
    assert rep.K1 <= rep.growth_closed_form * (1 + 1e-12)
    assert rep.L2 <= rep.lipschitz_closed_form * (1 + 1e-12)
    assert np.isfinite(rep.h5_ratio)


def test_hypothesis_constants_uniform_in_eps(mixed, cfg2, rng):
    probes = [random_field(cfg2, rng) for _ in range(4)]
    a = check_hypotheses(mixed, KickFamily(mixed, 0.5), probes, eps_grid=[0.5])
    b = check_hypotheses(mixed, KickFamily(mixed, 0.5), probes, eps_grid=[0.05])
    assert a.K1 == pytest.approx(b.K1, rel=1e-12)
    assert a.L2 == pytest.approx(b.L2, rel=1e-12)


def test_generator_gap_default_family(mixed, cfg2, rng):
    u = random_field(cfg2, rng)
    for eps in (0.4, 0.05):
        assert generator_gap(u, KickFamily(mixed, eps), mixed, 1, 3) < 1e-13


def test_generator_gap_wide_atoms(mixed, cfg2, rng, basis2):
    u = random_field(cfg2, rng)
    fam = KickFamily(mixed, 0.3, atoms=((-2.0, 0.5), (2.0, 0.5)))
    s = mixed.sigma(0, u)
    e1, e2 = basis2.realize(1), basis2.realize(2)
    expect = 3.0 * abs(inner(s, e1) * inner(s, e2))
    assert generator_gap(u, fam, mixed, 1, 2, channel=0) == pytest.approx(expect, rel=1e-12)


def test_generator_gap_zero_sigma(cfg2, rng):
    spec = NoiseSpec((AffineMap(None, 0.0),))
    assert generator_gap(random_field(cfg2, rng), KickFamily(spec, 0.2), spec, 1, 2) == 0


def test_generators_agree_for_default_family(mixed, cfg2, rng):
    x = random_field(cfg2, rng)
    p = PhysParams(1.0, 1.0, 0.1)
    lj = jump_generator(x, KickFamily(mixed, 0.2), p, 1, 2)
    lb = brownian_generator(x, mixed, p, 1, 2)
    assert lj == pytest.approx(lb, rel=1e-10, abs=1e-12)


def test_coordinates_match_fields(mixed, basis2, field2):
    cn = mixed.coordinates(basis2)
    c = basis2.coords(field2)
    for i in range(mixed.m):
        assert np.allclose(cn.add[i] + cn.mult[i] * c, basis2.coords(mixed.sigma(i, field2)), atol=1e-13)
    assert np.allclose(cn.f_add + cn.f_mult * c, basis2.coords(mixed.forcing_value(field2)), atol=1e-13)
