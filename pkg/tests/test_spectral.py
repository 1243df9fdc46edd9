import numpy as np
import pytest

from cbfed.errors import NonZeroMean, ShapeMismatch, UnsupportedP, GridMismatch
from cbfed.spectral import (
    SpectralField, TorusConfig, inner, leray_project, norm, random_field, read_snapshot,
    stokes_apply, to_grid, transform_forward, transform_inverse, write_snapshot,
)


def _samples(cfg, f):
    x = cfg.grid()
    return np.stack(f(x))


def test_config_invariants(cfg2):
    assert cfg2.lambda1 == pytest.approx(1.0)
    assert cfg2.volume == pytest.approx(4 * np.pi**2)
    assert cfg2.kmax == 10
    assert cfg2.fine_N == 48
    assert not np.any(cfg2.active & cfg2.nyquist)


@pytest.mark.parametrize("kw", [dict(d=4, L=1.0, N=8), dict(d=2, L=-1.0, N=8), dict(d=2, L=1.0, N=7)])
def test_config_rejects_bad_inputs(kw):
    with pytest.raises(ValueError):
        TorusConfig(**kw)


def test_symbol_values():
    cfg = TorusConfig(2, 4.0, 8)
    k = cfg.wavenumbers
    assert np.allclose(cfg.symbol, (2 * np.pi / 4.0) ** 2 * (k[0] ** 2 + k[1] ** 2))
    assert cfg.lambda1 == pytest.approx((np.pi / 2) ** 2)


def test_forward_of_zero_is_zero(cfg2):
    u = transform_forward(np.zeros((2, 32, 32)), cfg2)
    assert np.all(u.coeffs == 0)


def test_sine_coefficients(cfg2):
    # sin(x) = (e^{ix} - e^{-ix}) / (2i): amplitude -i/2 at k=+1 and +i/2 at k=-1
    u = transform_forward(_samples(cfg2, lambda x: (np.sin(x[0]), 0 * x[0])), cfg2)
    c = u.coeffs
    assert c[0, 1, 0] == pytest.approx(-0.5j, abs=1e-15)
    assert c[0, -1, 0] == pytest.approx(0.5j, abs=1e-15)
    c2 = c.copy()
    c2[0, 1, 0] = c2[0, -1, 0] = 0
    assert np.abs(c2).max() < 1e-15


def test_nonzero_mean_rejected(cfg2):
    with pytest.raises(NonZeroMean):
        transform_forward(np.ones((2, 32, 32)), cfg2)


def test_shape_mismatch(cfg2):
    with pytest.raises(ShapeMismatch):
        transform_forward(np.zeros((2, 16, 16)), cfg2)


def test_round_trip(cfg2, rng):
    u = random_field(cfg2, rng, divfree=False)
    v = transform_forward(transform_inverse(u), cfg2)
    assert np.abs(v.coeffs - u.coeffs).max() <= 1e-12 * np.abs(u.coeffs).max()


def test_hermitian_by_construction(cfg2, rng):
    x = rng.standard_normal((2, 32, 32))
    x -= x.mean(axis=(1, 2), keepdims=True)
    assert transform_forward(x, cfg2).hermitian_residual() < 1e-15


def test_leray_kills_gradients(cfg2):
    # grad cos(x1) = (-sin x1, 0)
    g = transform_forward(_samples(cfg2, lambda x: (-np.sin(x[0]), 0 * x[0])), cfg2)
    assert np.abs(leray_project(g).coeffs).max() < 1e-12


def test_leray_fixes_divergence_free(cfg2):
    u = transform_forward(_samples(cfg2, lambda x: (np.sin(x[1]), 0 * x[1])), cfg2)
    p = leray_project(u)
    assert np.abs(p.coeffs - u.coeffs).max() < 1e-12
    assert p.divfree


def test_leray_single_longitudinal_mode(cfg2):
    c = np.zeros((2, 32, 32), complex)
    c[0, 1, 0] = 0.3
    c[0, -1, 0] = 0.3
    assert np.abs(leray_project(SpectralField(c, cfg2)).coeffs).max() == 0


def test_leray_idempotent(cfg2, rng):
    u = random_field(cfg2, rng, divfree=False)
    p = leray_project(u)
    pp = leray_project(p)
    assert np.abs(pp.coeffs - p.coeffs).max() <= 1e-13 * np.abs(p.coeffs).max()
    assert p.divergence_residual() < 1e-13


def test_stokes_single_mode(cfg2):
    u = transform_forward(_samples(cfg2, lambda x: (0 * x[1], np.sin(x[0]))), cfg2)
    au = stokes_apply(u, 1.0).coeffs
    assert au[1, 1, 0] == pytest.approx(u.coeffs[1, 1, 0], abs=1e-16)
    assert np.abs(au - u.coeffs).max() < 1e-12


def test_stokes_powers(field2):
    assert np.allclose(stokes_apply(field2, 0.0).coeffs, field2.coeffs)
    twice = stokes_apply(stokes_apply(field2, 0.5), 0.5)
    once = stokes_apply(field2, 1.0)
    assert np.abs(twice.coeffs - once.coeffs).max() <= 1e-13 * np.abs(once.coeffs).max()


def test_stokes_pairing_is_v_norm(field2):
    au = stokes_apply(field2, 1.0)
    assert inner(au, field2) == pytest.approx(norm(field2, "V") ** 2, rel=1e-12)
    assert norm(stokes_apply(field2, 0.5)) == pytest.approx(norm(field2, "V"), rel=1e-12)


def test_norms_of_zero(cfg2):
    z = SpectralField.zeros(cfg2)
    for kind, kw in [("H", {}), ("V", {}), ("V_alpha", {"alpha": 0.5}), ("Lp", {"p": 3})]:
        assert norm(z, kind, **kw) == 0


def test_norms_of_sine(cfg2):
    u = transform_forward(_samples(cfg2, lambda x: (np.sin(x[1]), 0 * x[1])), cfg2)
    assert norm(u) ** 2 == pytest.approx((2 * np.pi) ** 2 / 2, rel=1e-13)
    assert norm(u, "V") ** 2 == pytest.approx((2 * np.pi) ** 2 / 2, rel=1e-13)


@pytest.mark.parametrize("oversample", [None, 1.0, 2.0])
def test_l2_equals_h(field2, oversample):
    assert norm(field2, "Lp", p=2, oversample=oversample) == pytest.approx(norm(field2), rel=1e-12)


def test_poincare(field2, cfg2):
    assert cfg2.lambda1 * norm(field2) ** 2 <= norm(field2, "V") ** 2 * (1 + 1e-12)


def test_parseval_on_grid(field2, cfg2):
    phys = to_grid(field2.coeffs, cfg2)
    quad = cfg2.volume * np.mean(np.sum(phys**2, axis=0))
    assert quad == pytest.approx(norm(field2) ** 2, rel=1e-12)


@pytest.mark.parametrize("p", [0.5, np.inf, None])
def test_unsupported_p(field2, p):
    with pytest.raises(UnsupportedP):
        norm(field2, "Lp", p=p)


def test_batched_fields(cfg2, rng):
    u = random_field(cfg2, rng, batch=(3,))
    assert u.batch_shape == (3,)
    assert norm(u).shape == (3,)
    assert norm(u)[1] == pytest.approx(norm(SpectralField(u.coeffs[1], cfg2)))


def test_grid_mismatch(cfg2, cfg_small, rng):
    with pytest.raises(GridMismatch):
        random_field(cfg2, rng) + random_field(cfg_small, rng)


def test_snapshot_round_trip(tmp_path, field2):
    path = tmp_path / "u.cbfd"
    write_snapshot(path, field2)
    raw = path.read_bytes()
    assert raw[:4] == b"CBFD"
    v = read_snapshot(path)
    assert v.cfg == field2.cfg and v.divfree
    assert np.array_equal(v.coeffs, field2.coeffs)
