import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbfed.analysis import moment_report, weak_gap
from cbfed.basis import galerkin_basis
from cbfed.integrator import Ensemble, SimConfig, derive_seed, simulate_ensemble
from cbfed.noise import AffineMap, KickFamily, NoiseSpec, kick_apply
from cbfed.operators import PhysParams, monotonicity_terms, sandwich_check
from cbfed.spectral import TorusConfig, leray_project, norm, random_field

CFG = TorusConfig(2, 2 * np.pi, 16)
BASIS = galerkin_basis(CFG, None)
seeds = st.integers(0, 2**32 - 1)
fast = settings(max_examples=25, deadline=None)


def _fld(seed, divfree=True):
    return random_field(CFG, np.random.default_rng(seed), divfree=divfree)


@fast
@given(seeds)
def test_leray_idempotent_and_divfree(seed):
    u = _fld(seed, divfree=False)
    p = leray_project(u)
    assert np.max(np.abs(leray_project(p).coeffs - p.coeffs)) <= 1e-14 * max(1.0, np.abs(p.coeffs).max())
    assert p.divergence_residual() <= 1e-12
    assert float(norm(p)) <= float(norm(u)) * (1 + 1e-12)


@fast
@given(seeds)
def test_basis_round_trip(seed):
    x = np.random.default_rng(seed).standard_normal(BASIS.n)
    u = BASIS.field(x)
    assert np.allclose(BASIS.coords(u), x, atol=1e-12)
    assert float(norm(u)) ** 2 == pytest.approx(x @ x, rel=1e-12)


@fast
@given(seeds, st.floats(-3, 3).filter(lambda z: abs(z) > 1e-3), st.floats(-3, 3).filter(lambda z: abs(z) > 1e-3),
       st.sampled_from([0.01, 0.1, 0.5]))
def test_kick_linear_in_eps_z(seed, z1, z2, eps):
    a = BASIS.field(np.random.default_rng(seed).standard_normal(BASIS.n))
    spec = NoiseSpec((AffineMap(a, 0.4),))
    fam = KickFamily(spec, eps)
    u = _fld(seed + 1)
    k1, k2 = kick_apply(fam, 0, u, z1), kick_apply(fam, 0, u, z2)
    assert np.allclose((k1 * z2).coeffs, (k2 * z1).coeffs, atol=1e-12 * float(norm(k1 * z2)) + 1e-300)
    k3 = kick_apply(fam.with_eps(2 * eps), 0, u, z1)
    assert np.allclose(k3.coeffs, 2 * k1.coeffs, rtol=1e-13, atol=1e-15)


@settings(max_examples=10, deadline=None)
@given(seeds, st.sampled_from([2, 3, 5]))
def test_monotonicity_and_sandwich(seed, r):
    u, v = _fld(seed), _fld(seed + 7)
    lhs, mid, low = monotonicity_terms(u, v, r)
    assert lhs >= mid * (1 - 1e-10) >= low * (1 - 1e-10) * (1 - 1e-10)
    assert sandwich_check(u, r, check=False).ordered()


@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6))
def test_derive_seed(master, i):
    s = derive_seed(master, i)
    assert 0 <= s < 2**64
    assert derive_seed(master, 0) == master
    assert derive_seed(s, i) == master  # XOR is an involution


def test_derive_seed_distinct():
    assert len({derive_seed(123, i) for i in range(10000)}) == 10000


_SPEC = NoiseSpec((AffineMap(BASIS.field(np.r_[0.4, 0.3, np.zeros(BASIS.n - 2)]), 0.3),))
_ENS = simulate_ensemble(SimConfig(CFG, PhysParams(1, 1, 0.1, 3, 1), _SPEC, _fld(5) * 2, 0.02, 1e-3,
                                   driver="gaussian", n_obs=3), 12)


def _permuted(ens, perm):
    rec = ens._rec
    n = len(ens)
    upd = {}
    for f in dataclasses.fields(rec):
        val = getattr(rec, f.name)
        if f.name not in ("times", "snapshot_times") and isinstance(val, np.ndarray) and val.ndim and \
                val.shape[0] == n:
            upd[f.name] = val[perm]
    return Ensemble(ens.config, dataclasses.replace(rec, **upd))


@settings(max_examples=15, deadline=None)
@given(st.permutations(list(range(12))))
def test_moment_report_permutation_invariant(perm):
    a = moment_report(_ENS, 3, n_boot=50)
    b = moment_report(_permuted(_ENS, np.array(perm)), 3, n_boot=50)
    for name in ("sup_h2p", "sup_h2", "v_int_p", "lr_int_p"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-12)
        assert getattr(b, name + "_se") == pytest.approx(getattr(a, name + "_se"), rel=1e-12)
    assert np.allclose(a.mean, b.mean, rtol=1e-12, atol=1e-15)


@settings(max_examples=10, deadline=None)
@given(st.lists(st.sampled_from(["coef:1", "coef2:2", "prod:1:3", "energy"]), min_size=1, max_size=4, unique=True))
def test_weak_gap_self_is_zero(funcs):
    for r in weak_gap({0.2: _ENS, 0.1: _ENS}, _ENS, funcs, 0.02):
        assert np.all(r.gap == 0)
