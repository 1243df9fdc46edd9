"""Affine noise coefficients, the random-kick family and their samplers.

A channel is the affine map ``sigma(u) = a + g M u`` with ``a`` a
divergence-free field and ``M`` a spectral multiplier whose symbol is a
function of the Stokes eigenvalue clipped to ``[-1, 1]``.  The kick
family scales a channel by ``eps z`` and fires at rate ``eps**-2 nu``
where ``nu`` is a finite measure given by atoms.  Channel indices are
0-based; basis ordinals are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .basis import GalerkinBasis, galerkin_basis
from .errors import ChannelOutOfRange, RateBudgetExceeded, ZeroJumpSize
from .operators import ActiveTerms, PhysParams, drift
from .spectral import SpectralField, TorusConfig, inner, norm

__all__ = [
    "AffineMap",
    "NoiseSpec",
    "KickFamily",
    "KickStream",
    "CoordNoise",
    "HypothesisReport",
    "sigma_apply",
    "forcing_apply",
    "kick_apply",
    "brownian_increments",
    "kick_sample",
    "compensator_drift",
    "check_hypotheses",
    "generator_gap",
    "jump_generator",
    "brownian_generator",
]

Symbol = None | float | Callable | np.ndarray


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``u -> additive + gain * M u`` with a clipped diagonal multiplier.

    Parameters
    ----------
    additive : SpectralField or None
        Divergence-free constant part.
    gain : float
        Scalar gain of the multiplicative part.
    symbol : None, float, callable or ndarray
        Multiplier symbol.  ``None`` is the identity, a float is constant,
        a callable is evaluated on the Stokes eigenvalue, an array gives one
        value per wavevector (FFT grid layout, even in ``k``).  Values are
        clipped to ``[-1, 1]`` so the operator norm never exceeds one.
    """

    additive: SpectralField | None = None
    gain: float = 0.0
    symbol: Symbol = None

    def __post_init__(self):
        if self.additive is not None and self.additive.divergence_residual() > 1e-10:
            raise ValueError("additive part must be divergence-free")

    def multiplier(self, cfg: TorusConfig):
        """Clipped symbol on the FFT grid."""
        s = self.symbol
        if s is None:
            vals = np.ones(cfg.shape)
        elif callable(s):
            vals = np.asarray(s(cfg.symbol), dtype=float) * np.ones(cfg.shape)
        elif np.ndim(s) == 0:
            vals = np.full(cfg.shape, float(s))
        else:
            vals = np.asarray(s, dtype=float)
            if vals.shape != cfg.shape:
                raise ValueError(f"symbol shape {vals.shape} does not match grid {cfg.shape}")
        return np.clip(vals, -1.0, 1.0)

    def basis_multiplier(self, basis: GalerkinBasis):
        """Clipped symbol at each basis field's wavevector."""
        return self.multiplier(basis.cfg)[tuple(np.mod(basis.kappa, basis.cfg.N).T)]

    def op_norm(self, cfg: TorusConfig):
        return float(np.max(np.abs(self.multiplier(cfg))))

    def lipschitz(self, cfg: TorusConfig):
        return abs(self.gain) * self.op_norm(cfg)

    def __call__(self, u: SpectralField, truncation: int | None = None):
        cfg = u.cfg
        if truncation is not None:
            b = galerkin_basis(cfg, truncation)
            u = b.field(b.coords(u))
        out = SpectralField.zeros(cfg, u.batch_shape)
        if self.additive is not None:
            a = self.additive
            if truncation is not None:
                a = b.field(b.coords(a))
            out = out + a
        if self.gain != 0:
            out = out + SpectralField(self.gain * self.multiplier(cfg) * u.coeffs, cfg, u.divfree)
        return SpectralField(out.coeffs, cfg, True)


@dataclass(frozen=True)
class CoordNoise:
    """Affine maps in Galerkin coordinates.

    ``sigma_i(c) = add[i] + mult[i] * c`` and ``F(c) = f_add + f_mult * c``.
    """

    add: np.ndarray
    mult: np.ndarray
    f_add: np.ndarray
    f_mult: np.ndarray


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Forcing and ``m`` noise channels, optionally Galerkin-truncated."""

    channels: tuple = ()
    forcing: AffineMap | None = None
    truncation: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def m(self):
        return len(self.channels)

    def channel(self, i):
        if not 0 <= i < self.m:
            raise ChannelOutOfRange(f"channel {i} outside 0..{self.m - 1}")
        return self.channels[i]

    def sigma(self, i, u):
        return self.channel(i)(u, self.truncation)

    def forcing_value(self, u):
        if self.forcing is None:
            return SpectralField.zeros(u.cfg, u.batch_shape)
        return self.forcing(u, self.truncation)

    def growth_constant(self, cfg: TorusConfig):
        """``K`` with ``||F(u)||**2 + sum ||sigma_i(u)||**2 <= K (1 + ||u||**2)``.

        Uses ``||a + g M u||**2 <= 2 ||a||**2 + 2 g**2 ||u||**2``.
        """
        maps = list(self.channels) + ([self.forcing] if self.forcing else [])
        add = sum(float(norm(m_.additive)) ** 2 for m_ in maps if m_.additive is not None)
        lin = sum(m_.lipschitz(cfg) ** 2 for m_ in maps)
        return 2.0 * max(add, lin)

    def lipschitz_constant(self, cfg: TorusConfig):
        """``L`` with ``||F(u)-F(v)||**2 + sum ||sigma_i(u)-sigma_i(v)||**2 <= L ||u-v||**2``."""
        maps = list(self.channels) + ([self.forcing] if self.forcing else [])
        return sum(m_.lipschitz(cfg) ** 2 for m_ in maps)

    def coordinates(self, basis: GalerkinBasis):
        """Coordinate form of all maps in the given basis."""
        n = basis.n
        keep = np.ones(n)
        if self.truncation is not None:
            keep[self.truncation:] = 0.0

        def one(mp):
            if mp is None:
                return np.zeros(n), np.zeros(n)
            a = basis.coords(mp.additive) * keep if mp.additive is not None else np.zeros(n)
            g = mp.gain * mp.basis_multiplier(basis) * keep
            return a, g

        pairs = [one(c) for c in self.channels]
        add = np.array([p[0] for p in pairs]).reshape(self.m, n)
        mult = np.array([p[1] for p in pairs]).reshape(self.m, n)
        fa, fm = one(self.forcing)
        return CoordNoise(add, mult, fa, fm)


@dataclass(frozen=True, eq=False)
class KickFamily:
    """Random kicks ``eps z sigma_i(u)`` with intensity ``eps**-2 nu``.

    ``atoms`` lists ``(z, weight)`` pairs of the finite jump-size measure
    ``nu``; the default is the symmetric two-point law on ``{-1, +1}``.
    """

    base: NoiseSpec
    eps: float
    atoms: tuple = ((-1.0, 0.5), (1.0, 0.5))
    eps0: float = 1.0
    rate_cap: float = 1e7

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple((float(z), float(w)) for z, w in self.atoms))
        if not (0 < self.eps <= self.eps0):
            raise ValueError(f"eps must lie in (0, {self.eps0}], got {self.eps}")
        if not self.atoms:
            raise ValueError("jump measure needs at least one atom")
        for z, w in self.atoms:
            if z == 0:
                raise ZeroJumpSize("jump measure cannot charge z = 0")
            if not w > 0:
                raise ValueError("atom weights must be positive")

    @property
    def z(self):
        return np.array([a[0] for a in self.atoms])

    @property
    def weights(self):
        return np.array([a[1] for a in self.atoms])

    @property
    def mass(self):
        return float(self.weights.sum())

    @property
    def z_max(self):
        return float(np.max(np.abs(self.z)))

    def moment(self, p):
        """``int |z|**p nu(dz)``."""
        return float(np.sum(self.weights * np.abs(self.z) ** p))

    @property
    def first_moment(self):
        return float(np.sum(self.weights * self.z))

    @property
    def rate(self):
        """Total kick rate per channel."""
        return self.mass / self.eps**2

    def with_eps(self, eps):
        return replace(self, eps=eps)


@dataclass(frozen=True)
class KickStream:
    """Time-sorted kicks; iterating yields ``(time, channel, z)``."""

    times: np.ndarray
    channels: np.ndarray
    z: np.ndarray

    def __len__(self):
        return int(self.times.size)

    def __iter__(self):
        return iter(zip(self.times.tolist(), self.channels.tolist(), self.z.tolist()))


def sigma_apply(spec: NoiseSpec, i: int, u: SpectralField):
    """``sigma_i(u)``.

    Raises
    ------
    ChannelOutOfRange
    """
    return spec.sigma(i, u)


def forcing_apply(spec: NoiseSpec, u: SpectralField):
    return spec.forcing_value(u)


def kick_apply(fam: KickFamily, i: int, u: SpectralField, z: float):
    """``eps z sigma_i(u)``.

    Raises
    ------
    ZeroJumpSize
        If ``z == 0``.
    """
    if z == 0:
        raise ZeroJumpSize("kick size must be nonzero")
    return (fam.eps * z) * fam.base.sigma(i, u)


def brownian_increments(rng, m, dt):
    """``m`` independent ``N(0, dt)`` draws."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return rng.standard_normal(m) * np.sqrt(dt)


def kick_sample(fam: KickFamily, rng, interval, *, budget_time=None):
    """Compound-Poisson kicks on ``(t0, t1]`` for every channel.

    ``budget_time`` is the run length used for the rate cap; it defaults to
    the interval length.

    Raises
    ------
    RateBudgetExceeded
        If the expected number of kicks exceeds ``fam.rate_cap``.
    """
    t0, t1 = map(float, interval)
    if t1 < t0:
        raise ValueError("interval must satisfy t1 >= t0")
    span = t1 - t0
    m = fam.base.m
    expected = m * fam.rate * (span if budget_time is None else budget_time)
    if expected > fam.rate_cap:
        raise RateBudgetExceeded(f"expected {expected:.3g} kicks exceeds cap {fam.rate_cap:.3g}")
    if span == 0 or m == 0:
        return KickStream(np.zeros(0), np.zeros(0, np.int64), np.zeros(0))
    counts = rng.poisson(fam.rate * span, size=m)
    total = int(counts.sum())
    # 1 - U lies in (0, 1], so times fall in (t0, t1]
    times = t0 + span * (1.0 - rng.random(total))
    probs = fam.weights / fam.mass
    z = fam.z[rng.choice(probs.size, size=total, p=probs)] if probs.size > 1 else np.full(total, fam.z[0])
    ch = np.repeat(np.arange(m), counts)
    order = np.lexsort((ch, times))
    return KickStream(times[order], ch[order], z[order])


def compensator_drift(fam: KickFamily, u: SpectralField):
    """``sum_i int sigma_i^eps(u, z) lambda(dz) = eps**-1 (int z nu) sum_i sigma_i(u)``."""
    out = SpectralField.zeros(u.cfg, u.batch_shape)
    c = fam.first_moment / fam.eps
    if c == 0:
        return out
    for i in range(fam.base.m):
        out = out + c * fam.base.sigma(i, u)
    return out


def _jump_second_moment(fam, i, u):
    """``int ||sigma_i^eps(u,z)||**2 lambda(dz)`` by quadrature over the atoms."""
    tot = 0.0
    for z, w in fam.atoms:
        tot = tot + (w / fam.eps**2) * norm(kick_apply(fam, i, u, z)) ** 2
    return tot


@dataclass
class HypothesisReport:
    """Empirical constants of the growth, moment and Lipschitz conditions.

    Attributes
    ----------
    K1, K2, L2 : float
        Largest observed ratios over probes and the ``eps`` grid.
    p_moment : float
        Moment order used for ``K2``.
    eps_grid : ndarray
    h3_sup : ndarray
        ``max_probe max_z ||sigma^eps(u, z)||_H`` per ``eps``.
    h2_moment_ratio, h2_moment_bound : ndarray
        Per ``eps``: the ``2p``-moment ratio and its closed-form bound
        ``eps**(2p-2) int|z|**(2p) nu  2**(p-1) K1**p``.
    h4_gap : float
        ``max |int ||sigma^eps||**2 lambda - ||sigma||**2|`` over probes.
    h5_ratio : float
        ``max int ||sigma^eps||_V**2 lambda / (1 + ||u||_V**2)``.
    growth_closed_form, lipschitz_closed_form : float
        Constants derived from the affine structure alone.
    """

    K1: float
    K2: float
    L2: float
    p_moment: float
    eps_grid: np.ndarray
    h3_sup: np.ndarray
    h2_moment_ratio: np.ndarray
    h2_moment_bound: np.ndarray
    h4_gap: float
    h5_ratio: float
    growth_closed_form: float
    lipschitz_closed_form: float
    h4_gaps: np.ndarray = field(default_factory=lambda: np.zeros(0))


def check_hypotheses(spec: NoiseSpec, fam: KickFamily, probes: Sequence[SpectralField],
                     p_moment: float = 3.0, eps_grid=None):
    """Evaluate the hypothesis system on a finite probe set (report only)."""
    probes = list(probes)
    if not probes:
        raise ValueError("probe set must be nonempty")
    cfg = probes[0].cfg
    eps_grid = np.asarray(eps_grid if eps_grid is not None else [fam.eps0 * 2.0**-j for j in range(4)], float)
    p = float(p_moment)
    m = spec.m
    sig = [[spec.sigma(i, u) for i in range(m)] for u in probes]
    sig_h = np.array([[float(norm(s)) for s in row] for row in sig]).reshape(len(probes), m)
    sig_v = np.array([[float(norm(s, "V", check=False)) for s in row] for row in sig]).reshape(len(probes), m)
    u_h = np.array([float(norm(u)) for u in probes])
    u_v = np.array([float(norm(u, "V", check=False)) for u in probes])
    f_h = np.array([float(norm(spec.forcing_value(u))) for u in probes])

    K1 = K2 = L2 = h5 = 0.0
    h3 = np.zeros(eps_grid.size)
    mom_ratio = np.zeros(eps_grid.size)
    gaps = []
    for e_idx, eps in enumerate(eps_grid):
        fe = KickFamily(spec, float(eps), fam.atoms, max(fam.eps0, float(eps)), fam.rate_cap)
        second = np.array([[_jump_second_moment(fe, i, u) for i in range(m)] for u in probes]).reshape(len(probes), m)
        gaps.append(np.abs(second - sig_h**2))
        K1 = max(K1, float(np.max((f_h**2 + second.sum(axis=1)) / (1 + u_h**2))))
        mom = eps ** (2 * p - 2) * fe.moment(2 * p) * np.sum(sig_h ** (2 * p), axis=1)
        mom_ratio[e_idx] = float(np.max(mom / (1 + u_h ** (2 * p))))
        K2 = max(K2, mom_ratio[e_idx])
        h3[e_idx] = eps * fe.z_max * float(sig_h.max(initial=0.0))
        v_second = fe.moment(2) * np.sum(sig_v**2, axis=1)
        h5 = max(h5, float(np.max(v_second / (1 + u_v**2))))
        for a in range(len(probes) - 1):
            du = probes[a + 1] - probes[a]
            den = float(norm(du)) ** 2
            if den == 0:
                continue
            num = float(norm(spec.forcing_value(probes[a + 1]) - spec.forcing_value(probes[a]))) ** 2
            num += fe.moment(2) * sum(float(norm(sig[a + 1][i] - sig[a][i])) ** 2 for i in range(m))
            L2 = max(L2, num / den)
    gaps = np.array(gaps)
    K1_growth = max(K1, 0.0)
    bound = eps_grid ** (2 * p - 2) * fam.moment(2 * p) * 2 ** (p - 1) * K1_growth**p
    return HypothesisReport(
        K1=K1, K2=K2, L2=L2, p_moment=p, eps_grid=eps_grid, h3_sup=h3,
        h2_moment_ratio=mom_ratio, h2_moment_bound=bound,
        h4_gap=float(gaps.max(initial=0.0)), h5_ratio=h5,
        growth_closed_form=spec.growth_constant(cfg),
        lipschitz_closed_form=spec.lipschitz_constant(cfg),
        h4_gaps=gaps,
    )


def _basis_pair(cfg, k, j):
    b = galerkin_basis(cfg, None)
    return b.realize(k), b.realize(j)


def generator_gap(u: SpectralField, fam: KickFamily, spec: NoiseSpec, k: int, j: int, channel: int | None = None):
    """``|int (sigma^eps, e_k)(sigma^eps, e_j) lambda - (sigma, e_k)(sigma, e_j)|``.

    The jump integral is a quadrature over the atoms of ``nu``; ``fam``
    supplies the kicks and ``spec`` the limiting diffusion.  With
    ``channel=None`` the difference is summed over channels.
    """
    ek, ej = _basis_pair(u.cfg, k, j)
    chans = range(spec.m) if channel is None else [channel]
    total = 0.0
    for i in chans:
        jump = 0.0
        for z, w in fam.atoms:
            kick = kick_apply(fam, i, u, z)
            jump += (w / fam.eps**2) * float(inner(kick, ek)) * float(inner(kick, ej))
        s = spec.sigma(i, u)
        total += jump - float(inner(s, ek)) * float(inner(s, ej))
    return abs(total)


def _quad_drift_part(x, p, F, k, j, terms):
    ek, ej = _basis_pair(x.cfg, k, j)
    dr = drift(x, p, F, terms)
    xk, xj = float(inner(x, ek)), float(inner(x, ej))
    return float(inner(dr, ek)) * xj + float(inner(dr, ej)) * xk, ek, ej


def jump_generator(x: SpectralField, fam: KickFamily, p: PhysParams, k: int, j: int,
                   terms: ActiveTerms | None = None):
    """Jump generator applied to ``f(x) = (x, e_k)(x, e_j)`` at ``x``.

    Evaluated literally: drift pairing with the gradient plus the
    compensated jump integral ``int [f(x + s) - f(x) - (s, grad f)] lambda``.
    """
    F = fam.base.forcing_value
    dpart, ek, ej = _quad_drift_part(x, p, F, k, j, terms)

    def f(y):
        return float(inner(y, ek)) * float(inner(y, ej))

    grad = float(inner(x, ej)) * ek + float(inner(x, ek)) * ej
    jp = 0.0
    for i in range(fam.base.m):
        for z, w in fam.atoms:
            s = kick_apply(fam, i, x, z)
            jp += (w / fam.eps**2) * (f(x + s) - f(x) - float(inner(s, grad)))
    return dpart + jp


def brownian_generator(x: SpectralField, spec: NoiseSpec, p: PhysParams, k: int, j: int,
                       terms: ActiveTerms | None = None):
    """Diffusion generator applied to ``f(x) = (x, e_k)(x, e_j)``."""
    dpart, ek, ej = _quad_drift_part(x, p, spec.forcing_value, k, j, terms)
    second = 0.0
    for i in range(spec.m):
        s = spec.sigma(i, x)
        second += float(inner(s, ek)) * float(inner(s, ej))
    return dpart + second
