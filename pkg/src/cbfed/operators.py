"""Drift operators of the damped Navier-Stokes system and their constants.

The convective term uses the rotational form ``P[omega x u]`` on the
collocation grid with 2/3 truncation; the trilinear form is evaluated
independently in advective form on a 3/2-padded grid, so the two give a
genuine cross-check.  Power nonlinearities ``|u|**(s-1) u`` are evaluated
pointwise on the oversampled grid, truncated to the active modes and
projected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import GridMismatch, RegimeError
from .spectral import (
    SpectralField,
    TorusConfig,
    from_grid,
    inner,
    leray_project,
    norm,
    stokes_apply,
    to_grid,
)

__all__ = [
    "PhysParams",
    "ConstantsReport",
    "SandwichResult",
    "trilinear",
    "convective",
    "damping",
    "drift",
    "constants",
    "sandwich_check",
    "monotonicity_terms",
    "dual_norm_surrogate",
    "power_kernel",
    "default_theta",
    "ActiveTerms",
]


@dataclass(frozen=True)
class PhysParams:
    """Physical coefficients.

    Parameters
    ----------
    mu : float
        Viscosity, positive.
    beta : float
        Forchheimer coefficient of ``|u|**(r-1) u``, positive.
    alpha : float
        Coefficient of ``|u|**(q-1) u``; negative values act as pumping.
    r : float
        Absorption exponent, at least 1.
    q : float
        Secondary exponent with ``1 <= q < r``.
    """

    mu: float
    beta: float
    alpha: float = 0.0
    r: float = 3.0
    q: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise RegimeError(f"mu must be positive, got {self.mu}")
        if not self.beta > 0:
            raise RegimeError(f"beta must be positive, got {self.beta}")
        if not self.r >= 1:
            raise RegimeError(f"r must be >= 1, got {self.r}")
        if not (1 <= self.q < self.r):
            raise RegimeError(f"need 1 <= q < r, got q={self.q}, r={self.r}")

    def validate(self, d):
        """Check the solvability regime for dimension ``d``.

        Raises
        ------
        RegimeError
            With a message naming the violated gate.
        """
        if d == 2:
            return self
        if d != 3:
            raise RegimeError(f"d must be 2 or 3, got {d}")
        if self.r < 3:
            raise RegimeError(f"d=3 requires r>=3 (got r={self.r})")
        if self.r == 3:
            prod = 2.0 * self.beta * self.mu
            if prod < 1:
                raise RegimeError(f"d=r=3 requires 2*beta*mu>1 (got {prod:g})")
            if prod == 1:
                raise RegimeError("d=r=3 with 2*beta*mu=1 is an ambiguous borderline case; need 2*beta*mu>1")
        return self


def _check_same(*fields):
    cfg = fields[0].cfg
    for f in fields[1:]:
        if f.cfg != cfg:
            raise GridMismatch("fields live on different torus configurations")
    return cfg


def _pad_size(cfg):
    m = int(math.ceil(1.5 * cfg.N))
    return m + (m % 2)


def _gradient_coeffs(u):
    """Coefficients of ``d_i u_j`` with shape ``batch + (d, d) + grid``."""
    cfg = u.cfg
    k = cfg.k_deriv.astype(float) * (2.0 * np.pi / cfg.L)
    c = u.coeffs
    return 1j * np.expand_dims(k, 1) * np.expand_dims(c, -cfg.d - 2)


def trilinear(u, v, w):
    """``b(u, v, w) = int (u . grad) v . w dx``.

    Derivatives are spectral and the triple product is integrated on a
    3/2-padded grid, which is exact for band-limited inputs.
    """
    cfg = _check_same(u, v, w)
    M = _pad_size(cfg)
    up = to_grid(u.coeffs, cfg, M)
    wp = to_grid(w.coeffs, cfg, M)
    grad = to_grid(_gradient_coeffs(v), cfg, M)  # (..., i, j, grid)
    adv = np.sum(np.expand_dims(up, -cfg.d - 1) * grad, axis=-cfg.d - 2)
    return cfg.volume * np.sum(np.mean(adv * wp, axis=tuple(range(-cfg.d, 0))), axis=-1)


def _vorticity_coeffs(u):
    cfg = u.cfg
    k = cfg.k_deriv.astype(float) * (2.0 * np.pi / cfg.L)
    c = u.coeffs
    ax = -cfg.d - 1
    if cfg.d == 2:
        return 1j * (k[0] * np.take(c, 1, axis=ax) - k[1] * np.take(c, 0, axis=ax))
    return 1j * np.cross(k, c, axisa=0, axisb=ax, axisc=ax)


def convective(u):
    """Dealiased ``P[(u . grad) u]`` evaluated as ``P[omega x u]``."""
    cfg = u.cfg
    up = to_grid(u.coeffs, cfg)
    wp = to_grid(_vorticity_coeffs(u), cfg)
    ax = -cfg.d - 1
    if cfg.d == 2:
        u1, u2 = np.take(up, 0, axis=ax), np.take(up, 1, axis=ax)
        prod = np.stack([-wp * u2, wp * u1], axis=ax)
    else:
        prod = np.cross(wp, up, axisa=ax, axisb=ax, axisc=ax)
    c = from_grid(prod, cfg) * cfg.active
    return leray_project(SpectralField(c, cfg))


def power_kernel(values, s, axis=0):
    """Pointwise ``|u|**(s-1) u`` for vector samples along ``axis``."""
    mag2 = np.sum(values**2, axis=axis, keepdims=True)
    e = (s - 1.0) / 2.0
    if e == 0:
        return np.array(values, dtype=float, copy=True)
    if float(e).is_integer():
        return mag2 ** int(e) * values
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(mag2 > 0, mag2**e, 0.0)
    return fac * values


def damping(u, s, *, oversample=None):
    """``P(|u|**(s-1) u)`` truncated to the active modes.

    The kernel is applied on the oversampled grid; ``oversample=1`` uses
    the collocation grid.
    """
    if s < 1:
        raise ValueError(f"exponent must be >= 1, got {s}")
    cfg = u.cfg
    M = cfg.fine_N if oversample is None else _even(oversample * cfg.N)
    phys = to_grid(u.coeffs, cfg, M)
    kern = power_kernel(phys, s, axis=-cfg.d - 1)
    c = from_grid(kern, cfg) * cfg.active
    return leray_project(SpectralField(c, cfg))


def _even(x):
    m = int(math.ceil(x - 1e-9))
    return m + (m % 2)


def _apply_forcing(F, u):
    if F is None:
        return None
    if isinstance(F, SpectralField):
        return F
    return F(u)


@dataclass(frozen=True)
class ActiveTerms:
    """Switches for the individual drift contributions."""

    stokes: bool = True
    convective: bool = True
    absorption: bool = True
    pumping: bool = True
    forcing: bool = True


def drift(u, p: PhysParams, F: SpectralField | Callable | None = None, terms: ActiveTerms | None = None):
    """``-mu A u - B(u) - alpha C~(u) - beta C(u) + F(u)``.

    ``F`` may be ``None``, a constant field, or a callable of ``u``.
    """
    t = terms or ActiveTerms()
    cfg = u.cfg
    out = SpectralField.zeros(cfg, u.batch_shape)
    if t.stokes:
        out = out - p.mu * stokes_apply(u, 1.0)
    if t.convective:
        out = out - convective(u)
    if t.pumping and p.alpha != 0:
        out = out - p.alpha * damping(u, p.q)
    if t.absorption:
        out = out - p.beta * damping(u, p.r)
    if t.forcing:
        f = _apply_forcing(F, u)
        if f is not None:
            out = out + leray_project(f)
    return leray_project(out)


class ConstantsReport(NamedTuple):
    """Closed-form constants for a parameter set.

    Entries that the underlying inequality does not define for the given
    exponents are ``None``.
    """

    lambda1: float
    C_alpha_beta: float
    zeta: float
    vartheta: float | None
    eta: float | None
    chi: float | None
    monotonicity: float
    theta: float | None
    zeta_tilde: float | None
    critical_coefficient: float | None


def default_theta(p: PhysParams):
    """Midpoint of the admissible window ``(1/(2 beta mu), 1)``."""
    lo = 1.0 / (2.0 * p.beta * p.mu)
    return lo + (1.0 - lo) / 2.0


def constants(p: PhysParams, cfg: TorusConfig, theta: float | None = None):
    """Evaluate the explicit constants of the energy and regularity estimates.

    ``|alpha|`` is used wherever ``alpha`` is raised to a fractional power.
    ``theta`` only matters for ``d = r = 3`` and defaults to
    :func:`default_theta`.

    Raises
    ------
    RegimeError
        Outside the validated regime.
    """
    p.validate(cfg.d)
    a, b, mu, r, q = abs(p.alpha), p.beta, p.mu, float(p.r), float(p.q)
    vol = cfg.volume
    c_ab = (2 * a) ** ((r + 1) / (r - q)) * ((r - q) / (r + 1)) * ((q + 1) / (b * (r + 1))) ** ((q + 1) / (r - q)) * vol
    zeta = (2 * a * q) ** ((r - 1) / (r - q)) * ((r - q) / (r - 1)) * (2 * (q - 1) / (b * (r - 1))) ** ((q - 1) / (r - q)) if r > 1 else 0.0
    if r > 3:
        vt = (r - 3) / (r - 1) * (8.0 / (b * mu * (r - 1))) ** (2.0 / (r - 3))
    elif r == 3:
        vt = 0.0
    else:
        vt = None
    chi = None
    if 3 <= q < r:
        inner = (q - 2) / (q - 1) ** ((q - 1) / (q - 2)) * 2 ** ((q - 3) ** 2 / (q - 2))
        chi = ((r - q) / (r - 1)) * (4 * a * (q - 1) / (b * (r - 1))) ** ((q - 1) / (r - q)) * (
            (1 + 2 ** (q - 2)) ** ((r - 1) / (r - q)) + 2 ** ((q - 1) / (r - q)) * inner ** ((r - 1) / (r - q))
        )
    th = zt = crit = None
    if cfg.d == 3 and r == 3:
        th = default_theta(p) if theta is None else float(theta)
        if not (1.0 / (2 * b * mu) < th < 1):
            raise RegimeError(f"theta must lie in (1/(2 beta mu), 1), got {th}")
        zt = ((r - q) / (r - 1)) * (a * (q - 1) / ((1 - th) * b * (r - 1))) ** ((q - 1) / (r - q))
        crit = 2 * th * b - 1.0 / (th * mu)
    return ConstantsReport(cfg.lambda1, c_ab, zeta, vt, vt, chi, 2.0 ** (1 - r), th, zt, crit)


class SandwichResult(NamedTuple):
    I0: float
    I1: float
    I2: float

    def ordered(self, rtol=1e-8):
        s = rtol * max(abs(self.I2), 1e-300)
        return bool(-s <= self.I0 <= self.I1 + s and self.I1 <= self.I2 + s)


def sandwich_check(u, r, *, check=True, grid=None):
    """Integrals bracketing ``(|u|**(r-1) u, A u)``.

    Returns ``I0 = int |grad u|**2 |u|**(r-1)``,
    ``I1 = int |u|**(r-1) u . A u`` and ``I2 = r I0``.  Quadrature uses a
    grid fine enough to integrate the odd-integer cases exactly.

    Raises
    ------
    AssertionError
        If ``check`` and the ordering ``0 <= I0 <= I1 <= I2`` fails with
        ``1e-8`` relative slack.
    """
    cfg = u.cfg
    M = grid or max(cfg.fine_N, _even((r + 1) * cfg.kmax + 1))
    up = to_grid(u.coeffs, cfg, M)
    gp = to_grid(_gradient_coeffs(u), cfg, M)
    au = to_grid(stokes_apply(u, 1.0).coeffs, cfg, M)
    mag2 = np.sum(up**2, axis=0)
    wgt = _pow_mag(mag2, r - 1)
    grad2 = np.sum(gp**2, axis=(0, 1))
    I0 = cfg.volume * float(np.mean(grad2 * wgt))
    I1 = cfg.volume * float(np.mean(wgt * np.sum(up * au, axis=0)))
    res = SandwichResult(I0, I1, r * I0)
    if check and not res.ordered():
        raise AssertionError(f"sandwich ordering violated: {res}")
    return res


def _pow_mag(mag2, e):
    """``|u|**e`` from ``|u|**2`` with ``0**0 = 1``."""
    if e == 0:
        return np.ones_like(mag2)
    h = e / 2.0
    if float(h).is_integer():
        return mag2 ** int(h)
    return np.where(mag2 > 0, np.abs(mag2) ** h, 0.0)


def monotonicity_terms(u, v, r, *, oversample=None):
    """Pieces of the monotonicity inequality for ``C`` with exponent ``r``.

    Returns ``(lhs, intermediate, lower)`` with
    ``lhs = <C(u) - C(v), u - v>``,
    ``intermediate = (||u|^((r-1)/2)(u-v)||**2 + ||v|^((r-1)/2)(u-v)||**2) / 2``
    and ``lower = 2**(1-r) ||u - v||_{L^{r+1}}**(r+1)``.
    """
    cfg = _check_same(u, v)
    M = cfg.fine_N if oversample is None else _even(oversample * cfg.N)
    cu = damping(u, r, oversample=M / cfg.N)
    cv = damping(v, r, oversample=M / cfg.N)
    diff = u - v
    lhs = inner(cu - cv, diff)
    up = to_grid(u.coeffs, cfg, M)
    vp = to_grid(v.coeffs, cfg, M)
    dp = up - vp
    d2 = np.sum(dp**2, axis=-cfg.d - 1)
    sp = tuple(range(-cfg.d, 0))
    wu = _pow_mag(np.sum(up**2, axis=-cfg.d - 1), r - 1)
    wv = _pow_mag(np.sum(vp**2, axis=-cfg.d - 1), r - 1)
    inter = 0.5 * cfg.volume * np.mean((wu + wv) * d2, axis=sp)
    lower = 2.0 ** (1 - r) * norm(diff, "Lp", p=r + 1, oversample=M / cfg.N) ** (r + 1)
    return lhs, inter, lower


def dual_norm_surrogate(pairing, probes):
    """``max |pairing(v)| / ||v||_V`` over a finite probe set."""
    best = 0.0
    for v in probes:
        nv = float(norm(v, "V"))
        if nv > 0:
            best = max(best, abs(float(pairing(v))) / nv)
    return best
