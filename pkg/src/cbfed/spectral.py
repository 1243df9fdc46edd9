"""Fourier representation of zero-mean vector fields on the periodic torus.

Coefficients follow the convention ``u_k = fftn(u) / N**d`` so that
``u(x) = sum_k u_k exp(2 pi i k.x / L)`` on the collocation grid
``x_j = j L / N``.  Norms are physical integrals over the torus of volume
``L**d``; e.g. ``||u||_H**2 = L**d * sum_k |u_k|**2``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, NonZeroMean, ShapeMismatch, UnsupportedP

__all__ = [
    "TorusConfig",
    "SpectralField",
    "transform_forward",
    "transform_inverse",
    "leray_project",
    "stokes_apply",
    "norm",
    "inner",
    "random_field",
    "taylor_green",
    "to_grid",
    "from_grid",
    "write_snapshot",
    "read_snapshot",
]


@dataclass(frozen=True)
class TorusConfig:
    """Periodic box ``[0, L)**d`` resolved with ``N`` modes per axis.

    Parameters
    ----------
    d : int
        Spatial dimension, 2 or 3.
    L : float
        Period length.
    N : int
        Even number of collocation points per axis.
    dealias_fraction : float
        Modes with any ``|k_i| > dealias_fraction * N / 2`` are inactive.
        The default 2/3 is the usual rule for quadratic products.
    oversample : float
        Grid refinement factor used for the pointwise power nonlinearities
        and for L^p quadrature.
    """

    d: int
    L: float
    N: int
    dealias_fraction: float = 2.0 / 3.0
    oversample: float = 1.5

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if not (self.L > 0):
            raise ValueError(f"L must be positive, got {self.L}")
        if self.N <= 0 or self.N % 2:
            raise ValueError(f"N must be a positive even integer, got {self.N}")
        frac = float(Fraction(self.dealias_fraction).limit_denominator(10**6))
        if not (0 < frac <= 1):
            raise ValueError("dealias_fraction must lie in (0, 1]")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")

    # -- grids -----------------------------------------------------------
    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def volume(self):
        return float(self.L) ** self.d

    @property
    def lambda1(self):
        """Smallest nonzero Stokes eigenvalue ``(2 pi / L)**2``."""
        return (2.0 * np.pi / self.L) ** 2

    @property
    def kmax(self):
        """Largest active wavenumber per axis: strictly below ``fraction * N / 2``.

        The strict cut keeps quadratic products alias-free when ``N`` is a
        multiple of 3; Nyquist is never active.
        """
        cut = Fraction(self.dealias_fraction).limit_denominator(1000) * self.N / 2
        return min(math.ceil(cut) - 1, self.N // 2 - 1)

    @property
    def fine_N(self):
        """Even size of the oversampled grid."""
        m = int(np.ceil(self.oversample * self.N - 1e-9))
        return m + (m % 2)

    @cached_property
    def wavenumbers(self):
        """Integer wavevectors, shape ``(d, N, ..., N)``, FFT order."""
        k1 = np.rint(sfft.fftfreq(self.N, 1.0 / self.N)).astype(np.int64)
        return np.stack(np.meshgrid(*([k1] * self.d), indexing="ij"))

    @cached_property
    def k_deriv(self):
        """Wavenumbers used for differentiation (Nyquist set to zero)."""
        k = self.wavenumbers.copy()
        k[np.abs(k) == self.N // 2] = 0
        return k

    @cached_property
    def k2(self):
        return np.sum(self.wavenumbers.astype(float) ** 2, axis=0)

    @cached_property
    def symbol(self):
        """Stokes symbol ``lambda(k) = (2 pi / L)**2 |k|**2`` on the grid."""
        return self.lambda1 * self.k2

    @cached_property
    def nyquist(self):
        return np.any(np.abs(self.wavenumbers) == self.N // 2, axis=0)

    @cached_property
    def active(self):
        """Boolean mask of resolved modes (dealiased, nonzero, no Nyquist)."""
        m = np.all(np.abs(self.wavenumbers) <= self.kmax, axis=0)
        m[(0,) * self.d] = False
        return m

    def grid(self, M=None):
        """Physical collocation points, shape ``(d, M, ..., M)``."""
        M = self.N if M is None else M
        x1 = np.arange(M) * (self.L / M)
        return np.stack(np.meshgrid(*([x1] * self.d), indexing="ij"))

    def spatial_axes(self, ndim):
        return tuple(range(ndim - self.d, ndim))


@dataclass(eq=False)
class SpectralField:
    """Complex Fourier coefficients of a real zero-mean vector field.

    ``coeffs`` has shape ``batch + (d,) + (N,)*d`` in FFT order.  A leading
    batch shape is allowed so that ensembles can share one container.
    """

    coeffs: np.ndarray
    cfg: TorusConfig
    divfree: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        tail = (self.cfg.d,) + self.cfg.shape
        if c.ndim < len(tail) or c.shape[-len(tail):] != tail:
            raise ShapeMismatch(f"coefficient shape {c.shape} incompatible with {tail}")
        self.coeffs = c

    @property
    def batch_shape(self):
        return self.coeffs.shape[: self.coeffs.ndim - self.cfg.d - 1]

    @classmethod
    def zeros(cls, cfg, batch=()):
        return cls(np.zeros(tuple(batch) + (cfg.d,) + cfg.shape, complex), cfg, True)

    def copy(self):
        return SpectralField(self.coeffs.copy(), self.cfg, self.divfree)

    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.cfg != self.cfg:
            raise GridMismatch("fields live on different torus configurations")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.coeffs + other.coeffs, self.cfg, self.divfree and other.divfree)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.coeffs - other.coeffs, self.cfg, self.divfree and other.divfree)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return SpectralField(self.coeffs * float(scalar), self.cfg, self.divfree)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(-self.coeffs, self.cfg, self.divfree)

    def divergence_residual(self):
        """Max of ``|k . u_k|`` relative to ``max |k| |u_k|``."""
        k = self.cfg.k_deriv.astype(float)
        div = np.abs(np.sum(k * self.coeffs, axis=-self.cfg.d - 1))
        scale = np.max(np.sqrt(self.cfg.k2) * np.max(np.abs(self.coeffs), axis=-self.cfg.d - 1), initial=0.0)
        return 0.0 if scale == 0 else float(div.max() / scale)

    def hermitian_residual(self):
        c = self.coeffs
        axes = self.cfg.spatial_axes(c.ndim)
        return float(np.max(np.abs(c - np.conj(_reflect(c, axes))), initial=0.0))

    def physical(self):
        return transform_inverse(self)


def _reflect(c, axes):
    """Array indexed by ``-k`` (mod N) along the given axes."""
    return np.roll(np.flip(c, axis=axes), 1, axis=axes)


def _hermitian(c, axes):
    return 0.5 * (c + np.conj(_reflect(c, axes)))


def transform_forward(samples, cfg):
    """Coefficients of real samples on the ``N**d`` collocation grid.

    Raises
    ------
    ShapeMismatch
        If the trailing shape is not ``(d, N, ..., N)``.
    NonZeroMean
        If any component has mean larger than ``1e-12 * max|sample|``.
    """
    a = np.asarray(samples)
    if np.iscomplexobj(a):
        if np.max(np.abs(a.imag), initial=0.0) > 0:
            raise ShapeMismatch("physical samples must be real")
        a = a.real
    a = a.astype(float)
    tail = (cfg.d,) + cfg.shape
    if a.ndim < len(tail) or a.shape[-len(tail):] != tail:
        raise ShapeMismatch(f"sample shape {a.shape} incompatible with {tail}")
    axes = cfg.spatial_axes(a.ndim)
    mean = np.mean(a, axis=axes)
    scale = np.max(np.abs(a), initial=0.0)
    if np.max(np.abs(mean), initial=0.0) > 1e-12 * scale:
        raise NonZeroMean(f"field mean {np.max(np.abs(mean)):.3e} is not zero")
    c = sfft.fftn(a, axes=axes) / cfg.N**cfg.d
    c = _hermitian(c, axes)
    c[(..., slice(None)) + (0,) * cfg.d] = 0.0
    return SpectralField(c, cfg, False)


def transform_inverse(u):
    """Real physical samples of ``u`` on the ``N**d`` grid."""
    cfg = u.cfg
    axes = cfg.spatial_axes(u.coeffs.ndim)
    return sfft.ifftn(u.coeffs * cfg.N**cfg.d, axes=axes).real


def leray_project(u):
    """Project every mode onto the plane orthogonal to its wavevector."""
    cfg = u.cfg
    k = cfg.wavenumbers.astype(float)
    k2 = np.where(cfg.k2 == 0, 1.0, cfg.k2)
    c = u.coeffs
    kc = np.sum(k * c, axis=-cfg.d - 1, keepdims=True)
    out = c - k * kc / k2
    out = np.where(cfg.nyquist, 0.0, out)
    out[(..., slice(None)) + (0,) * cfg.d] = 0.0
    return SpectralField(out, cfg, True)


def stokes_apply(u, power=1.0):
    """Fractional Stokes power ``A**power`` acting mode-wise."""
    cfg = u.cfg
    lam = cfg.symbol.copy()
    lam[(0,) * cfg.d] = 1.0
    fac = lam ** float(power)
    fac[(0,) * cfg.d] = 0.0
    return SpectralField(u.coeffs * fac, cfg, u.divfree)


def inner(u, v):
    """H inner product ``int u . v dx`` (batched over leading axes)."""
    if u.cfg != v.cfg:
        raise GridMismatch("fields live on different torus configurations")
    cfg = u.cfg
    axes = tuple(range(-cfg.d - 1, 0))
    return cfg.volume * np.sum((u.coeffs * np.conj(v.coeffs)).real, axis=axes)


def _fine_size(cfg, oversample):
    if oversample is None:
        return cfg.fine_N
    m = int(np.ceil(oversample * cfg.N - 1e-9))
    return m + (m % 2)


def _embed_index(N, M):
    """Indices of the retained N-grid modes inside an M-grid FFT array."""
    k = np.rint(sfft.fftfreq(N, 1.0 / N)).astype(int)
    if M == N:
        return np.arange(N), np.arange(N)
    keep = np.abs(k) < N // 2
    src = np.arange(N)[keep]
    return src, np.mod(k[keep], M)


def to_grid(coeffs, cfg, M=None):
    """Evaluate coefficient arrays (``... , N, ..., N``) on an ``M**d`` grid.

    Works on any array whose trailing ``d`` axes are spectral.  For
    ``M > N`` the Nyquist modes are dropped before padding.
    """
    M = cfg.N if M is None else M
    c = np.asarray(coeffs)
    axes = cfg.spatial_axes(c.ndim)
    if M == cfg.N:
        return sfft.ifftn(c * M**cfg.d, axes=axes).real
    src, dst = _embed_index(cfg.N, M)
    big = np.zeros(c.shape[: c.ndim - cfg.d] + (M,) * cfg.d, complex)
    big[(...,) + np.ix_(*([dst] * cfg.d))] = c[(...,) + np.ix_(*([src] * cfg.d))]
    return sfft.ifftn(big * M**cfg.d, axes=axes).real


def from_grid(values, cfg):
    """Coefficients on the N grid of real samples given on any even grid.

    Modes that do not fit into the N grid are truncated.
    """
    v = np.asarray(values, dtype=float)
    M = v.shape[-1]
    axes = cfg.spatial_axes(v.ndim)
    big = sfft.fftn(v, axes=axes) / M**cfg.d
    if M == cfg.N:
        return _hermitian(big, axes)
    src, dst = _embed_index(cfg.N, M)
    out = np.zeros(v.shape[: v.ndim - cfg.d] + cfg.shape, complex)
    out[(...,) + np.ix_(*([src] * cfg.d))] = big[(...,) + np.ix_(*([dst] * cfg.d))]
    return out


def norm(u, kind="H", *, alpha=None, p=None, oversample=None, check=True):
    """Named norm of ``u``.

    Parameters
    ----------
    u : SpectralField
    kind : {"H", "V", "V_alpha", "Lp"}
        ``V_alpha`` needs ``alpha`` and equals ``||A**(alpha/2) u||_H``.
        ``Lp`` needs ``p`` in ``[1, inf)`` and integrates ``|u|**p`` by the
        uniform-grid rule on the oversampled grid (``oversample=1`` gives the
        collocation grid itself).
    check : bool
        For ``kind="V"``, verify Poincare's inequality on the result.

    Returns
    -------
    float or ndarray
        One value per batch entry.
    """
    cfg = u.cfg
    axes = tuple(range(-cfg.d - 1, 0))
    if kind == "H":
        return np.sqrt(cfg.volume * np.sum(np.abs(u.coeffs) ** 2, axis=axes))
    if kind in ("V", "V_alpha"):
        a = 1.0 if kind == "V" else float(alpha)
        w = cfg.symbol.copy()
        w[(0,) * cfg.d] = 1.0
        w = w**a
        w[(0,) * cfg.d] = 0.0
        val = np.sqrt(cfg.volume * np.sum(w * np.abs(u.coeffs) ** 2, axis=axes))
        if kind == "V" and check:
            h = norm(u, "H")
            if np.any(cfg.lambda1 * h**2 > val**2 * (1 + 1e-12) + 1e-300):
                raise ArithmeticError("Poincare inequality violated")
        return val
    if kind == "Lp":
        if p is None or not np.isfinite(p) or p < 1:
            raise UnsupportedP(f"p must lie in [1, inf), got {p}")
        M = _fine_size(cfg, oversample)
        phys = to_grid(u.coeffs, cfg, M)
        mag = np.sqrt(np.sum(phys**2, axis=-cfg.d - 1))
        sp = tuple(range(-cfg.d, 0))
        integral = np.mean(mag**p, axis=sp) * cfg.volume
        return integral ** (1.0 / p)
    raise ValueError(f"unknown norm kind {kind!r}")


def random_field(cfg, rng, *, batch=(), slope=1.0, kmax=None, divfree=True):
    """Random real zero-mean field supported on the active modes.

    Coefficient amplitudes decay like ``(1 + |k|**2)**(-slope)``.
    """
    rng = np.random.default_rng(rng)
    shape = tuple(batch) + (cfg.d,) + cfg.shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mask = cfg.active
    if kmax is not None:
        mask = mask & np.all(np.abs(cfg.wavenumbers) <= kmax, axis=0)
    c = c * np.where(mask, (1.0 + cfg.k2) ** (-slope), 0.0)
    c = _hermitian(c, cfg.spatial_axes(c.ndim))
    u = SpectralField(c, cfg, False)
    return leray_project(u) if divfree else u


def taylor_green(cfg, amplitude=1.0, mode=1):
    """Taylor-Green vortex ``(sin kx cos ky, -cos kx sin ky)`` in 2D, or its
    3D version with zero third component, at wavenumber ``mode``.
    """
    x = cfg.grid(cfg.N)
    a = 2.0 * np.pi * mode / cfg.L
    u = np.zeros((cfg.d,) + cfg.shape)
    u[0] = np.sin(a * x[0]) * np.cos(a * x[1])
    u[1] = -np.cos(a * x[0]) * np.sin(a * x[1])
    if cfg.d == 3:
        u[0] *= np.cos(a * x[2])
        u[1] *= np.cos(a * x[2])
    return SpectralField(transform_forward(amplitude * u, cfg).coeffs, cfg, True)


# -- binary snapshots ---------------------------------------------------------
_MAGIC = b"CBFD"
_VERSION = 1
_HEADER = struct.Struct("<4sIIdIB")


def write_snapshot(path, u):
    """Write one field: header then little-endian complex128 coefficients.

    Header layout (little endian): magic ``CBFD``, version u32, d u32,
    L f64, N u32, divfree u8.  Coefficients follow component-major, then
    row-major over FFT-ordered wavevector indices.
    """
    if u.batch_shape:
        raise ShapeMismatch("snapshots hold a single field")
    cfg = u.cfg
    head = _HEADER.pack(_MAGIC, _VERSION, cfg.d, float(cfg.L), cfg.N, int(bool(u.divfree)))
    with open(Path(path), "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(u.coeffs, dtype="<c16").tobytes())


def read_snapshot(path, *, dealias_fraction=2.0 / 3.0, oversample=1.5):
    """Inverse of :func:`write_snapshot`."""
    raw = Path(path).read_bytes()
    magic, version, d, L, N, divfree = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a field snapshot")
    cfg = TorusConfig(d, L, N, dealias_fraction, oversample)
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    return SpectralField(data.reshape((d,) + cfg.shape).astype(complex), cfg, bool(divfree))
