"""Real orthonormal Stokes eigenbasis and Galerkin coordinates.

Basis fields are ``c p(kappa) cos(2 pi kappa.x / L)`` or
``c p(kappa) sin(2 pi kappa.x / L)`` with ``c = sqrt(2 / L**d)``, where
``kappa`` lies in the half space whose last nonzero component is positive
and ``p`` is a unit polarization orthogonal to ``kappa``.  A wavevector
``k`` in that half space labels the cosine field; ``-k`` labels the sine
field of ``kappa = k``.  Ordering is by eigenvalue, then lexicographic ``k``,
then polarization.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from .errors import ShapeMismatch, TooManyModes
from .spectral import SpectralField, TorusConfig

__all__ = ["BasisIndex", "GalerkinBasis", "enumerate_basis", "galerkin_basis", "polarizations"]

_REFERENCE = np.array([1.0, np.sqrt(2.0), np.sqrt(3.0)]) / np.sqrt(6.0)


@dataclass(frozen=True)
class BasisIndex:
    """Label of one basis field.

    ``ordinal`` starts at 1; ``polarization`` runs over ``1..d-1``.
    """

    ordinal: int
    k: tuple
    polarization: int
    kind: str
    eigenvalue: float
    field: SpectralField | None = None


def _in_upper_half(k):
    nz = [x for x in k if x != 0]
    return bool(nz) and nz[-1] > 0


def polarizations(kappa):
    """Orthonormal polarizations orthogonal to ``kappa`` (list of arrays)."""
    k = np.asarray(kappa, dtype=float)
    kh = k / np.linalg.norm(k)
    if k.size == 2:
        return [np.array([-kh[1], kh[0]])]
    # Gram-Schmidt against a fixed reference that is never parallel to an integer vector
    p1 = _REFERENCE - np.dot(_REFERENCE, kh) * kh
    p1 /= np.linalg.norm(p1)
    return [p1, np.cross(kh, p1)]


def _enumerate_labels(cfg):
    km = cfg.kmax
    ks = [tuple(int(i) - km for i in k) for k in np.ndindex(*([2 * km + 1] * cfg.d))]
    labels = [(sum(x * x for x in k), k, pol) for k in ks if any(k) for pol in range(1, cfg.d)]
    labels.sort()
    return labels


class GalerkinBasis:
    """The first ``n`` basis fields with coordinate maps.

    Use :func:`galerkin_basis` to obtain cached instances.
    """

    def __init__(self, cfg: TorusConfig, n: int | None = None):
        labels = _enumerate_labels(cfg)
        if n is None:
            n = len(labels)
        if n < 1 or n > len(labels):
            raise TooManyModes(f"requested {n} basis fields, {len(labels)} available")
        labels = labels[:n]
        self.cfg = cfg
        self.n = n
        self.k = np.array([lab[1] for lab in labels], dtype=np.int64).reshape(n, cfg.d)
        self.pol_index = np.array([lab[2] for lab in labels])
        self.is_sin = np.array([not _in_upper_half(lab[1]) for lab in labels])
        self.kappa = np.where(self.is_sin[:, None], -self.k, self.k)
        self.pol = np.array([polarizations(kap)[pi - 1] for kap, pi in zip(self.kappa, self.pol_index)])
        self.eigenvalues = cfg.lambda1 * np.sum(self.k.astype(float) ** 2, axis=1)
        self.c = np.sqrt(2.0 / cfg.volume)
        # w = 1 for cosine fields, -i for sine fields
        self.w = np.where(self.is_sin, -1j, 1.0 + 0j)
        self._nidx = tuple(np.mod(self.kappa, cfg.N).T)
        self._nidx_neg = tuple(np.mod(-self.kappa, cfg.N).T)
        self._maps = {}

    def __len__(self):
        return self.n

    def labels(self):
        return [
            BasisIndex(j + 1, tuple(int(x) for x in self.k[j]), int(self.pol_index[j]),
                       "sin" if self.is_sin[j] else "cos", float(self.eigenvalues[j]))
            for j in range(self.n)
        ]

    # -- coordinates <-> fields ------------------------------------------
    def coords(self, u: SpectralField):
        """H inner products ``(u, e_j)``, shape ``batch + (n,)``."""
        if u.cfg != self.cfg:
            raise ShapeMismatch("field and basis live on different grids")
        # u at each kappa: shape batch + (d, n)
        uk = u.coeffs[(Ellipsis, slice(None)) + self._nidx]
        proj = np.einsum("...an,na->...n", uk, self.pol)
        return self.cfg.volume * self.c * np.real(np.conj(self.w) * proj)

    def field(self, coords):
        """Field ``sum_j coords_j e_j`` (batched over leading axes)."""
        a = np.asarray(coords, dtype=float)
        if a.shape[-1] != self.n:
            raise ShapeMismatch(f"expected {self.n} coordinates, got {a.shape[-1]}")
        batch = a.shape[:-1]
        cfg = self.cfg
        out = np.zeros(batch + (cfg.d,) + cfg.shape, complex)
        amp = 0.5 * self.c * a * self.w  # batch + (n,)
        for comp in range(cfg.d):
            vals = amp * self.pol[:, comp]
            tgt = out[(Ellipsis, comp) + (slice(None),) * cfg.d]
            _scatter_add(tgt, self._nidx, vals)
            _scatter_add(tgt, self._nidx_neg, np.conj(vals))
        return SpectralField(out, cfg, True)

    def realize(self, j):
        """The single basis field with 1-based ordinal ``j``."""
        e = np.zeros(self.n)
        e[j - 1] = 1.0
        return self.field(e)

    def grid_maps(self, M=None):
        M = self.cfg.fine_N if M is None else int(M)
        if M not in self._maps:
            self._maps[M] = GridMaps(self, M)
        return self._maps[M]


def _scatter_add(target, index, vals):
    """``target[index] += vals`` along trailing axes with repeated indices."""
    nb = vals.ndim - 1
    flat = np.ravel_multi_index(index, target.shape[nb:])
    t = target.reshape((-1, int(np.prod(target.shape[nb:]))))
    np.add.at(t, (slice(None), flat), vals.reshape(t.shape[0], -1))
    target[...] = t.reshape(target.shape)


class GridMaps:
    """Sparse maps between coordinates and physical samples on an M grid.

    Coordinates are scattered into a truncated real-FFT half spectrum that
    keeps only the last-axis wavenumbers ``0..kmax``; transforms are then
    done axis by axis so the empty high modes cost nothing.  ``project``
    takes physical vector samples back to coordinates, which applies the
    Leray projection and the Galerkin truncation in one step.
    """

    def __init__(self, basis: GalerkinBasis, M: int):
        cfg = basis.cfg
        d = cfg.d
        if M % 2 or M < 2 * cfg.kmax + 1:
            raise ShapeMismatch(f"grid size {M} cannot hold the active modes")
        self.basis = basis
        self.M = M
        K = cfg.kmax + 1
        self.half_shape = (M,) * (d - 1) + (K,)
        hsize = int(np.prod(self.half_shape))
        self.hsize = hsize
        n = basis.n
        kap = basis.kappa
        pos = np.ravel_multi_index(tuple(np.mod(kap, M)[:, :-1].T) + (kap[:, -1],), self.half_shape)
        mirror = kap[:, -1] == 0
        neg = np.ravel_multi_index(tuple(np.mod(-kap, M)[:, :-1].T) + (np.zeros(n, int),), self.half_shape)
        amp = 0.5 * basis.c * basis.w * M**d  # value at kappa per unit coordinate
        two_pi_l = 2.0 * np.pi / cfg.L

        def build(vectors):
            rows, cols, vals = [], [], []
            for comp in range(vectors.shape[1]):
                v = amp * vectors[:, comp]
                rows += [comp * hsize + pos, comp * hsize + neg[mirror]]
                cols += [np.arange(n), np.arange(n)[mirror]]
                vals += [v, np.conj(v[mirror])]
            return sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(vectors.shape[1] * hsize, n),
            )

        if d == 2:
            curl = (kap[:, 0] * basis.pol[:, 1] - kap[:, 1] * basis.pol[:, 0])[:, None]
        else:
            curl = np.cross(kap, basis.pol)
        self.n_vort = curl.shape[1]
        self.u_scatter = build(basis.pol.astype(complex))
        self.w_scatter = build(1j * two_pi_l * curl.astype(complex))
        self.uw_scatter = sp.vstack([self.u_scatter, self.w_scatter]).tocsr()
        # coords_j = L^d c Re(conj(w) p . F_kappa) with F = rfft / M^d
        g = cfg.volume * basis.c * np.conj(basis.w) / M**d
        rows = np.concatenate([np.arange(n)] * d)
        cols = np.concatenate([comp * hsize + pos for comp in range(d)])
        vals = np.concatenate([g * basis.pol[:, comp] for comp in range(d)])
        self.gather = sp.csr_matrix((vals, (rows, cols)), shape=(n, d * hsize))
        self._lead_axes = tuple(range(2, 1 + d))
        self._last = 1 + d

    def _to_phys(self, scatter, coords):
        B = coords.shape[0]
        half = (scatter @ coords.T).T.reshape((B, -1) + self.half_shape)
        half = sfft.ifftn(half, axes=self._lead_axes, overwrite_x=True)
        return sfft.irfft(half, n=self.M, axis=self._last)

    def velocity(self, coords):
        """Physical velocity, shape ``(B, d) + (M,)*d``."""
        return self._to_phys(self.u_scatter, np.atleast_2d(coords))

    def vorticity(self, coords):
        """Physical vorticity; one component in 2D, three in 3D."""
        return self._to_phys(self.w_scatter, np.atleast_2d(coords))

    def velocity_vorticity(self, coords):
        """Velocity and vorticity from a single batched transform."""
        both = self._to_phys(self.uw_scatter, np.atleast_2d(coords))
        d = self.basis.cfg.d
        return both[:, :d], both[:, d:]

    def project(self, phys):
        """Coordinates of ``P_n P phys`` for physical samples ``(B, d, M..)``."""
        B = phys.shape[0]
        K = self.half_shape[-1]
        half = sfft.rfft(phys, axis=self._last)[..., :K]
        half = sfft.fftn(half, axes=self._lead_axes, overwrite_x=True).reshape(B, -1)
        return np.real(self.gather @ half.T).T


@lru_cache(maxsize=32)
def galerkin_basis(cfg: TorusConfig, n: int | None = None) -> GalerkinBasis:
    """Cached :class:`GalerkinBasis` for ``(cfg, n)``."""
    return GalerkinBasis(cfg, n)


def enumerate_basis(cfg: TorusConfig, n: int):
    """First ``n`` basis fields as :class:`BasisIndex` records with fields.

    Raises
    ------
    TooManyModes
        If fewer than ``n`` active modes exist.
    """
    b = galerkin_basis(cfg, None)
    if n < 1 or n > b.n:
        raise TooManyModes(f"requested {n} basis fields, {b.n} available")
    out = []
    for lab in b.labels()[:n]:
        e = b.realize(lab.ordinal)
        out.append(BasisIndex(lab.ordinal, lab.k, lab.polarization, lab.kind, lab.eigenvalue, e))
    return out
