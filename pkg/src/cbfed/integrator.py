"""Time stepping of the Galerkin-truncated Brownian and jump-driven systems.

The state is the vector of coordinates in the Stokes eigenbasis, so the
linear part is integrated exactly by the factor ``exp(-mu lambda dt)``.
Everything else is explicit at the step start:

    gaussian:  u' = E (u + dt N(u) + sum_i sigma_i(u) dW_i)
    jump:      u' = E (u + dt (N(u) - comp(u)) + eps sum_i Z_i sigma_i(u))

where ``N = -B - alpha C~ - beta C + F``, ``Z_i`` is the sum of the kick
sizes of channel ``i`` falling in the step and ``comp`` is the
compensator.  Ensembles advance many paths at once; each path owns a
random stream derived from the master seed, so results do not depend on
how paths are batched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .basis import GalerkinBasis, galerkin_basis
from .errors import BlowUp, TooManyModes
from .noise import KickFamily, NoiseSpec, brownian_increments, kick_sample
from .operators import ActiveTerms, PhysParams
from .spectral import SpectralField, TorusConfig

__all__ = [
    "DriftTerms",
    "SimConfig",
    "Trajectory",
    "Ensemble",
    "JumpLog",
    "derive_seed",
    "galerkin_project",
    "simulate",
    "simulate_ensemble",
    "step_gaussian",
    "step_jump",
]

DriftTerms = ActiveTerms
DRIVERS = ("deterministic", "gaussian", "jump")
_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def derive_seed(master: int, path_index: int) -> int:
    """Seed of path ``path_index``: ``master XOR (index * golden) mod 2**64``."""
    return (int(master) ^ ((int(path_index) * _GOLDEN) & _MASK64)) & _MASK64


@dataclass(eq=False)
class SimConfig:
    """Everything needed to reproduce a run.

    Parameters
    ----------
    cfg, params, noise :
        Torus, physical coefficients and noise maps.
    h : SpectralField
        Initial condition, projected onto the Galerkin space.
    T, dt : float
        Horizon and step; ``T / dt`` must be an integer.
    driver : {"deterministic", "gaussian", "jump"}
    kicks : KickFamily, optional
        Required for, and only allowed with, the jump driver.  Its ``base``
        must be ``noise``.
    n_galerkin : int, optional
        Number of basis fields kept; default is all active modes.
    terms : DriftTerms
        Switches for the drift contributions.
    n_obs : int
        Number of leading coordinates recorded at every step.
    record_lp_norms : bool
        Record ``int |u|**(r+1)`` and ``int |u|**(q+1)`` at every step.
    snapshot_every : int, optional
        Keep full coordinate vectors every this many steps.
    chunk_size : int
        Paths advanced together in ensembles.
    debug : bool
        Check reality and incompressibility of the state after every step.
    """

    cfg: TorusConfig
    params: PhysParams
    noise: NoiseSpec
    h: SpectralField
    T: float
    dt: float
    driver: str = "deterministic"
    kicks: KickFamily | None = None
    n_galerkin: int | None = None
    seed: int = 0
    terms: ActiveTerms = field(default_factory=ActiveTerms)
    blowup_factor: float = 1e6
    n_obs: int = 8
    record_lp_norms: bool = True
    snapshot_every: int | None = None
    chunk_size: int = 256
    debug: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def validate(self):
        if self.driver not in DRIVERS:
            raise ValueError(f"driver must be one of {DRIVERS}, got {self.driver!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < self.dt * (1 - 1e-12):
            raise ValueError("T must be at least dt")
        if abs(self.n_steps * self.dt - self.T) > 1e-9 * max(self.T, 1.0):
            raise ValueError("T must be an integer multiple of dt")
        if (self.kicks is not None) != (self.driver == "jump"):
            raise ValueError("kicks must be given exactly when driver is 'jump'")
        if self.kicks is not None and self.kicks.base is not self.noise:
            raise ValueError("kicks.base must be the configured noise spec")
        self.params.validate(self.cfg.d)
        h = self.h
        if h.cfg != self.cfg or h.batch_shape:
            raise ValueError("h must be a single field on the configured torus")
        scale = float(np.max(np.abs(h.coeffs), initial=0.0))
        if np.abs(h.coeffs[(slice(None),) + (0,) * self.cfg.d]).max() > 0:
            raise ValueError("h must have zero mean")
        if h.hermitian_residual() > 1e-10 * max(scale, 1e-300) or h.divergence_residual() > 1e-10:
            raise ValueError("h must be real and divergence-free")
        if self.n_galerkin is not None:
            galerkin_basis(self.cfg, self.n_galerkin)
        return self

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass
class JumpLog:
    """Flat kick log; ``path`` is 0 for single trajectories.

    ``kick_norm`` is ``||eps z sigma_channel(u(t-))||_H`` with the kick
    evaluated at the step-start state, as used by the scheme.
    """

    time: np.ndarray
    step: np.ndarray
    path: np.ndarray
    channel: np.ndarray
    z: np.ndarray
    kick_norm: np.ndarray

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        i = np.zeros(0, np.int64)
        return cls(z, i, i, i, z, z)

    def __len__(self):
        return int(self.time.size)

    def select(self, mask):
        return JumpLog(*(getattr(self, f)[mask] for f in ("time", "step", "path", "channel", "z", "kick_norm")))


@dataclass
class _Records:
    """Arrays with a leading path axis shared by trajectories and ensembles."""

    times: np.ndarray
    obs: np.ndarray
    h2: np.ndarray
    v2: np.ndarray
    lr1: np.ndarray
    lq1: np.ndarray
    fu: np.ndarray
    compu: np.ndarray
    sigu: np.ndarray
    gram: np.ndarray
    drift_inc: np.ndarray
    dW: np.ndarray | None
    jumps: JumpLog
    final: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    seeds: np.ndarray


class Trajectory:
    """One recorded path.

    Record arrays are indexed by record time ``times`` (``n_steps + 1``
    entries, starting at 0): ``h2`` and ``v2`` are squared H and V norms,
    ``lr1``/``lq1`` the integrals ``int |u|**(r+1)`` and ``int |u|**(q+1)``,
    ``fu = (F(u), u)``, ``sigu[:, i] = (sigma_i(u), u)``,
    ``gram[:, i, l] = (sigma_i(u), sigma_l(u))``, ``compu`` the pairing of
    the compensator with ``u`` and ``obs`` the first ``n_obs`` coordinates.
    Step arrays (``n_steps`` entries) hold the Brownian increments ``dW``
    and ``drift_inc``, the H norm of the non-kick part of each update.
    """

    def __init__(self, config: SimConfig, rec: _Records, index: int = 0):
        self.config = config
        self._rec = rec
        self._i = index

    def __getattr__(self, name):
        rec = object.__getattribute__(self, "_rec")
        if name in ("times", "snapshot_times"):
            return getattr(rec, name)
        if name == "jumps":
            j = rec.jumps
            return j.select(j.path == self._i)
        if name == "dW":
            return None if rec.dW is None else rec.dW[self._i]
        if name == "seed":
            return int(rec.seeds[self._i])
        if name in _Records.__dataclass_fields__:
            return getattr(rec, name)[self._i]
        raise AttributeError(name)

    @property
    def basis(self) -> GalerkinBasis:
        return galerkin_basis(self.config.cfg, self.config.n_galerkin)

    @property
    def final_field(self) -> SpectralField:
        return self.basis.field(self.final)

    def snapshot_field(self, k):
        return self.basis.field(self.snapshots[k])

    @property
    def h_norm(self):
        return np.sqrt(self.h2)


class Ensemble:
    """Paths of one configuration with stacked record arrays.

    Attribute access returns arrays with a leading path axis; ``jumps``
    is the flat log with a ``path`` column.
    """

    def __init__(self, config: SimConfig, rec: _Records):
        self.config = config
        self._rec = rec

    def __len__(self):
        return int(self._rec.h2.shape[0])

    def __getattr__(self, name):
        rec = object.__getattribute__(self, "_rec")
        if name in _Records.__dataclass_fields__:
            return getattr(rec, name)
        raise AttributeError(name)

    def path(self, i) -> Trajectory:
        if not 0 <= i < len(self):
            raise IndexError(i)
        return Trajectory(self.config, self._rec, i)

    __getitem__ = path

    def __iter__(self):
        return (self.path(i) for i in range(len(self)))


class _System:
    """Coordinate form of a configuration, shared by all its paths."""

    def __init__(self, config: SimConfig):
        c = config
        self.config = c
        self.basis = galerkin_basis(c.cfg, c.n_galerkin)
        self.n = self.basis.n
        self.lam = self.basis.eigenvalues
        p = c.params
        t = c.terms
        self.mu = p.mu if t.stokes else 0.0
        self.E = np.exp(-self.mu * self.lam * c.dt)
        cn = c.noise.coordinates(self.basis)
        self.add, self.mult = cn.add, cn.mult
        self.f_add = cn.f_add if t.forcing else np.zeros(self.n)
        self.f_mult = cn.f_mult if t.forcing else np.zeros(self.n)
        self.m = c.noise.m
        self.conv = t.convective
        self.absorb = p.beta if t.absorption else 0.0
        self.pump = p.alpha if t.pumping else 0.0
        self.r, self.q = float(p.r), float(p.q)
        self.needs_grid = self.conv or self.absorb != 0 or self.pump != 0 or c.record_lp_norms
        self.gm = self.basis.grid_maps(c.cfg.fine_N) if self.needs_grid else None
        self.vol = c.cfg.volume
        self.h0 = self.basis.coords(c.h)
        self.threshold = c.blowup_factor * (1.0 + float(np.sqrt(np.sum(self.h0**2))))
        if c.kicks is not None:
            self.eps = c.kicks.eps
            self.comp = c.kicks.first_moment / c.kicks.eps
        else:
            self.eps = 0.0
            self.comp = 0.0

    # -- nonlinear terms -------------------------------------------------
    def nonlinear(self, c):
        """``-B - alpha C~ - beta C`` in coordinates and the L^p integrals."""
        B = c.shape[0]
        nan = np.full(B, np.nan)
        if not self.needs_grid:
            return np.zeros_like(c), nan, nan
        gm = self.gm
        d = self.config.cfg.d
        if self.conv:
            vel, vort = gm.velocity_vorticity(c)
        else:
            vel = gm.velocity(c)
        mag2 = np.einsum("bi...,bi...->b...", vel, vel)
        prod = None
        if self.conv:
            if d == 2:
                w = vort[:, 0]
                prod = np.stack([-w * vel[:, 1], w * vel[:, 0]], axis=1)
            else:
                prod = np.cross(vort, vel, axis=1)
        for coef, s in ((self.absorb, self.r), (self.pump, self.q)):
            if coef != 0:
                term = coef * _pow_half(mag2, s - 1)[:, None] * vel
                prod = term if prod is None else prod + term
        out = -gm.project(prod) if prod is not None else np.zeros_like(c)
        sp = tuple(range(1, 1 + d))
        if self.config.record_lp_norms:
            lr1 = self.vol * np.mean(_pow_half(mag2, self.r + 1), axis=sp)
            lq1 = self.vol * np.mean(_pow_half(mag2, self.q + 1), axis=sp)
        else:
            lr1 = lq1 = nan
        return out, lr1, lq1

    # -- one step ----------------------------------------------------------
    def measure(self, c):
        """Record quantities at state ``c`` and the pieces of the update."""
        nl, lr1, lq1 = self.nonlinear(c)
        sig = self.add[None] + self.mult[None] * c[:, None, :]  # (B, m, n)
        F = self.f_add[None] + self.f_mult[None] * c
        rec = dict(
            h2=np.einsum("bn,bn->b", c, c),
            v2=np.einsum("bn,n,bn->b", c, self.lam, c),
            lr1=lr1,
            lq1=lq1,
            fu=np.einsum("bn,bn->b", F, c),
            sigu=np.einsum("bmn,bn->bm", sig, c),
            gram=np.einsum("bmn,bln->bml", sig, sig),
        )
        rec["compu"] = self.comp * rec["sigu"].sum(axis=1)
        return rec, nl + F, sig

    def advance(self, c, det, sig, dt, dW=None, Z=None, E=None):
        """Update from precomputed drift ``det`` and noise factors ``sig``."""
        E = self.E if E is None else E
        inc = dt * det
        if self.comp != 0 and Z is not None:
            inc = inc - dt * self.comp * sig.sum(axis=1)
        smooth = (E - 1.0) * c + E * inc
        noise = 0.0
        if dW is not None:
            noise = np.einsum("bm,bmn->bn", dW, sig)
        elif Z is not None:
            noise = self.eps * np.einsum("bm,bmn->bn", Z, sig)
        new = c + smooth + E * noise
        return new, np.sqrt(np.einsum("bn,bn->b", smooth, smooth))


def _pow_half(mag2, e):
    """``|u|**e`` from ``|u|**2``; integer half-powers avoid the square root."""
    h = e / 2.0
    if h == 0:
        return np.ones_like(mag2)
    if float(h).is_integer():
        return mag2 ** int(h)
    return mag2**h


_SYSTEMS: dict = {}


def _system(config: SimConfig) -> _System:
    key = id(config)
    hit = _SYSTEMS.get(key)
    if hit is not None and hit.config is config:
        return hit
    if len(_SYSTEMS) > 16:
        _SYSTEMS.clear()
    s = _System(config)
    _SYSTEMS[key] = s
    return s


def galerkin_project(obj, n):
    """Keep the components along ``e_1..e_n``.

    Accepts a :class:`SpectralField` (returns its projection) or a
    :class:`NoiseSpec` (returns the spec with all maps truncated).

    Raises
    ------
    TooManyModes
    """
    if isinstance(obj, NoiseSpec):
        _check_noise_size(obj, n)
        t = n if obj.truncation is None else min(n, obj.truncation)
        return NoiseSpec(obj.channels, obj.forcing, t)
    b = galerkin_basis(obj.cfg, n)
    return b.field(b.coords(obj))


def _check_noise_size(spec, n):
    if n < 1:
        raise TooManyModes("n must be positive")
    for mp in list(spec.channels) + ([spec.forcing] if spec.forcing else []):
        if mp.additive is not None:
            galerkin_basis(mp.additive.cfg, n)
            return


# -- noise tapes -----------------------------------------------------------
def _gaussian_tape(rng, n_steps, m, dt):
    return rng.standard_normal((n_steps, m)) * np.sqrt(dt)


def _kick_tape(fam, rng, n_steps, dt):
    horizon = n_steps * dt
    stream = kick_sample(fam, rng, (0.0, horizon), budget_time=horizon)
    step = np.clip(np.ceil(stream.times / dt).astype(np.int64) - 1, 0, n_steps - 1)
    return stream, step


# -- drivers -----------------------------------------------------------------
def _run(config: SimConfig, path_ids):
    """Advance the given paths together; returns a :class:`_Records`."""
    sysm = _system(config)
    c0 = config
    S = c0.n_steps
    dt = c0.dt
    B = len(path_ids)
    m = sysm.m
    n_obs = min(c0.n_obs, sysm.n)
    seeds = np.array([derive_seed(c0.seed, i) for i in path_ids], dtype=np.uint64)

    dW = None
    Z = None
    jlog = JumpLog.empty()
    if c0.driver == "gaussian":
        dW = np.empty((B, S, m))
        for b, s in enumerate(seeds):
            dW[b] = _gaussian_tape(np.random.default_rng(int(s)), S, m, dt)
    elif c0.driver == "jump":
        Z = np.zeros((B, S, m))
        parts = []
        for b, s in enumerate(seeds):
            stream, step = _kick_tape(c0.kicks, np.random.default_rng(int(s)), S, dt)
            np.add.at(Z[b], (step, stream.channels), stream.z)
            parts.append((stream, step, np.full(len(stream), path_ids[b], np.int64)))
        if parts:
            jlog = JumpLog(
                np.concatenate([p[0].times for p in parts]),
                np.concatenate([p[1] for p in parts]),
                np.concatenate([p[2] for p in parts]),
                np.concatenate([p[0].channels for p in parts]).astype(np.int64),
                np.concatenate([p[0].z for p in parts]),
                np.zeros(sum(len(p[0]) for p in parts)),
            )

    R = S + 1
    out = dict(
        h2=np.empty((B, R)), v2=np.empty((B, R)), lr1=np.empty((B, R)), lq1=np.empty((B, R)),
        fu=np.empty((B, R)), compu=np.empty((B, R)), sigu=np.empty((B, R, m)), gram=np.empty((B, R, m, m)),
    )
    obs = np.empty((B, R, n_obs))
    drift_inc = np.empty((B, S))
    every = c0.snapshot_every
    snap_steps = list(range(0, S + 1, every)) if every else []
    snaps = np.empty((B, len(snap_steps), sysm.n))
    c = np.repeat(sysm.h0[None], B, axis=0)
    for k in range(R):
        rec, det, sig = sysm.measure(c)
        for key, arr in out.items():
            arr[:, k] = rec[key]
        obs[:, k] = c[:, :n_obs]
        if every and k % every == 0:
            snaps[:, k // every] = c
        if k == S:
            break
        c, dinc = sysm.advance(
            c, det, sig, dt,
            dW=None if dW is None else dW[:, k],
            Z=None if Z is None else Z[:, k],
        )
        drift_inc[:, k] = dinc
        if c0.debug:
            _check_invariants(sysm, c, (k + 1) * dt)
        bad = ~np.isfinite(c).all(axis=1) | (np.einsum("bn,bn->b", c, c) > sysm.threshold**2)
        if np.any(bad):
            t = (k + 1) * dt
            raise BlowUp(f"H norm exceeded {sysm.threshold:.3g} at t={t:.6g}", time=t)
    if len(jlog):
        rows = jlog.path - path_ids[0]  # path ids are contiguous
        g = out["gram"][rows, jlog.step, jlog.channel, jlog.channel]
        jlog.kick_norm = sysm.eps * np.abs(jlog.z) * np.sqrt(np.maximum(g, 0.0))
    return _Records(
        times=np.arange(R) * dt, obs=obs, dW=dW, drift_inc=drift_inc, jumps=jlog, final=c,
        snapshot_times=np.array(snap_steps, float) * dt, snapshots=snaps, seeds=seeds, **out,
    )


def _check_invariants(sysm, c, t, tol=1e-10):
    """Debug check that the stepped fields stay real and divergence-free."""
    f = sysm.basis.field(c)
    scale = max(float(np.abs(f.coeffs).max(initial=0.0)), 1e-300)
    if f.hermitian_residual() > tol * scale or f.divergence_residual() > tol:
        raise AssertionError(f"field invariants violated at t={t:.6g}")


def _merge(parts):
    first = parts[0]
    if len(parts) == 1:
        return first
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    jl = [p.jumps for p in parts]
    jumps = JumpLog(*(np.concatenate([getattr(j, f) for j in jl])
                      for f in ("time", "step", "path", "channel", "z", "kick_norm")))
    return _Records(
        times=first.times, obs=cat("obs"), h2=cat("h2"), v2=cat("v2"), lr1=cat("lr1"), lq1=cat("lq1"),
        fu=cat("fu"), compu=cat("compu"), sigu=cat("sigu"), gram=cat("gram"), drift_inc=cat("drift_inc"),
        dW=None if first.dW is None else cat("dW"), jumps=jumps, final=cat("final"),
        snapshot_times=first.snapshot_times, snapshots=cat("snapshots"), seeds=cat("seeds"),
    )


def simulate(config: SimConfig) -> Trajectory:
    """Run a single path (path index 0, so its seed is the master seed).

    Raises
    ------
    BlowUp
        With the failing time attached.
    RateBudgetExceeded
    """
    return Trajectory(config, _run(config, [0]), 0)


def simulate_ensemble(config: SimConfig, n_paths: int, *, chunk_size: int | None = None) -> Ensemble:
    """Run ``n_paths`` independent paths with seeds ``derive_seed(seed, i)``."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    size = chunk_size or config.chunk_size
    parts = [_run(config, list(range(a, min(a + size, n_paths)))) for a in range(0, n_paths, size)]
    return Ensemble(config, _merge(parts))


# -- single steps on fields --------------------------------------------------
def _field_step(u, dt, config, dW=None, Z=None):
    sysm = _system(config)
    c = sysm.basis.coords(u)[None]
    _, det, sig = sysm.measure(c)
    E = sysm.E if dt == config.dt else np.exp(-sysm.mu * sysm.lam * dt)
    new, _ = sysm.advance(c, det, sig, dt, dW=dW, Z=Z, E=E)
    if not np.all(np.isfinite(new)) or np.sum(new**2) > sysm.threshold**2:
        raise BlowUp("H norm exceeded the blow-up threshold")
    return sysm.basis.field(new[0])


def step_gaussian(u: SpectralField, t: float, dt: float, rng, config: SimConfig) -> SpectralField:
    """One exponential Euler-Maruyama step from ``u`` at time ``t``."""
    if config.driver != "gaussian":
        raise ValueError("config.driver must be 'gaussian'")
    dW = brownian_increments(rng, config.noise.m, dt)[None]
    return _field_step(u, dt, config, dW=dW)


def step_jump(u: SpectralField, t: float, dt: float, rng, config: SimConfig):
    """One step with kicks on ``(t, t + dt]`` aggregated at the step start.

    Returns
    -------
    (SpectralField, KickStream)
    """
    if config.driver != "jump":
        raise ValueError("config.driver must be 'jump'")
    stream = kick_sample(config.kicks, rng, (t, t + dt), budget_time=config.T)
    Z = np.zeros((1, config.noise.m))
    np.add.at(Z[0], stream.channels, stream.z)
    return _field_step(u, dt, config, Z=Z), stream
