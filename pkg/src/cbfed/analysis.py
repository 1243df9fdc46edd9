"""Diagnostics on recorded paths: energy balance, moments, weak gaps,
increment and jump-height statistics, and their CSV exports.

Time integrals use the left-point rule on the record grid, matching the
explicit scheme.  All functions are read-only on their inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InsufficientRecords, MismatchedConfigs
from .integrator import Ensemble, JumpLog, Trajectory

__all__ = [
    "EnergyResidual",
    "EnsembleSummary",
    "Functional",
    "WeakGapReport",
    "IncrementStat",
    "JumpHeightRow",
    "energy_residual",
    "moment_report",
    "weak_gap",
    "increment_stat",
    "aldous_statistic",
    "jump_height_stat",
    "parse_functional",
    "write_trajectory_csv",
    "write_jump_log_csv",
    "write_energy_residual_csv",
    "write_moment_csv",
    "write_weak_gap_csv",
    "write_verdict",
    "write_jump_height_csv",
]


def _cum_left(values, dt):
    """``[0, f0 dt, (f0 + f1) dt, ...]`` along the last axis."""
    out = np.zeros(values.shape)
    out[..., 1:] = np.cumsum(values[..., :-1], axis=-1) * dt
    return out


@dataclass
class EnergyResidual:
    """Energy balance defect at each record time with its ingredients."""

    times: np.ndarray
    residual: np.ndarray
    terms: dict = field(default_factory=dict)

    @property
    def final(self):
        return float(self.residual[-1])


def _need(arr, name):
    if arr is None or not np.all(np.isfinite(arr)):
        raise InsufficientRecords(f"trajectory lacks finite '{name}' records")
    return arr


def _jump_pairings(jumps: JumpLog, sigu, gram, eps):
    """Per-kick ``||kick||**2`` and ``(kick, u(t-))`` for kicks applied in log order.

    Within a step every kick is evaluated at the step-start state, and the
    pre-kick state is that state plus the earlier kicks of the same step.
    """
    K = len(jumps)
    if K == 0:
        return np.zeros(0), np.zeros(0)
    order = np.lexsort((jumps.time, jumps.step))
    step = jumps.step[order]
    ch = jumps.channel[order]
    z = jumps.z[order]
    m = sigu.shape[-1]
    onehot = np.zeros((K, m))
    onehot[np.arange(K), ch] = z
    csum = np.cumsum(onehot, axis=0)
    first = np.r_[True, step[1:] != step[:-1]]
    start = np.maximum.accumulate(np.where(first, np.arange(K), 0))
    before = csum - onehot - np.where(start[:, None] > 0, csum[start - 1], 0.0)
    g_row = gram[step, ch]  # (K, m)
    quad = eps**2 * z**2 * g_row[np.arange(K), ch]
    pair = eps * z * sigu[step, ch] + eps**2 * z * np.sum(g_row * before, axis=1)
    return quad, pair


def energy_residual(traj: Trajectory, params=None, spec=None, fam=None) -> EnergyResidual:
    """Residual of the Ito energy balance along a recorded path.

    ``residual(t) = ||u(t)||**2 + 2 mu int ||u||_V**2 + 2 beta int ||u||_{r+1}**(r+1)
    - ||h||**2 + 2 alpha int ||u||_{q+1}**(q+1) - 2 int (F(u), u)
    - QV(t) - M(t)`` where ``QV`` and ``M`` are the quadratic-variation and
    martingale terms rebuilt from the logged randomness (Brownian
    increments or kicks).  Terms switched off in the run are omitted.
    ``params``, ``spec`` and ``fam`` default to those of the run.

    Raises
    ------
    InsufficientRecords
    """
    cfgr = traj.config
    p = params or cfgr.params
    fam = fam if fam is not None else cfgr.kicks
    t = cfgr.terms
    dt = cfgr.dt
    h2 = _need(traj.h2, "h2")
    res = h2 - h2[0]
    terms = {}
    if t.stokes:
        terms["viscous"] = 2 * p.mu * _cum_left(_need(traj.v2, "v2"), dt)
    if t.absorption:
        terms["absorption"] = 2 * p.beta * _cum_left(_need(traj.lr1, "lr1"), dt)
    if t.pumping and p.alpha != 0:
        terms["pumping"] = 2 * p.alpha * _cum_left(_need(traj.lq1, "lq1"), dt)
    if t.forcing:
        terms["forcing"] = -2 * _cum_left(_need(traj.fu, "fu"), dt)
    driver = cfgr.driver
    S = h2.size - 1
    if driver == "gaussian":
        dW = traj.dW
        if dW is None:
            raise InsufficientRecords("gaussian trajectory lacks Brownian increments")
        qv = np.trace(traj.gram, axis1=-2, axis2=-1)
        terms["quadratic_variation"] = -_cum_left(qv, dt)
        mart = np.zeros(S + 1)
        mart[1:] = np.cumsum(2 * np.sum(traj.sigu[:-1] * dW, axis=1))
        terms["martingale"] = -mart
    elif driver == "jump":
        if fam is None:
            raise InsufficientRecords("jump trajectory needs its kick family")
        jumps = traj.jumps
        quad, pair = _jump_pairings(jumps, traj.sigu, traj.gram, fam.eps)
        order = np.lexsort((jumps.time, jumps.step))
        step = jumps.step[order]
        qv = np.zeros(S + 1)
        mt = np.zeros(S + 1)
        np.add.at(qv, step + 1, quad)
        np.add.at(mt, step + 1, 2 * pair)
        terms["quadratic_variation"] = -np.cumsum(qv)
        comp = 2 * _cum_left(_need(traj.compu, "compu"), dt)
        terms["martingale"] = -(np.cumsum(mt) - comp)
    for v in terms.values():
        res = res + v
    return EnergyResidual(traj.times.copy(), res, terms)


# -- moments -----------------------------------------------------------------
def _bootstrap_se(values, n_boot, seed):
    """Bootstrap standard errors of column means.

    Columns are sorted first so the result does not depend on path order.
    """
    v = np.sort(np.asarray(values, float).reshape(values.shape[0], -1), axis=0)
    P = v.shape[0]
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, P, size=(n_boot, P))
    counts = np.zeros((n_boot, P))
    for b in range(n_boot):
        counts[b] = np.bincount(idx[b], minlength=P)
    means = counts @ v / P
    return means.std(axis=0, ddof=1).reshape(values.shape[1:])


@dataclass
class EnsembleSummary:
    """Monte Carlo moment estimates with bootstrap standard errors.

    ``sup_h2p`` estimates ``E sup_t ||u||_H**(2p)``, ``v_int_p`` estimates
    ``E (int ||u||_V**2 dt)**p`` and ``lr_int_p`` estimates
    ``E (int ||u||_{r+1}**(r+1) dt)**p``; ``sup_h2`` is the ``p = 1``
    version of the first.  ``mean`` and ``second`` are the moments of the
    recorded coordinates at record index ``t_index``.
    """

    p: float
    n_paths: int
    time: float
    sup_h2p: float
    sup_h2p_se: float
    v_int_p: float
    v_int_p_se: float
    lr_int_p: float
    lr_int_p_se: float
    sup_h2: float
    sup_h2_se: float
    mean: np.ndarray
    mean_se: np.ndarray
    second: np.ndarray
    second_se: np.ndarray
    label: str = ""


def moment_report(ensemble: Ensemble, p_order: float | None = None, *, t_index: int = -1,
                  n_boot: int = 200, seed: int = 0, label: str = "") -> EnsembleSummary:
    """Moment estimates over an ensemble (``p`` defaults to ``max(3, r+1)``)."""
    P = len(ensemble)
    if P < 2:
        raise ValueError("moment_report needs at least two paths")
    cfg = ensemble.config
    p = float(p_order) if p_order is not None else max(3.0, float(cfg.params.r) + 1.0)
    dt = cfg.dt
    h2 = ensemble.h2
    sup = h2.max(axis=1)
    vint = np.sum(ensemble.v2[:, :-1], axis=1) * dt
    lr = ensemble.lr1
    lint = np.sum(lr[:, :-1], axis=1) * dt if np.all(np.isfinite(lr)) else np.full(P, np.nan)
    obs = ensemble.obs[:, t_index, :]
    sec = obs[:, :, None] * obs[:, None, :]
    k = obs.shape[1]
    cols = np.column_stack([sup**p, vint**p, lint**p, sup, obs, sec.reshape(P, -1)])
    means = cols.mean(axis=0)
    se = _bootstrap_se(cols, n_boot, seed)
    return EnsembleSummary(
        p=p, n_paths=P, time=float(ensemble.times[t_index]),
        sup_h2p=means[0], sup_h2p_se=se[0], v_int_p=means[1], v_int_p_se=se[1],
        lr_int_p=means[2], lr_int_p_se=se[2], sup_h2=means[3], sup_h2_se=se[3],
        mean=means[4:4 + k], mean_se=se[4:4 + k],
        second=means[4 + k:].reshape(k, k), second_se=se[4 + k:].reshape(k, k), label=label,
    )


# -- weak gaps ---------------------------------------------------------------
@dataclass(frozen=True)
class Functional:
    """Test function of the state at one time.

    ``kind`` is ``coef`` for ``(u, e_k)``, ``coef2`` for ``(u, e_k)**2``,
    ``prod`` for ``(u, e_k)(u, e_j)`` and ``energy`` for ``||u||_H**2``.
    """

    kind: str
    k: int = 0
    j: int = 0

    @property
    def name(self):
        if self.kind == "energy":
            return "energy"
        if self.kind == "prod":
            return f"prod:{self.k}:{self.j}"
        return f"{self.kind}:{self.k}"

    def values(self, ens: Ensemble, t_index: int):
        if self.kind == "energy":
            return ens.h2[:, t_index]
        n_obs = ens.obs.shape[-1]
        for idx in (self.k, self.j if self.kind == "prod" else self.k):
            if not 1 <= idx <= n_obs:
                raise InsufficientRecords(f"coordinate {idx} not recorded (n_obs={n_obs})")
        a = ens.obs[:, t_index, self.k - 1]
        if self.kind == "coef":
            return a
        if self.kind == "coef2":
            return a * a
        return a * ens.obs[:, t_index, self.j - 1]


def parse_functional(text) -> Functional:
    """``"coef:1"``, ``"coef2:1"``, ``"prod:1:2"`` or ``"energy"``."""
    if isinstance(text, Functional):
        return text
    parts = str(text).strip().split(":")
    kind = parts[0]
    try:
        if kind == "energy" and len(parts) == 1:
            return Functional("energy")
        if kind in ("coef", "coef2") and len(parts) == 2:
            return Functional(kind, int(parts[1]))
        if kind == "prod" and len(parts) == 3:
            return Functional(kind, int(parts[1]), int(parts[2]))
    except ValueError:
        pass
    raise ValueError(f"cannot parse functional {text!r}")


@dataclass
class WeakGapReport:
    """``|E f(u_eps(t*)) - E f(u(t*))|`` across an eps grid (descending)."""

    functional: str
    t_star: float
    eps: np.ndarray
    gap: np.ndarray
    se_jump: np.ndarray
    se_ref: float
    se: np.ndarray
    verdict: str
    monotone: bool
    last_within: bool


def _se(v):
    return float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0


def _same(a, b):
    ca, cb = a.config, b.config
    if ca.cfg != cb.cfg or ca.params != cb.params or ca.terms != cb.terms:
        return False
    if ca.dt != cb.dt or ca.T != cb.T or ca.n_galerkin != cb.n_galerkin:
        return False
    return bool(np.array_equal(ca.h.coeffs, cb.h.coeffs))


def weak_gap(ensembles: Mapping[float, Ensemble], reference: Ensemble,
             functionals: Sequence, t_star: float) -> list:
    """Weak-error table for each functional.

    The verdict is ``consistent-with-convergence`` when every gap is at
    most the previous one plus their combined standard error and the
    smallest-eps gap is within three combined standard errors of zero;
    otherwise ``inconclusive``.

    Raises
    ------
    MismatchedConfigs
        If the runs differ in anything but the driver, or ``t_star`` is
        not a record time.
    """
    eps = np.array(sorted(ensembles, reverse=True), float)
    ens = [ensembles[e] for e in sorted(ensembles, reverse=True)]
    for e in ens:
        if not _same(e, reference):
            raise MismatchedConfigs("ensembles differ in more than the driver")
    times = reference.times
    hit = np.flatnonzero(np.isclose(times, t_star, rtol=0, atol=1e-9 * max(1.0, abs(t_star))))
    if hit.size != 1:
        raise MismatchedConfigs(f"t*={t_star} is not a record time")
    ti = int(hit[0])
    out = []
    for f in map(parse_functional, functionals):
        ref = f.values(reference, ti)
        rm, rs = float(np.mean(ref)), _se(ref)
        gaps, sej = [], []
        for e in ens:
            v = f.values(e, ti)
            gaps.append(abs(float(np.mean(v)) - rm))
            sej.append(_se(v))
        gaps, sej = np.array(gaps), np.array(sej)
        se = np.sqrt(sej**2 + rs**2)
        mono = bool(np.all(gaps[1:] <= gaps[:-1] + np.sqrt(se[1:] ** 2 + se[:-1] ** 2)))
        last = bool(gaps[-1] <= 3 * se[-1])
        verdict = "consistent-with-convergence" if mono and last else "inconclusive"
        out.append(WeakGapReport(f.name, float(times[ti]), eps, gaps, sej, rs, se, verdict, mono, last))
    return out


# -- increments and jumps ----------------------------------------------------
@dataclass
class IncrementStat:
    """Increments ``||u(tau + delta) - u(tau)||_H`` over a grid of ``tau``.

    ``bound`` is the pathwise triangle bound: the drift parts of the steps
    in the window plus the norms of the kicks logged in it.
    """

    taus: np.ndarray
    increments: np.ndarray
    exceed_fraction: float
    max_increment: float
    bound: np.ndarray


def _snapshot_steps(traj_like):
    cfg = traj_like.config
    if not cfg.snapshot_every:
        raise InsufficientRecords("increment statistics need snapshots (snapshot_every)")
    return np.rint(traj_like.snapshot_times / cfg.dt).astype(np.int64)


def _window_index(traj_like, delta, tau_grid):
    dt = traj_like.config.dt
    steps = _snapshot_steps(traj_like)
    lag = int(round(delta / dt))
    if lag <= 0 or abs(lag * dt - delta) > 1e-9:
        raise ValueError("delta must be a positive multiple of dt")
    pos = {int(s): i for i, s in enumerate(steps)}
    if tau_grid is None:
        starts = [int(s) for s in steps if int(s) + lag in pos]
    else:
        starts = [int(round(t / dt)) for t in tau_grid]
    if any(s not in pos or s + lag not in pos for s in starts):
        raise InsufficientRecords("tau grid does not align with the snapshot times")
    a = np.array([pos[s] for s in starts], np.int64)
    b = np.array([pos[s + lag] for s in starts], np.int64)
    return np.array(starts, np.int64), lag, a, b


def increment_stat(traj: Trajectory, delta: float, eta: float, tau_grid=None) -> IncrementStat:
    """Aldous-type increment statistic on a deterministic grid of ``tau``."""
    starts, lag, a, b = _window_index(traj, delta, tau_grid)
    snaps = traj.snapshots
    inc = np.sqrt(np.sum((snaps[b] - snaps[a]) ** 2, axis=1))
    cum_drift = np.r_[0.0, np.cumsum(traj.drift_inc)]
    bound = cum_drift[starts + lag] - cum_drift[starts]
    j = traj.jumps
    if len(j):
        per_step = np.zeros(traj.drift_inc.size)
        np.add.at(per_step, j.step, j.kick_norm)
        cum_k = np.r_[0.0, np.cumsum(per_step)]
        bound = bound + cum_k[starts + lag] - cum_k[starts]
    dt = traj.config.dt
    return IncrementStat(starts * dt, inc, float(np.mean(inc > eta)) if inc.size else 0.0,
                         float(inc.max(initial=0.0)), bound)


def aldous_statistic(ensemble: Ensemble, delta: float, eta: float, tau_grid=None):
    """Fraction of ``(path, tau)`` pairs with increment above ``eta``, and per-tau fractions."""
    starts, lag, a, b = _window_index(ensemble, delta, tau_grid)
    snaps = ensemble.snapshots
    inc = np.sqrt(np.sum((snaps[:, b] - snaps[:, a]) ** 2, axis=2))
    per_tau = np.mean(inc > eta, axis=0)
    return float(np.mean(inc > eta)), per_tau


@dataclass(frozen=True)
class JumpHeightRow:
    """Largest realized jump for one eps; ``bound = eps z_max max ||sigma(u)||``."""

    eps: float
    max_jump: float
    n_kicks: int
    bound: float


def jump_height_stat(runs: Mapping[float, Ensemble | Trajectory]) -> list:
    """Per-eps maximum of ``||u(t) - u(t-)||_H`` from the kick logs, eps descending.

    Realized maxima lower-bound the supremum over jump sizes.
    """
    rows = []
    for eps in sorted(runs, reverse=True):
        run = runs[eps]
        j = run.jumps
        fam = run.config.kicks
        if fam is None:
            raise InsufficientRecords("jump_height_stat needs jump-driven runs")
        g = np.asarray(run.gram)
        sig_max = float(np.sqrt(np.max(np.diagonal(g, axis1=-2, axis2=-1), initial=0.0)))
        rows.append(JumpHeightRow(float(eps), float(j.kick_norm.max(initial=0.0)), len(j),
                                  float(eps) * fam.z_max * sig_max))
    return rows


# -- CSV exports -------------------------------------------------------------
def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def _write(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def write_trajectory_csv(traj: Trajectory, path):
    """Columns: time, h2, v2, lr1, lq1, fu, compu, sigu_<i>..., c_<k>...."""
    m = traj.sigu.shape[-1]
    k = traj.obs.shape[-1]
    header = ["time", "h2", "v2", "lr1", "lq1", "fu", "compu"] + [f"sigu_{i}" for i in range(m)] + [f"c_{j + 1}" for j in range(k)]
    rows = (
        [traj.times[n], traj.h2[n], traj.v2[n], traj.lr1[n], traj.lq1[n], traj.fu[n], traj.compu[n], *traj.sigu[n], *traj.obs[n]]
        for n in range(traj.times.size)
    )
    return _write(path, header, rows)


def write_jump_log_csv(log: JumpLog, path):
    """Columns: time, step, path, channel, z, kick_norm."""
    rows = zip(log.time, log.step, log.path, log.channel, log.z, log.kick_norm)
    return _write(path, ["time", "step", "path", "channel", "z", "kick_norm"], rows)


def write_energy_residual_csv(res: EnergyResidual, path):
    """Columns: time, residual."""
    return _write(path, ["time", "residual"], zip(res.times, res.residual))


def write_moment_csv(summaries: Sequence[EnsembleSummary], path):
    """One row per summary: label, p, n_paths, time and the estimates with errors."""
    header = ["label", "p", "n_paths", "time", "sup_h2p", "sup_h2p_se", "v_int_p", "v_int_p_se",
              "lr_int_p", "lr_int_p_se", "sup_h2", "sup_h2_se", "mean_c1", "mean_c1_se"]
    rows = (
        [s.label, s.p, s.n_paths, s.time, s.sup_h2p, s.sup_h2p_se, s.v_int_p, s.v_int_p_se,
         s.lr_int_p, s.lr_int_p_se, s.sup_h2, s.sup_h2_se, s.mean[0], s.mean_se[0]]
        for s in summaries
    )
    return _write(path, header, rows)


def write_weak_gap_csv(reports: Sequence[WeakGapReport], path):
    """Columns: functional, t_star, eps, gap, se_jump, se_ref, se_combined."""
    rows = (
        [r.functional, r.t_star, e, g, sj, r.se_ref, s]
        for r in reports
        for e, g, sj, s in zip(r.eps, r.gap, r.se_jump, r.se)
    )
    return _write(path, ["functional", "t_star", "eps", "gap", "se_jump", "se_ref", "se_combined"], rows)


def write_verdict(reports: Sequence[WeakGapReport], path):
    """``key=value`` lines: one verdict per functional and an overall line."""
    lines = [f"{r.functional}={r.verdict}" for r in reports]
    ok = all(r.verdict == "consistent-with-convergence" for r in reports)
    lines.append(f"overall={'consistent-with-convergence' if ok else 'inconclusive'}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def write_jump_height_csv(rows: Sequence[JumpHeightRow], path):
    """Columns: eps, max_jump, n_kicks, bound."""
    return _write(path, ["eps", "max_jump", "n_kicks", "bound"], ((r.eps, r.max_jump, r.n_kicks, r.bound) for r in rows))
