"""Run configuration, orchestration and the reproducibility manifest.

Configs are flat ``key = value`` text with dotted two-level keys such as
``torus.N = 32``; ``#`` starts a comment.  A few bare keys (``d``, ``N``,
``mu``, ``T``, ``dt``, ``driver``, ``h``...) are accepted as aliases.
Every default applied is echoed into the resolved config and the
manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis as an
from .basis import galerkin_basis
from .errors import CBFeDError, RegimeError, SchemaError
from .integrator import SimConfig, derive_seed, simulate, simulate_ensemble
from .noise import AffineMap, KickFamily, NoiseSpec
from .operators import ActiveTerms, PhysParams
from .spectral import SpectralField, TorusConfig, random_field, taylor_green, write_snapshot

__all__ = [
    "SCHEMA_VERSION",
    "Plan",
    "RunManifest",
    "RunResult",
    "parse_config",
    "parse_config_text",
    "build_sim_config",
    "run_experiment",
    "verify_artifacts",
    "output_root",
    "sweep_seed",
]

SCHEMA_VERSION = 1
OUTPUT_ENV = "CBFED_OUTPUT_ROOT"
SWEEP_SEED_OFFSET = 1 << 40


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(conv):
    def parse(s):
        s = str(s).replace(";", ",").strip()
        return tuple(conv(x) for x in s.replace(" ", ",").split(",") if x) if s else ()
    return parse


def _opt(conv):
    def parse(s):
        return None if str(s).strip().lower() in ("", "none", "auto") else conv(s)
    return parse


def _text(s):
    return str(s).strip()

# key -> (parser, default); ``None`` default means optional
_SCHEMA = {
    "schema.version": (int, SCHEMA_VERSION),
    "torus.d": (int, 2),
    "torus.L": (float, 2.0 * math.pi),
    "torus.N": (int, 32),
    "torus.dealias": (float, 2.0 / 3.0),
    "torus.oversample": (float, 1.5),
    "physics.mu": (float, 1.0),
    "physics.beta": (float, 1.0),
    "physics.alpha": (float, 0.0),
    "physics.r": (float, 3.0),
    "physics.q": (float, 1.0),
    "time.T": (float, None),
    "time.dt": (float, None),
    "run.driver": (_text, "deterministic"),
    "run.seed": (int, 0),
    "run.paths": (int, 1),
    "run.n_galerkin": (_opt(int), None),
    "run.n_obs": (int, 8),
    "run.snapshot_every": (_opt(int), None),
    "run.chunk_size": (int, 256),
    "run.blowup_factor": (float, 1e6),
    "run.record_lp_norms": (_bool, True),
    "terms.stokes": (_bool, True),
    "terms.convective": (_bool, True),
    "terms.absorption": (_bool, True),
    "terms.pumping": (_bool, True),
    "terms.forcing": (_bool, True),
    "initial.kind": (_text, "taylor-green"),
    "initial.amplitude": (float, 1.0),
    "initial.mode": (int, 1),
    "initial.seed": (int, 0),
    "initial.slope": (float, 1.0),
    "noise.m": (int, 0),
    "noise.amplitude": (float, 0.0),
    "noise.modes": (_list(int), ()),
    "noise.gain": (float, 0.0),
    "noise.symbol": (_text, "identity"),
    "forcing.amplitude": (float, 0.0),
    "forcing.mode": (int, 1),
    "forcing.gain": (float, 0.0),
    "kicks.eps": (float, 0.2),
    "kicks.atoms": (_text, "-1:0.5,1:0.5"),
    "kicks.eps0": (float, 1.0),
    "kicks.rate_cap": (float, 1e7),
    "plan.kind": (_text, "single"),
    "sweep.param": (_text, ""),
    "sweep.values": (_list(float), ()),
    "sweep.reference": (_text, "gaussian"),
    "analysis.functionals": (_list(str), ("coef:1", "coef2:1", "energy")),
    "analysis.t_star": (_opt(float), None),
    "analysis.p_order": (_opt(float), None),
    "analysis.bootstrap": (int, 200),
    "check.energy_residual_max": (_opt(float), None),
    "check.monotone_energy": (_bool, False),
    "check.weak_gap": (_bool, False),
    "check.moment_band": (_opt(float), None),
    "check.min_order": (_opt(float), None),
    "output.name": (_text, ""),
}

_ALIASES = {
    "d": "torus.d", "L": "torus.L", "N": "torus.N",
    "mu": "physics.mu", "beta": "physics.beta", "alpha": "physics.alpha",
    "r": "physics.r", "q": "physics.q", "T": "time.T", "dt": "time.dt",
    "driver": "run.driver", "seed": "run.seed", "paths": "run.paths",
    "h": "initial.kind", "eps": "kicks.eps",
}

_CHOICES = {
    "run.driver": ("deterministic", "gaussian", "jump"),
    "initial.kind": ("taylor-green", "random", "zero"),
    "plan.kind": ("single", "ensemble", "sweep"),
    "sweep.param": ("", "eps", "dt", "n"),
    "sweep.reference": ("gaussian",),
}


@dataclass
class Plan:
    """Resolved experiment: the base simulation plus what to run and check."""

    config: SimConfig
    values: dict
    name: str = "run"

    @property
    def kind(self):
        return self.values["plan.kind"]

    @property
    def paths(self):
        return self.values["run.paths"]

    def resolved_text(self):
        """Canonical ``key = value`` echo of every setting, defaults included."""
        return "".join(f"{k} = {_render(v)}\n" for k, v in sorted(self.values.items()))

    def config_hash(self):
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()

    def with_values(self, **overrides):
        vals = dict(self.values)
        for k, v in overrides.items():
            vals[_ALIASES.get(k, k.replace("__", "."))] = v
        return _plan_from_values(vals, self.name)


def _render(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    return str(v)


def _parse_lines(text):
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"line {lineno}: expected 'key = value'", field=f"line {lineno}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key.count(".") != 1:
            raise SchemaError("keys must have exactly one dot (section.name)", field=key)
        if key not in _SCHEMA:
            raise SchemaError("unknown key", field=key)
        if key in raw:
            raise SchemaError("duplicate key", field=key)
        raw[key] = val
    return raw


def _resolve(raw):
    vals = {}
    for key, (conv, default) in _SCHEMA.items():
        if key in raw:
            try:
                vals[key] = conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"cannot parse {raw[key]!r} ({exc})", field=key) from None
        else:
            vals[key] = default
    for key, choices in _CHOICES.items():
        if vals[key] not in choices:
            raise SchemaError(f"must be one of {choices}, got {vals[key]!r}", field=key)
    if vals["schema.version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {vals['schema.version']}", field="schema.version")
    for key in ("time.T", "time.dt"):
        if vals[key] is None:
            raise SchemaError("required", field=key)
    if vals["analysis.t_star"] is None:
        vals["analysis.t_star"] = vals["time.T"]
    if vals["analysis.p_order"] is None:
        vals["analysis.p_order"] = max(3.0, vals["physics.r"] + 1.0)
    m = vals["noise.m"]
    if not vals["noise.modes"]:
        vals["noise.modes"] = tuple(range(1, m + 1))
    if len(vals["noise.modes"]) != m:
        raise SchemaError(f"needs {m} entries", field="noise.modes")
    if vals["plan.kind"] == "sweep" and (not vals["sweep.param"] or not vals["sweep.values"]):
        raise SchemaError("a sweep needs sweep.param and sweep.values", field="sweep.param")
    if vals["run.paths"] < 1:
        raise SchemaError("must be positive", field="run.paths")
    _atoms(vals["kicks.atoms"])
    return vals


def _atoms(text):
    try:
        pairs = [tuple(float(x) for x in a.split(":")) for a in text.replace(";", ",").split(",") if a.strip()]
        if any(len(p) != 2 for p in pairs):
            raise ValueError
    except ValueError:
        raise SchemaError("expected 'z:weight,...'", field="kicks.atoms") from None
    return tuple(pairs)


def _symbol(text):
    if text in ("identity", ""):
        return None
    if text == "inverse-stokes":
        return lambda lam: np.where(lam > 0, lam.min(initial=1.0) / np.where(lam > 0, lam, 1.0), 0.0)
    try:
        return float(text)
    except ValueError:
        raise SchemaError("expected 'identity', 'inverse-stokes' or a number", field="noise.symbol") from None


def build_sim_config(vals: dict, **override) -> SimConfig:
    """Simulation config from resolved values; ``override`` replaces fields."""
    v = dict(vals)
    try:
        cfg = TorusConfig(v["torus.d"], v["torus.L"], v["torus.N"], v["torus.dealias"], v["torus.oversample"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc), field="torus") from None
    params = PhysParams(v["physics.mu"], v["physics.beta"], v["physics.alpha"], v["physics.r"], v["physics.q"])
    params.validate(cfg.d)
    basis = galerkin_basis(cfg, None)

    def mode_field(k, amp):
        if not 1 <= k <= basis.n:
            raise SchemaError(f"mode {k} outside 1..{basis.n}", field="noise.modes")
        e = np.zeros(basis.n)
        e[k - 1] = amp
        return basis.field(e)

    sym = _symbol(v["noise.symbol"])
    chans = tuple(
        AffineMap(mode_field(k, v["noise.amplitude"]) if v["noise.amplitude"] else None, v["noise.gain"], sym)
        for k in v["noise.modes"]
    )
    forcing = None
    if v["forcing.amplitude"] or v["forcing.gain"]:
        add = mode_field(v["forcing.mode"], v["forcing.amplitude"]) if v["forcing.amplitude"] else None
        forcing = AffineMap(add, v["forcing.gain"])
    noise = NoiseSpec(chans, forcing)
    kind = v["initial.kind"]
    if kind == "taylor-green":
        h = taylor_green(cfg, v["initial.amplitude"], v["initial.mode"])
    elif kind == "random":
        h = random_field(cfg, v["initial.seed"], slope=v["initial.slope"])
        h = SpectralField(h.coeffs * v["initial.amplitude"], cfg, True)
    else:
        h = SpectralField.zeros(cfg)
    driver = override.pop("driver", v["run.driver"])
    kicks = None
    if driver == "jump":
        try:
            kicks = KickFamily(noise, override.pop("eps", v["kicks.eps"]), _atoms(v["kicks.atoms"]),
                               v["kicks.eps0"], v["kicks.rate_cap"])
        except ValueError as exc:
            raise SchemaError(str(exc), field="kicks") from None
    override.pop("eps", None)
    terms = ActiveTerms(*(v[f"terms.{t}"] for t in ("stokes", "convective", "absorption", "pumping", "forcing")))
    kw = dict(
        cfg=cfg, params=params, noise=noise, h=h, T=v["time.T"], dt=v["time.dt"], driver=driver,
        kicks=kicks, n_galerkin=v["run.n_galerkin"], seed=v["run.seed"], terms=terms,
        blowup_factor=v["run.blowup_factor"], n_obs=v["run.n_obs"], record_lp_norms=v["run.record_lp_norms"],
        snapshot_every=v["run.snapshot_every"], chunk_size=v["run.chunk_size"],
    )
    kw.update(override)
    try:
        return SimConfig(**kw)
    except RegimeError:
        raise
    except CBFeDError as exc:
        raise SchemaError(str(exc), field="run") from None
    except ValueError as exc:
        raise SchemaError(str(exc), field="time" if "dt" in str(exc) or "T " in str(exc) else "run") from None


def _plan_from_values(vals, name):
    vals = _resolve({k: _render(x) for k, x in vals.items() if x is not None})
    return Plan(build_sim_config(vals), vals, vals["output.name"] or name)


def parse_config_text(text: str, name: str = "run") -> Plan:
    """Validated :class:`Plan` from config text.

    Raises
    ------
    SchemaError
        With the offending key in ``field``.
    RegimeError
        Naming the violated parameter gate.
    """
    vals = _resolve(_parse_lines(text))
    return Plan(build_sim_config(vals), vals, vals["output.name"] or name)


def parse_config(path) -> Plan:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"config file {path} not found", field="path")
    return parse_config_text(path.read_text(), name=path.stem)


# -- execution ----------------------------------------------------------------
@dataclass
class RunManifest:
    """Provenance of one experiment.

    ``artifacts`` maps file names to sha256 digests; ``wall_clock`` is the
    only field expected to change between identical runs.
    """

    config_hash: str
    seed: int
    version: str
    wall_clock: dict
    artifacts: dict
    seeds: dict
    config: dict
    checks: dict
    platform: str

    def to_json(self):
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class RunResult:
    out_dir: Path
    manifest: RunManifest
    checks: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.checks.values())


def output_root(root=None) -> Path:
    """Explicit root, else ``$CBFED_OUTPUT_ROOT``, else ``./cbfed_runs``."""
    return Path(root or os.environ.get(OUTPUT_ENV) or "cbfed_runs")


def _version():
    from . import __version__
    return __version__


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Sink:
    """Single writer for all artifacts of one run."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.dir / name

    def text(self, name, content):
        self.path(name).write_text(content)

    def checksums(self):
        return {f: _sha256(self.dir / f) for f in sorted(set(self.files))}


def _seeds(config, n):
    return [derive_seed(config.seed, i) for i in range(n)]


def sweep_seed(master: int, position: int) -> int:
    """Master seed of the ``position``-th ensemble of an eps sweep.

    Eps values are taken in descending order and the reference comes last.
    """
    return derive_seed(master, SWEEP_SEED_OFFSET + position)


def _fitted_order(steps, errors):
    steps, errors = np.asarray(steps, float), np.abs(np.asarray(errors, float))
    if steps.size < 2 or np.any(errors <= 0):
        return float("nan")
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])


def _max_residual(run):
    if hasattr(run, "path"):
        return max(float(np.max(np.abs(an.energy_residual(tr).residual))) for tr in run)
    return float(np.max(np.abs(an.energy_residual(run).residual)))


def _monotone(h2):
    h2 = np.atleast_2d(h2)
    return bool(np.all(h2[:, 1:] <= h2[:, :-1] * (1 + 1e-12)))


def _band(values, band):
    v = np.asarray(values, float)
    c = v.mean()
    return bool(np.all(np.abs(v - c) <= band * abs(c)))


def run_experiment(plan: Plan, root=None) -> RunResult:
    """Execute ``plan`` and write its artifacts and ``manifest.json``.

    Single runs write the trajectory, energy residual, jump log and final
    field; ensembles add moment summaries; an ``eps`` sweep runs one jump
    ensemble per value and a Brownian reference, then writes the weak-gap
    table and verdict file; ``dt`` and ``n`` sweeps write a per-value table
    with the fitted residual order.
    """
    t_start = time.time()
    v = plan.values
    sink = _Sink(output_root(root) / plan.name)
    base = plan.config
    checks = {}
    reports = {}
    seeds = {}
    kind = plan.kind

    def run_one(config, label):
        n = plan.paths
        seeds[label] = _seeds(config, n)
        if kind == "single" or (n == 1 and config.driver == "deterministic"):
            return simulate(config)
        return simulate_ensemble(config, n)

    if kind != "sweep":
        run = run_one(base, "base")
        tr = run.path(0) if hasattr(run, "path") else run
        an.write_trajectory_csv(tr, sink.path("trajectory.csv"))
        res = an.energy_residual(tr)
        an.write_energy_residual_csv(res, sink.path("energy_residual.csv"))
        if base.driver == "jump":
            an.write_jump_log_csv(run.jumps, sink.path("jumps.csv"))
        write_snapshot(sink.path("final.cbfd"), tr.final_field)
        reports["energy_residual_final"] = res.final
        if hasattr(run, "path"):
            summary = an.moment_report(run, v["analysis.p_order"], n_boot=v["analysis.bootstrap"], label="base")
            an.write_moment_csv([summary], sink.path("moments.csv"))
            reports["moments"] = summary
        if v["check.energy_residual_max"] is not None:
            checks["energy_residual_max"] = _max_residual(run) <= v["check.energy_residual_max"]
        if v["check.monotone_energy"]:
            checks["monotone_energy"] = _monotone(run.h2)
    elif v["sweep.param"] == "eps":
        # independent streams per ensemble so the combined standard errors hold
        ens = {}
        grid = sorted(v["sweep.values"], reverse=True)
        for j, eps in enumerate(grid):
            cfg_e = build_sim_config(v, driver="jump", eps=eps, seed=sweep_seed(base.seed, j))
            ens[eps] = run_one(cfg_e, f"eps={_render(eps)}")
        ref_cfg = build_sim_config(v, driver=v["sweep.reference"], seed=sweep_seed(base.seed, len(grid)))
        ref = run_one(ref_cfg, "reference")
        if len(ref) < 2 or any(len(e) < 2 for e in ens.values()):
            raise SchemaError("an eps sweep needs run.paths >= 2", field="run.paths")
        sums = [an.moment_report(ens[e], v["analysis.p_order"], n_boot=v["analysis.bootstrap"],
                                 label=f"eps={_render(e)}") for e in sorted(ens, reverse=True)]
        sums.append(an.moment_report(ref, v["analysis.p_order"], n_boot=v["analysis.bootstrap"], label="reference"))
        an.write_moment_csv(sums, sink.path("moments.csv"))
        gaps = an.weak_gap(ens, ref, v["analysis.functionals"], v["analysis.t_star"])
        an.write_weak_gap_csv(gaps, sink.path("weak_gap.csv"))
        an.write_verdict(gaps, sink.path("verdict.txt"))
        an.write_jump_height_csv(an.jump_height_stat(ens), sink.path("jump_heights.csv"))
        reports["weak_gap"] = gaps
        reports["moments"] = sums
        if v["check.weak_gap"]:
            checks["weak_gap"] = all(g.verdict == "consistent-with-convergence" for g in gaps)
        if v["check.moment_band"] is not None:
            checks["moment_band"] = _band([s.sup_h2 for s in sums[:-1]], v["check.moment_band"])
    else:
        param = v["sweep.param"]
        rows, sums = [], []
        for val in v["sweep.values"]:
            over = {"dt": val} if param == "dt" else {"n_galerkin": int(val)}
            cfg_s = build_sim_config(v, **over)
            label = f"{param}={_render(val if param == 'dt' else int(val))}"
            run = run_one(cfg_s, label)
            tr = run.path(0) if hasattr(run, "path") else run
            res = an.energy_residual(tr)
            row = [val, res.final, float(np.max(tr.h2))]
            if hasattr(run, "path"):
                s = an.moment_report(run, v["analysis.p_order"], n_boot=v["analysis.bootstrap"], label=label)
                sums.append(s)
                row[2] = s.sup_h2
            rows.append(row)
        an._write(sink.path("sweep.csv"), [param, "energy_residual_final", "sup_h2"], rows)
        if sums:
            an.write_moment_csv(sums, sink.path("moments.csv"))
        order = _fitted_order([r[0] for r in rows], [r[1] for r in rows]) if param == "dt" else float("nan")
        sink.text("sweep_summary.txt", f"param={param}\nfitted_order={_render(order)}\n")
        reports["fitted_order"] = order
        if v["check.min_order"] is not None:
            checks["min_order"] = bool(order >= v["check.min_order"])
        if v["check.moment_band"] is not None and sums:
            checks["moment_band"] = _band([s.sup_h2 for s in sums], v["check.moment_band"])

    sink.text("config.resolved", plan.resolved_text())
    if not all(checks.values()):
        failed = sorted(k for k, ok in checks.items() if not ok)
        sink.text("failures.json", json.dumps({"status": "checks-failed", "failed": failed}, indent=2) + "\n")
    t_end = time.time()
    manifest = RunManifest(
        config_hash=plan.config_hash(), seed=int(base.seed), version=_version(),
        wall_clock={"start": t_start, "seconds": t_end - t_start},
        artifacts=sink.checksums(), seeds=seeds,
        config={k: _render(x) for k, x in sorted(v.items())},
        checks=checks, platform=platform.platform(),
    )
    (sink.dir / "manifest.json").write_text(manifest.to_json() + "\n")
    return RunResult(sink.dir, manifest, checks, reports)


def verify_artifacts(out_dir) -> dict:
    """Compare stored checksums with the files on disk; ``{name: ok}``."""
    out_dir = Path(out_dir)
    m = RunManifest.load(out_dir / "manifest.json")
    return {name: (out_dir / name).is_file() and _sha256(out_dir / name) == digest
            for name, digest in m.artifacts.items()}
