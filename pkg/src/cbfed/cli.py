"""Command line entry point: ``run``, ``check``, ``sweep`` and ``report``.

Exit codes: 0 when the run finished and every configured check passed,
1 when a check failed, 2 on configuration or runtime errors.  Errors are
also printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import CBFeDError
from .runner import RunManifest, output_root, parse_config, run_experiment, verify_artifacts

__all__ = ["main", "build_parser"]


def build_parser():
    ap = argparse.ArgumentParser(prog="cbfed", description="Stochastic CBFeD simulator and diagnostics")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the experiment described by a config file")
    p.add_argument("config")
    p.add_argument("--output-root", default=None, help="defaults to $CBFED_OUTPUT_ROOT or ./cbfed_runs")
    p = sub.add_parser("check", help="validate a config and print it with defaults filled in")
    p.add_argument("config")
    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("config")
    p.add_argument("--param", required=True, choices=("eps", "dt", "n"))
    p.add_argument("--values", required=True, nargs="+", type=float)
    p.add_argument("--output-root", default=None)
    p = sub.add_parser("report", help="summarize an artifact directory and verify its checksums")
    p.add_argument("artifact_dir")
    return ap


def _fail(kind, exc, out_dir=None):
    report = {"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)}
    field = getattr(exc, "field", None)
    if field:
        report["field"] = field
    time_ = getattr(exc, "time", None)
    if time_ is not None:
        report["time"] = time_
    text = json.dumps(report, sort_keys=True)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "failures.json").write_text(text + "\n")
    print(text, file=sys.stderr)
    return 2


def _summary(result):
    m = result.manifest
    print(f"artifacts: {result.out_dir}")
    print(f"config_hash: {m.config_hash}")
    for name, ok in sorted(result.checks.items()):
        print(f"check {name}: {'PASS' if ok else 'FAIL'}")
    return 0 if result.passed else 1


def _execute(plan, root):
    try:
        return _summary(run_experiment(plan, root))
    except CBFeDError as exc:
        return _fail("runtime", exc, output_root(root) / plan.name)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return _report(Path(args.artifact_dir))
    try:
        plan = parse_config(args.config)
        if args.command == "sweep":
            plan = plan.with_values(**{"plan.kind": "sweep", "sweep.param": args.param,
                                       "sweep.values": tuple(args.values)})
    except CBFeDError as exc:
        return _fail("config", exc)
    if args.command == "check":
        print(plan.resolved_text(), end="")
        print(f"# config_hash = {plan.config_hash()}")
        return 0
    return _execute(plan, args.output_root)


def _report(out_dir):
    mpath = out_dir / "manifest.json"
    if not mpath.is_file():
        print(json.dumps({"status": "error", "message": f"no manifest in {out_dir}"}), file=sys.stderr)
        return 2
    m = RunManifest.load(mpath)
    ok = verify_artifacts(out_dir)
    print(f"config_hash: {m.config_hash}")
    print(f"version: {m.version}  seed: {m.seed}")
    for name, good in sorted(ok.items()):
        print(f"artifact {name}: {'ok' if good else 'CHECKSUM MISMATCH'}")
    for name, passed in sorted(m.checks.items()):
        print(f"check {name}: {'PASS' if passed else 'FAIL'}")
    verdict = out_dir / "verdict.txt"
    if verdict.is_file():
        print(verdict.read_text(), end="")
    return 0 if all(ok.values()) and all(m.checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
