"""Command-line interface: run, sweep, verify, emit-config.

Exit codes are the machine contract: 0 success/bounded, 1 configuration
error, 2 non-finite simulation state (run) or any failed check (verify).
Stdout is human-oriented.  Every output file is written atomically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .acceptance import AcceptanceContext, check_names, run_checks
from .diagnostics import RunMetrics, compute_metrics
from .engine import run_simulation
from .errors import NonFiniteState, ParseError, PilotloopError, ValidationError
from .scenario import (
    ScenarioConfig,
    apply_overrides,
    builtin_747,
    load_config,
    save_config,
)
from .simlog import write_rows_atomic
from .sweep import sweep, write_sweep_csv

__all__ = ["main"]


def _default_out():
    return os.environ.get("ADAPTIVE_SIM_OUT", "out")


def _load_scenario(args):
    if args.scenario:
        cfg = load_config(args.scenario)
    else:
        cfg = builtin_747()
    if args.override:
        d = apply_overrides(cfg.to_dict(), args.override)
        cfg = ScenarioConfig.from_dict(d)
        cfg.validate()
    return cfg


def _config_hash(cfg):
    payload = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def _write_manifest(path, cfg, status, files):
    import scipy

    manifest = {
        "scenario": cfg.name,
        "config_sha256": _config_hash(cfg),
        "status": status,
        "files": files,
        "versions": {
            "pilotloop": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _metrics_csv(path, metrics):
    write_rows_atomic(path, RunMetrics.row_header(), [metrics.as_row()])


def cmd_run(args):
    try:
        cfg = _load_scenario(args)
    except (ParseError, ValidationError, PilotloopError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = args.out
    os.makedirs(out, exist_ok=True)
    run_csv = os.path.join(out, "run.csv")
    metrics_csv = os.path.join(out, "metrics.csv")
    manifest = os.path.join(out, "manifest.json")
    try:
        log = run_simulation(cfg)
    except NonFiniteState as exc:
        print(f"error: {exc}", file=sys.stderr)
        partial = getattr(exc, "partial", None)
        files = []
        if partial is not None and partial.n_samples:
            partial.write_csv(run_csv)
            _metrics_csv(metrics_csv, compute_metrics(partial))
            files = ["run.csv", "metrics.csv"]
        _write_manifest(manifest, cfg, "non-finite", files)
        return 2
    log.write_csv(run_csv)
    _metrics_csv(metrics_csv, compute_metrics(log))
    _write_manifest(manifest, cfg, "completed", ["run.csv", "metrics.csv"])
    m = compute_metrics(log)
    print(f"run complete: {log.n_samples} samples -> {run_csv}")
    print(f"  rms tracking error {m.rms_tracking_error:.4f} crad, "
          f"saturation duty {m.saturation_duty_cycle:.3f}, "
          f"peak ||e_y|| {m.peak_e_y:.3f}")
    return 0


def cmd_sweep(args):
    try:
        cfg = _load_scenario(args)
        taus = [float(v) for v in args.tau.split(",") if v != ""]
        scales = [float(v) for v in args.scale.split(",") if v != ""]
        if not taus or not scales:
            raise ValidationError("sweep grids must be non-empty")
        rows = sweep(cfg, taus, scales, workers=args.workers)
    except (ParseError, ValidationError, PilotloopError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    write_sweep_csv(rows, path)
    print(f"sweep complete: {len(rows)} runs -> {path}")
    for r in rows:
        mark = "bounded" if r["bounded"] else "DIVERGED"
        extra = f" ({r['error']})" if r["error"] else ""
        print(f"  tau={r['tau']:<5g} scale={r['scale']:<5g} {mark:<9} "
              f"rms={r['rms']:.4f} duty={r['duty_cycle']:.3f} "
              f"peak_ey={r['peak_e_y']:.3f}{extra}")
    return 0


def cmd_verify(args):
    only = set(args.only) if args.only else None
    if only:
        unknown = only - set(check_names())
        if unknown:
            print(f"error: unknown check(s) {sorted(unknown)}; "
                  f"available: {check_names()}", file=sys.stderr)
            return 1
    ctx = AcceptanceContext(workers=args.workers)

    def report(res):
        mark = "PASS" if res.passed else "FAIL"
        print(f"[{mark}] {res.name:<18} ({res.elapsed:6.2f}s) {res.detail}")
        sys.stdout.flush()

    results = run_checks(only=only, ctx=ctx, report=report)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 2


def cmd_emit_config(args):
    cfg = builtin_747()
    if args.override:
        d = apply_overrides(cfg.to_dict(), args.override)
        cfg = ScenarioConfig.from_dict(d)
        cfg.validate()
    save_config(cfg, args.path)
    print(f"wrote {args.path}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pilotloop",
        description="Two-loop adaptive flight-control simulator "
                    "(inner adaptive controller + delayed adaptive pilot).",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario and write CSVs")
    p_run.add_argument("--scenario", help="scenario JSON (builtin when omitted)")
    p_run.add_argument("--out", default=_default_out(), help="output directory")
    p_run.add_argument("--override", action="append", default=[],
                       metavar="K=V", help="dotted-path config override")
    p_run.set_defaults(fn=cmd_run)

    p_sw = sub.add_parser("sweep", help="delay / learning-rate grid sweep")
    p_sw.add_argument("--scenario", help="base scenario JSON")
    p_sw.add_argument("--out", default=_default_out())
    p_sw.add_argument("--override", action="append", default=[], metavar="K=V")
    p_sw.add_argument("--tau", default="0,0.15,0.3,0.45,0.6",
                      help="comma-separated pilot delays (s)")
    p_sw.add_argument("--scale", default="0.2,1,5",
                      help="comma-separated outer learning-rate multipliers")
    p_sw.add_argument("--workers", type=int, default=os.cpu_count(),
                      help="parallel worker processes")
    p_sw.set_defaults(fn=cmd_sweep)

    p_ver = sub.add_parser("verify", help="run the acceptance checks")
    p_ver.add_argument("--only", action="append", default=[],
                       help=f"run only the named check(s): {check_names()}")
    p_ver.add_argument("--workers", type=int, default=os.cpu_count())
    p_ver.set_defaults(fn=cmd_verify)

    p_emit = sub.add_parser("emit-config",
                            help="write the builtin scenario as JSON")
    p_emit.add_argument("path", help="output file")
    p_emit.add_argument("--override", action="append", default=[],
                        metavar="K=V")
    p_emit.set_defaults(fn=cmd_emit_config)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
