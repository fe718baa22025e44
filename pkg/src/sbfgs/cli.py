"""``sbfgs`` command line.

Verbs::

    sbfgs run SPEC [--out DIR] [--jobs N] [--seeds 0..19] [--stride K]
    sbfgs sweep SPEC --etas 0.1 0.7 1/L [...]
    sbfgs summarize DIR
    sbfgs diagnose DIR

Epoch columns count two sampled batch gradients per quasi-Newton
iteration (step and curvature pair) and one per SGD iteration.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .diagnostics import DiagnosticError, diagnose_directory
from .harness import (HarnessError, load_spec, parse_seeds, run_experiment,
                      summarize_directory, sweep_step_sizes)


def _apply_overrides(spec, args):
    if args.seeds is not None:
        spec = replace(spec, seeds=parse_seeds(args.seeds))
    if args.stride is not None:
        spec = replace(spec, stride=args.stride)
    if args.no_wall_time:
        spec = replace(spec, record_wall_time=False)
    return spec.validate()


def _out_dir(spec, args, spec_path):
    if args.out is not None:
        return Path(args.out)
    if spec.out:
        return Path(spec.out)
    return Path("runs") / Path(spec_path).stem


def _report(manifest):
    runs = manifest["runs"]
    failed = [r for r in runs if r["status"] != "ok"]
    diverged = [r for r in runs if r.get("diverged")]
    print(f"{len(runs)} runs, {len(diverged)} diverged, {len(failed)} failed")
    for r in failed:
        print(f"  failed: {r['config']} seed {r['seed']}: {r['error']}", file=sys.stderr)


def cmd_run(args):
    spec = _apply_overrides(load_spec(args.spec), args)
    out = _out_dir(spec, args, args.spec)
    manifest = run_experiment(spec, out=out, jobs=args.jobs,
                              base_dir=Path(args.spec).resolve().parent)
    _report(manifest)
    print(f"wrote {out}")
    return 0


def cmd_sweep(args):
    spec = _apply_overrides(load_spec(args.spec), args)
    out = _out_dir(spec, args, args.spec)
    manifest = sweep_step_sizes(spec, args.etas, out=out, jobs=args.jobs,
                                base_dir=Path(args.spec).resolve().parent)
    _report(manifest)
    for cell in manifest["stability"]:
        flag = "stable" if cell["stable"] else f"DIVERGED {cell['n_diverged']}/{cell['n_seeds']}"
        print(f"  {cell['config']} eta={cell['eta']}: {flag}")
    print(f"wrote {out}")
    return 0


def cmd_summarize(args):
    tables = summarize_directory(args.dir)
    for key, t in tables.items():
        last = t.median[-1] if len(t.median) else float("nan")
        print(f"{key}: {t.n_runs} runs, {t.n_diverged} diverged, final median gap {last:.6g}")
    return 0


def cmd_diagnose(args):
    report = diagnose_directory(args.dir)
    n_viol = sum(r["bounds"]["n_violations"] for r in report["runs"])
    print(f"{len(report['runs'])} runs checked, {n_viol} bound violations")
    for name, t in report["psi_trend"].items():
        print(f"  {name}: Psi median {t['early_median']:.6g} at iter {t['early_iter']}"
              f" -> {t['late_median']:.6g} at iter {t['late_iter']}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="sbfgs", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("spec", help="experiment file (TOML, or a manifest.json)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker threads (default: available cores)")
        p.add_argument("--seeds", help='seed list, e.g. "0..19" or "0,1,2"')
        p.add_argument("--stride", type=int, help="metric sampling stride")
        p.add_argument("--no-wall-time", action="store_true",
                       help="leave wall_time_ns empty so reruns are byte-identical")

    p = sub.add_parser("run", help="run every (optimizer, seed) cell")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="step-size sweep with a stability report")
    common(p)
    p.add_argument("--etas", nargs="+", required=True,
                   help='step sizes; tokens such as "1/L" are allowed')
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summarize", help="rebuild quantile summaries from run CSVs")
    p.add_argument("dir")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("diagnose", help="bound checks and Psi trend for a run directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (HarnessError, DiagnosticError, ValueError, OSError) as exc:
        print(f"sbfgs: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
