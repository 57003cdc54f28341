"""Command-line entry point: fracblow <subcommand> ..."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PRESETS, load_config, preset
from .errors import (
    ConfigError,
    Diverged,
    DivergedIterate,
    HypothesisViolation,
    NonConvergence,
    StepUnderflow,
)
from .ground_state import DEFAULT_MAX_ITER, DEFAULT_TOL, petviashvili_solve
from .harness import (
    GroundStateCache,
    decompose_directory,
    diagnose_run,
    load_report,
    report_render,
    run_experiment,
    run_sweep,
)
from .snapshot import read_field, write_field
from .spectral import ModelParams, make_grid

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_HYPOTHESIS = 4

log = logging.getLogger("fracblow")


def _cmd_ground_state(args) -> int:
    alpha = args.alpha if args.alpha is not None else 4.0 * args.s / args.d
    p = ModelParams(d=args.d, s=args.s, alpha=alpha)
    g = make_grid(args.d, args.n, args.box)
    init = read_field(args.init).field if args.init else None
    gs = petviashvili_solve(p, g, init=init, tol=args.tol, max_iter=args.max_iter)
    if args.out:
        write_field(args.out, gs.q, p)
    report = {
        "params": {"d": p.d, "s": p.s, "alpha": p.alpha, "mu": p.mu},
        "grid": g.meta(),
        "iterations": gs.iterations,
        "residual_l2": gs.residual_l2,
        "stabilizer": gs.stabilizer,
        "clamped": gs.clamped,
        "mass_q": gs.mass_q,
        "c_gn": gs.c_gn,
        "identities": gs.identities.to_dict(),
    }
    text = json.dumps(report, sort_keys=True, indent=1) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _load_cfg(args):
    if args.preset:
        cfg = preset(args.preset)
        base = None
    else:
        cfg = load_config(args.config)
        base = Path(args.config).parent
    if getattr(args, "fatal_hypothesis", False):
        cfg = cfg.with_overrides(fatal_hypothesis=True)
    return cfg, base


def _cmd_simulate(args) -> int:
    cfg, base = _load_cfg(args)
    run_dir = Path(args.run_dir) if args.run_dir else Path("runs") / cfg.label
    cache = GroundStateCache(args.cache)
    rep = run_experiment(cfg, run_dir, cache, base_dir=base)
    sys.stdout.write(report_render(rep).text)
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    out = diagnose_run(args.run, args.window_epsilon, args.emit, GroundStateCache(args.cache))
    rate = out["rate"]
    if "p" in rate:
        print(f"rate fit: p={rate['p']:.4f} t_star={rate['t_star']:.6g} resid={rate['resid']:.2e}")
    else:
        print(f"rate fit failed: {rate.get('error')}")
    print(f"{len(out['concentration'])} concentration samples, {len(out['profile'])} profile samples")
    return EXIT_OK


def _cmd_decompose(args) -> int:
    out_dir = args.out_dir or Path(args.report).with_suffix("").as_posix() + "_bubbles"
    rep = decompose_directory(args.seq, args.levels, args.R, args.q, out_dir)
    Path(args.report).write_text(json.dumps(rep, sort_keys=True, indent=1) + "\n")
    masses = " ".join(f"{m:.6g}" for m in rep["masses"])
    print(f"{rep['bubbles']} bubbles, masses {masses}")
    return EXIT_OK


def _cmd_report(args) -> int:
    rep = load_report(args.run)
    out = report_render(rep)
    sys.stdout.write({"text": out.text, "json": out.json, "csv": out.csv}[args.format])
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg, _ = _load_cfg(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    rows = run_sweep(cfg, args.key, values, args.out, GroundStateCache(args.cache), jobs=args.jobs)
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    return EXIT_OK


def _add_source(sp) -> None:
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--config", help="key=value run configuration file")
    grp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--cache", default=None, help="directory for cached ground states")
    sp.add_argument("--fatal-hypothesis", action="store_true",
                    help="exit with status 4 when parameters are outside the range where concentration is known to hold")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracblow", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ground-state", help="solve for Q and certify its identities")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--s", type=float, required=True)
    sp.add_argument("--alpha", type=float, default=None, help="defaults to the mass-critical 4s/d")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--box", type=float, required=True)
    sp.add_argument("--tol", type=float, default=DEFAULT_TOL)
    sp.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    sp.add_argument("--init", default=None, help="warm start from a .fld file on the same grid")
    sp.add_argument("--out", default=None)
    sp.add_argument("--report", default=None)
    sp.set_defaults(func=_cmd_ground_state)

    sp = sub.add_parser("simulate", help="run an experiment from a config or preset")
    _add_source(sp)
    sp.add_argument("--run-dir", default=None)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("diagnose", help="recompute diagnostics for a run directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--window-epsilon", type=float, default=0.1)
    sp.add_argument("--emit", nargs="+", default=["concentration.jsonl", "profile.jsonl", "rate.json"])
    sp.add_argument("--cache", default=None)
    sp.set_defaults(func=_cmd_diagnose)

    sp = sub.add_parser("decompose", help="extract translation bubbles from a directory of .fld files")
    sp.add_argument("--seq", required=True)
    sp.add_argument("--levels", type=int, default=4)
    sp.add_argument("--R", type=float, default=2.0)
    sp.add_argument("--q", type=float, default=4.0)
    sp.add_argument("--report", required=True)
    sp.add_argument("--out-dir", default=None)
    sp.set_defaults(func=_cmd_decompose)

    sp = sub.add_parser("report", help="render the report of a finished run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--format", choices=("text", "json", "csv"), default="text")
    sp.set_defaults(func=_cmd_report)

    sp = sub.add_parser("sweep", help="repeat a run over values of one config key")
    _add_source(sp)
    sp.add_argument("--key", required=True)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--out", default="sweep")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=_cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for prob in exc.problems:
            print(f"config error: {prob}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisViolation as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (NonConvergence, DivergedIterate, Diverged, StepUnderflow) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
