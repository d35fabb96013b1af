"""Command-line entry point: ``idlewave {run,scenario,sweep,analyze,model}``.

Errors go to stderr as one line, ``error: <kind>: <message>``, with a
nonzero exit code.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import perfmodel
from .config import ConfigError, UnknownPreset, parse_config, preset
from .runner import (
    _atomic_write,
    analyze,
    parse_sweep,
    run_scenario,
    run_sweep,
    sweep_to_csv,
    trace_from_csv,
)
from .engine import simulate


def _load(args) -> "ExperimentConfig":  # noqa: F821
    if getattr(args, "config", None):
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    else:
        raise ConfigError("", "one of --config or --preset is required")
    return _override(cfg, args)


def _override(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "theta", None) is not None:
        if not 0 < args.theta < 1:
            raise ConfigError("analysis.theta", "must lie in (0, 1)")
        cfg = replace(cfg, theta=args.theta)
    if getattr(args, "window", None) is not None:
        if args.window < 1:
            raise ConfigError("analysis.window", "must be >= 1")
        cfg = replace(cfg, window=args.window)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    art = run_scenario(cfg, cfg.out_dir)
    print(art.summary_path)
    return 0


def cmd_analyze(args) -> int:
    cfg = _load(args)
    trace = trace_from_csv(Path(args.trace).read_text(encoding="utf-8"), cfg.scenario)
    sc = cfg.scenario
    baseline = simulate(replace(sc, delays=())) if sc.delays else None
    res = analyze(trace, cfg, baseline)
    from .runner import _clean

    text = json.dumps(_clean(res), indent=2, sort_keys=True)
    if args.out:
        path = Path(args.out) / (Path(args.trace).name.split(".")[0] + ".analysis.json")
        _atomic_write(path, text)
        print(path)
    else:
        print(text)
    return 0


def cmd_sweep(args) -> int:
    spec = parse_sweep(Path(args.config).read_text(encoding="utf-8"))
    spec = replace(spec, base=_override(spec.base, args))
    rows = run_sweep(spec, jobs=args.jobs)
    text = sweep_to_csv(rows)
    if args.out:
        path = Path(args.out) / f"sweep_{spec.parameter}.csv"
        _atomic_write(path, text)
        print(path)
    else:
        sys.stdout.write(text)
    return 0


def cmd_model(args) -> int:
    p = perfmodel.TriadModelParams(write_allocate_factor=args.write_allocate_factor)
    lo, _, hi = args.sockets.partition("-")
    sockets = range(int(lo), int(hi or lo) + 1)
    rows = perfmodel.model_table(sockets, p)
    cols = list(rows[0])
    print(",".join(cols))
    for r in rows:
        print(",".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idlewave", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, source=True):
        if source:
            g = p.add_mutually_exclusive_group()
            g.add_argument("--config", metavar="PATH")
            g.add_argument("--preset", metavar="NAME")
        p.add_argument("--seed", type=int, metavar="U64")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--theta", type=float)
        p.add_argument("--window", type=int)

    p = sub.add_parser("run", help="simulate one scenario from a config file")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("scenario", help="simulate a named preset")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="seed/parameter sweep from a sweep file")
    p.add_argument("--config", metavar="PATH", required=True)
    p.add_argument("--jobs", type=int, default=1)
    common(p, source=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="re-analyze an existing trace CSV")
    p.add_argument("trace", metavar="TRACE_CSV")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("model", help="triad performance model table")
    p.add_argument("--sockets", default="1-9", help="range like 1-9")
    p.add_argument("--write-allocate-factor", type=float, default=4.0 / 3.0)
    p.set_defaults(func=cmd_model)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "scenario" and not args.preset and not args.config:
        args.preset = None
    try:
        return args.func(args)
    except ConfigError as exc:
        kind = "config"
        msg = str(exc)
    except UnknownPreset as exc:
        kind, msg = "preset", exc.args[0]
    except OSError as exc:
        kind, msg = "io", str(exc)
    except ValueError as exc:
        kind, msg = "value", str(exc)
    print(f"error: {kind}: {' '.join(msg.split())}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
