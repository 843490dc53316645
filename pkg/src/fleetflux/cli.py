"""``fleetflux`` command line: solve, simulate, suite and report.

Exit codes: 0 success, 1 usage or validation error, 2 compute failure.
Logs go to stderr; data goes to stdout or files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments
from .fluid import solve_fluid
from .instances import DEFAULT_ZETA, load_instance
from .model import ConfigError, load_config
from .policies import build_policy
from .simulator import VARIANTS, SimConfig, run

log = logging.getLogger("fleetflux")

# CLI policy name -> (fluid problem, policy kind)
POLICIES = {
    "no-repositioning": ("FP1-no-repositioning", "no-repositioning"),
    "static-fp1": ("FP1", "static"),
    "static-fp2": ("FP2", "static"),
    "static-fp3": ("FP3", "static"),
    "state-dependent": ("FP1", "state-dependent"),
    "state-dependent-fp1": ("FP1", "state-dependent"),
    "state-dependent-fp3": ("FP3", "state-dependent"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _k0(text):
    if text == "sweep":
        return text
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'sweep' or a positive integer") from None
    if k < 1:
        raise argparse.ArgumentTypeError("K0 must be positive")
    return k


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    common.add_argument("--config", type=Path, metavar="PATH", help="network config JSON (solve, simulate)")
    common.add_argument("--engine", choices=("builtin", "external"),
                        help="conic engine (default: $FLEETFLUX_ENGINE or builtin)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="fleetflux", description="Fluid pricing and repositioning for ride-hailing fleets.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def instance_args(sp):
        sp.add_argument("--instance", default="1", help="city instance 1, 2 or 3")
        sp.add_argument("--fleet-size", type=int, default=200)
        sp.add_argument("--k0", type=_k0, default=None, help="en-route classes (default: calibrated lock)")
        sp.add_argument("--zeta", type=float, default=DEFAULT_ZETA, help="availability augmentation for FP3")

    s = sub.add_parser("solve", parents=[common], help="solve one fluid problem")
    instance_args(s)
    s.add_argument("--kind", default="fp1", choices=("fp1", "fp2", "fp3"))
    s.add_argument("--no-repositioning", action="store_true")
    s.add_argument("--out", type=Path, help="write the solution JSON here")

    s = sub.add_parser("simulate", parents=[common], help="simulate one policy")
    instance_args(s)
    s.add_argument("--policy", default="static-fp1", choices=sorted(POLICIES))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--events", type=int, default=20000)
    s.add_argument("--warmup", type=int, default=10000)
    s.add_argument("--variant", choices=VARIANTS, help="default: the policy's own")
    s.add_argument("--cadence", type=int, help="state-dependent solve cadence")
    s.add_argument("--out", type=Path, help="directory for events.csv, idle_series.csv, summary.json")

    s = sub.add_parser("suite", parents=[common], help="run the full experiment grid")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--k0", type=_k0, default=None, help="'sweep' or an integer (default: calibrated lock)")
    s.add_argument("--events", type=int, default=20000)
    s.add_argument("--warmup", type=int, default=10000)
    s.add_argument("--instances", default="1,2,3")
    s.add_argument("--fleet-sizes", default="200,100")
    s.add_argument("--no-extension", action="store_true")
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("report", parents=[common], help="render tables from a suite directory")
    s.add_argument("--in", dest="in_dir", type=Path, required=True)
    s.add_argument("--out", type=Path, help="default: the input directory")
    return p


def _emit(args, payload: dict, text: str):
    if args.json:
        sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text.rstrip("\n") + "\n")


def _network(args, kind: str):
    if args.config is not None:
        return load_config(args.config)
    K0 = args.k0 if isinstance(args.k0, int) else experiments.load_k0_lock()
    zeta = args.zeta if kind == "FP3" else 0.0
    return load_instance(args.instance, fleet_size=args.fleet_size, K0=K0, zeta=zeta)


def cmd_solve(args):
    kind = {"fp1": "FP1", "fp2": "FP2", "fp3": "FP3"}[args.kind]
    if args.no_repositioning:
        if kind != "FP1":
            raise UsageError("--no-repositioning applies to --kind fp1 only")
        kind = "FP1-no-repositioning"
    cfg = _network(args, kind)
    sol = solve_fluid(cfg, kind, engine=args.engine)
    data = sol.to_dict()
    data.pop("solve_seconds", None)  # keeps output byte-identical across runs
    paths = []
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        paths.append(str(args.out))
    idle = ", ".join(f"{z} {a:.2f}" for z, a in zip(cfg.zones, sol.idle_cars))
    text = f"{kind} objective {sol.objective:.4f}\nidle cars: {idle}"
    _emit(args, {"kind": kind, "objective": sol.objective, "idle_cars": sol.idle_cars.tolist(),
                 "zones": list(cfg.zones), "paths": paths}, "\n".join([text, *paths]))


def cmd_simulate(args):
    kind, pkind = POLICIES[args.policy]
    sim = SimConfig(variant=args.variant or "base", events=args.events, warmup=args.warmup, seed=args.seed)
    cfg = _network(args, kind)
    sol = solve_fluid(cfg, kind, engine=args.engine)
    kw = {"cadence": args.cadence} if pkind == "state-dependent" else {}
    if args.cadence is not None and pkind != "state-dependent":
        raise UsageError("--cadence applies to state-dependent policies only")
    policy = build_policy(pkind, sol, name=args.policy, **kw)
    if args.variant is None:
        variant = "extension" if kind == "FP3" else policy.default_variant
        sim = SimConfig(variant=variant, events=args.events, warmup=args.warmup, seed=args.seed)
    rec = run(sim, cfg, policy)
    summary = rec.summary()
    summary["fluid_objective"] = sol.objective
    paths = [str(p) for p in rec.write(args.out)] if args.out else []
    text = (f"{args.policy} ({sim.variant}) seed {sim.seed}: revenue rate {rec.revenue_rate():.4f} per car, "
            f"fluid bound {sol.objective:.4f}, status {rec.status}")
    _emit(args, {**summary, "paths": paths}, "\n".join([text, *paths]))


def cmd_suite(args):
    if args.config is not None:
        raise UsageError("--config is not used by suite")
    out = args.out
    try:
        conf = experiments.SuiteConfig(
            instances=tuple(args.instances.split(",")),
            fleet_sizes=tuple(int(n) for n in args.fleet_sizes.split(",")),
            seeds=args.seeds, events=args.events, warmup=args.warmup,
            K0=None if args.k0 == "sweep" else args.k0,
            extension=not args.no_extension, engine=args.engine, workers=args.workers)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if args.k0 == "sweep":
        lock = experiments.calibrate_k0(engine=args.engine)
        experiments.write_k0_lock(lock, out / experiments.LOCK_NAME)
        conf.K0 = lock["K0"]
        log.info("calibrated K0 = %d", conf.K0)

    def progress(n, total):
        if n % 10 == 0 or n == total:
            log.info("simulated %d/%d runs", n, total)

    bundle = experiments.run_suite(conf, progress=progress)
    paths = [str(p) for p in experiments.render_reports(bundle, out)]
    if args.k0 == "sweep":
        paths.insert(0, str(out / experiments.LOCK_NAME))
    failed = [c for c in bundle.cells if not c.ok]
    _emit(args, {"paths": paths, "failed_cells": len(failed)},
          experiments.summary_text(bundle) + "\n" + "\n".join(paths))
    return 2 if failed else 0


def cmd_report(args):
    if args.config is not None:
        raise UsageError("--config is not used by report")
    if not (args.in_dir / "bundle.json").exists():
        raise UsageError(f"{args.in_dir} has no bundle.json; run 'fleetflux suite' first")
    bundle = experiments.read_bundle(args.in_dir)
    paths = [str(p) for p in experiments.render_reports(bundle, args.out or args.in_dir)]
    _emit(args, {"paths": paths}, experiments.summary_text(bundle) + "\n" + "\n".join(paths))


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "suite": cmd_suite, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except (UsageError, ConfigError, ValueError) as exc:
        # validation happens before any compute
        sys.stderr.write(f"fleetflux {args.command}: {exc}\n")
        return 1
    except Exception as exc:
        log.error("%s failed: %s", args.command, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
