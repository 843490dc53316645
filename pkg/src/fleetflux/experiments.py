"""The city experiments: fluid solves, policy simulations and report tables.

A suite run solves the fluid programs for each instance, builds the
policies, simulates every (instance, fleet size, policy, seed) cell and
collects the metrics into a :class:`ReportBundle`.  :func:`render_reports`
writes the bundle as CSV tables plus figure series.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .expcone.backends import default_engine
from .fluid import FluidProblemKind, FluidSolution, solve_fluid
from .instances import DEFAULT_K0, DEFAULT_ZETA, INSTANCES, ZONES, instance_name, load_instance
from .policies import build_policy
from .simulator import SimConfig, run

log = logging.getLogger(__name__)

__all__ = [
    "CellResult", "ReportBundle", "SuiteConfig", "calibrate_k0", "load_instance",
    "load_k0_lock", "read_bundle", "render_reports", "run_suite", "write_k0_lock",
]

# FP1 objectives the calibration sweep matches
K0_TARGETS = {"instance1": 12.88, "instance2": 15.00, "instance3": 13.59}
LOCK_NAME = "k0.lock.json"

# (table group, fluid kind used for prices and targets, policy, variant)
BASE_CELLS = [
    ("FP1-no-repositioning", "no-repositioning", "base"),
    ("FP1", "static", "on-arrival"),
    ("FP1", "state-dependent", "base"),
    ("FP2", "static", "on-arrival"),
]
EXTENSION_CELLS = [
    ("FP1-no-repositioning", "no-repositioning", "extension"),
    ("FP3", "static", "extension"),
    ("FP3", "state-dependent", "extension"),
]


# -- K0 calibration ------------------------------------------------------------
def calibrate_k0(k_values=range(1, 13), engine: str | None = None) -> dict[str, Any]:
    """FP1 objectives per K0; picks the K0 with the smallest worst relative
    error against :data:`K0_TARGETS`."""
    rows = []
    for K0 in k_values:
        objs, errs = {}, {}
        for name, target in K0_TARGETS.items():
            try:
                sol = solve_fluid(load_instance(name, K0=K0), "FP1", engine=engine, check=False)
            except RuntimeError as exc:
                log.warning("K0=%d %s: %s", K0, name, exc)
                objs[name], errs[name] = None, math.inf
                continue
            objs[name] = sol.objective
            errs[name] = abs(sol.objective - target) / target
        rows.append({"K0": int(K0), "objectives": objs, "max_rel_error": max(errs.values())})
        log.info("K0=%d max relative error %.4f", K0, rows[-1]["max_rel_error"])
    best = min(rows, key=lambda r: r["max_rel_error"])
    for r in rows:  # JSON has no infinity
        if math.isinf(r["max_rel_error"]):
            r["max_rel_error"] = None
    return {"K0": best["K0"], "max_rel_error": best["max_rel_error"], "targets": K0_TARGETS,
            "sweep": rows}


def write_k0_lock(lock: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(lock, indent=2, sort_keys=True) + "\n")
    return path


def load_k0_lock(path=None) -> int:
    """K0 from a lockfile; the packaged lock when ``path`` is None."""
    if path is None:
        text = resources.files("fleetflux").joinpath("data", LOCK_NAME).read_text()
    else:
        p = Path(path)
        if not p.exists():
            return DEFAULT_K0
        text = p.read_text()
    return int(json.loads(text)["K0"])


# -- suite -------------------------------------------------------------------------
@dataclass
class SuiteConfig:
    instances: tuple = tuple(INSTANCES)
    fleet_sizes: tuple = (200, 100)
    seeds: int = 10
    events: int = 20000
    warmup: int = 10000
    K0: int | None = None
    zeta: float = DEFAULT_ZETA
    extension: bool = True
    engine: str | None = None
    workers: int = 1
    C: float = 1.0
    tau: float | None = None
    cadence: int | None = None
    figure_instance: str = "instance3"
    figure_zone: str = "MT"

    def __post_init__(self):
        self.instances = tuple(instance_name(n) for n in self.instances)
        self.fleet_sizes = tuple(int(n) for n in self.fleet_sizes)
        if self.seeds < 1:
            raise ValueError("need at least one seed")
        SimConfig(events=self.events, warmup=self.warmup)  # validates the window


@dataclass
class CellResult:
    instance: str
    fleet_size: int
    kind: str
    policy: str
    variant: str
    fluid_objective: float
    revenue: list = field(default_factory=list)
    idle_average: list = field(default_factory=list)
    deviation: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    lost: list = field(default_factory=list)
    status: str = "ok"
    error: str = ""

    @property
    def key(self) -> tuple:
        return (self.instance, self.fleet_size, self.variant == "extension", self.kind, self.policy)

    @property
    def ok(self) -> bool:
        return self.status == "ok" and bool(self.revenue)

    def mean(self, name: str):
        vals = getattr(self, name)
        return np.mean(np.asarray(vals, dtype=float), axis=0) if vals else None

    def std(self, name: str):
        vals = np.asarray(getattr(self, name), dtype=float)
        return vals.std(axis=0, ddof=1) if len(vals) > 1 else np.zeros_like(vals[0]) if len(vals) else None

    def to_dict(self) -> dict:
        return {k: (np.asarray(v).tolist() if isinstance(v, list) else v)
                for k, v in dataclasses.asdict(self).items()}


@dataclass
class ReportBundle:
    cells: list = field(default_factory=list)
    # (instance, kind) -> {"objective", "idle_cars" (N = 200), "status"}
    fluid: dict = field(default_factory=dict)
    # policy label -> {"time", "idle", "exit"} post-warmup series
    figures: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def cell(self, instance, fleet_size, kind, policy, extension=False) -> CellResult | None:
        for c in self.cells:
            if c.key == (instance, fleet_size, extension, kind, policy):
                return c
        return None

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "fluid": [{"instance": i, "kind": k, **v} for (i, k), v in sorted(self.fluid.items())],
            "cells": [c.to_dict() for c in self.cells],
            "figures": self.figures,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReportBundle":
        fluid = {(d["instance"], d["kind"]): {k: v for k, v in d.items() if k not in ("instance", "kind")}
                 for d in data.get("fluid", [])}
        cells = [CellResult(**c) for c in data.get("cells", [])]
        return cls(cells, fluid, data.get("figures", {}), data.get("meta", {}))


def _simulate(job):
    """Worker: one seed of one cell."""
    cfg, policy, sim, want_series, zone = job
    rec = run(sim, cfg, policy)
    out = {
        "revenue": rec.revenue_rate(),
        "idle_average": rec.idle_average().tolist(),
        "deviation": rec.idle_deviation().tolist(),
        "mse": rec.idle_mse().tolist(),
        "lost": rec.counts["lost_no_car"],
        "status": rec.status,
    }
    if want_series:
        w = sim.warmup
        out["series"] = {"time": rec.times[w:].tolist(), "idle": rec.idle[w:, zone].tolist(),
                         "exit": rec.exiting[w:, zone].tolist()}
    return out


def _fluid_solutions(inst: str, K0: int, conf: SuiteConfig, bundle: ReportBundle) -> dict:
    sols = {}
    for kind in ("FP1", "FP1-no-repositioning", "FP2", "FP3"):
        if kind == "FP3" and not conf.extension:
            continue
        zeta = conf.zeta if kind == "FP3" else 0.0
        cfg = load_instance(inst, fleet_size=200, K0=K0, zeta=zeta)
        try:
            sol = solve_fluid(cfg, kind, engine=conf.engine)
            sols[kind] = sol
            bundle.fluid[(inst, kind)] = {"objective": sol.objective, "idle_cars": sol.idle_cars.tolist(),
                                          "status": "ok"}
        except Exception as exc:  # recorded, suite continues
            log.error("%s %s solve failed: %s", inst, kind, exc)
            bundle.fluid[(inst, kind)] = {"objective": math.nan, "idle_cars": [], "status": "failed",
                                          "error": str(exc)}
    return sols


def _at_fleet_size(sol: FluidSolution, N: int) -> FluidSolution:
    # the normalized fluid point does not depend on N
    return dataclasses.replace(sol, cfg=sol.cfg.with_fleet_size(N))


def run_suite(conf: SuiteConfig | None = None, progress=None) -> ReportBundle:
    """Simulate every cell of the experiment grid."""
    conf = conf or SuiteConfig()
    K0 = conf.K0 if conf.K0 is not None else load_k0_lock()
    bundle = ReportBundle(meta={
        "K0": K0, "seeds": conf.seeds, "events": conf.events, "warmup": conf.warmup,
        "zeta": conf.zeta, "fleet_sizes": list(conf.fleet_sizes), "instances": list(conf.instances),
        "engine": conf.engine or default_engine(), "figure_instance": conf.figure_instance,
        "figure_zone": conf.figure_zone, "zones": list(ZONES),
    })
    zone = ZONES.index(conf.figure_zone)
    fig_inst = instance_name(conf.figure_instance)
    started = time.perf_counter()

    cells, jobs, owners = [], [], []
    for inst in conf.instances:
        sols = _fluid_solutions(inst, K0, conf, bundle)
        grid = [(N, c) for N in conf.fleet_sizes for c in BASE_CELLS]
        if conf.extension:
            grid += [(200, c) for c in EXTENSION_CELLS]
        for N, (kind, pname, variant) in grid:
            label_kind = "FP3-no-repositioning" if variant == "extension" and pname == "no-repositioning" else kind
            cell = CellResult(inst, N, label_kind, pname, variant,
                              bundle.fluid.get((inst, kind), {}).get("objective", math.nan))
            cells.append(cell)
            if kind not in sols:
                cell.status, cell.error = "failed", f"{kind} fluid solve failed"
                continue
            sol = _at_fleet_size(sols[kind], N)
            try:
                kw = {"C": conf.C, "tau": conf.tau, "cadence": conf.cadence} if pname == "state-dependent" else {}
                policy = build_policy(pname, sol, **kw)
            except Exception as exc:
                cell.status, cell.error = "failed", f"policy construction: {exc}"
                continue
            series = inst == fig_inst and N == conf.fleet_sizes[0] and variant != "extension"
            for seed in range(conf.seeds):
                sim = SimConfig(variant=variant, events=conf.events, warmup=conf.warmup, seed=seed)
                jobs.append((policy.cfg, policy, sim, series and seed == 0, zone))
                owners.append(cell)

    results = _map(jobs, conf.workers, progress)
    for cell, job, res in zip(owners, jobs, results):
        if isinstance(res, Exception):
            cell.status, cell.error = "failed", f"seed {job[2].seed}: {res}"
            continue
        for name in ("revenue", "idle_average", "deviation", "mse", "lost"):
            getattr(cell, name).append(res[name])
        if "series" in res:
            label = f"{'FP2' if cell.kind == 'FP2' else 'FP1'} {cell.policy}"
            bundle.figures[label] = res["series"]
    bundle.cells = cells
    log.info("suite finished in %.1f s", time.perf_counter() - started)
    return bundle


def _map(jobs, workers, progress):
    def safe(job):
        try:
            return _simulate(job)
        except Exception as exc:  # a failed seed must not sink the suite
            log.error("simulation failed: %s", exc)
            return exc

    out = []
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_simulate, j) for j in jobs]
            for n, fut in enumerate(futures, 1):
                try:
                    out.append(fut.result())
                except Exception as exc:
                    log.error("simulation failed: %s", exc)
                    out.append(exc)
                if progress:
                    progress(n, len(jobs))
    else:
        for n, job in enumerate(jobs, 1):
            out.append(safe(job))
            if progress:
                progress(n, len(jobs))
    return out


# -- reports -----------------------------------------------------------------------
def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.4f}"


def _revenue_rows(bundle, fleet_size, extension):
    rows = []
    for c in bundle.cells:
        if c.fleet_size != fleet_size or (c.variant == "extension") != extension:
            continue
        rows.append([c.instance, c.kind, _fmt(c.fluid_objective), c.policy,
                     _fmt(c.mean("revenue")) if c.ok else "", _fmt(c.std("revenue")) if c.ok else "",
                     len(c.revenue), c.status])
    return rows


def _zone_rows(bundle, kind, policies, field_, fleet_size=200, extension=False, sol_row=True):
    rows = []
    for inst in bundle.meta.get("instances", []):
        if sol_row:
            f = bundle.fluid.get((inst, kind), {})
            rows.append([inst, kind, "SOL", *map(_fmt, f.get("idle_cars") or [None] * len(ZONES))])
        for pol in policies:
            c = bundle.cell(inst, fleet_size, kind, pol, extension)
            if c is None:
                continue
            vals = c.mean(field_) if c.ok else None
            rows.append([inst, kind, pol, *map(_fmt, vals if vals is not None else [None] * len(ZONES))])
    return rows


def render_reports(bundle: ReportBundle, out_dir) -> list[Path]:
    """Write ``table1.csv`` ... ``table8.csv``, the two figure series,
    ``summary.txt`` and ``bundle.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    zones = list(ZONES)
    rev_head = ["instance", "fluid_problem", "fluid_objective", "policy", "simulated_revenue",
                "seed_std", "seeds", "status"]
    zone_head = ["instance", "fluid_problem", "row", *zones]
    tables = {
        "table1.csv": (rev_head, _revenue_rows(bundle, 200, False)),
        "table2.csv": (rev_head, _revenue_rows(bundle, 100, False)),
        "table3.csv": (zone_head, _zone_rows(bundle, "FP1", ["static", "state-dependent"], "idle_average")),
        "table4.csv": (zone_head, _zone_rows(bundle, "FP1", ["static", "state-dependent"], "deviation",
                                             sol_row=False)),
        "table5.csv": (zone_head, [r for r in _zone_rows(bundle, "FP2", [], "idle_average")]),
        "table6.csv": (zone_head, _zone_rows(bundle, "FP2", ["static"], "idle_average", sol_row=False)),
        "table7.csv": (rev_head, _revenue_rows(bundle, 200, True)),
        "table8.csv": (zone_head, _zone_rows(bundle, "FP3", ["static", "state-dependent"], "deviation",
                                             extension=True, sol_row=False)),
    }
    paths = []
    for name, (head, rows) in tables.items():
        paths.append(_write_csv(out / name, head, rows))

    labels = sorted(bundle.figures)
    for name, key in (("fig_idle_mt.csv", "idle"), ("fig_exit_mt.csv", "exit")):
        rows = []
        for label in labels:
            s = bundle.figures[label]
            rows += [[label, n, repr(float(t)), int(v)] for n, (t, v) in enumerate(zip(s["time"], s[key]))]
        paths.append(_write_csv(out / name, ["policy", "event", "time", key], rows))

    summary = out / "summary.txt"
    summary.write_text(summary_text(bundle))
    paths.append(summary)
    bundle_path = out / "bundle.json"
    bundle_path.write_text(json.dumps(bundle.to_dict(), sort_keys=True) + "\n")
    paths.append(bundle_path)
    return paths


def _write_csv(path: Path, head, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        w.writerows(rows)
    return path


def read_bundle(in_dir) -> ReportBundle:
    return ReportBundle.from_dict(json.loads((Path(in_dir) / "bundle.json").read_text()))


def summary_text(bundle: ReportBundle) -> str:
    m = bundle.meta
    lines = [f"K0 = {m.get('K0')}, {m.get('seeds')} seeds, {m.get('events')} events "
             f"({m.get('warmup')} warmup), zeta = {m.get('zeta')}, engine = {m.get('engine')}", ""]
    lines.append(f"{'instance':<10} {'N':>4} {'fluid':<22} {'bound':>7}  {'policy':<17} {'revenue':>8} {'std':>6}")
    for c in bundle.cells:
        rev = f"{c.mean('revenue'):8.3f} {c.std('revenue'):6.3f}" if c.ok else f"{'failed':>8} {'':>6}"
        lines.append(f"{c.instance:<10} {c.fleet_size:>4} {c.kind:<22} {c.fluid_objective:7.3f}  "
                     f"{c.policy:<17} {rev}")
    return "\n".join(lines) + "\n"
