"""Fluid programs: build the exponential-cone forms, solve, recover prices.

Four problem kinds are supported:

* ``FP1``: idle, en-route, repositioning and occupied cars with en-route
  classes drawn from the nearest-car law;
* ``FP1-no-repositioning``: FP1 without repositioning columns;
* ``FP2``: the model without en-route time (pickup is instantaneous while
  any car is idle);
* ``FP3``: FP1 where a fraction ``zeta`` of the repositioning cars heading
  into a zone also counts as available supply there.

The nonconvex fluid programs are solved through their conic relaxations; the
relaxation is tight at optimality and the recovered prices are ``u / d``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from .expcone import AdmmOptions, ConeProgram, SolveReport, solve
from .model import FluidPoint, NetworkConfig, logit

CLEANUP = 1e-9


class FluidProblemKind(str, enum.Enum):
    FP1 = "FP1"
    FP2 = "FP2"
    FP3 = "FP3"
    FP1_NO_REPOSITIONING = "FP1-no-repositioning"

    @classmethod
    def parse(cls, value) -> "FluidProblemKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"fp1": cls.FP1, "fp2": cls.FP2, "fp3": cls.FP3,
                   "fp1-no-repositioning": cls.FP1_NO_REPOSITIONING, "fp1-norep": cls.FP1_NO_REPOSITIONING}
        if key not in aliases:
            raise ValueError(f"unknown fluid problem kind {value!r}")
        return aliases[key]

    @property
    def has_enroute(self) -> bool:
        return self is not FluidProblemKind.FP2

    @property
    def has_repositioning(self) -> bool:
        return self is not FluidProblemKind.FP1_NO_REPOSITIONING


# -- program assembly --------------------------------------------------------
class _Builder:
    """Collects variable blocks, affine equalities and cone memberships.

    Affine expressions are ``(dict[var index -> coef], constant)`` pairs.  A
    cone membership on affine expressions gets three auxiliary variables tied
    to the expressions by equality rows.
    """

    def __init__(self):
        self.n = 0
        self.blocks: dict[str, np.ndarray] = {}
        self.names: list[str] = []
        self.rows: list[tuple[dict, float]] = []
        self.row_tags: list[str] = []
        self.nonneg: list[int] = []
        self.cones: list[tuple[int, int, int]] = []
        self.cone_tags: list[str] = []

    def add(self, name, shape, nonneg=False) -> np.ndarray:
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self.blocks[name] = idx
        self.names += [f"{name}{list(np.unravel_index(t, shape)) if shape else ''}" for t in range(size)]
        if nonneg:
            self.nonneg += idx.ravel().tolist()
        return idx

    def eq(self, terms: dict, rhs: float, tag: str):
        self.rows.append((terms, rhs))
        self.row_tags.append(tag)

    def cone(self, exprs, tag: str):
        aux = np.arange(self.n, self.n + 3)
        self.n += 3
        self.names += [f"{tag}.{s}" for s in "123"]
        for a, (terms, const) in zip(aux, exprs):
            row = {int(a): 1.0}
            for k, v in terms.items():
                row[k] = row.get(k, 0.0) - v
            self.eq(row, const, tag)
        self.cones.append(tuple(int(a) for a in aux))
        self.cone_tags.append(tag)

    def program(self, objective: dict) -> ConeProgram:
        c = np.zeros(self.n)
        for k, v in objective.items():
            c[k] += v
        r, cidx, vals = [], [], []
        for i, (terms, _) in enumerate(self.rows):
            for k, v in terms.items():
                r.append(i)
                cidx.append(k)
                vals.append(v)
        A = sp.csr_matrix((vals, (r, cidx)), shape=(len(self.rows), self.n))
        b = np.array([rhs for _, rhs in self.rows])
        return ConeProgram(c, A, b, np.array(self.cones, dtype=np.int64).reshape(-1, 3),
                           np.array(self.nonneg, dtype=np.int64), names=tuple(self.names))


@dataclass(frozen=True, eq=False)
class FluidProgram:
    """A built conic program together with the variable index map."""

    cfg: NetworkConfig
    kind: FluidProblemKind
    program: ConeProgram
    index: dict[str, np.ndarray]
    cone_tags: tuple[str, ...]

    @property
    def n_cones(self) -> int:
        return len(self.program.exp_cones)


def _add_terms(acc: dict, idx, coef):
    acc[int(idx)] = acc.get(int(idx), 0.0) + float(coef)


def build_program(cfg: NetworkConfig, kind) -> FluidProgram:
    """Assemble the conic form of the requested fluid problem."""
    kind = FluidProblemKind.parse(kind)
    Z, P, R, K0 = cfg.n_zones, len(cfg.trip_pairs), len(cfg.reposition_pairs), cfg.max_classes
    to, td, ro, rd = cfg.trip_origin, cfg.trip_dest, cfg.rep_origin, cfg.rep_dest
    mask = cfg.class_mask()
    B = _Builder()
    a = B.add("a", (Z,), nonneg=True)
    e = B.add("e", (R,), nonneg=True) if kind.has_repositioning else np.zeros(0, dtype=np.int64)
    f = B.add("f", (P,), nonneg=True)
    obj: dict = {}

    if kind.has_enroute:
        d = B.add("d", (P, K0), nonneg=True)
        u = B.add("u", (P, K0))
        q = B.add("q", (Z, K0), nonneg=True)
        # classes beyond K_i do not exist; pin them to zero
        for p in range(P):
            for k in range(K0):
                if not mask[p, k]:
                    B.eq({int(d[p, k]): 1.0}, 0.0, "unused")
                    B.eq({int(u[p, k]): 1.0}, 0.0, "unused")
        for i in range(Z):
            for k in range(cfg.n_classes[i], K0):
                B.eq({int(q[i, k]): 1.0}, 0.0, "unused")
        # pickup: (1 - sum_{k'<=k} q_ik', 1, -omega delta_k^2 avail_i / sigma_i) in K
        for i in range(Z):
            for k in range(cfg.n_classes[i]):
                c = cfg.omega * cfg.delta[k] ** 2 / cfg.sigma[i]
                t1 = {int(q[i, kk]): -1.0 for kk in range(k + 1)}
                t3 = {int(a[i]): -c}
                if kind is FluidProblemKind.FP3:
                    for r in np.flatnonzero(rd == i):
                        if cfg.zeta[r] > 0:
                            _add_terms(t3, e[r], -c * cfg.zeta[r])
                B.cone([(t1, 1.0), ({}, 1.0), (t3, 0.0)], f"pickup[{i},{k}]")
        # choice: (lam q_ik - nu d, nu d, beta nu u - alpha nu d) in K
        for p in range(P):
            i = to[p]
            for k in range(cfg.n_classes[i]):
                nu = cfg.nu[k]
                B.cone([
                    ({int(q[i, k]): cfg.lam[p], int(d[p, k]): -nu}, 0.0),
                    ({int(d[p, k]): nu}, 0.0),
                    ({int(u[p, k]): cfg.beta[p] * nu, int(d[p, k]): -cfg.alpha[p, k] * nu}, 0.0),
                ], f"choice[{p},{k}]")
                _add_terms(obj, u[p, k], nu)
                _add_terms(obj, d[p, k], -nu * cfg.phi[p, k])
            # deliver: sum_k nu_k d = mu f
            row = {int(d[p, k]): cfg.nu[k] for k in range(cfg.n_classes[i])}
            row[int(f[p])] = -cfg.mu[p]
            B.eq(row, 0.0, f"deliver[{p}]")
    else:
        if cfg.alpha0 is None:
            raise ValueError("FP2 needs alpha0 (the zero-en-route-time utility intercepts)")
        phi0 = cfg.phi0 if cfg.phi0 is not None else np.zeros(P)
        u = B.add("u", (P,))
        q = B.add("q", (Z,), nonneg=True)
        slack = B.add("q_slack", (Z,), nonneg=True)
        for i in range(Z):
            B.eq({int(q[i]): 1.0, int(slack[i]): 1.0}, 1.0, f"qbound[{i}]")
        for p in range(P):
            mu = cfg.mu[p]
            B.cone([
                ({int(q[to[p]]): cfg.lam[p], int(f[p]): -mu}, 0.0),
                ({int(f[p]): mu}, 0.0),
                ({int(u[p]): cfg.beta[p] * mu, int(f[p]): -cfg.alpha0[p] * mu}, 0.0),
            ], f"choice[{p}]")
            _add_terms(obj, u[p], mu)
            _add_terms(obj, f[p], -mu * phi0[p])

    if kind.has_repositioning:
        for r in range(R):
            _add_terms(obj, e[r], -cfg.psi[r] * cfg.mu_tilde[r])

    # zone balance: inflow of cars = outflow of cars
    for i in range(Z):
        row: dict = {}
        for p in range(P):
            if to[p] != td[p]:
                if td[p] == i:
                    _add_terms(row, f[p], cfg.mu[p])
                if to[p] == i:
                    _add_terms(row, f[p], -cfg.mu[p])
        if kind.has_repositioning:
            for r in range(R):
                if rd[r] == i:
                    _add_terms(row, e[r], cfg.mu_tilde[r])
                if ro[r] == i:
                    _add_terms(row, e[r], -cfg.mu_tilde[r])
        B.eq(row, 0.0, f"balance[{i}]")

    mass: dict = {}
    for block in ("a", "d", "e", "f"):
        if block in B.blocks:
            for t in B.blocks[block].ravel():
                mass[int(t)] = 1.0
    B.eq(mass, 1.0, "mass")
    prog = B.program(obj)
    return FluidProgram(cfg, kind, prog, dict(B.blocks), tuple(B.cone_tags))


# -- recovery ----------------------------------------------------------------
@dataclass
class FluidSolution:
    cfg: NetworkConfig
    kind: FluidProblemKind
    point: FluidPoint
    objective: float
    u: np.ndarray
    report: SolveReport | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def idle_cars(self) -> np.ndarray:
        """Fluid idle allocation scaled to the fleet (cars per zone)."""
        return self.point.a * self.cfg.fleet_size

    def target_state(self):
        """``N * (a, d, e, f)`` as float arrays."""
        N = self.cfg.fleet_size
        return (N * self.point.a, N * self.point.d, N * self.point.e, N * self.point.f)

    def reposition_flow(self) -> np.ndarray:
        return self.cfg.mu_tilde * self.point.e

    def to_dict(self) -> dict[str, Any]:
        cfg = self.cfg
        Z = cfg.n_zones
        price = np.zeros((Z, Z, cfg.max_classes))
        for p, (i, j) in enumerate(cfg.trip_pairs):
            price[i, j] = self.point.x[p]
        flow = np.zeros((Z, Z))
        for r, (i, j) in enumerate(cfg.reposition_pairs):
            flow[i, j] = cfg.mu_tilde[r] * self.point.e[r]
        return {
            "kind": self.kind.value,
            "objective": self.objective,
            "idle_cars": self.idle_cars.tolist(),
            "zones": list(cfg.zones),
            "price": price.tolist(),
            "q": np.atleast_2d(self.point.q).tolist(),
            "reposition_flow": flow.tolist(),
            "status": self.report.status.value if self.report else None,
            "solve_seconds": self.report.wall_time if self.report else None,
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def fluid_objective(cfg: NetworkConfig, kind, point: FluidPoint) -> float:
    """Revenue rate per car recomputed from a recovered fluid point."""
    kind = FluidProblemKind.parse(kind)
    rep = float(np.sum(cfg.psi * cfg.mu_tilde * point.e)) if len(point.e) else 0.0
    if kind.has_enroute:
        mask = cfg.class_mask()
        rev = np.sum(np.where(mask, cfg.nu[None, :] * point.d * (point.x - cfg.phi), 0.0))
    else:
        phi0 = cfg.phi0 if cfg.phi0 is not None else np.zeros(len(cfg.trip_pairs))
        rev = np.sum(cfg.mu * point.f * (point.x[:, 0] - phi0))
    return float(rev - rep)


def recover_solution(cfg: NetworkConfig, kind, report: SolveReport,
                     fprog: FluidProgram | None = None) -> FluidSolution:
    """Prices ``x = u / d`` (``u / f`` without en-route time), acceptance
    probabilities and class masses from a solved conic program."""
    kind = FluidProblemKind.parse(kind)
    fprog = fprog or build_program(cfg, kind)
    v = report.x
    idx = fprog.index
    P, R, K0 = len(cfg.trip_pairs), len(cfg.reposition_pairs), cfg.max_classes
    a = np.maximum(v[idx["a"]], 0.0)
    f = np.maximum(v[idx["f"]], 0.0)
    e = np.maximum(v[idx["e"]], 0.0) if kind.has_repositioning else np.zeros(R)
    u = v[idx["u"]].copy()
    if kind.has_enroute:
        mask = cfg.class_mask()
        d = np.where(mask, np.maximum(v[idx["d"]], 0.0), 0.0)
        d = np.where(d > CLEANUP, d, 0.0)
        x = np.where(d > 0, u / np.where(d > 0, d, 1.0), 0.0)
        p = np.where(mask, logit(cfg.alpha, cfg.beta[:, None], x), 0.0)
        q = np.maximum(v[idx["q"]], 0.0)
    else:
        d = np.zeros((P, K0))
        fc = np.where(f > CLEANUP, f, 0.0)
        xp = np.where(fc > 0, u / np.where(fc > 0, fc, 1.0), 0.0)
        x = np.repeat(xp[:, None], K0, axis=1)
        p = np.repeat(logit(cfg.alpha0, cfg.beta, xp)[:, None], K0, axis=1)
        q = np.clip(v[idx["q"]], 0.0, 1.0)[:, None]
    point = FluidPoint(a=a, d=d, e=e, f=f, x=x, p=p, q=q)
    sol = FluidSolution(cfg, kind, point, objective=report.objective, u=u, report=report)
    sol.diagnostics["recomputed_objective"] = fluid_objective(cfg, kind, point)
    sol.diagnostics["negative_prices"] = int(np.sum(x < 0))
    return sol


# -- post-solve checks ---------------------------------------------------------
def availability(cfg: NetworkConfig, kind, point: FluidPoint) -> np.ndarray:
    """Dispatchable supply per zone: idle mass, plus ``zeta``-weighted
    repositioning mass for FP3."""
    avail = point.a.copy()
    if FluidProblemKind.parse(kind) is FluidProblemKind.FP3:
        np.add.at(avail, cfg.rep_dest, cfg.zeta * point.e)
    return avail


def verify_optimality_conditions(cfg: NetworkConfig, kind, sol: FluidSolution, tol: float = 1e-5) -> dict:
    """Check that the relaxation is tight at ``sol``.

    Conditions: (i) the pickup cones hold with equality; (ii) the choice
    cones hold with equality wherever a class carries mass; (iii) if a zone
    has idle mass, every class there has positive flow; (iv) for every trip
    pair the per-class service ratios are strictly decreasing, or the pair is
    idle.  FP2 solutions are checked for the idle/availability
    complementarity and the tightness of their choice cones instead.
    """
    kind = FluidProblemKind.parse(kind)
    pt = sol.point
    out: dict[str, dict] = {}
    if not kind.has_enroute:
        q = pt.q[:, 0]
        comp = np.abs((1 - q) * pt.a)
        out["complementarity"] = {"passed": bool(comp.max(initial=0) <= tol), "residual": float(comp.max(initial=0))}
        lhs = cfg.mu * pt.f
        rhs = cfg.lam * q[cfg.trip_origin] * pt.p[:, 0]
        res = np.abs(lhs - rhs)
        out["ii"] = {"passed": bool(res.max(initial=0) <= tol), "residual": float(res.max(initial=0))}
        out["q_is_one"] = bool(np.all(q >= 1 - tol) or np.all(pt.a <= tol))
        sol.diagnostics["conditions"] = out
        return out

    mask = cfg.class_mask()
    avail = availability(cfg, kind, pt)
    # (i) cumulative class mass equals the nearest-car law
    worst = 0.0
    for i in range(cfg.n_zones):
        K = cfg.n_classes[i]
        cum = np.cumsum(pt.q[i, :K])
        law = 1 - np.exp(-cfg.omega * cfg.delta[:K] ** 2 * avail[i] / cfg.sigma[i])
        worst = max(worst, float(np.max(np.abs(cum - law))))
    out["i"] = {"passed": worst <= tol, "residual": worst}

    # (ii) rides started per unit time match the logit take-up of the offered price
    nu = cfg.nu[None, :]
    started = nu * pt.d
    offered = cfg.lam[:, None] * pt.q[cfg.trip_origin] * pt.p
    res2 = np.where(mask & (pt.d > 0), np.abs(started - offered), 0.0)
    w2 = float(res2.max(initial=0.0))
    out["ii"] = {"passed": w2 <= tol, "residual": w2}

    # (iii) positivity wherever the zone holds idle cars
    fails = []
    for i in range(cfg.n_zones):
        if pt.a[i] > tol:
            K = cfg.n_classes[i]
            rows = cfg.trip_origin == i
            flow = pt.d[rows, :K].sum(axis=0)
            if np.any(pt.q[i, :K] <= 0) or np.any(flow <= 0):
                fails.append(i)
    out["iii"] = {"passed": not fails, "zones": fails}

    # (iv) strictly decreasing service ratios, or an all-zero row
    fails, warns = [], []
    for p in range(len(cfg.trip_pairs)):
        i = cfg.trip_origin[p]
        K = cfg.n_classes[i]
        dd = pt.d[p, :K]
        if np.all(dd <= tol):
            continue
        qq = pt.q[i, :K]
        if np.any(qq <= 0) or np.any(dd <= 0):
            fails.append(p)
            continue
        ratio = cfg.nu[:K] * dd / (cfg.lam[p] * qq)
        diff = ratio[:-1] - ratio[1:]
        slack = tol * (1 + np.abs(ratio[1:]))
        if np.any(diff < -slack):
            fails.append(p)
        elif np.any(diff <= slack):
            warns.append(p)
    out["iv"] = {"passed": not fails, "pairs": fails, "ties": warns}
    sol.diagnostics["conditions"] = out
    return out


def solve_fluid(cfg: NetworkConfig, kind="FP1", engine: str | None = None,
                opts: AdmmOptions | None = None, check: bool = True) -> FluidSolution:
    """Build, solve and recover one fluid problem."""
    kind = FluidProblemKind.parse(kind)
    fprog = build_program(cfg, kind)
    report = solve(fprog.program, opts, engine=engine)
    if not report.ok:
        raise RuntimeError(f"{kind.value} solve failed: {report.status.value} {report.message}")
    sol = recover_solution(cfg, kind, report, fprog)
    if check:
        verify_optimality_conditions(cfg, kind, sol)
    return sol
