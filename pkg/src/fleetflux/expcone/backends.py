"""Solver engine registry.

``builtin`` is the operator-splitting solver in this package.  ``external``
maps to Clarabel when the optional ``clarabel`` package is installed.  The
default engine is read from the ``FLEETFLUX_ENGINE`` environment variable.
"""
from __future__ import annotations

import os
import time
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .admm import AdmmOptions, solve_admm
from .program import ConeProgram, SolveReport, SolveStatus

_ENGINES: dict[str, Callable[..., SolveReport]] = {}


def register_engine(name: str, fn: Callable[..., SolveReport]):
    """Register ``fn(prog, opts) -> SolveReport`` under ``name``."""
    _ENGINES[name] = fn


def available_engines() -> list[str]:
    out = ["builtin"]
    if "external" in _ENGINES:
        out.append("external")
    return out + [k for k in _ENGINES if k not in ("builtin", "external")]


def default_engine() -> str:
    return os.environ.get("FLEETFLUX_ENGINE", "builtin")


def solve(prog: ConeProgram, opts: AdmmOptions | None = None, engine: str | None = None) -> SolveReport:
    engine = engine or default_engine()
    if engine == "builtin":
        return solve_admm(prog, opts)
    if engine not in _ENGINES:
        raise ValueError(f"unknown engine {engine!r}; available: {available_engines()}")
    return _ENGINES[engine](prog, opts)


def _solve_clarabel(prog: ConeProgram, opts: AdmmOptions | None = None) -> SolveReport:
    import clarabel

    t0 = time.perf_counter()
    n = prog.n
    eye = sp.identity(n, format="csc")
    blocks, rhs, cones = [], [], []
    if prog.m:
        blocks.append(prog.A.tocsc())
        rhs.append(prog.b)
        cones.append(clarabel.ZeroConeT(prog.m))
    if len(prog.nonneg):
        blocks.append(-eye[prog.nonneg])
        rhs.append(np.zeros(len(prog.nonneg)))
        cones.append(clarabel.NonnegativeConeT(len(prog.nonneg)))
    for tri in prog.exp_cones:
        blocks.append(-eye[tri[::-1]])
        rhs.append(np.zeros(3))
        cones.append(clarabel.ExponentialConeT())
    A = sp.vstack(blocks, format="csc")
    b = np.concatenate(rhs)
    P = sp.csc_matrix((n, n))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    sol = clarabel.DefaultSolver(P, -prog.c, A, b, cones, settings).solve()
    x = np.asarray(sol.x, dtype=float)
    st = str(sol.status)
    if "Solved" in st and "Almost" not in st:
        status = SolveStatus.OPTIMAL
    elif "PrimalInfeasible" in st:
        status = SolveStatus.INFEASIBLE
    elif "DualInfeasible" in st:
        status = SolveStatus.UNBOUNDED
    else:
        status = SolveStatus.ITERATION_LIMIT
    y = np.asarray(sol.z, dtype=float)
    return SolveReport(
        status=status,
        x=x,
        objective=prog.objective(x),
        eq_residual=prog.equality_residual(x),
        cone_violation=prog.cone_violation(x),
        iterations=int(sol.iterations),
        wall_time=time.perf_counter() - t0,
        gap=abs(sol.obj_val - sol.obj_val_dual),
        y_eq=y[: prog.m],
        engine="external",
        message=st,
    )


try:  # optional dependency
    import clarabel  # noqa: F401

    register_engine("external", _solve_clarabel)
except ImportError:  # pragma: no cover
    pass
