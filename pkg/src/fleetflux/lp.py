"""Repositioning decision problem for the state-dependent policy.

The decision is how many idle cars to send along each repositioning arc
right now.  The cost of a post-decision state is its distance to the fluid
target, measured as the car-time of a min-cost network flow that moves the
current compartments onto the target ones.  Immediate repositioning ``y``
and deferred repositioning ``e+`` feed the same node, with ``e+`` priced at
``C / tau`` so that acting now is preferred whenever idle cars exist.

The LP structure only depends on the network, the target and ``(C, tau)``;
a state only changes row bounds.  :class:`APModel` keeps one HiGHS model and
re-solves it with new bounds, which lets the simplex warm start.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import highspy
import numpy as np
import scipy.sparse as sp

from .model import ConfigError, NetworkConfig, SystemState

log = logging.getLogger(__name__)

# below this, a target rate is treated as a dead arc
_RATE_EPS = 1e-12


def default_tau(cfg: NetworkConfig) -> float:
    """``0.01 / lambda_bar`` with ``lambda_bar`` the mean per-zone request rate."""
    per_zone = np.bincount(cfg.trip_origin, weights=cfg.lam, minlength=cfg.n_zones)
    return 0.01 / max(float(per_zone.mean()), 1e-12)


@dataclass
class APSolution:
    """Result of one AP solve; ``y`` is the floored action."""

    y: np.ndarray
    y_relaxed: np.ndarray
    objective: float
    status: str
    deferred: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class APModel:
    """AP structure for a fixed network, target and weights."""

    def __init__(self, cfg: NetworkConfig, target, C: float = 1.0, tau: float | None = None):
        tau = default_tau(cfg) if tau is None else float(tau)
        C = float(C)
        if not (C > 0 and tau > 0):
            raise ConfigError("C and tau must be positive")
        if len(cfg.psi) and np.any(cfg.psi >= C / tau):
            raise ConfigError("repositioning costs must satisfy psi < C / tau, "
                              f"got max psi {cfg.psi.max():.4g} >= {C / tau:.4g}")
        self.cfg, self.C, self.tau = cfg, C, tau
        pt = getattr(target, "point", target)
        N = cfg.fleet_size
        Z, P, R, K0 = cfg.n_zones, len(cfg.trip_pairs), len(cfg.reposition_pairs), cfg.max_classes
        mask = cfg.class_mask()
        ta = np.maximum(np.asarray(pt.a, dtype=float), 0.0)
        td_ = np.where(mask, np.maximum(np.asarray(pt.d, dtype=float).reshape(P, K0), 0.0), 0.0)
        te = np.maximum(np.asarray(pt.e, dtype=float), 0.0)
        te = te if te.size == R else np.zeros(R)
        tf = np.maximum(np.asarray(pt.f, dtype=float), 0.0)
        # the flow network is balanced only if the target holds exactly N
        # cars; fluid solutions sum to one only up to solver tolerance
        scale = N / (ta.sum() + td_.sum() + te.sum() + tf.sum())
        self.target_a, self.target_d, self.target_e, self.target_f = (
            scale * ta, scale * td_, scale * te, scale * tf)

        # per-car time cost of filling a d node from outside: 1 / (lam p q)
        q = np.asarray(pt.q, dtype=float)
        p = np.asarray(pt.p, dtype=float).reshape(P, -1)
        if p.shape[1] == 1:
            p = np.repeat(p, K0, axis=1)
        if q.shape[1] == 1:
            q = np.repeat(q, K0, axis=1)
        rate = cfg.lam[:, None] * p * q[cfg.trip_origin]

        cls = [(pp, k) for pp in range(P) for k in range(K0) if mask[pp, k]]
        live = [(pp, k) for pp, k in cls if rate[pp, k] > _RATE_EPS]
        self.d_pairs = np.array(cls, dtype=np.int64).reshape(-1, 2)
        self.dplus_pairs = np.array(live, dtype=np.int64).reshape(-1, 2)
        nd, ndp = len(cls), len(live)

        # column blocks
        off = np.cumsum([0, R, ndp, nd, R, R, P])
        self.col_y = np.arange(off[0], off[1])
        self.col_dplus = np.arange(off[1], off[2])
        self.col_dminus = np.arange(off[2], off[3])
        self.col_eplus = np.arange(off[3], off[4])
        self.col_eminus = np.arange(off[4], off[5])
        self.col_fminus = np.arange(off[5], off[6])
        n = int(off[-1])
        cost = np.zeros(n)
        cost[self.col_y] = cfg.psi
        cost[self.col_dplus] = C / rate[tuple(self.dplus_pairs.T)] if ndp else []
        cost[self.col_dminus] = C / cfg.nu[self.d_pairs[:, 1]] if nd else []
        cost[self.col_eplus] = C / tau
        cost[self.col_eminus] = C / cfg.mu_tilde
        cost[self.col_fminus] = C / cfg.mu
        self.cost = cost

        # row blocks: a balance, d, e, f, idle-car limit
        roff = np.cumsum([0, Z, nd, R, P, Z])
        self.row_a = np.arange(roff[0], roff[1])
        self.row_d = np.arange(roff[1], roff[2])
        self.row_e = np.arange(roff[2], roff[3])
        self.row_f = np.arange(roff[3], roff[4])
        self.row_idle = np.arange(roff[4], roff[5])
        m = int(roff[-1])
        rows, cols, vals = [], [], []

        def put(r, c, v):
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))

        to, td = cfg.trip_origin, cfg.trip_dest
        ro, rd = cfg.rep_origin, cfg.rep_dest
        d_row = {(int(pp), int(k)): self.row_d[t] for t, (pp, k) in enumerate(self.d_pairs)}
        # a_i + sum (f-_ji + e-_ji - y_ij - e+_ij - sum_k d+_ijk) = a*_i
        for t in range(P):
            put(self.row_a[td[t]], self.col_fminus[t], 1.0)
        for r in range(R):
            put(self.row_a[rd[r]], self.col_eminus[r], 1.0)
            put(self.row_a[ro[r]], self.col_y[r], -1.0)
            put(self.row_a[ro[r]], self.col_eplus[r], -1.0)
        for t, (pp, k) in enumerate(self.dplus_pairs):
            put(self.row_a[to[pp]], self.col_dplus[t], -1.0)
            put(d_row[(int(pp), int(k))], self.col_dplus[t], 1.0)
        # d_ijk - d-_ijk + d+_ijk = d*_ijk
        for t, (pp, k) in enumerate(self.d_pairs):
            put(self.row_d[t], self.col_dminus[t], -1.0)
            put(self.row_f[pp], self.col_dminus[t], 1.0)
        # e_ij - e-_ij + y_ij + e+_ij = e*_ij
        for r in range(R):
            put(self.row_e[r], self.col_eminus[r], -1.0)
            put(self.row_e[r], self.col_y[r], 1.0)
            put(self.row_e[r], self.col_eplus[r], 1.0)
        # f_ij - f-_ij + sum_k d-_ijk = f*_ij
        for t in range(P):
            put(self.row_f[t], self.col_fminus[t], -1.0)
        # sum_j y_ij <= a_i
        for r in range(R):
            put(self.row_idle[ro[r]], self.col_y[r], 1.0)
        self.A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
        self.n, self.m = n, m
        self._highs = None

    # -- right-hand sides -------------------------------------------------------
    def __getstate__(self):
        # the HiGHS handle is process-local; rebuild it lazily after unpickling
        state = self.__dict__.copy()
        state["_highs"] = None
        return state

    def fresh(self) -> "APModel":
        """Same structure, with its own (not yet built) solver."""
        other = copy.copy(self)
        other._highs = None
        return other

    def row_bounds(self, state: SystemState):
        """Lower and upper row bounds for ``state``."""
        lo = np.empty(self.m)
        hi = np.empty(self.m)
        # equality rows: the target minus the current compartment
        a = np.asarray(state.a, dtype=float)
        d = np.asarray(state.d, dtype=float)
        lo[self.row_a] = self.target_a - a
        dp = tuple(self.d_pairs.T)
        lo[self.row_d] = self.target_d[dp] - d[dp] if len(self.d_pairs) else []
        lo[self.row_e] = self.target_e - np.asarray(state.e, dtype=float)
        lo[self.row_f] = self.target_f - np.asarray(state.f, dtype=float)
        hi[:] = lo
        lo[self.row_idle] = -highspy.kHighsInf
        hi[self.row_idle] = a
        return lo, hi

    def build(self, state: SystemState) -> "RepositionLP":
        lo, hi = self.row_bounds(state)
        return RepositionLP(self, state.copy(), lo, hi)

    # -- solving --------------------------------------------------------------------
    def _model(self):
        if self._highs is None:
            h = highspy.Highs()
            h.setOptionValue("output_flag", False)
            h.setOptionValue("random_seed", 0)
            lp = highspy.HighsLp()
            lp.num_col_ = self.n
            lp.num_row_ = self.m
            lp.col_cost_ = self.cost
            lp.col_lower_ = np.zeros(self.n)
            lp.col_upper_ = np.full(self.n, highspy.kHighsInf)
            lo, hi = self.row_bounds(SystemState(
                a=np.zeros(self.cfg.n_zones), d=np.zeros_like(self.target_d),
                e=np.zeros(len(self.target_e)), f=np.zeros(len(self.target_f))))
            lp.row_lower_ = lo
            lp.row_upper_ = hi
            lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
            lp.a_matrix_.start_ = self.A.indptr
            lp.a_matrix_.index_ = self.A.indices
            lp.a_matrix_.value_ = self.A.data
            h.passModel(lp)
            self._highs = h
        return self._highs

    def solve_bounds(self, lo, hi) -> APSolution:
        h = self._model()
        idx = np.arange(self.m, dtype=np.int32)
        h.changeRowsBounds(self.m, idx, lo, hi)
        h.run()
        status = h.getModelStatus()
        R = len(self.col_y)
        if status != highspy.HighsModelStatus.kOptimal:
            # a stale basis can occasionally confuse the simplex; retry cold
            h.clearSolver()
            h.run()
            status = h.getModelStatus()
        if status != highspy.HighsModelStatus.kOptimal:
            log.warning("AP solve failed (%s); no repositioning this event", h.modelStatusToString(status))
            return APSolution(np.zeros(R, dtype=np.int64), np.zeros(R), float("nan"),
                              h.modelStatusToString(status))
        x = np.asarray(h.getSolution().col_value)
        y_rel = np.maximum(x[self.col_y], 0.0)
        # guard against values like 0.9999999999 that should floor to 1
        y = np.floor(y_rel + 1e-9).astype(np.int64)
        return APSolution(y, y_rel, float(h.getInfo().objective_function_value), "optimal",
                          x[self.col_eplus])

    def solve(self, state: SystemState) -> APSolution:
        lo, hi = self.row_bounds(state)
        sol = self.solve_bounds(lo, hi)
        return _clip_to_idle(self.cfg, sol, np.asarray(state.a))


def _clip_to_idle(cfg, sol: APSolution, a) -> APSolution:
    """Make sure the floored action never sends more cars than are idle."""
    sent = np.bincount(cfg.rep_origin, weights=sol.y, minlength=cfg.n_zones) if len(sol.y) else np.zeros(cfg.n_zones)
    if np.any(sent > a):
        # only possible through solver round-off; trim the largest moves
        y = sol.y.copy()
        for i in np.flatnonzero(sent > a):
            arcs = np.flatnonzero(cfg.rep_origin == i)
            excess = int(sent[i] - a[i])
            for r in arcs[np.argsort(-y[arcs])]:
                take = min(excess, y[r])
                y[r] -= take
                excess -= take
                if not excess:
                    break
        sol = APSolution(y, sol.y_relaxed, sol.objective, sol.status, sol.deferred)
    return sol


@dataclass
class RepositionLP:
    """One AP instance: the shared structure plus the row bounds of a state."""

    model: APModel
    state: SystemState
    row_lower: np.ndarray
    row_upper: np.ndarray

    @property
    def cost(self) -> np.ndarray:
        return self.model.cost

    @property
    def A(self) -> sp.csc_matrix:
        return self.model.A

    def solve(self) -> APSolution:
        sol = self.model.solve_bounds(self.row_lower, self.row_upper)
        return _clip_to_idle(self.model.cfg, sol, np.asarray(self.state.a))

    def column_names(self) -> list[str]:
        cfg, mdl = self.model.cfg, self.model
        names = [""] * mdl.n
        for r, (i, j) in enumerate(cfg.reposition_pairs):
            names[mdl.col_y[r]] = f"y[{i},{j}]"
            names[mdl.col_eplus[r]] = f"e+[{i},{j}]"
            names[mdl.col_eminus[r]] = f"e-[{i},{j}]"
        for t, (pp, k) in enumerate(mdl.dplus_pairs):
            i, j = cfg.trip_pairs[pp]
            names[mdl.col_dplus[t]] = f"d+[{i},{j},{k + 1}]"
        for t, (pp, k) in enumerate(mdl.d_pairs):
            i, j = cfg.trip_pairs[pp]
            names[mdl.col_dminus[t]] = f"d-[{i},{j},{k + 1}]"
        for t, (i, j) in enumerate(cfg.trip_pairs):
            names[mdl.col_fminus[t]] = f"f-[{i},{j}]"
        return names

    def dump(self) -> str:
        """Plain-text listing of the LP, one row per line."""
        names = self.column_names()
        lines = ["minimize"]
        lines.append("  " + " + ".join(f"{c:.6g} {nm}" for c, nm in zip(self.cost, names) if c))
        lines.append("subject to")
        A = self.A.tocsr()
        for r in range(A.shape[0]):
            lo_, hi_ = A.indptr[r], A.indptr[r + 1]
            expr = " ".join(f"{v:+.6g} {names[c]}" for c, v in zip(A.indices[lo_:hi_], A.data[lo_:hi_]))
            lo, hi = self.row_lower[r], self.row_upper[r]
            if lo == hi:
                lines.append(f"  r{r}: {expr} = {lo:.6g}")
            elif np.isinf(lo):
                lines.append(f"  r{r}: {expr} <= {hi:.6g}")
            else:
                lines.append(f"  r{r}: {lo:.6g} <= {expr} <= {hi:.6g}")
        lines.append("bounds")
        lines.append("  all variables >= 0")
        return "\n".join(lines) + "\n"


def build_ap(cfg: NetworkConfig, state: SystemState, target, C: float = 1.0,
             tau: float | None = None) -> RepositionLP:
    """AP for one state.  ``target`` is a :class:`FluidSolution` or a
    :class:`FluidPoint` (fractions of the fleet)."""
    return APModel(cfg, target, C, tau).build(state)


def solve_ap(lp: RepositionLP) -> np.ndarray:
    """Floored repositioning action, one integer per repositioning pair."""
    return lp.solve().y
