"""Operator-splitting solver for :class:`ConeProgram`.

The program is rewritten as

    minimize q @ x   subject to   z = G x,  z in C

where the rows of ``G`` are the equality rows (``C = {b}``), one selector row
per nonnegative variable (``C = R+``) and three selector rows per
exponential-cone block (``C = K_std``).  Each iteration solves one linear
system with the fixed matrix ``sigma I + G' R G``, projects onto ``C`` and
updates the multipliers.  ``R`` is a diagonal step size which is constant on
each cone block and is re-balanced every few iterations from the ratio of
primal to dual residuals.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack
import scipy.sparse as sp

from .cone import cone_violation_std, in_dual_std, project_std
from .program import ConeProgram, SolveReport, SolveStatus


@dataclass
class AdmmOptions:
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    eps_infeas: float = 1e-8
    max_iter: int = 50000
    time_limit: float = 60.0
    relaxation: float = 1.8
    sigma: float = 1e-6
    rho: float = 0.1
    rho_eq_factor: float = 1e3
    adapt_every: int = 25
    adapt_tolerance: float = 5.0
    adapt_growth: float = 1.5
    anderson: int = 30
    anderson_safeguard: float = 1.0
    anderson_max_step: float = 1e3
    scaling_iters: int = 25
    check_every: int = 25
    presolve: bool = True
    # exact re-solve on the guessed active set (programs without exp cones)
    polish: bool = True
    record_history: bool = False


class _Layout:
    """Row structure of ``G`` and the projection onto ``C``."""

    def __init__(self, prog: ConeProgram):
        n = prog.n
        self.m_eq = prog.m
        self.n_pos = len(prog.nonneg)
        self.n_exp = len(prog.exp_cones)
        rows = [prog.A]
        eye = sp.identity(n, format="csr")
        if self.n_pos:
            rows.append(eye[prog.nonneg])
        if self.n_exp:
            # standard (r, s, t) order is the reverse of the program's order
            rows.append(eye[prog.exp_cones[:, ::-1].ravel()])
        self.G = sp.vstack(rows, format="csr") if rows else sp.csr_matrix((0, n))
        self.m = self.G.shape[0]
        self.s_eq = slice(0, self.m_eq)
        self.s_pos = slice(self.m_eq, self.m_eq + self.n_pos)
        self.s_exp = slice(self.m_eq + self.n_pos, self.m)
        self.rho_ws = None

    def block_ids(self):
        """Row -> block id, so that scalings can be shared within a cone."""
        ids = np.arange(self.m)
        e0 = self.s_exp.start
        ids[self.s_exp] = e0 + np.repeat(np.arange(self.n_exp), 3)
        return ids

    def project(self, w, b_eq):
        z = np.empty_like(w)
        z[self.s_eq] = b_eq
        z[self.s_pos] = np.maximum(w[self.s_pos], 0.0)
        if self.n_exp:
            proj, self.rho_ws = project_std(w[self.s_exp].reshape(-1, 3), self.rho_ws, return_rho=True)
            z[self.s_exp] = proj.ravel()
        return z


def _ruiz(G, block_ids, iters):
    """Row/column equilibration; rows of one cone block share a factor."""
    m, n = G.shape
    D, E = np.ones(m), np.ones(n)
    M = abs(G).tocsr()
    for _ in range(iters):
        S = sp.diags(D) @ M @ sp.diags(E)
        row = np.asarray(S.max(axis=1).todense()).ravel() if m else np.zeros(0)
        col = np.asarray(S.max(axis=0).todense()).ravel()
        # share the row factor across each exponential block
        blk = np.zeros(block_ids.max() + 1 if m else 0)
        np.maximum.at(blk, block_ids, row)
        row = blk[block_ids]
        row = np.where(row > 1e-8, row, 1.0)
        col = np.where(col > 1e-8, col, 1.0)
        D /= np.sqrt(row)
        E /= np.sqrt(col)
        if np.all(np.abs(row - 1) < 1e-3) and np.all(np.abs(col - 1) < 1e-3):
            break
    return np.clip(D, 1e-4, 1e4), np.clip(E, 1e-4, 1e4)


def solve_admm(prog: ConeProgram, opts: AdmmOptions | None = None) -> SolveReport:
    opts = opts or AdmmOptions()
    t0 = time.perf_counter()
    m_orig = prog.m
    if opts.presolve:
        try:
            prog, kept = prog.presolve()
        except ValueError as exc:
            x = np.zeros(prog.n)
            return SolveReport(SolveStatus.INFEASIBLE, x, float("nan"), float("inf"), 0.0, 0,
                               time.perf_counter() - t0, message=str(exc))
    else:
        kept = np.arange(prog.m)
    lay = _Layout(prog)
    n, m = prog.n, lay.m
    q = -prog.c
    b_eq = prog.b

    ids = lay.block_ids()
    D, E = _ruiz(lay.G, ids, opts.scaling_iters)
    Gs = (sp.diags(D) @ lay.G @ sp.diags(E)).tocsr()
    qs = E * q
    cost_scale = 1.0 / max(1.0, np.abs(qs).max(initial=0.0))
    qs *= cost_scale
    bs = D[lay.s_eq] * b_eq
    Gd = Gs.toarray()
    GsT = Gs.T.tocsr()

    def rho_vector(rho):
        r = np.full(m, rho)
        r[lay.s_eq] = rho * opts.rho_eq_factor
        return r

    def factor(Rv):
        K = opts.sigma * np.eye(n) + Gd.T @ (Rv[:, None] * Gd)
        c, info = lapack.dpotrf(K, lower=True)
        if info:
            raise np.linalg.LinAlgError("KKT matrix is not positive definite")
        return c

    rho = opts.rho
    Rv = rho_vector(rho)
    fac = factor(Rv)
    alpha = opts.relaxation

    # The iterate is (x, w) with w the point about to be projected:
    # z = P_C(w) and y = R (w - z) are recovered from it, so every w gives a
    # consistent primal-dual pair, which is what makes extrapolation safe.
    def split(w):
        z = lay.project(w, bs)
        return z, Rv * (w - z)

    def step(x, w):
        z, y = split(w)
        rhs = opts.sigma * x - qs + GsT @ (Rv * z - y)
        xt = lapack.dpotrs(fac, rhs, lower=True)[0]
        zt = Gs @ xt
        x_new = alpha * xt + (1 - alpha) * x
        w_new = alpha * zt + (1 - alpha) * z + y / Rv
        return x_new, w_new, z, y

    x = np.zeros(n)
    w = np.zeros(m)
    aa = _Anderson(opts.anderson, max_step=opts.anderson_max_step)
    history = []
    status = SolveStatus.ITERATION_LIMIT
    Dinv, Einv = 1.0 / D, 1.0 / E
    it = 0
    gap = float("nan")
    msg = ""
    adapt_gap = opts.adapt_every
    next_adapt = adapt_gap
    res_prev = None
    fallback = None
    x_last = y_last = None
    polished = None
    tried = None
    can_polish = opts.polish and lay.n_exp == 0
    for it in range(1, opts.max_iter + 1):
        x_new, w_new, z, y = step(x, w)
        res = np.sqrt(np.sum((x_new - x) ** 2) + np.sum((w_new - w) ** 2))
        if fallback is not None and res > opts.anderson_safeguard * res_prev:
            # the extrapolated point made things worse: take the plain step
            x, w = fallback
            aa.reset()
            x_new, w_new, z, y = step(x, w)
            res = np.sqrt(np.sum((x_new - x) ** 2) + np.sum((w_new - w) ** 2))
        # (xc, z, y) is the primal-dual iterate this step started from
        xc = x
        cand = aa.update(np.concatenate([x, w]), np.concatenate([x_new, w_new]))
        if cand is not None:
            fallback = (x_new, w_new)
            x, w = cand[:n], cand[n:]
        else:
            fallback = None
            x, w = x_new, w_new
        res_prev = res
        x_last_it, y_last_it = x_last, y_last
        x_last, y_last = xc, y

        if it % opts.check_every and it != opts.max_iter:
            continue
        Gx = Gs @ xc
        prim_vec = Dinv * (Gx - z)
        Gty = GsT @ y
        dual_vec = Einv * (qs + Gty) / cost_scale
        prim = np.abs(prim_vec).max(initial=0.0)
        dual = np.abs(dual_vec).max(initial=0.0)
        pobj = qs @ xc / cost_scale
        dobj = -(bs @ y[lay.s_eq]) / cost_scale
        gap = abs(pobj - dobj)
        prim_scale = max(np.abs(Dinv * Gx).max(initial=0.0), np.abs(Dinv * z).max(initial=0.0))
        dual_scale = max(np.abs(Einv * Gty).max(initial=0.0) / cost_scale, np.abs(q).max(initial=0.0))
        if opts.record_history:
            history.append((it, prim, dual, gap, res))
        if (prim <= opts.eps_abs + opts.eps_rel * prim_scale
                and dual <= opts.eps_abs + opts.eps_rel * dual_scale
                and gap <= opts.eps_abs + opts.eps_rel * max(abs(pobj), abs(dobj))):
            status = SolveStatus.OPTIMAL
            break
        if can_polish:
            # bound active where the projection clipped more than it kept
            active = (z[lay.s_pos] < -y[lay.s_pos])
            if tried is None or not np.array_equal(active, tried):
                tried = active
                polished = _polish_lp(prog, active, opts)
                if polished is not None:
                    status, msg = SolveStatus.OPTIMAL, "polished"
                    break
        if x_last_it is not None:
            cert = _infeasibility(lay, Gd, qs, bs, xc - x_last_it, y - y_last_it, opts.eps_infeas)
            if cert is not None:
                status, msg = cert
                break
        if time.perf_counter() - t0 > opts.time_limit:
            msg = "time limit reached"
            break
        if it >= next_adapt:
            next_adapt = it + adapt_gap
            # balance the residuals of the scaled problem
            pr = np.abs(Gx - z).max(initial=0.0) / max(np.abs(Gx).max(initial=0.0), np.abs(z).max(initial=0.0), 1e-12)
            du = np.abs(qs + Gty).max(initial=0.0) / max(np.abs(Gty).max(initial=0.0), np.abs(qs).max(initial=0.0), 1e-12)
            new_rho = float(np.clip(rho * np.sqrt(pr / max(du, 1e-16)), 1e-6, 1e6))
            if new_rho > rho * opts.adapt_tolerance or new_rho < rho / opts.adapt_tolerance:
                rho = new_rho
                # space out later changes: each one restarts part of the progress
                adapt_gap = int(adapt_gap * opts.adapt_growth)
                next_adapt = it + adapt_gap
                # keep (z, y) and re-express w for the new step size
                z_cur, y_cur = split(w)
                Rv = rho_vector(rho)
                w = z_cur + y_cur / Rv
                fac = factor(Rv)
                aa.reset()
                fallback = None

    v = E * xc
    y_orig = D * y / cost_scale
    y_eq = np.zeros(m_orig)
    y_eq[kept] = y_orig[lay.s_eq]
    if polished is not None:
        v, y_eq[kept] = polished
        gap = abs(prog.objective(v) - prog.offset - float(prog.b @ polished[1]))
    return SolveReport(
        status=status,
        x=v,
        objective=prog.objective(v),
        eq_residual=prog.equality_residual(v),
        cone_violation=prog.cone_violation(v),
        iterations=it,
        wall_time=time.perf_counter() - t0,
        gap=float(gap),
        y_eq=y_eq,
        engine="builtin",
        message=msg,
        history=history,
    )


class _Anderson:
    """Type-II Anderson acceleration for a fixed-point map ``s -> f(s)``.

    ``update`` takes the latest pair and returns the extrapolated point, or
    ``None`` while there is no history yet.  Differences live in a ring
    buffer and their Gram matrix is updated one row at a time.
    """

    def __init__(self, memory: int, reg: float = 1e-8, max_step: float = np.inf):
        self.memory = memory
        self.reg = reg
        self.max_step = max_step
        self.dG = self.dF = None
        self.reset()

    def reset(self):
        self.count = 0
        self.head = 0
        self.last = None

    def update(self, s, f):
        if self.memory <= 0:
            return None
        g = f - s
        if self.dG is None:
            self.dG = np.zeros((self.memory, len(s)))
            self.dF = np.zeros((self.memory, len(s)))
            self.M = np.zeros((self.memory, self.memory))
        if self.last is None:
            self.last = (g, f)
            return None
        g0, f0 = self.last
        self.last = (g, f)
        h = self.head
        self.dG[h] = g - g0
        self.dF[h] = f - f0
        self.head = (h + 1) % self.memory
        self.count = min(self.count + 1, self.memory)
        k = self.count
        col = self.dG[:k] @ self.dG[h]
        self.M[h, :k] = col
        self.M[:k, h] = col
        M = self.M[:k, :k].copy()
        M[np.diag_indices(k)] += self.reg * np.trace(M) / k + 1e-300
        try:
            gamma = np.linalg.solve(M, self.dG[:k] @ g)
        except np.linalg.LinAlgError:
            self.reset()
            return None
        jump = gamma @ self.dF[:k]
        # a long jump along a nearly flat residual valley can strand the
        # iterate far from the solution, so such candidates are dropped
        if not np.all(np.isfinite(jump)) or np.linalg.norm(jump) > self.max_step * np.linalg.norm(g):
            self.reset()
            return None
        return f - jump


def _polish_lp(prog: ConeProgram, active, opts: AdmmOptions):
    """Solve the LP exactly with the variables in ``active`` fixed at zero.

    Returns ``(v, y)`` when the result is primal and dual feasible with a
    matching objective at the solver tolerances, else ``None``.
    """
    A = prog.A.toarray() if sp.issparse(prog.A) else np.asarray(prog.A, dtype=float)
    b, c = prog.b, prog.c
    fixed = np.zeros(prog.n, dtype=bool)
    fixed[prog.nonneg[active]] = True
    free = ~fixed
    AF = A[:, free]
    v = np.zeros(prog.n)
    v[free] = np.linalg.lstsq(AF, b, rcond=None)[0]
    y = np.linalg.lstsq(AF.T, c[free], rcond=None)[0]
    slack = A.T @ y - c  # reduced costs: zero on free columns, >= 0 on fixed ones
    tol = lambda scale: opts.eps_abs + opts.eps_rel * scale  # noqa: E731
    scale_p = max(np.abs(b).max(initial=0.0), np.abs(A @ v).max(initial=0.0))
    scale_d = max(np.abs(c).max(initial=0.0), np.abs(A.T @ y).max(initial=0.0))
    pobj, dobj = float(c @ v), float(b @ y)
    ok = (np.abs(A @ v - b).max(initial=0.0) <= tol(scale_p)
          and v[prog.nonneg].min(initial=0.0) >= -tol(scale_p)
          and np.abs(slack[free]).max(initial=0.0) <= tol(scale_d)
          and slack[fixed].min(initial=0.0) >= -tol(scale_d)
          and abs(pobj - dobj) <= tol(max(abs(pobj), abs(dobj))))
    if not ok:
        return None
    v[prog.nonneg] = np.maximum(v[prog.nonneg], 0.0)
    return v, y


def _infeasibility(lay, Gd, qs, bs, dx, dy, eps):
    """Heuristic certificates from successive iterate differences."""
    ny = np.abs(dy).max(initial=0.0)
    if ny > 0:
        ok_cone = np.all(dy[lay.s_pos] <= eps * ny)
        if lay.n_exp:
            ok_cone = ok_cone and bool(np.all(in_dual_std(-dy[lay.s_exp].reshape(-1, 3), eps * ny)))
        if (ok_cone and np.abs(Gd.T @ dy).max(initial=0.0) <= eps * ny
                and bs @ dy[lay.s_eq] < -eps * ny):
            return SolveStatus.INFEASIBLE, "primal infeasibility certificate"
    nx = np.abs(dx).max(initial=0.0)
    if nx > 0 and qs @ dx < -eps * nx:
        Gdx = Gd @ dx
        ok = np.abs(Gdx[lay.s_eq]).max(initial=0.0) <= eps * nx
        ok = ok and np.all(Gdx[lay.s_pos] >= -eps * nx)
        if ok and lay.n_exp:
            ok = bool(np.all(cone_violation_std(Gdx[lay.s_exp].reshape(-1, 3)) <= eps * nx))
        if ok:
            return SolveStatus.UNBOUNDED, "dual infeasibility certificate"
    return None
