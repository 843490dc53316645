"""Exponential cone geometry.

Two orientations are in play.  The public one, used by the fluid programs, is

    K = cl{(a1, a2, a3) : a3 <= a2 * log(a1 / a2), a1 > 0, a2 > 0}

and the standard one, used inside the solver, is

    K_std = cl{(r, s, t) : s * exp(r / s) <= t, s > 0}.

The map between them reverses the coordinate order: (a1, a2, a3) -> (a3, a2, a1).
All routines accept arrays of shape (..., 3).
"""
from __future__ import annotations

import numpy as np

_EXP_MAX = 700.0


def to_standard(v):
    """Reorder a-orientation triples into standard (r, s, t) triples."""
    return np.asarray(v, dtype=float)[..., ::-1].copy()


def from_standard(v):
    return np.asarray(v, dtype=float)[..., ::-1].copy()


# -- membership --------------------------------------------------------------
def in_cone_std(v, tol=0.0):
    """Exact membership test for K_std (up to an absolute slack ``tol``)."""
    v = np.asarray(v, dtype=float)
    r, s, t = v[..., 0], v[..., 1], v[..., 2]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        inner = (s > 0) & (t > 0) & (r <= s * np.log(np.where(t > 0, t, 1.0) / np.where(s > 0, s, 1.0)) + tol)
    ray = (np.abs(s) <= tol) & (r <= tol) & (t >= -tol)
    return inner | ray


def in_dual_std(v, tol=0.0):
    """Membership in the dual cone K_std* = cl{(u, v, w): u < 0, -u exp(v/u) <= e w}."""
    v = np.asarray(v, dtype=float)
    u, vv, w = v[..., 0], v[..., 1], v[..., 2]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ok = (u < 0) & (w > 0) & (vv >= u * (np.log(np.where(w > 0, w, 1.0) / np.where(u < 0, -u, 1.0)) + 1.0) - tol)
    ray = (np.abs(u) <= tol) & (vv >= -tol) & (w >= -tol)
    return ok | ray


def cone_violation_std(v):
    """Cheap upper bound on the Euclidean distance from ``v`` to K_std.

    Takes the smaller of the gaps along the t and r directions, so that at
    least one of them is well conditioned whatever the ratio r / s.
    """
    v = np.asarray(v, dtype=float)
    r, s, t = v[..., 0], v[..., 1], v[..., 2]
    pos = s > 0
    ss = np.where(pos, s, 1.0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        gap_t = np.maximum(ss * np.exp(np.minimum(r / ss, _EXP_MAX)) - t, 0.0)
        gap_r = np.where(t > 0, np.maximum(r - ss * np.log(np.where(t > 0, t, 1.0) / ss), 0.0), np.inf)
    gap = np.where(pos, np.minimum(gap_t, gap_r), np.inf)
    ray = np.abs(s) + np.maximum(r, 0.0) + np.maximum(-t, 0.0)
    return np.minimum(gap, ray)


def polar_violation_std(v):
    """Cheap upper bound on the distance from ``v`` to the polar cone -K_std*."""
    u = -np.asarray(v, dtype=float)
    a, b, c = u[..., 0], u[..., 1], u[..., 2]
    neg = a < 0
    aa = np.where(neg, a, -1.0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        gap_c = np.maximum(-aa * np.exp(np.minimum(b / aa, _EXP_MAX)) / np.e - c, 0.0)
        gap_b = np.where(c > 0, np.maximum(aa * (np.log(np.where(c > 0, c, 1.0) / -aa) + 1.0) - b, 0.0), np.inf)
    gap = np.where(neg, np.minimum(gap_c, gap_b), np.inf)
    ray = np.abs(a) + np.maximum(-b, 0.0) + np.maximum(-c, 0.0)
    return np.minimum(gap, ray)


# -- projection ----------------------------------------------------------------
def _h_and_slope(rho, r0, s0, t0, with_scale=False):
    """Root function of the one-dimensional projection condition and its derivative."""
    rho = np.clip(rho, -_EXP_MAX, _EXP_MAX)
    cp = (rho - 1.0) * r0 + s0
    cd = r0 - rho * s0
    D = rho * rho - rho + 1.0
    ep, em = np.exp(rho), np.exp(-rho)
    # far from the root these overflow; the safeguarded Newton bisects instead
    with np.errstate(over="ignore", invalid="ignore"):
        num = cp * ep - cd * em
        dnum = (r0 + cp) * ep + (s0 + cd) * em
        h = num / D - t0
        dh = (dnum * D - num * (2.0 * rho - 1.0)) / (D * D)
    if with_scale:
        # magnitude of the summands: below ~eps times this, h is rounding noise
        scale = (np.abs(cp * ep) + np.abs(cd * em)) / D + np.abs(t0) + np.abs(r0) + np.abs(s0)
        return h, dh, scale
    return h, dh


def _bracket(r0, s0):
    """Interval of rho on which both scalar multipliers stay positive."""
    lo = np.full(r0.shape, -np.inf)
    hi = np.full(r0.shape, np.inf)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        b1 = 1.0 - s0 / r0
        b2 = r0 / s0
    lo = np.where(r0 > 0, np.maximum(lo, b1), lo)
    hi = np.where(r0 < 0, np.minimum(hi, b1), hi)
    hi = np.where(s0 > 0, np.minimum(hi, b2), hi)
    lo = np.where(s0 < 0, np.maximum(lo, b2), lo)
    return lo, hi


def _solve_rho(r0, s0, t0, rho0=None, maxiter=200):
    lo, hi = _bracket(r0, s0)
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    rho = np.where(fin_lo & fin_hi, 0.5 * (lo + hi),
                   np.where(fin_lo, lo + 1.0, np.where(fin_hi, hi - 1.0, 0.0)))
    if rho0 is not None:
        rho0 = np.asarray(rho0, dtype=float)
        rho = np.where((rho0 > lo) & (rho0 < hi), rho0, rho)
    # Newton with a safeguard on the still-active entries: whenever the step
    # leaves the bracket or fails to halve the previous step, bisect, or step
    # outwards with doubling length while one end of the bracket is infinite
    act = np.arange(len(rho))
    prev = np.full(len(rho), np.inf)
    for _ in range(maxiter):
        r, l, u_, pv = rho[act], lo[act], hi[act], prev[act]
        h, dh, hs = _h_and_slope(r, r0[act], s0[act], t0[act], True)
        l = np.where(h < 0, r, l)
        u_ = np.where(h > 0, r, u_)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = r - h / dh
            bad = ~np.isfinite(step) | (step <= l) | (step >= u_) | (np.abs(step - r) > 0.5 * pv)
            reach = np.maximum(1.0, 2.0 * np.where(np.isfinite(pv), pv, 0.0))
            fallback = np.where(np.isinf(u_), r + reach,
                                np.where(np.isinf(l), r - reach, 0.5 * (l + u_)))
        new = np.clip(np.where(bad, fallback, step), -_EXP_MAX, _EXP_MAX)
        # h at r is already at rounding level: keep r itself
        flat = np.isfinite(hs) & (np.abs(h) <= 1e-14 * hs)
        new = np.where(flat, r, new)
        pv = np.abs(new - r)
        rho[act], lo[act], hi[act], prev[act] = new, l, u_, pv
        tol = 1e-13 * (1.0 + np.abs(new))
        live = (pv > tol) & ~flat & (u_ - l > tol)
        act = act[live]
        if not len(act):
            break
    return rho


def project_std(v, rho0=None, return_rho=False):
    """Euclidean projection onto K_std, vectorized over the leading axes.

    ``rho0`` optionally warm-starts the scalar root search (one value per
    triple); with ``return_rho`` the converged roots are also returned so an
    iterative caller can pass them back in on the next call.
    """
    v = np.asarray(v, dtype=float)
    shape = v.shape
    flat = v.reshape(-1, 3)
    r0, s0, t0 = flat[:, 0], flat[:, 1], flat[:, 2]
    out = np.zeros_like(flat)
    rho_out = np.zeros(len(flat)) if rho0 is None else np.array(rho0, dtype=float).reshape(-1).copy()

    in_k = in_cone_std(flat)
    in_polar = in_dual_std(-flat)
    out[in_k] = flat[in_k]
    neg = ~in_k & ~in_polar & (r0 <= 0) & (s0 <= 0)
    out[neg, 0] = r0[neg]
    out[neg, 2] = np.maximum(t0[neg], 0.0)

    rest = ~in_k & ~in_polar & ~neg
    if rest.any():
        r, s, t = r0[rest], s0[rest], t0[rest]
        rho = _solve_rho(r, s, t, None if rho0 is None else rho_out[rest])
        rho_c = np.clip(rho, -_EXP_MAX, _EXP_MAX)
        D = rho_c * rho_c - rho_c + 1.0
        cp = np.maximum(((rho_c - 1.0) * r + s) / D, 0.0)
        cd = np.maximum((r - rho_c * s) / D, 0.0)
        pt = flat[rest]
        ep = np.exp(rho_c)
        vp = cp[:, None] * np.stack([rho_c, np.ones_like(rho_c), ep], axis=1)
        vd = cd[:, None] * np.stack([np.ones_like(rho_c), 1.0 - rho_c, -1.0 / ep], axis=1)
        # The primal and dual formulas lose accuracy to cancellation in
        # different regimes; take the better conditioned of the two.
        with np.errstate(divide="ignore", invalid="ignore"):
            kp = np.abs((rho_c - 1.0) * r + s) / (np.abs((rho_c - 1.0) * r) + np.abs(s))
            kd = np.abs(r - rho_c * s) / (np.abs(r) + np.abs(rho_c * s))
        use_p = kp >= kd
        best = np.where(use_p[:, None], vp, pt - vd)
        hard = ~(np.maximum(kp, kd) > 1e-3) | (np.abs(rho_c) > 600) | ~np.isfinite(best).all(axis=1)
        if hard.any():
            best[hard] = _select(pt[hard], vp[hard], vd[hard])
        out[rest] = best
        rho_out[rest] = rho
    out = out.reshape(shape)
    if return_rho:
        return out, rho_out
    return out


def _select(pt, vp, vd):
    """Pick, among the root-based and closed-form candidates, the one that
    best satisfies the projection optimality conditions."""
    r, s, t = pt[:, 0], pt[:, 1], pt[:, 2]
    cand = np.stack([vp, pt - vd,
                     np.stack([np.minimum(r, 0.0), np.zeros_like(r), np.maximum(t, 0.0)], 1),
                     np.stack([r, np.maximum(s, 0.0), np.maximum(t, 0.0)], 1),
                     np.zeros_like(vp)], axis=0)
    cand = np.where(np.isfinite(cand), cand, 0.0)
    res = pt[None] - cand
    scale = 1.0 + np.linalg.norm(pt, axis=1)
    err = (cone_violation_std(cand) + polar_violation_std(res)
           + np.abs(np.sum(cand * res, axis=2)) / scale)
    pick = np.argmin(err, axis=0)
    return cand[pick, np.arange(len(pick))]


def project_dual_std(v):
    """Projection onto K_std* via the Moreau identity P_{K*}(y) = y + P_K(-y)."""
    v = np.asarray(v, dtype=float)
    return v + project_std(-v)


# -- public, a-orientation -------------------------------------------------------
def contains(point, tol: float = 0.0) -> bool | np.ndarray:
    """Whether ``point`` lies within Euclidean distance ``tol`` of K."""
    p = np.asarray(point, dtype=float)
    std = to_standard(p)
    exact = in_cone_std(std)
    if tol > 0:
        exact = exact | (np.linalg.norm(std - project_std(std), axis=-1) <= tol)
    return bool(exact) if exact.ndim == 0 else exact


def project(point) -> np.ndarray:
    """Euclidean projection onto K (a-orientation)."""
    return from_standard(project_std(to_standard(point)))


def project_polar(point) -> np.ndarray:
    """Projection onto the polar cone of K, i.e. ``point - project(point)``."""
    p = np.asarray(point, dtype=float)
    return p - project(p)


def dual_contains(point, tol: float = 0.0):
    """Membership in the dual cone of K (a-orientation)."""
    out = in_dual_std(to_standard(point), tol)
    return bool(out) if np.ndim(out) == 0 else out
