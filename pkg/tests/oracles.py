"""Reference computations that share no code with the package.

Each oracle solves its problem by brute force or high-precision arithmetic,
so agreement with the package is evidence rather than tautology.
"""
from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np
from scipy import optimize

mpmath.mp.dps = 50


# -- closed forms in high precision ------------------------------------------------
def pickup_class_hp(omega, sigma, radii, idle, k):
    """``exp(-omega r_{k-1}^2 a / sigma) - exp(-omega r_k^2 a / sigma)`` with r_0 = 0."""
    r = [mpmath.mpf(0)] + [mpmath.mpf(x) for x in radii]
    c = mpmath.mpf(omega) * idle / mpmath.mpf(sigma)
    return float(mpmath.exp(-c * r[k - 1] ** 2) - mpmath.exp(-c * r[k] ** 2))


def sigmoid_hp(alpha, beta, price):
    z = mpmath.mpf(alpha) - mpmath.mpf(beta) * mpmath.mpf(price)
    return float(mpmath.e ** z / (1 + mpmath.e ** z))


# -- exponential cone, a-orientation: a3 <= a2 log(a1 / a2) -------------------------------
def in_cone(v, tol=0.0):
    a1, a2, a3 = map(float, v)
    if a2 > 0:
        return a1 > 0 and a3 <= a2 * math.log(a1 / a2) + tol
    return abs(a2) <= tol and a1 >= -tol and a3 <= tol


def project_cone_bruteforce(v):
    """Nearest point of the cone by minimizing over a boundary parametrization.

    Candidates: ``v`` itself when inside, the origin, the projection onto the
    ray face ``{(a1, 0, a3): a1 >= 0, a3 <= 0}`` and the best point of the
    curved face ``(a2 e^t, a2, a2 t)``, found on a dense (log a2, t) grid and
    refined with Nelder-Mead.
    """
    v = np.asarray(v, dtype=float)
    if in_cone(v):
        return v.copy()
    cands = [np.zeros(3), np.array([max(v[0], 0.0), 0.0, min(v[2], 0.0)])]

    def surf(z):
        s, t = math.exp(z[0]), z[1]
        return np.array([s * math.exp(t), s, s * t])

    def dist(z):
        if abs(z[1]) > 60 or abs(z[0]) > 60:
            return 1e300
        return float(np.sum((surf(z) - v) ** 2))

    scale = max(1.0, float(np.abs(v).max()))
    grid = [(ls, t) for ls in np.linspace(-12, math.log(10 * scale), 121) for t in np.linspace(-15, 15, 121)]
    best = min(grid, key=dist)
    res = optimize.minimize(dist, best, method="Nelder-Mead",
                            options={"xatol": 1e-13, "fatol": 1e-30, "maxiter": 20000, "maxfev": 40000})
    cands.append(surf(res.x))
    return min(cands, key=lambda c: float(np.sum((c - v) ** 2)))


# -- linear programming by vertex enumeration -----------------------------------------
def lp_vertex_max(c, A, b):
    """max ``c @ x`` s.t. ``A x = b``, ``x >= 0`` by enumerating every basis.

    Returns ``(value, x)`` or ``(None, None)`` when no basic feasible
    solution exists.  Meant for a handful of rows and at most ~20 columns.
    """
    c, A, b = (np.asarray(z, dtype=float) for z in (c, A, b))
    m, n = A.shape
    rank = np.linalg.matrix_rank(A)
    if rank < m:  # keep an independent subset of rows
        rows = []
        for r in range(m):
            if np.linalg.matrix_rank(A[rows + [r]]) > len(rows):
                rows.append(r)
        A, b, m = A[rows], b[rows], len(rows)
    best, arg = None, None
    for basis in itertools.combinations(range(n), m):
        B = A[:, basis]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        if np.any(xb < -1e-9):
            continue
        x = np.zeros(n)
        x[list(basis)] = xb
        val = float(c @ x)
        if best is None or val > best + 1e-12:
            best, arg = val, x
    return best, arg


def lp_vertex_min(c, A, b):
    val, x = lp_vertex_max(-np.asarray(c, dtype=float), A, b)
    return (None, None) if val is None else (-val, x)


# -- the repositioning LP written out by hand ------------------------------------------
def ap_lp(zones, trips, reps, K, a, d, e, f, ta, td, te, tf, nu, mu, mu_t, rate, C, tau, psi):
    """Assemble the repositioning LP from its balance equations.

    ``trips`` and ``reps`` are lists of (i, j); ``d``/``td`` are dicts keyed
    by (trip index, class); ``rate`` maps (trip index, class) to the
    per-car flow rate ``lam p q`` (arcs with zero rate get no d+ column).
    Returns ``(cost, A_eq, b_eq, names)`` in equality form with one slack per
    idle-car row.
    """
    cols = []
    for r, (i, j) in enumerate(reps):
        cols.append(("y", r))
    for t in range(len(trips)):
        for k in range(K):
            if rate.get((t, k), 0.0) > 0:
                cols.append(("d+", (t, k)))
    for t in range(len(trips)):
        for k in range(K):
            cols.append(("d-", (t, k)))
    for r in range(len(reps)):
        cols.append(("e+", r))
    for r in range(len(reps)):
        cols.append(("e-", r))
    for t in range(len(trips)):
        cols.append(("f-", t))
    for i in range(zones):
        cols.append(("slack", i))
    idx = {c: n for n, c in enumerate(cols)}
    n = len(cols)
    cost = np.zeros(n)
    for (kind, key), col in idx.items():
        if kind == "y":
            cost[col] = psi[key]
        elif kind == "d+":
            cost[col] = C / rate[key]
        elif kind == "d-":
            cost[col] = C / nu[key[1]]
        elif kind == "e+":
            cost[col] = C / tau
        elif kind == "e-":
            cost[col] = C / mu_t[key]
        elif kind == "f-":
            cost[col] = C / mu[key]
    rows, rhs = [], []

    def row():
        rows.append(np.zeros(n))
        return rows[-1]

    # idle balance at each zone
    for z in range(zones):
        w = row()
        for t, (i, j) in enumerate(trips):
            if j == z:
                w[idx[("f-", t)]] += 1
        for r, (i, j) in enumerate(reps):
            if j == z:
                w[idx[("e-", r)]] += 1
            if i == z:
                w[idx[("y", r)]] -= 1
                w[idx[("e+", r)]] -= 1
        for t, (i, j) in enumerate(trips):
            if i == z:
                for k in range(K):
                    if ("d+", (t, k)) in idx:
                        w[idx[("d+", (t, k))]] -= 1
        rhs.append(ta[z] - a[z])
    for t in range(len(trips)):
        for k in range(K):
            w = row()
            w[idx[("d-", (t, k))]] -= 1
            if ("d+", (t, k)) in idx:
                w[idx[("d+", (t, k))]] += 1
            rhs.append(td[(t, k)] - d[(t, k)])
    for r in range(len(reps)):
        w = row()
        w[idx[("e-", r)]] -= 1
        w[idx[("y", r)]] += 1
        w[idx[("e+", r)]] += 1
        rhs.append(te[r] - e[r])
    for t in range(len(trips)):
        w = row()
        w[idx[("f-", t)]] -= 1
        for k in range(K):
            w[idx[("d-", (t, k))]] += 1
        rhs.append(tf[t] - f[t])
    # sum_j y_ij + slack_i = a_i
    for z in range(zones):
        w = row()
        for r, (i, j) in enumerate(reps):
            if i == z:
                w[idx[("y", r)]] += 1
        w[idx[("slack", z)]] = 1
        rhs.append(a[z])
    return cost, np.array(rows), np.array(rhs), cols


# -- continuous-time Markov chains ---------------------------------------------------
def stationary(Q):
    """Stationary distribution of generator ``Q`` (rows sum to zero)."""
    n = Q.shape[0]
    M = np.vstack([Q.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return pi


def compositions(total, parts):
    """All tuples of ``parts`` nonnegative integers summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in compositions(total - head, parts - 1):
            yield (head,) + tail


def one_zone_chain(N, lam, nu, mu, omega, sigma, radius, accept):
    """Single zone, one class, self-loop trips: states ``(a, d, f)``.

    Returns ``(states, Q, dispatch_rate)`` where ``dispatch_rate[s]`` is the
    dispatch intensity ``N lam (1 - exp(-omega r^2 a / sigma)) accept``.
    """
    states = list(compositions(N, 3))
    pos = {s: n for n, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    disp = np.zeros(len(states))
    for s in states:
        a, d, f = s
        n = pos[s]
        rd = N * lam * (1 - math.exp(-omega * radius**2 * a / sigma)) * accept
        disp[n] = rd
        moves = [((a - 1, d + 1, f), rd), ((a, d - 1, f + 1), nu * d), ((a + 1, d, f - 1), mu * f)]
        for t, r in moves:
            if r > 0:
                Q[n, pos[t]] += r
        Q[n, n] = -Q[n].sum()
    return states, Q, disp


def two_zone_extension_chain(N, lam, nu, mu, mu_t, omega, sigma, radius, accept, zeta, ytilde):
    """Two zones, trips 0->1 and 1->0 with one class, repositioning both ways.

    Cars move on arrival with the static probabilities ``ytilde[j, other]``
    and repositioning cars heading into a zone serve its requests with
    weight ``zeta``; a car taken that way abandons its trip.

    State ``(a0, a1, d01, d10, f01, f10, e01, e10)``.  Returns the states,
    the generator and a dict of per-state rates by event category:
    ``dispatch``, ``dispatch_from_rep``, ``pickup``, ``dropoff``,
    ``reposition_arrival``.
    """
    states = list(compositions(N, 8))
    pos = {s: n for n, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    cats = {c: np.zeros(len(states)) for c in
            ("dispatch", "dispatch_from_rep", "pickup", "dropoff", "reposition_arrival")}

    def add(n, target, rate, cat):
        if rate <= 0:
            return
        Q[n, pos[tuple(target)]] += rate
        cats[cat][n] += rate

    for s in states:
        n = pos[s]
        a0, a1, d01, d10, f01, f10, e01, e10 = s
        A, D, F, E = [a0, a1], [d01, d10], [f01, f10], [e01, e10]
        for i in (0, 1):
            j = 1 - i
            inbound = E[j]  # the repositioning pair (j, i) heads into i
            avail = A[i] + zeta * inbound
            if avail > 0:
                rate = N * lam[i] * (1 - math.exp(-omega * radius**2 * avail / sigma)) * accept[i]
                w_idle = A[i] / avail
                t = list(s)
                t[2 + i] += 1
                if A[i]:
                    t1 = list(t)
                    t1[i] -= 1
                    add(n, t1, rate * w_idle, "dispatch")
                if inbound and zeta > 0:
                    t2 = list(t)
                    t2[6 + j] -= 1
                    add(n, t2, rate * (1 - w_idle), "dispatch_from_rep")
            # pickup on trip i -> j
            t = list(s)
            t[2 + i] -= 1
            t[4 + i] += 1
            add(n, t, nu * D[i], "pickup")
            # drop-off at j, then stay or reposition back towards i
            for moved, prob in ((False, 1 - ytilde[j]), (True, ytilde[j])):
                t = list(s)
                t[4 + i] -= 1
                if moved:
                    t[6 + j] += 1
                else:
                    t[j] += 1
                add(n, t, mu * F[i] * prob, "dropoff")
            # repositioning car i -> j arrives at j
            for moved, prob in ((False, 1 - ytilde[j]), (True, ytilde[j])):
                t = list(s)
                t[6 + i] -= 1
                if moved:
                    t[6 + j] += 1
                else:
                    t[j] += 1
                add(n, t, mu_t * E[i] * prob, "reposition_arrival")
        Q[n, n] = -Q[n].sum()
    return states, Q, cats


# -- fluid toy -----------------------------------------------------------------------
def one_zone_fluid_bruteforce(lam, nu, mu, alpha, beta, omega, sigma, delta):
    """Best revenue of the single-zone, single-class fluid problem.

    With mass one split into idle ``a``, en-route ``d`` and occupied
    ``f = nu d / mu``, the price is pinned by the take-up ``nu d = lam q P``
    with ``q = 1 - exp(-omega delta^2 a / sigma)``.  A dense grid over ``d``
    brackets the optimum and a bounded scalar search refines it.
    Returns ``(revenue, a, d, price)``.
    """
    def parts(d):
        a = 1.0 - d - nu * d / mu
        if a <= 0 or d <= 0:
            return None
        q = 1.0 - math.exp(-omega * delta**2 * a / sigma)
        P = nu * d / (lam * q) if q > 0 else 2.0
        if P >= 1:
            return None
        x = (alpha - math.log(P / (1 - P))) / beta
        return nu * d * x, a, x

    d_max = 1.0 / (1.0 + nu / mu)

    def neg(d):
        r = parts(d)
        return 1e9 if r is None else -r[0]

    grid = np.linspace(1e-9, d_max * (1 - 1e-12), 200001)
    vals = np.array([neg(d) for d in grid])
    n = int(np.argmin(vals))
    lo, hi = grid[max(n - 1, 0)], grid[min(n + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
    rev, a, x = parts(res.x)
    return rev, a, res.x, x
