import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import example, given, strategies as st

from fleetflux import load_instance
from fleetflux.expcone import (AdmmOptions, ConeProgram, SolveStatus, contains, from_standard, project,
                               register_engine, solve, solve_admm, to_standard)
from fleetflux.expcone.admm import _polish_lp
from fleetflux.expcone.backends import available_engines
from fleetflux.expcone.cone import cone_violation_std, polar_violation_std
from fleetflux.fluid import build_program

import oracles

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)
points = st.tuples(finite, finite, finite).map(np.array)


def moreau_residual(p):
    """Largest violation of the projection characterization: P in K,
    p - P in the polar cone, and the two orthogonal."""
    P = project(p)
    r = p - P
    return max(float(cone_violation_std(to_standard(P))), float(polar_violation_std(to_standard(r))),
               abs(float(P @ r)) / (1 + float(np.linalg.norm(p))))


def random_points(n, seed=0):
    rng = np.random.default_rng(seed)
    scale = 10 ** rng.uniform(-2, 1.5, size=(n, 1))
    return rng.normal(size=(n, 3)) * scale


class TestContains:
    def test_examples(self):
        assert contains([1, 1, 0], 0)
        assert contains([1, 0, -1], 0)
        assert not contains([1, 1, 0.1], 1e-9)

    def test_tolerance_is_distance(self):
        assert contains([1, 1, 1e-10], 1e-9)
        assert not contains([1, 1, 1e-3], 1e-9)

    @given(points)
    def test_agrees_with_direct_predicate(self, p):
        inside = oracles.in_cone(p)
        # stay away from the boundary where rounding decides
        a1, a2, a3 = p
        if a2 > 0 and a1 > 0 and abs(a3 - a2 * math.log(a1 / a2)) < 1e-9:
            return
        if abs(a2) < 1e-12:
            return
        assert bool(contains(p)) == inside

    @given(points)
    def test_orientation_map_round_trip(self, p):
        assert np.array_equal(from_standard(to_standard(p)), p)
        assert np.array_equal(to_standard(from_standard(p)), p)


class TestProject:
    def test_interior_point_is_fixed(self):
        assert np.allclose(project([1, 1, -0.5]), [1, 1, -0.5], atol=1e-15)

    def test_matches_bruteforce_oracle(self):
        p = np.array([-1.0, -1.0, 1.0])
        ref = oracles.project_cone_bruteforce(p)
        assert np.allclose(project(p), ref, atol=1e-6)

    @pytest.mark.parametrize("p", [[2.0, -1.0, 3.0], [0.5, 2.0, 1.0], [-3.0, 0.2, -0.1], [4.0, 1.0, 5.0],
                                   [0.1, 0.1, 3.0], [-2.0, 3.0, -7.0]])
    def test_more_oracle_points(self, p):
        ref = oracles.project_cone_bruteforce(p)
        assert np.linalg.norm(project(p) - p) <= np.linalg.norm(ref - p) + 1e-9
        assert np.allclose(project(p), ref, atol=1e-6)

    @given(points)
    def test_idempotent(self, p):
        q = project(p)
        assert np.allclose(project(q), q, atol=1e-8 * (1 + np.abs(q).max()))
        assert contains(q, 1e-8 * (1 + np.abs(q).max()))

    @given(points)
    def test_moreau(self, p):
        assert moreau_residual(p) <= 1e-6 * (1 + np.abs(p).max())

    def test_points_in_cone_are_fixed(self, rng):
        s = rng.uniform(0.01, 5, 500)
        t = rng.uniform(-5, 5, 500)
        pts = np.stack([s * np.exp(t), s, s * t - rng.uniform(0, 3, 500)], axis=1)
        assert np.allclose(project(pts), pts, atol=1e-9)

    def test_batch_matches_single(self):
        pts = random_points(50)
        batch = project(pts)
        for p, q in zip(pts, batch):
            assert np.array_equal(project(p), q)


def random_lp(seed):
    """A bounded, feasible standard-form LP with up to 8 variables."""
    rng = np.random.default_rng(seed)
    n, m = rng.integers(3, 9), rng.integers(1, 4)
    A = rng.normal(size=(m, n))
    A[0] = np.abs(A[0]) + 0.1  # keeps the feasible set bounded
    x0 = rng.uniform(0, 1, n) * (rng.random(n) < 0.6)
    return rng.normal(size=n), A, A @ x0


def lp(c, A, b, nonneg=None):
    A = np.atleast_2d(np.asarray(A, float))
    n = A.shape[1]
    return ConeProgram(c, sp.csr_matrix(A), b, np.zeros((0, 3), int), np.arange(n) if nonneg is None else nonneg)


class TestSolve:
    def test_lp_vertex(self):
        rep = solve_admm(lp([1, 0], [[1, 1]], [1]))
        assert rep.ok
        assert rep.objective == pytest.approx(1.0, abs=1e-6)
        assert np.allclose(rep.x, [1, 0], atol=1e-6)

    def test_log_of_one(self):
        prog = ConeProgram([0, 0, 1], sp.csr_matrix([[1, 0, 0], [0, 1, 0]]), [1, 1], [[0, 1, 2]], [])
        rep = solve_admm(prog)
        assert rep.ok and rep.objective == pytest.approx(0.0, abs=1e-6)

    def test_log_two(self):
        prog = ConeProgram([0, 0, 1], sp.csr_matrix([[1, 0, 0], [0, 1, 0]]), [2, 1], [[0, 1, 2]], [])
        rep = solve_admm(prog)
        assert rep.ok
        assert rep.objective == pytest.approx(float(oracles.mpmath.log(2)), abs=1e-6)

    def test_infeasible_detected(self):
        rep = solve_admm(lp([1, 1], [[1, 1]], [-1]))
        assert rep.status == SolveStatus.INFEASIBLE

    def test_redundant_rows_dropped(self):
        prog = lp([1, 2, 0], [[1, 1, 1], [2, 2, 2], [0, 1, 0]], [3, 6, 1])
        reduced, keep = prog.presolve()
        assert reduced.m == 2
        rep = solve_admm(prog)
        assert rep.ok and rep.objective == pytest.approx(4.0, abs=1e-6)

    def test_inconsistent_rows_rejected(self):
        with pytest.raises(ValueError):
            lp([1, 0], [[1, 1], [2, 2]], [1, 3]).presolve()

    def test_overlapping_cones_rejected(self):
        with pytest.raises(ValueError):
            ConeProgram([0, 0, 1], None, [], [[0, 1, 2]], [2])

    @given(st.integers(0, 10_000))
    @example(8595)  # Anderson once drifted along a flat valley here, duals to 1e12
    @example(5023)  # ill-conditioned: duals near 90 for unit costs
    @example(8352)
    def test_random_lps_match_vertex_enumeration(self, seed):
        c, A, b = random_lp(seed)
        ref, _ = oracles.lp_vertex_max(c, A, b)
        rep = solve_admm(lp(c, A, b))
        assert rep.ok
        assert rep.objective == pytest.approx(ref, abs=1e-5 * (1 + abs(ref)))

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 8595])
    def test_plain_iteration_without_polish(self, seed):
        c, A, b = random_lp(seed)
        ref, _ = oracles.lp_vertex_max(c, A, b)
        rep = solve_admm(lp(c, A, b), AdmmOptions(polish=False))
        assert rep.ok and rep.message != "polished"
        assert rep.objective == pytest.approx(ref, abs=1e-5 * (1 + abs(ref)))

    def test_polish_rejects_wrong_active_set(self):
        # optimum is x = (1, 0); fixing x0 at zero gives a feasible but worse point
        prog = lp([1, 0], [[1, 1]], [1])
        assert _polish_lp(prog, np.array([True, False]), AdmmOptions()) is None
        v, y = _polish_lp(prog, np.array([False, True]), AdmmOptions())
        assert np.allclose(v, [1, 0]) and np.allclose(y, [1])

    def test_deterministic(self):
        prog = build_program(load_instance(1), "FP1").program
        a, b = solve_admm(prog), solve_admm(prog)
        assert np.array_equal(a.x, b.x) and a.iterations == b.iterations

    @pytest.mark.parametrize("instance", [1, 2, 3])
    @pytest.mark.parametrize("anderson", [30, 0])
    def test_residual_windows_do_not_grow(self, instance, anderson):
        prog = build_program(load_instance(instance), "FP1").program
        rep = solve_admm(prog, AdmmOptions(record_history=True, anderson=anderson))
        assert rep.ok
        it = np.array([h[0] for h in rep.history])
        res = np.array([h[4] for h in rep.history])
        windows = [res[(it >= w) & (it < w + 100)] for w in range(0, int(it[-1]) + 1, 100)]
        peaks = np.array([w.max() for w in windows if len(w)])
        assert len(peaks) >= 2
        assert np.all(peaks[1:] <= 1.05 * peaks[:-1])

    def test_report_meets_tolerances(self):
        prog = build_program(load_instance(2), "FP1").program
        rep = solve_admm(prog)
        assert rep.eq_residual <= 1e-6 * (1 + np.linalg.norm(prog.b))
        assert rep.cone_violation <= 1e-6


class TestEngines:
    def test_external_registered(self):
        assert "external" in available_engines()

    def test_external_agrees_with_builtin(self):
        prog = build_program(load_instance(3), "FP1").program
        a, b = solve(prog, engine="builtin"), solve(prog, engine="external")
        assert a.ok and b.ok
        assert a.objective == pytest.approx(b.objective, rel=1e-5)

    def test_environment_selects_engine(self, monkeypatch):
        prog = lp([1, 0], [[1, 1]], [1])
        monkeypatch.setenv("FLEETFLUX_ENGINE", "external")
        assert solve(prog).engine == "external"
        monkeypatch.setenv("FLEETFLUX_ENGINE", "builtin")
        assert solve(prog).engine == "builtin"

    def test_custom_engine(self):
        calls = []

        def fake(prog, opts=None):
            calls.append(prog.n)
            return solve_admm(prog, opts)

        register_engine("recording", fake)
        assert solve(lp([1, 0], [[1, 1]], [1]), engine="recording").ok
        assert calls == [2]

    def test_unknown_engine(self):
        with pytest.raises(ValueError):
            solve(lp([1, 0], [[1, 1]], [1]), engine="nope")
