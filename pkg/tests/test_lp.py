import itertools

import numpy as np
import pytest

from fleetflux import APModel, ConfigError, FluidPoint, SystemState
from fleetflux.lp import build_ap, default_tau, solve_ap
from fleetflux.simulator import apply_repositioning

import oracles
from conftest import N, fluid, loops_config, state, target_point, tiny_config

def oracle(cfg, tgt, s, C=1.0, tau=None):
    tau = default_tau(cfg) if tau is None else tau
    K = cfg.max_classes
    P = len(cfg.trip_pairs)
    rate = {(t, k): cfg.lam[t] * tgt.p[t, k] * tgt.q[cfg.trip_origin[t], k] for t in range(P) for k in range(K)}
    key = lambda arr: {(t, k): float(arr[t, k]) for t in range(P) for k in range(K)}  # noqa: E731
    cost, A, b, cols = oracles.ap_lp(
        cfg.n_zones, list(cfg.trip_pairs), list(cfg.reposition_pairs), K, s.a, key(s.d), s.e, s.f,
        N * tgt.a, key(N * tgt.d), N * tgt.e, N * tgt.f, cfg.nu, cfg.mu, cfg.mu_tilde, rate, C, tau, cfg.psi)
    val, x = oracles.lp_vertex_min(cost, A, b)
    return val, dict(zip(cols, x))


class TestExamples:
    def test_target_state_costs_nothing(self):
        cfg = loops_config()
        tgt = target_point(cfg)
        sol = build_ap(cfg, state(cfg, [1, 1], [1, 1]), tgt).solve()
        assert sol.ok and sol.objective == pytest.approx(0.0, abs=1e-12)
        assert not sol.y.any()

    def test_surplus_idle_car_is_moved_now(self):
        cfg = loops_config()
        tgt = target_point(cfg)
        s = state(cfg, [2, 0], [1, 1])
        sol = build_ap(cfg, s, tgt).solve()
        ref, x = oracle(cfg, tgt, s)
        assert sol.objective == pytest.approx(ref, rel=1e-9)
        r01 = cfg.reposition_index(0, 1)
        assert sol.y[r01] == 1 and sol.y.sum() == 1
        assert x[("y", r01)] == pytest.approx(1.0)
        assert np.allclose(sol.deferred, 0.0)

    def test_surplus_on_trip_is_deferred(self):
        cfg = loops_config()
        tgt = target_point(cfg)
        s = state(cfg, [0, 0], [3, 1])
        sol = build_ap(cfg, s, tgt).solve()
        ref, x = oracle(cfg, tgt, s)
        assert sol.objective == pytest.approx(ref, rel=1e-9)
        assert not sol.y.any()
        r01 = cfg.reposition_index(0, 1)
        assert sol.deferred[r01] == pytest.approx(1.0)
        assert x[("e+", r01)] == pytest.approx(1.0)

    def test_floor(self):
        assert np.array_equal(np.floor(np.array([1.7, 0.2]) + 1e-9).astype(int), [1, 0])


class TestOracleAgreement:
    @pytest.mark.parametrize("seed", range(15))
    def test_random_states(self, seed):
        rng = np.random.default_rng(seed)
        cfg = loops_config(psi=rng.uniform(0, 1, 2))
        tgt = target_point(cfg, p=rng.uniform(0.2, 0.9), q=rng.uniform(0.3, 1.0))
        counts = rng.multinomial(N, np.ones(8) / 8)
        s = state(cfg, counts[:2], counts[2:4], d=counts[4:6, None], e=counts[6:8])
        tau = default_tau(cfg)
        sol = build_ap(cfg, s, tgt, C=1.0, tau=tau).solve()
        ref, _ = oracle(cfg, tgt, s, tau=tau)
        assert sol.objective == pytest.approx(ref, rel=1e-6, abs=1e-9)

    def test_zero_exactly_at_target(self):
        cfg = loops_config()
        tgt = target_point(cfg)
        model = APModel(cfg, tgt)
        at_target = 0
        for c in oracles.compositions(N, 8):
            s = state(cfg, c[:2], c[2:4], d=np.array(c[4:6])[:, None], e=c[6:8])
            obj = model.solve(s).objective
            is_target = c == (1, 1, 1, 1, 0, 0, 0, 0)
            at_target += is_target
            assert (abs(obj) < 1e-12) == is_target, c
        assert at_target == 1


class TestProperties:
    def test_flooring_respects_idle_cars(self):
        sol = fluid(1, "FP1")
        cfg = sol.cfg.with_fleet_size(30)
        model = APModel(cfg, sol.point)
        rng = np.random.default_rng(7)
        P, K = len(cfg.trip_pairs), cfg.max_classes
        for _ in range(1000):
            s = SystemState.empty(cfg)
            slots = cfg.n_zones + P * K + len(cfg.reposition_pairs) + P
            c = rng.multinomial(cfg.fleet_size, rng.dirichlet(np.full(slots, 0.3)))
            s.a[:] = c[:5]
            s.d[:] = (c[5:5 + P * K] * cfg.class_mask().ravel()).reshape(P, K)
            s.e[:] = c[5 + P * K:5 + P * K + len(cfg.reposition_pairs)]
            s.f[:] = c[5 + P * K + len(cfg.reposition_pairs):]
            s.a[0] += cfg.fleet_size - s.total()
            out = model.solve(s)
            sent = np.bincount(cfg.rep_origin, weights=out.y, minlength=5)
            assert np.all(out.y >= 0) and np.all(sent <= s.a)
            after = s.copy()
            apply_repositioning(cfg, after, out.y)
            after.check(cfg.fleet_size)

    @pytest.mark.parametrize("scale", [0.1, 3.0, 250.0])
    def test_homogeneous_in_C(self, scale):
        sol = fluid(2, "FP1")
        base = APModel(sol.cfg, sol.point, C=1.0)
        scaled = APModel(sol.cfg, sol.point, C=scale, tau=base.tau)
        s = SystemState.all_idle(sol.cfg)
        a, b = base.solve(s), scaled.solve(s)
        assert b.objective == pytest.approx(scale * a.objective, rel=1e-9)
        assert np.array_equal(a.y, b.y)

    def test_cost_rule(self):
        cfg = loops_config(psi=5.0)
        with pytest.raises(ConfigError, match="psi"):
            APModel(cfg, target_point(cfg), C=1.0, tau=1.0)
        APModel(cfg, target_point(cfg), C=10.0, tau=1.0)

    def test_dead_arcs_have_no_deferred_dispatch(self):
        cfg = loops_config()
        tgt = target_point(cfg)
        tgt.p[0, 0] = 0.0
        model = APModel(cfg, tgt)
        assert [tuple(x) for x in model.dplus_pairs] == [(1, 0)]

    def test_target_renormalized_to_fleet(self):
        sol = fluid(3, "FP1")
        model = APModel(sol.cfg, sol.point)
        total = model.target_a.sum() + model.target_d.sum() + model.target_e.sum() + model.target_f.sum()
        assert total == pytest.approx(sol.cfg.fleet_size, rel=1e-12)

    def test_fresh_model_does_not_share_solver(self):
        sol = fluid(1, "FP1")
        model = APModel(sol.cfg, sol.point)
        model.solve(SystemState.all_idle(sol.cfg))
        other = model.fresh()
        assert other._highs is None and model._highs is not None

    def test_solve_ap_and_dump(self):
        cfg = loops_config()
        lp = build_ap(cfg, state(cfg, [2, 0], [1, 1]), target_point(cfg))
        assert solve_ap(lp).tolist() == [1, 0]
        text = lp.dump()
        assert text.startswith("minimize") and "y[0,1]" in text and "<= 2" in text
