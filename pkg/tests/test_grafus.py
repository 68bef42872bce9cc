import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nsopt.grafus import (CERTIFICATE_REDUCE, PROCEED, RESOLVE_UNBOUNDED, TERMINATED,
                          GrafusConfig, OuterState, grafus_solver_trace, hybrid_solver_trace,
                          inner_iteration, ratio_vectors, run_grafus, run_hybrid,
                          sample_radius, update_certificate, update_sigma)
from nsopt.gs import HANDOVER, TERMINATED as GS_TERMINATED, GsConfig
from nsopt.hessian import HUpdateState, SpdMatrix
from nsopt.oracle import make_test_function
from nsopt.sampling import make_rng


def abs_state(x, nu=1e-2):
    return OuterState(k=0, x=np.array([x]), f=abs(x), nu=nu, sigma=1.0,
                      hstate=HUpdateState.start(1))


def inner(state, delta, G, f_tilde, oracle=None):
    oracle = oracle or make_test_function("ABS", 1)
    G = np.asarray(G, float)
    return inner_iteration(state, 0.1, delta, oracle, GrafusConfig(), make_rng(0),
                           SpdMatrix.identity(G.shape[0]),
                           reuse=(G, np.asarray(f_tilde, float)))


class TestCertificate:
    def test_floor_branch(self):
        assert update_certificate(1e-2, 1e-4) == pytest.approx(1e-3, rel=1e-12)

    def test_cap_branch(self):
        assert update_certificate(1e-2, 9e-3) == pytest.approx(9e-3, rel=1e-12)

    def test_zero_step(self):
        assert update_certificate(1e-2, 0.0) == pytest.approx(1e-3, rel=1e-12)

    @given(st.floats(1e-12, 1.0), st.floats(0.0, 1.0))
    def test_strictly_decreasing(self, nu, frac):
        out = update_certificate(nu, frac * nu)
        assert min(nu**1.5, 0.9 * nu) * (1 - 1e-12) <= out < nu

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            update_certificate(0.0, 0.0)


class TestSigma:
    def test_many_active(self):
        assert update_sigma(np.full(6, 1 / 6), 5) == 1.0

    def test_few_active(self):
        assert update_sigma(np.array([0.6, 0.4, 0, 0, 0, 0]), 5) == 1.5

    def test_threshold_is_strict(self):
        t = 1e-3 / 6
        lam = np.array([0.5, 0.3, 0.1, 0.05, t, 0.05 - t])
        assert update_sigma(lam, 5) == 1.5

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.integers(1, 10))
    def test_sigma_takes_two_values(self, lam, n):
        assert update_sigma(np.array(lam), n) in (1.0, 1.5)

    def test_sample_radius(self):
        assert sample_radius(1e-2, 1.5) == pytest.approx(1e-3, rel=1e-12)
        assert sample_radius(0.0, 1.0) == 0.0


class TestInnerIteration:
    def test_abs_accepted_step(self):
        # samples at 0.5 and -0.1 around x = 0.25
        res = inner(abs_state(0.25), 1e6, [[1.0, -1.0]], [0.25, -0.25])
        r = res.record
        assert res.outcome == PROCEED and r.accepted
        assert r.d[0] == pytest.approx(-0.25, abs=1e-12)
        assert r.pred == pytest.approx(0.21875, abs=1e-12)
        assert r.ared == pytest.approx(0.25, abs=1e-12)
        np.testing.assert_allclose(r.lam, [0.625, 0.375], atol=1e-12)

    def test_certificate_reduce(self):
        res = inner(abs_state(0.0), 1.0, [[1.0, -1.0]], [0.0, 0.0])
        assert res.outcome == CERTIFICATE_REDUCE
        assert res.record.step_norm <= 1e-12

    def test_resolve_then_reduce(self):
        # box binds at d = -0.1 and ||G lam|| = 1 < nu = 2
        st = abs_state(0.25, nu=2.0)
        G, ft = [[1.0, -1.0]], [1.0, 0.0]
        first = inner(st, 0.1, G, ft)
        assert first.outcome == RESOLVE_UNBOUNDED
        assert first.record.d[0] == pytest.approx(-0.1, abs=1e-12)
        second = inner(st, math.inf, G, ft)
        assert second.outcome == CERTIFICATE_REDUCE
        assert second.record.d[0] == pytest.approx(-0.5, abs=1e-12)
        assert second.record.step_norm == pytest.approx(0.5, abs=1e-12)

    def test_reject(self):
        # the model promises a decrease the function does not deliver
        res = inner(abs_state(0.25), 1e6, [[1.0, -1.0]], [0.25, -1.0])
        assert res.outcome == "reject"
        assert res.record.ared <= 1e-8 * res.record.pred


class TestRun:
    def test_abs_converges(self):
        o = make_test_function("ABS", 1)
        tr = run_grafus(o, GrafusConfig(), np.array([0.25]), make_rng(1))
        assert tr.status == TERMINATED
        assert abs(tr.x[0]) <= 1e-6
        assert tr.nu < 1e-6

    def test_small_initial_certificate_stops_at_once(self):
        o = make_test_function("QUAD", 2)
        tr = run_grafus(o, GrafusConfig(nu0=1e-7, nu_opt=1e-6), np.ones(2), make_rng(2))
        assert tr.status == TERMINATED
        assert len(tr.outer) == 1

    def test_reproducible(self):
        o = make_test_function("F3", 4)

        def go():
            return run_grafus(o, GrafusConfig(max_outer=15), 0.3 * np.ones(4), make_rng(3))

        a, b = go(), go()
        np.testing.assert_array_equal(a.x, b.x)
        assert [r.nu for r in a.outer] == [r.nu for r in b.outer]

    def test_ratio_vectors_skip_terminal(self):
        o = make_test_function("ABS", 1)
        tr = run_grafus(o, GrafusConfig(), np.array([0.25]), make_rng(1))
        vec_nu, vec_x = ratio_vectors(tr, o.known_minimizer)
        reductions = sum(r.reduced for r in tr.outer)
        assert len(vec_nu) == len(vec_x) == reductions - 1
        assert all(0 < v < 1 for v in vec_nu)

    def test_solver_trace(self):
        o = make_test_function("ABS", 1)
        tr = run_grafus(o, GrafusConfig(), np.array([0.25]), make_rng(1))
        st = grafus_solver_trace(o, tr)
        assert len(st.rows) == len(tr.inner)
        assert st.f_history[0] == 0.25


class TestHybrid:
    def test_switch_below_handover(self):
        o = make_test_function("F2", 5)
        rng = make_rng(4)
        hy = run_hybrid(o, GsConfig(), GrafusConfig(max_outer=5), rng.uniform(-2, 2, 5), rng)
        assert hy.gs.status == HANDOVER and hy.grafus is not None
        assert hy.gs.eps < 1e-2
        assert hy.gs.records[-1].eps >= 1e-2
        assert hy.switch_index == len(hy.gs.records)
        np.testing.assert_array_equal(hy.grafus.outer[0].x, hy.gs.x)

    def test_gs_finishing_first_skips_grafus(self):
        o = make_test_function("QUAD", 2)
        cfg = GsConfig(eps0=0.1, eps_opt=0.05, theta_eps=0.6)
        hy = run_hybrid(o, cfg, GrafusConfig(), np.zeros(2), make_rng(5))
        assert hy.gs.status == GS_TERMINATED
        assert hy.grafus is None
        st = hybrid_solver_trace(o, hy)
        assert st.status == GS_TERMINATED

    def test_large_handover_starts_grafus(self):
        o = make_test_function("ABS", 1)
        hy = run_hybrid(o, GsConfig(), GrafusConfig(), np.array([0.25]), make_rng(6),
                        handover=0.1)
        assert hy.gs.records == []
        assert hy.grafus.outer[0].x[0] == 0.25
        assert hy.grafus.status == TERMINATED


@pytest.fixture(scope="module")
def bench_runs():
    cfg = GrafusConfig(max_outer=40)
    runs = []
    for name in ("F1", "F2", "F3", "F4"):
        o = make_test_function(name, 5)
        for seed in (42, 43):
            rng = make_rng(seed)
            hy = run_hybrid(o, GsConfig(), cfg, rng.uniform(-2, 2, 5), rng)
            runs.append((o, hy.grafus))
    return cfg, runs


class TestTraceInvariants:
    def test_certificate_monotone(self, bench_runs):
        _, runs = bench_runs
        for _, tr in runs:
            for a, b in zip(tr.outer, tr.outer[1:]):
                assert b.nu == a.nu_next
                assert (b.nu < a.nu) if a.reduced else (b.nu == a.nu)

    def test_radius_ratio(self, bench_runs):
        cfg, runs = bench_runs
        for _, tr in runs:
            nus = {r.k: r.nu for r in tr.outer}
            for r in tr.inner:
                if r.l == 0 and r.k in nus:
                    assert r.eps == pytest.approx(cfg.gamma_eps * nus[r.k], rel=1e-12)
                if not r.delta_inf:
                    assert r.eps / r.delta == pytest.approx(cfg.gamma_eps / cfg.gamma_delta,
                                                            rel=1e-12)

    def test_acceptance_and_prediction(self, bench_runs):
        cfg, runs = bench_runs
        for _, tr in runs:
            for r in tr.inner:
                if not math.isnan(r.pred):
                    assert r.pred >= -1e-12
                if r.accepted:
                    assert r.ared > cfg.rho * r.pred

    def test_qp_solutions(self, bench_runs):
        _, runs = bench_runs
        for _, tr in runs:
            for r in tr.inner:
                assert r.qp_status == "optimal"
                assert r.lam.min() >= 0
                assert abs(r.lam.sum() - 1) <= 1e-10
                if np.max(np.abs(r.d)) <= 0.999 * r.delta:
                    assert r.interior_residual <= 1e-8

    def test_hessian_bounds(self, bench_runs):
        cfg, runs = bench_runs
        for _, tr in runs:
            for r in tr.inner:
                assert r.h_min_eig >= cfg.h_lo * (1 - 1e-12)
                assert r.h_max_eig <= cfg.h_hi * (1 + 1e-12)

    def test_certificate_bound(self, bench_runs):
        _, runs = bench_runs
        for _, tr in runs:
            for r in tr.outer:
                if r.reduced:
                    assert r.certificate_norm <= r.h_upper * r.nu * (1 + 1e-8)

    def test_accepted_steps_decrease_f(self, bench_runs):
        _, runs = bench_runs
        for _, tr in runs:
            last = {r.k: r for r in tr.inner}
            fs = [r.f for r in tr.outer] + [tr.f]
            for rec, f_next in zip(tr.outer, fs[1:]):
                if last[rec.k].accepted:
                    assert f_next < rec.f
