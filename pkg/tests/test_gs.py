import numpy as np
import pytest

from nsopt.gs import (HANDOVER, MAX_ITER, STALLED, TERMINATED, GsConfig, backtracking_search,
                      gs_solver_trace, gs_step, perturb_step, run_gs)
from nsopt.oracle import make_test_function
from nsopt.sampling import make_rng


class TestConfig:
    def test_defaults(self):
        c = GsConfig()
        assert c.sample_count(5) == 10
        assert (c.nu0, c.nu_opt, c.eps0, c.eps_opt) == (1e-6, 1e-6, 1e-1, 1e-6)
        assert (c.theta_nu, c.theta_eps, c.gamma, c.beta) == (1.0, 1e-1, 0.5, 0.0)
        c.validate(5)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            GsConfig(m=3).validate(5)

    def test_bad_radius_order(self):
        with pytest.raises(ValueError):
            GsConfig(eps_opt=1.0, eps0=0.1).validate(2)

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValueError):
            GsConfig.from_dict({"nu0": 1e-3, "bogus": 1})
        assert GsConfig.from_dict({"gamma": 0.25}).gamma == 0.25


class TestBacktracking:
    def test_full_step_quad(self):
        o = make_test_function("QUAD", 1)
        t, ft = backtracking_search(o, np.array([1.0]), np.array([-1.0]), 0.0, 0.5, 50)
        assert t == 1.0 and ft == 0.0

    def test_halved_step_abs(self):
        o = make_test_function("ABS", 1)
        t, ft = backtracking_search(o, np.array([0.5]), np.array([-1.0]), 0.0, 0.5, 50)
        assert t == 0.5 and ft == 0.0

    def test_ascent_fails(self):
        o = make_test_function("QUAD", 2)
        assert backtracking_search(o, np.ones(2), np.ones(2), 0.0, 0.5, 30) is None

    def test_zero_direction(self):
        with pytest.raises(ValueError):
            backtracking_search(make_test_function("QUAD", 1), np.ones(1), np.zeros(1),
                                0.0, 0.5, 5)

    def test_armijo_constant(self):
        # need 0.5 (1 - 2t)^2 < 0.5 - 1.6 t: fails for t = 1, 1/2, 1/4, holds at 1/8
        o = make_test_function("QUAD", 1)
        t, _ = backtracking_search(o, np.array([1.0]), np.array([-2.0]), 0.4, 0.5, 50)
        assert t == 0.125


class TestPerturb:
    def test_differentiable_landing_unchanged(self):
        o = make_test_function("QUAD", 2)
        y, f, moved = perturb_step(o, np.ones(2), 0.5, -np.ones(2), 0.1, make_rng(0))
        np.testing.assert_array_equal(y, 0.5 * np.ones(2))
        assert not moved

    def test_abs_kink_landing(self):
        o = make_test_function("ABS", 1)
        y, f, moved = perturb_step(o, np.array([0.5]), 0.5, np.array([-1.0]), 0.1, make_rng(1))
        assert moved and o.is_differentiable(y)
        assert f < 0.5
        assert abs(y[0]) <= 0.1

    def test_zero_radius_stalls(self):
        o = make_test_function("ABS", 1)
        assert perturb_step(o, np.array([0.5]), 0.5, np.array([-1.0]), 0.0, make_rng(2),
                            max_tries=5) is None


class TestStep:
    def test_quad_direction_is_steepest(self):
        o = make_test_function("QUAD", 3)
        x = np.ones(3)
        st = gs_step(x, o.eval(x), 1e-4, 1e-6, o, GsConfig(), make_rng(3))
        g = o.grad(x)
        cos = st.g @ g / (np.linalg.norm(st.g) * np.linalg.norm(g))
        assert np.arccos(np.clip(cos, -1, 1)) <= 1e-2
        assert st.action == "move"

    def test_abs_straddling_reduces(self):
        o = make_test_function("ABS", 1)
        x = np.array([0.5])
        # eps = 2 makes samples on both sides of 0 overwhelmingly likely
        st = gs_step(x, 0.5, 2.0, 1e-6, o, GsConfig(), make_rng(4))
        assert st.action == "reduce"
        assert np.linalg.norm(st.g) <= 1e-12

    def test_terminate_branch(self):
        o = make_test_function("ABS", 1)
        cfg = GsConfig(eps_opt=1e-6)
        st = gs_step(np.array([1e-9]), 1e-9, 1e-6, 1e-6, o, cfg, make_rng(5))
        assert st.action == "terminate"

    def test_lambda_on_simplex(self):
        o = make_test_function("F1", 4)
        x = np.array([0.3, -0.2, 1.1, 0.4])
        st = gs_step(x, o.eval(x), 0.1, 1e-6, o, GsConfig(), make_rng(6))
        assert st.lam.size == 9
        assert st.lam.min() >= 0 and abs(st.lam.sum() - 1) <= 1e-10


class TestRun:
    def test_quad_converges(self):
        o = make_test_function("QUAD", 2)
        tr = run_gs(o, GsConfig(), np.ones(2), make_rng(0))
        assert tr.f <= 1e-12
        assert len(tr.records) <= 200

    def test_f1_handover(self):
        o = make_test_function("F1", 5)
        rng = make_rng(7)
        tr = run_gs(o, GsConfig(), rng.uniform(-2, 2, 5), rng, handover=1e-2)
        assert tr.status == HANDOVER
        reductions = [r for r in tr.records if r.action == "reduce"]
        assert len(reductions) == 2
        assert tr.eps == pytest.approx(1e-3)

    def test_max_iter_exit(self):
        o = make_test_function("F2", 3)
        cfg = GsConfig(nu0=0.0, nu_opt=0.0, eps_opt=0.0, max_iter=10)
        rng = make_rng(8)
        tr = run_gs(o, cfg, rng.uniform(-2, 2, 3), rng)
        assert tr.status == MAX_ITER
        assert len(tr.records) == 10

    def test_monotone_and_branch_rule(self):
        o = make_test_function("F3", 5)
        rng = make_rng(9)
        cfg = GsConfig()
        tr = run_gs(o, cfg, rng.uniform(-2, 2, 5), rng, handover=1e-4)
        fs = [r.f for r in tr.records] + [tr.f]
        for r, f_next in zip(tr.records, fs[1:]):
            if r.action == "move":
                assert f_next < r.f - cfg.beta * r.t * r.g_norm**2
                assert r.g_norm > r.nu
            elif r.action == "reduce":
                assert r.g_norm <= r.nu
                assert f_next == r.f

    def test_nondifferentiable_start(self):
        o = make_test_function("ABS", 1)
        tr = run_gs(o, GsConfig(max_iter=50), np.array([0.0]), make_rng(10))
        assert tr.status in (TERMINATED, MAX_ITER, STALLED)
        assert o.is_differentiable(tr.records[0].x)

    def test_reproducible(self):
        o = make_test_function("F4", 5)

        def go():
            rng = make_rng(11)
            return run_gs(o, GsConfig(), rng.uniform(-2, 2, 5), rng, handover=1e-2)

        a, b = go(), go()
        np.testing.assert_array_equal(a.x, b.x)
        assert [r.f for r in a.records] == [r.f for r in b.records]

    def test_solver_trace_rows(self):
        o = make_test_function("QUAD", 2)
        tr = run_gs(o, GsConfig(), np.ones(2), make_rng(0))
        st = gs_solver_trace(o, tr, o.known_minimizer)
        assert len(st.rows) == len(tr.records)
        assert st.f_history[0] == 1.0
        assert st.rows[0].dist_to_xstar == pytest.approx(np.sqrt(2))
