import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predcorr import (
    CP,
    FOA_MIN,
    TVGD,
    UFOPC,
    DivergenceError,
    MissingOracleError,
    ProblemOracle,
    SolverConfig,
    TimeGrid,
    correct,
    g_select,
    make_linreg,
    make_mf,
    make_toy,
    predict_cauchy_point,
    predict_foa_min,
    predict_ufopc,
    run,
    synth_ratings,
)

from conftest import diag_quadratic


def toy_x0():
    return np.array([8.0])


class TestSolverConfig:
    def test_rejects_unknown_algorithm(self):
        with pytest.raises(ValueError, match="algorithm"):
            SolverConfig(algorithm="newton")

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(C=-1),
            dict(beta=0.0),
            dict(P=-2),
            dict(alpha=-1.0),
            dict(gamma=1.5),
            dict(zeta=0.0),
            dict(delta=0.0),
            dict(g_choice="future"),
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(algorithm="tvgd", **kwargs)


class TestCorrect:
    def test_one_step_solves_isotropic_quadratic(self):
        p = diag_quadratic([4.0, 4.0, 4.0])
        x = np.array([3.0, -1.0, 0.5])
        out = correct(p, x, 0.0, C=1, beta=0.25)
        assert np.array_equal(out, np.zeros(3))

    def test_zero_gradient_is_fixed_point(self):
        p = diag_quadratic([2.0, 5.0])
        out = correct(p, np.zeros(2), 0.0, C=7, beta=0.1)
        assert np.array_equal(out, np.zeros(2))

    def test_c_zero_returns_input_unchanged(self):
        p = diag_quadratic([2.0])
        x = np.array([1.25])
        assert np.array_equal(correct(p, x, 0.0, C=0, beta=1.0), x)

    def test_toy_hand_step(self):
        out = correct(make_toy(), toy_x0(), 0.0, C=1, beta=1.0)
        assert out[0] == pytest.approx(8.0 - (0.8 + math.cos(8.0)), rel=1e-15)

    def test_nonfinite_raises(self):
        def value(x, t):
            return 1e200 * float(x[0] ** 4)

        def grad_x(x, t):
            return 4e200 * x**3

        p = ProblemOracle(dim=1, value=value, grad_x=grad_x, name="steep")
        with np.errstate(over="ignore"), pytest.raises(DivergenceError):
            correct(p, np.array([10.0]), 0.0, C=3, beta=1.0)


class TestPredictFoaMin:
    def test_zero_gradient_guard(self):
        x = np.array([1.0, 2.0])
        assert np.array_equal(predict_foa_min(np.zeros(2), x, 10.0, 0.1, 1e-10), x)

    def test_toy_unit_step(self):
        toy = make_toy()
        x = toy_x0()
        g = toy.grad_x(x, 0.0)  # positive scalar gradient
        out = predict_foa_min(g, x, zeta=10.0, h=0.1, delta=1e-10)
        assert out[0] == 7.0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_step_length_identity(self, dim, seed):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=dim)
        if np.linalg.norm(g) <= 1e-9:
            return
        x = rng.normal(size=dim)
        out = predict_foa_min(g, x, zeta=2.5, h=0.2, delta=1e-9)
        assert np.linalg.norm(out - x) == pytest.approx(0.5, abs=1e-12)


def model_value_along_direction(g, H, s):
    """Quadratic-model value at arc length s along -g/||g||."""
    gn = np.linalg.norm(g)
    d = -g / gn
    return float(g @ (s * d) + 0.5 * s * s * (d @ H @ d))


class TestPredictCauchyPoint:
    def test_interior_minimizer_1d(self):
        # curvature 1, gradient 2: minimizer at arc length 2, radius 10
        x = np.array([5.0])
        out = predict_cauchy_point(np.array([2.0]), np.array([[1.0]]), x, 10.0, 1.0, 1e-10)
        assert out[0] == pytest.approx(3.0, rel=1e-15)
        # brute-force the 1-d model m(s) = 2 s + s^2 / 2 over [-10, 10]
        s = np.arange(-10.0, 10.0001, 1e-4)
        m = 2.0 * s + 0.5 * s * s
        assert s[np.argmin(m)] == pytest.approx(-2.0, abs=1e-3)

    def test_negative_curvature_matches_full_step(self):
        rng = np.random.default_rng(0)
        g = rng.normal(size=3)
        H = -np.eye(3)
        x = rng.normal(size=3)
        cp = predict_cauchy_point(g, H, x, 1.5, 0.1, 1e-10)
        foa = predict_foa_min(g, x, 1.5, 0.1, 1e-10)
        assert np.array_equal(cp, foa)

    def test_zero_curvature_takes_full_step(self):
        # q = 0 exactly is treated like negative curvature
        g = np.array([1.0, 0.0])
        H = np.array([[0.0, 0.0], [0.0, 1.0]])
        x = np.zeros(2)
        out = predict_cauchy_point(g, H, x, 2.0, 0.5, 1e-10)
        assert np.linalg.norm(out - x) == pytest.approx(1.0, rel=1e-14)

    def test_far_minimizer_clamped_to_radius(self):
        g = np.array([1e-3])
        H = np.array([[1e-6]])
        x = np.array([0.0])
        out = predict_cauchy_point(g, H, x, 1.0, 0.5, 1e-12)
        assert abs(out[0]) == pytest.approx(0.5, rel=1e-14)

    def test_guard_branch(self):
        x = np.array([1.0])
        out = predict_cauchy_point(np.array([1e-12]), np.array([[1.0]]), x, 1.0, 1.0, 1e-10)
        assert np.array_equal(out, x)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_never_beats_brute_force_or_exceeds_radius(self, dim, seed):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=dim)
        if np.linalg.norm(g) < 1e-6:
            return
        A = rng.normal(size=(dim, dim))
        H = (A + A.T) / 2
        x = rng.normal(size=dim)
        radius = float(rng.uniform(0.1, 3.0))
        out = predict_cauchy_point(g, H, x, radius, 1.0, 1e-12)
        step = np.linalg.norm(out - x)
        assert step <= radius * (1 + 1e-12)
        grid = np.linspace(0.0, radius, 4001)
        best = min(model_value_along_direction(g, H, s) for s in grid[1:])
        assert model_value_along_direction(g, H, step) <= best + 1e-7


class TestPredictUfopc:
    def test_p_zero_is_identity(self):
        p = diag_quadratic([1.0, 2.0])
        x = np.array([0.3, -0.4])
        assert np.array_equal(predict_ufopc(p, x, 1.0, 0.1, P=0, alpha=0.5, gamma=0.0), x)

    def drifting_quadratic(self):
        # 0.5 x'Ax - b(t)'x with b linear in t: backward difference is exact
        A = np.diag([2.0, 3.0])
        c = np.array([1.0, -2.0])

        def value(x, t):
            return 0.5 * float(x @ A @ x) - float((c * t) @ x)

        def grad_x(x, t):
            return A @ x - c * t

        return ProblemOracle(
            dim=2, value=value, grad_x=grad_x, hess_xx=lambda x, t: A, name="driftq"
        )

    def test_single_step_closed_form(self):
        p = self.drifting_quadratic()
        x = np.array([0.5, 0.25])
        t, h, alpha, gamma = 0.5, 0.25, 0.125, 0.75
        out = predict_ufopc(p, x, t, h, P=1, alpha=alpha, gamma=gamma)
        dtg = (p.grad_x(x, t) - p.grad_x(x, t - h)) / h
        expected = x - alpha * (h * dtg + gamma * p.grad_x(x, t))
        assert np.array_equal(out, expected)

    def test_converges_to_model_minimizer(self):
        p = self.drifting_quadratic()
        x = np.array([0.5, 0.25])
        t, h = 1.0, 0.125
        out = predict_ufopc(p, x, t, h, P=400, alpha=0.3, gamma=0.0)
        dtg = (p.grad_x(x, t) - p.grad_x(x, t - h)) / h
        expected = x - np.linalg.solve(np.diag([2.0, 3.0]), h * dtg)
        assert out == pytest.approx(expected, rel=1e-9)

    def test_requires_hessian(self):
        bare = replace(diag_quadratic([1.0]), hess_xx=None)
        with pytest.raises(MissingOracleError):
            predict_ufopc(bare, np.zeros(1), 0.0, 0.1, P=1, alpha=1.0, gamma=0.0)


class TestGSelect:
    def test_plain_is_current_gradient(self):
        p = make_linreg("linreg_static")
        x = np.arange(10.0)
        assert np.array_equal(g_select(p, x, 2.0, 0.1, "plain"), p.grad_x(x, 2.0))

    def test_time_invariant_extrapolation_collapses(self):
        p = diag_quadratic([1.0, 3.0])
        x = np.array([1.0, -1.0])
        plain = g_select(p, x, 1.0, 0.1, "plain")
        extr = g_select(p, x, 1.0, 0.1, "extrapolated")
        assert np.array_equal(plain, extr)

    def test_first_step_falls_back_to_plain(self):
        p = make_linreg("linreg_static")
        x = np.ones(10)
        out = g_select(p, x, 0.0, 0.1, "extrapolated", first_step=True)
        assert np.array_equal(out, p.grad_x(x, 0.0))

    def test_explicit_prev_grad_is_used(self):
        p = diag_quadratic([1.0])
        x = np.array([2.0])
        prev = np.array([0.5])
        out = g_select(p, x, 1.0, 0.1, "extrapolated", prev_grad=prev)
        assert np.array_equal(out, 2.0 * p.grad_x(x, 1.0) - prev)

    def test_second_order_extrapolation_error(self):
        # against the analytic mixed derivative of the least-squares problem
        p = make_linreg("linreg_static")
        x = np.ones(10) * 0.5
        a = np.where(np.arange(1, 11) <= 5, 0.1, 10.0)
        phase = 2 * np.pi * np.arange(1, 11) / 10.0

        def err(h):
            t = 3.0
            g = g_select(p, x, t, h, "extrapolated")
            dtg_analytic = -a * 0.1 * np.cos(t / 100.0 + phase)
            target = p.grad_x(x, t) + h * dtg_analytic
            return np.linalg.norm(g - target)

        ratio = err(0.02) / err(0.01)
        assert 3.5 <= ratio <= 4.5


class TestRun:
    def test_single_step_noop(self):
        p = diag_quadratic([1.0, 1.0])
        cfg = SolverConfig(algorithm=TVGD, C=0, beta=1.0)
        x0 = np.array([2.0, -1.0])
        tr = run(p, cfg, TimeGrid(0.1, 1), x0)
        assert len(tr) == 1 and not tr.diverged
        assert np.array_equal(tr.x_corr[0], x0)
        assert tr.f_pred[0] == p.value(x0, 0.0)

    def test_tvgd_entering_point_is_previous_corrected(self):
        toy = make_toy()
        cfg = SolverConfig(algorithm=TVGD, C=1, beta=1.0)
        tr = run(toy, cfg, TimeGrid(0.1, 20), toy_x0())
        assert np.array_equal(tr.x_pred[1:], tr.x_corr[:-1])

    def test_run_is_deterministic(self):
        p = make_linreg("linreg_static")
        cfg = SolverConfig(algorithm=FOA_MIN, C=3, beta=0.01, zeta=2.5)
        x0 = np.arange(10.0) / 3.0
        a = run(p, cfg, TimeGrid(0.01, 300), x0)
        b = run(p, cfg, TimeGrid(0.01, 300), x0)
        for fa, fb in (
            (a.f_pred, b.f_pred),
            (a.grad_norm, b.grad_norm),
            (a.gap, b.gap),
            (a.x_pred, b.x_pred),
            (a.x_corr, b.x_corr),
        ):
            assert np.array_equal(fa, fb)

    def test_prediction_step_length_bounded(self):
        toy = make_toy()
        for algo, gch in ((FOA_MIN, "plain"), (CP, "extrapolated")):
            cfg = SolverConfig(algorithm=algo, C=1, beta=1.0, zeta=10.0, g_choice=gch)
            tr = run(toy, cfg, TimeGrid(0.1, 200), toy_x0())
            moves = np.linalg.norm(tr.x_pred[1:] - tr.x_corr[:-1], axis=1)
            assert np.all(moves <= 10.0 * 0.1 + 1e-12)

    def test_correction_descent_inequality(self):
        # one gradient step with step size 1/L1 descends by grad^2/(2 L1)
        p = make_linreg("linreg_static")
        L1 = 100.0
        cfg = SolverConfig(algorithm=TVGD, C=1, beta=1 / L1)
        x0 = np.linspace(-1, 1, 10)
        tr = run(p, cfg, TimeGrid(0.01, 400), x0)
        for k in range(len(tr)):
            f_corr = p.value(tr.x_corr[k], tr.t[k])
            bound = tr.f_pred[k] - tr.grad_norm[k] ** 2 / (2 * L1)
            assert f_corr <= bound + 1e-9 + 1e-9 * abs(bound)

    def test_toy_foa_tracks_without_divergence(self):
        toy = make_toy()
        cfg = SolverConfig(algorithm=FOA_MIN, C=1, beta=1.0, zeta=10.0)
        tr = run(toy, cfg, TimeGrid(0.1, 1000), toy_x0())
        assert not tr.diverged
        shifted = tr.x_pred[:, 0] - 10.0 * tr.t
        assert np.all(np.abs(shifted) < 20.0)

    def test_ufopc_gamma1_diverges_on_toy(self):
        toy = make_toy()
        cfg = SolverConfig(algorithm=UFOPC, C=1, beta=1.0, P=10, alpha=1.0, gamma=1.0)
        tr = run(toy, cfg, TimeGrid(0.1, 100), toy_x0())
        assert tr.diverged and tr.diverged_step is not None
        assert len(tr) == tr.diverged_step + 1
        assert len(tr) < 100

    def test_shift_equivariance_on_toy(self):
        # shifting start and time together translates the whole run
        toy = make_toy()
        delta = 4.0
        shifted = replace(
            toy,
            value=lambda x, t: toy.value(x, t + delta),
            grad_x=lambda x, t: toy.grad_x(x, t + delta),
            grad_t=lambda x, t: toy.grad_t(x, t + delta),
            hess_xx=lambda x, t: toy.hess_xx(x, t + delta),
            optimum=None,
            optimum_kind=None,
        )
        cfg = SolverConfig(algorithm=FOA_MIN, C=1, beta=1.0, zeta=10.0)
        grid = TimeGrid(0.25, 40)
        base = run(toy, cfg, grid, toy_x0())
        moved = run(shifted, cfg, grid, toy_x0() + 10.0 * delta)
        assert moved.x_pred == pytest.approx(base.x_pred + 10.0 * delta, abs=1e-9)

    def test_missing_hessian_refused_before_first_step(self):
        ds = synth_ratings(6, 5, 60, 2, 0.1, seed=0)
        mf = make_mf(ds, latent_dim=2, reg=0.0, reveal_per_step=5, initial_revealed=20)
        cfg = SolverConfig(algorithm=CP, C=1, beta=1.0, zeta=1.0)
        with pytest.raises(MissingOracleError):
            run(mf, cfg, TimeGrid(0.01, 4), np.zeros(mf.dim))

    def test_gap_recorded_for_closed_form(self):
        p = make_linreg("linreg_static")
        cfg = SolverConfig(algorithm=TVGD, C=1, beta=0.01)
        tr = run(p, cfg, TimeGrid(0.1, 10), np.zeros(10))
        assert tr.gap is not None
        assert tr.gap == pytest.approx(tr.f_pred, rel=1e-15)  # optimal value is zero

    def test_gap_skipped_for_numeric_by_default(self):
        toy = make_toy()
        cfg = SolverConfig(algorithm=TVGD, C=1, beta=1.0)
        tr = run(toy, cfg, TimeGrid(0.1, 5), toy_x0())
        assert tr.gap is None
        tr2 = run(toy, cfg, TimeGrid(0.1, 5), toy_x0(), compute_gap=True)
        assert tr2.gap is not None and np.all(tr2.gap >= -1e-9)

    def test_bad_x0_shape_rejected(self):
        with pytest.raises(ValueError, match="x0"):
            run(
                make_toy(),
                SolverConfig(algorithm=TVGD),
                TimeGrid(0.1, 2),
                np.zeros(3),
            )
