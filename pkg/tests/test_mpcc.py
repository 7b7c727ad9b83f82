import numpy as np
import pytest

from emguide import _kernels as K
from emguide.em_model import EmParams
from emguide.estimation import PenEstimate
from emguide.mpcc import (
    Constraints,
    ControlInput,
    MpccController,
    SolveResult,
    SolverConfig,
    SystemState,
    Weights,
    dynamics_step,
    lag_contour_errors,
    mpc_step,
    open_loop_step,
    solve,
    stage_cost,
    stage_cost_gradient,
)
from emguide.path import build_path, evaluate, generate_shape, point_path, tangent

EM = EmParams.table_defaults()


def line_path(length=0.3):
    return build_path(generate_shape("line", length=length), kind="polyline")


def make_controller(path, **kwargs):
    return MpccController(path, EM, **kwargs)


class TestDynamicsStep:
    def test_zero_input(self):
        x = SystemState([0.01, 0.02], [0.1, -0.05], 0.4, 0.07)
        out = dynamics_step(x, ControlInput.zero(), 0.02)
        assert np.allclose(out.magnet_pos, x.magnet_pos + 0.02 * x.magnet_vel)
        assert np.array_equal(out.magnet_vel, x.magnet_vel)
        assert out.alpha == x.alpha
        assert out.theta == x.theta

    def test_theta_rate_accumulates(self):
        x = SystemState.at_rest([0, 0])
        u = ControlInput(np.zeros(2), 0.0, 0.13)
        for _ in range(9):
            x = dynamics_step(x, u, 0.02)
        assert x.theta == pytest.approx(9 * 0.02 * 0.13, rel=1e-12)

    def test_constant_acceleration_closed_form(self):
        a = np.array([0.7, -0.4])
        u = ControlInput(a, 0.0, 0.0)
        x = SystemState.at_rest([0, 0])
        k = 12
        dt = 0.02
        for _ in range(k):
            x = dynamics_step(x, u, dt)
        assert np.allclose(x.magnet_vel, k * dt * a, rtol=1e-12)
        # forward Euler: position lags by one step of acceleration
        assert np.allclose(x.magnet_pos, dt**2 * a * k * (k - 1) / 2, rtol=1e-12)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            dynamics_step(SystemState.at_rest([0, 0]), ControlInput.zero(), -0.02)


class TestLagContour:
    def test_pen_on_setpoint(self):
        path = line_path()
        theta = 0.1
        pen = evaluate(path, theta)
        cl, cc = lag_contour_errors(pen, theta, path)
        assert cl == pytest.approx(0.0, abs=1e-18)
        assert cc == pytest.approx(0.0, abs=1e-18)

    def test_displacement_along_tangent(self):
        path = line_path()
        theta = 0.1
        delta = 0.004
        pen = evaluate(path, theta) - delta * tangent(path, theta)
        cl, cc = lag_contour_errors(pen, theta, path)
        assert cl == pytest.approx(delta**2, rel=1e-9)
        assert cc == pytest.approx(0.0, abs=1e-15)

    def test_displacement_orthogonal(self):
        path = line_path()
        theta = 0.1
        delta = 0.004
        n = tangent(path, theta)
        pen = evaluate(path, theta) + delta * np.array([-n[1], n[0]])
        cl, cc = lag_contour_errors(pen, theta, path)
        assert cl == pytest.approx(0.0, abs=1e-15)
        assert cc == pytest.approx(delta**2, rel=1e-9)


class TestStageCost:
    def test_all_weights_zero(self):
        w = Weights(lag=0, contour=0, progress=0, progress_rate=0, force=0,
                    proximity=0, intensity=0, input_acc=1e-12,
                    input_alpha_rate=1e-12, input_theta_rate=1e-12)
        path = line_path()
        x = SystemState([0.01, 0.01], [0.0, 0.0], 0.5, 0.05)
        u = ControlInput([0.5, -0.5], 1.0, 0.1)
        assert stage_cost(x, u, [0.0, 0.0], path, w, EM) == pytest.approx(0.0, abs=1e-10)

    def test_ideal_point_leaves_progress_reward(self):
        from emguide.mpcc import TERM_UNIT_SCALE

        path = line_path()
        w = Weights()
        theta = 0.08
        pen = evaluate(path, theta)
        x = SystemState(pen, [0.0, 0.0], 0.0, theta)
        c = stage_cost(x, ControlInput.zero(), pen, path, w, EM)
        assert c == pytest.approx(-w.progress * TERM_UNIT_SCALE[5] * theta, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        # central differences on all 6 state and 4 input entries
        path = build_path(generate_shape("sinus"), kind="spline")
        w = Weights()
        rng = np.random.default_rng(123)
        worst = 0.0
        for _ in range(100):
            x0 = np.array([
                rng.uniform(-0.06, 0.06), rng.uniform(-0.03, 0.03),
                rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                rng.uniform(0.05, 0.95), rng.uniform(0.01, path.length - 0.01),
            ])
            u0 = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2),
                           rng.uniform(-5, 5), rng.uniform(0.0, 0.2)])
            pen = np.array([rng.uniform(-0.06, 0.06), rng.uniform(-0.03, 0.03)])
            prev_tr = rng.uniform(0, 0.2)
            x = SystemState.from_array(x0)
            u = ControlInput.from_array(u0)
            gx, gu = stage_cost_gradient(x, u, pen, path, w, EM, prev_tr)
            scale = max(np.abs(gx).max(), np.abs(gu).max())

            def cost_at(xa, ua):
                return stage_cost(SystemState.from_array(xa),
                                  ControlInput.from_array(ua),
                                  pen, path, w, EM, prev_tr)

            for i in range(6):
                eps = 3e-6 * max(1.0, abs(x0[i]))
                xp, xm = x0.copy(), x0.copy()
                xp[i] += eps
                xm[i] -= eps
                fd = (cost_at(xp, u0) - cost_at(xm, u0)) / (2 * eps)
                rel = abs(gx[i] - fd) / max(abs(fd), 1e-4 * scale, 1e-9)
                worst = max(worst, rel)
            for i in range(4):
                eps = 3e-6 * max(1.0, abs(u0[i]))
                up, um = u0.copy(), u0.copy()
                up[i] += eps
                um[i] -= eps
                fd = (cost_at(x0, up) - cost_at(x0, um)) / (2 * eps)
                rel = abs(gu[i] - fd) / max(abs(fd), 1e-4 * scale, 1e-9)
                worst = max(worst, rel)
        assert worst < 1e-4


class TestSolve:
    def test_degenerate_point_path(self):
        pen_pos = np.array([0.01, -0.02])
        path = point_path(pen_pos)
        ctrl = make_controller(path)
        x0 = SystemState.at_rest(pen_pos, theta=0.0)
        res = ctrl.solve(x0, PenEstimate.fresh(pen_pos))
        for u in res.inputs:
            assert np.abs(u.as_array()).max() < 1e-6

    def test_dynamics_consistency_bit_exact(self):
        path = build_path(generate_shape("circle"), kind="spline")
        ctrl = make_controller(path)
        x0 = SystemState.at_rest([0.035, 0.0], theta=0.0)
        res = ctrl.solve(x0, PenEstimate.fresh([0.034, 0.002]))
        for k in range(len(res.inputs)):
            nxt = dynamics_step(res.states[k], res.inputs[k], ctrl.config.dt)
            assert np.array_equal(nxt.as_array(), res.states[k + 1].as_array())

    def test_feasibility_and_monotone_progress_random(self):
        rng = np.random.default_rng(9)
        path = build_path(generate_shape("sinus"), kind="spline")
        cons = Constraints()
        ctrl = make_controller(path, constraints=cons)
        xlo, xhi = cons.state_bounds(path.length)
        ulo, uhi = cons.input_bounds()
        for trial in range(25):
            x0 = SystemState(
                rng.uniform(-0.09, 0.09, 2), rng.uniform(-0.15, 0.15, 2),
                rng.uniform(0, 1), rng.uniform(0, path.length),
            )
            pen = PenEstimate.fresh(rng.uniform(-0.06, 0.06, 2))
            res = ctrl.solve(x0, pen)
            for s in res.states:
                arr = s.as_array()
                assert np.all(arr >= xlo - 1e-6) and np.all(arr <= xhi + 1e-6)
            thetas = [s.theta for s in res.states]
            assert np.all(np.diff(thetas) >= -1e-12)
            for u in res.inputs:
                arr = u.as_array()
                assert np.all(arr >= ulo - 1e-6) and np.all(arr <= uhi + 1e-6)

    def test_objective_history_non_increasing(self):
        rng = np.random.default_rng(31)
        path = build_path(generate_shape("circle"), kind="spline")
        ctrl = make_controller(path)
        for trial in range(50):
            x0 = SystemState(
                rng.uniform(-0.08, 0.08, 2), rng.uniform(-0.1, 0.1, 2),
                rng.uniform(0, 1), rng.uniform(0, path.length),
            )
            pen = PenEstimate.fresh(rng.uniform(-0.05, 0.05, 2))
            ctrl.reset()
            res = ctrl.solve(x0, pen)
            hist = res.diagnostics["objective_history"]
            assert np.all(np.diff(hist) <= 1e-10)

    def test_warm_start_determinism(self):
        path = build_path(generate_shape("sinus"), kind="spline")
        pen_positions = [np.array([-0.05 + 0.002 * i, 0.005]) for i in range(10)]

        def run():
            ctrl = make_controller(path)
            x0 = SystemState.at_rest([-0.05, 0.0], theta=0.0)
            outs = []
            for p in pen_positions:
                res = ctrl.solve(x0, PenEstimate.fresh(p))
                ctrl.advance(res)
                x0 = res.states[1]
                outs.append(np.concatenate([s.as_array() for s in res.states]
                                           + [u.as_array() for u in res.inputs]))
            return outs

        a, b = run(), run()
        for xa, xb in zip(a, b):
            assert np.array_equal(xa, xb)

    def test_infeasible_x0_projected(self):
        path = line_path()
        ctrl = make_controller(path)
        x0 = SystemState([0.5, 0.5], [1.0, 0.0], 1.5, -0.3)
        res = ctrl.solve(x0, PenEstimate.fresh([0.0, 0.0]))
        assert res.diagnostics["x0_projected"]
        s0 = res.states[0].as_array()
        xlo, xhi = ctrl.constraints.state_bounds(path.length)
        assert np.all(s0 >= xlo - 1e-12) and np.all(s0 <= xhi + 1e-12)

    def test_nonconvergence_flag_on_tight_budget(self):
        path = build_path(generate_shape("spiral"), kind="spline")
        cfg = SolverConfig(max_iterations=1, grad_tol=1e-14)
        ctrl = make_controller(path, config=cfg)
        x0 = SystemState.at_rest([0.02, 0.0], theta=0.0)
        res = ctrl.solve(x0, PenEstimate.fresh([-0.03, 0.03]))
        assert res.iterations == 1
        assert not res.converged

    def test_functional_wrapper_matches_controller(self):
        path = line_path()
        x0 = SystemState.at_rest([-0.1, 0.005], theta=0.05)
        pen = PenEstimate.fresh([-0.1, 0.01])
        res_fn = solve(x0, pen, path, em=EM)
        ctrl = make_controller(path)
        res_ctrl = ctrl.solve(x0, pen)
        assert res_fn.cost == res_ctrl.cost
        assert np.array_equal(res_fn.first_input.as_array(),
                              res_ctrl.first_input.as_array())


class TestTimeFreeProperty:
    def test_stationary_pen_bounded_theta(self):
        # pen parked 10 mm off a straight path; progress must not run away
        path = line_path(0.3)
        ctrl = make_controller(path)
        pen_pos = np.array([-0.05, 0.010])
        pen = PenEstimate.fresh(pen_pos)
        start_theta = 0.10  # pen projects to x=-0.05
        ctrl.reset(theta=start_theta)
        x0 = SystemState.at_rest([-0.05, 0.0], theta=start_theta)
        thetas = []
        for _ in range(100):
            res = ctrl.solve(x0, pen)
            ctrl.advance(res)
            x0 = res.states[1]
            thetas.append(x0.theta)
        spread = max(thetas) - min(thetas)
        assert spread < 0.005
        # magnet settles essentially on the pen-to-path corridor
        m = x0.magnet_pos
        assert abs(m[0] - pen_pos[0]) < 0.004
        assert -0.002 < m[1] < pen_pos[1] + 0.001

    def test_mpc_baseline_theta_advances_with_clock(self):
        path = line_path(0.3)
        ctrl = make_controller(path)
        pen = PenEstimate.fresh([-0.05, 0.010])
        x0 = SystemState.at_rest([-0.05, 0.0], theta=0.0)
        ref_speed = 0.05
        thetas = []
        for i in range(100):
            res = ctrl.mpc_solve(x0, pen, ref_speed, clock_t=i * ctrl.config.dt)
            ctrl.advance(res)
            x0 = res.states[1]
            thetas.append(x0.theta)
        advance = thetas[-1] - thetas[0]
        expect = ref_speed * 99 * ctrl.config.dt
        assert advance == pytest.approx(expect, rel=0.05)


class TestMpcStep:
    def test_zero_ref_speed_regulates_origin(self):
        path = line_path(0.3)
        ctrl = make_controller(path)
        pen = PenEstimate.fresh([-0.15, 0.003])
        x0 = SystemState.at_rest([-0.15, 0.0], theta=0.0)
        res = ctrl.mpc_solve(x0, pen, ref_speed=0.0, clock_t=5.0)
        assert all(s.theta == 0.0 for s in res.states)

    def test_setpoint_advances_despite_stationary_pen(self):
        path = line_path(0.3)
        ctrl = make_controller(path)
        pen = PenEstimate.fresh([-0.15, 0.0])
        x0 = SystemState.at_rest([-0.15, 0.0], theta=0.0)
        res = ctrl.mpc_solve(x0, pen, ref_speed=0.1, clock_t=2.0)
        assert res.states[0].theta == pytest.approx(0.2, rel=1e-9)
        assert res.states[-1].theta == pytest.approx(0.2 + 0.1 * 10 * 0.02, rel=1e-9)

    def test_functional_wrapper(self):
        path = line_path(0.3)
        x0 = SystemState.at_rest([-0.1, 0.0], theta=0.0)
        res = mpc_step(x0, PenEstimate.fresh([-0.1, 0.002]), path,
                       ref_speed=0.08, clock_t=1.0, em=EM)
        assert res.states[0].theta == pytest.approx(0.08, rel=1e-9)


class TestOpenLoop:
    def test_start_and_end(self):
        path = line_path(0.3)
        pos, alpha = open_loop_step(0.0, path, speed=0.1)
        assert np.allclose(pos, evaluate(path, 0.0))
        assert alpha == 1.0
        pos, _ = open_loop_step(path.length / 0.1, path, speed=0.1)
        assert np.allclose(pos, evaluate(path, path.length))

    def test_ignores_everything_but_time(self):
        path = line_path(0.3)
        p1, _ = open_loop_step(1.3, path, speed=0.07)
        p2, _ = open_loop_step(1.3, path, speed=0.07)
        assert np.array_equal(p1, p2)

    def test_rejects_bad_speed(self):
        with pytest.raises(ValueError):
            open_loop_step(0.0, line_path(), speed=0.0)


class TestQpSolver:
    def test_against_cvxpy_oracle(self):
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(77)
        for trial in range(20):
            n, m = 12, 20
            M = rng.normal(size=(n, n))
            H = M @ M.T + np.eye(n)
            g = rng.normal(size=n)
            A = np.vstack([np.eye(n), rng.normal(size=(m - n, n))])
            lz = -rng.uniform(0.1, 2.0, m)
            uz = rng.uniform(0.1, 2.0, m)
            x, y, it, rp, rd = K.admm_qp(H, g, A, lz, uz, np.zeros(m), 4000, 1e-10)
            xv = cp.Variable(n)
            prob = cp.Problem(
                cp.Minimize(0.5 * cp.quad_form(xv, H) + g @ xv),
                [A @ xv >= lz, A @ xv <= uz],
            )
            prob.solve(solver=cp.CLARABEL)
            assert prob.status == "optimal"
            obj_mine = 0.5 * x @ H @ x + g @ x
            assert obj_mine <= prob.value + 1e-6
            assert np.all(A @ x >= lz - 1e-7)
            assert np.all(A @ x <= uz + 1e-7)

    def test_equality_rows(self):
        n = 4
        H = np.eye(n)
        g = np.array([1.0, -2.0, 0.5, 0.0])
        A = np.eye(n)
        lz = np.array([-1.0, 0.7, -1.0, -1.0])
        uz = np.array([1.0, 0.7, 1.0, 1.0])  # x[1] pinned to 0.7
        x, *_ = K.admm_qp(H, g, A, lz, uz, np.zeros(n), 2000, 1e-10)
        assert x[1] == pytest.approx(0.7, abs=1e-8)
        assert x[0] == pytest.approx(-1.0, abs=1e-8)  # at the bound
        assert x[2] == pytest.approx(-0.5, abs=1e-8)  # interior optimum


class TestValidation:
    def test_weights_validation(self):
        with pytest.raises(ValueError):
            Weights(lag=-1)
        with pytest.raises(ValueError):
            Weights(input_acc=0.0)
        with pytest.raises(ValueError):
            Weights(horizon_decay=1.5)

    def test_constraints_validation(self):
        with pytest.raises(ValueError):
            Constraints(workspace_min=[0.1, 0.1], workspace_max=[0.0, 0.0])
        with pytest.raises(ValueError):
            Constraints(max_speed=0.0)

    def test_state_input_validation(self):
        with pytest.raises(ValueError):
            SystemState([np.nan, 0.0], [0, 0], 0.0, 0.0)
        with pytest.raises(ValueError):
            SolverConfig(horizon=0)
