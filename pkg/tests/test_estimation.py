import numpy as np
import pytest

from emguide.estimation import (
    PenEstimate,
    PenTracker,
    kf_predict,
    kf_update,
    predict_horizon,
)


def fresh(pos=(0.0, 0.0), vel=(0.0, 0.0)):
    return PenEstimate(pos, vel, np.diag([1e-4, 1e-4, 1e-2, 1e-2]))


class TestPredict:
    def test_zero_velocity_keeps_position(self):
        est = fresh()
        out = kf_predict(est, 0.02)
        assert np.array_equal(out.position, est.position)
        assert np.trace(out.covariance) > np.trace(est.covariance)

    def test_k_steps_advance(self):
        v = np.array([0.05, -0.02])
        est = fresh(vel=v)
        for _ in range(7):
            est = kf_predict(est, 0.02)
        assert np.allclose(est.position, 7 * 0.02 * v, atol=1e-15)

    def test_trace_strictly_increases(self):
        rng = np.random.default_rng(1)
        est = fresh()
        for i in range(200):
            if i % 3 == 2:
                est, _ = kf_update(est, rng.normal(0, 1e-3, 2))
            before = np.trace(est.covariance)
            est = kf_predict(est, 0.02)
            assert np.trace(est.covariance) > before

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            kf_predict(fresh(), 0.0)


class TestUpdate:
    def test_measurement_at_prediction_keeps_position(self):
        est = fresh(pos=(0.01, 0.02))
        out, ok = kf_update(est, [0.01, 0.02])
        assert ok
        assert np.allclose(out.position, [0.01, 0.02], atol=1e-15)

    def test_covariance_non_increasing(self):
        est = fresh()
        out, _ = kf_update(est, [0.001, -0.001])
        evals = np.linalg.eigvalsh(est.covariance - out.covariance)
        assert evals.min() > -1e-15

    def test_noiseless_cv_track_velocity(self):
        v = np.array([0.1, -0.03])
        dt = 0.02
        est = PenEstimate.fresh([0.0, 0.0])
        for k in range(1, 101):
            est = kf_predict(est, dt)
            est, _ = kf_update(est, k * dt * v)
        assert np.linalg.norm(est.velocity - v) < 1e-3

    def test_repeated_identical_measurements_converge(self):
        target = np.array([0.02, 0.01])
        est = PenEstimate.fresh([0.0, 0.0])
        for _ in range(300):
            est = kf_predict(est, 0.02)
            est, _ = kf_update(est, target)
        assert np.allclose(est.position, target, atol=1e-6)
        assert np.linalg.norm(est.velocity) < 1e-6

    def test_nonfinite_rejected(self):
        est = fresh()
        out, ok = kf_update(est, [np.nan, 0.0])
        assert not ok
        assert out is est
        out, ok = kf_update(est, [np.inf, 0.0])
        assert not ok

    def test_rejects_bad_noise(self):
        with pytest.raises(ValueError):
            kf_update(fresh(), [0, 0], meas_noise=0.0)


class TestHorizon:
    def test_zero_velocity_copies(self):
        est = fresh(pos=(0.03, 0.04))
        preds = predict_horizon(est, 10, 0.02)
        assert preds.shape == (10, 2)
        assert np.all(preds == est.position)

    def test_arithmetic_sequence(self):
        v = np.array([0.1, 0.05])
        est = fresh(vel=v)
        preds = predict_horizon(est, 5, 0.02)
        steps = np.diff(preds, axis=0)
        assert np.allclose(steps, v * 0.02, atol=1e-15)

    def test_equals_chained_predicts(self):
        est = fresh(pos=(0.01, -0.02), vel=(0.07, 0.01))
        preds = predict_horizon(est, 8, 0.02)
        chained = est
        for k in range(8):
            chained = kf_predict(chained, 0.02)
            assert np.array_equal(preds[k], chained.position)

    def test_requires_positive_steps(self):
        with pytest.raises(ValueError):
            predict_horizon(fresh(), 0, 0.02)


class TestInvariants:
    def test_covariance_symmetric_psd_long_run(self):
        rng = np.random.default_rng(42)
        est = PenEstimate.fresh([0.0, 0.0])
        worst_asym = 0.0
        worst_eig = 0.0
        for i in range(100_000):
            est = kf_predict(est, 0.02)
            est, _ = kf_update(est, rng.normal(0, 1e-3, 2))
            if i % 500 == 0:
                P = est.covariance
                worst_asym = max(worst_asym, np.abs(P - P.T).max())
                worst_eig = min(worst_eig, np.linalg.eigvalsh(P).min())
        P = est.covariance
        assert np.abs(P - P.T).max() <= 1e-12
        assert worst_asym <= 1e-12
        assert np.linalg.eigvalsh(P).min() >= -1e-12
        assert worst_eig >= -1e-12

    def test_determinism(self):
        rng1 = np.random.default_rng(7)
        rng2 = np.random.default_rng(7)

        def run(rng):
            tracker = PenTracker()
            for _ in range(100):
                tracker.step(rng.normal(0, 1e-3, 2), 0.02)
            return tracker.estimate

        a, b = run(rng1), run(rng2)
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.velocity, b.velocity)
        assert np.array_equal(a.covariance, b.covariance)


class TestTracker:
    def test_first_measurement_initializes(self):
        tracker = PenTracker()
        est = tracker.step([0.01, 0.02], 0.02)
        assert np.allclose(est.position, [0.01, 0.02])
        assert np.all(est.velocity == 0.0)

    def test_tracks_moving_pen(self):
        tracker = PenTracker()
        v = np.array([0.08, 0.0])
        for k in range(120):
            tracker.step(k * 0.02 * v, 0.02)
        assert np.linalg.norm(tracker.estimate.velocity - v) < 1e-3
        preds = tracker.horizon(10, 0.02)
        assert preds.shape == (10, 2)
