"""Constant-velocity Kalman filter for pen position propagation.

State [px, py, vx, vy] with white-acceleration process noise. The horizon
prediction feeding the controller is mean-only: the stage costs never use
the covariance, only the extrapolated positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_PROCESS_NOISE = 0.25  # (0.5 m/s^2)^2 white acceleration
DEFAULT_MEAS_NOISE = 2.5e-7  # (0.5 mm)^2


@dataclass(frozen=True)
class PenEstimate:
    position: np.ndarray  # (2,) [m]
    velocity: np.ndarray  # (2,) [m/s]
    covariance: np.ndarray  # (4, 4) over [px, py, vx, vy]

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float).reshape(2))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, float).reshape(2))
        object.__setattr__(self, "covariance", np.asarray(self.covariance, float).reshape(4, 4))

    @classmethod
    def fresh(cls, position, pos_var: float = 1e-4, vel_var: float = 1e-2) -> "PenEstimate":
        return cls(position, np.zeros(2), np.diag([pos_var, pos_var, vel_var, vel_var]))

    def state_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


def _transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = dt
    F[1, 3] = dt
    return F


def _process_cov(dt: float, q: float) -> np.ndarray:
    # piecewise-constant white acceleration, per axis
    q11 = q * dt**4 / 4
    q12 = q * dt**3 / 2
    q22 = q * dt**2
    Q = np.zeros((4, 4))
    Q[0, 0] = Q[1, 1] = q11
    Q[2, 2] = Q[3, 3] = q22
    Q[0, 2] = Q[2, 0] = q12
    Q[1, 3] = Q[3, 1] = q12
    return Q


def kf_predict(est: PenEstimate, dt: float, process_noise: float = DEFAULT_PROCESS_NOISE) -> PenEstimate:
    """Propagate the estimate dt forward under the constant-velocity model."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    F = _transition(dt)
    x = F @ est.state_vector()
    P = F @ est.covariance @ F.T + _process_cov(dt, process_noise)
    P = 0.5 * (P + P.T)
    return PenEstimate(x[:2], x[2:], P)


def kf_update(est: PenEstimate, measurement, meas_noise: float = DEFAULT_MEAS_NOISE):
    """Fold in a position measurement; returns (estimate, accepted).

    Non-finite measurements are rejected: the estimate is returned unchanged
    with accepted=False. Joseph-form covariance keeps symmetry.
    """
    if not meas_noise > 0:
        raise ValueError(f"meas_noise must be positive, got {meas_noise}")
    z = np.asarray(measurement, float).reshape(2)
    if not np.all(np.isfinite(z)):
        return est, False
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    R = meas_noise * np.eye(2)
    P = est.covariance
    x = est.state_vector()
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    x_new = x + K @ (z - H @ x)
    IKH = np.eye(4) - K @ H
    P_new = IKH @ P @ IKH.T + K @ R @ K.T
    P_new = 0.5 * (P_new + P_new.T)
    return PenEstimate(x_new[:2], x_new[2:], P_new), True


def predict_horizon(est: PenEstimate, n_steps: int, dt: float) -> np.ndarray:
    """Mean-only pen positions for stages 1..n_steps, shape (n_steps, 2).

    Accumulates the same recurrence as chained kf_predict calls so the two
    agree bit-for-bit.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    out = np.empty((n_steps, 2))
    pos = est.position.copy()
    step = dt * est.velocity
    for k in range(n_steps):
        pos = pos + step
        out[k] = pos
    return out


class PenTracker:
    """Stateful predict/update wrapper used by the closed-loop harness."""

    def __init__(self, process_noise: float = DEFAULT_PROCESS_NOISE,
                 meas_noise: float = DEFAULT_MEAS_NOISE):
        self.process_noise = process_noise
        self.meas_noise = meas_noise
        self.estimate: PenEstimate | None = None
        self.last_rejected = False

    def step(self, measurement, dt: float) -> PenEstimate:
        """Advance by dt and fold in the measurement; returns the posterior."""
        if self.estimate is None:
            self.estimate = PenEstimate.fresh(measurement)
            return self.estimate
        pred = kf_predict(self.estimate, dt, self.process_noise)
        self.estimate, accepted = kf_update(pred, measurement, self.meas_noise)
        self.last_rejected = not accepted
        return self.estimate

    def horizon(self, n_steps: int, dt: float) -> np.ndarray:
        return predict_horizon(self.estimate, n_steps, dt)
