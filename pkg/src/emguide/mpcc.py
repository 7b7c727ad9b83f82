"""Receding-horizon contouring controller for the guidance magnet.

The decision variables are the horizon inputs; states follow from the exact
(linear) forward-Euler rollout, so returned trajectories satisfy the
dynamics bit-for-bit. Each outer iteration linearizes nothing and
quadraticizes the cost (Gauss-Newton), solves a box/affine-constrained QP by
ADMM, and backtracks on the true objective. Progress theta is a state driven
by the non-negative rate input, which is what makes the reference time-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .em_model import EmParams, force_constant
from .estimation import PenEstimate, predict_horizon
from .path import ReferencePath, closest_progress, evaluate, tangent

NX, NU = K.NX, K.NU


@dataclass(frozen=True)
class SystemState:
    magnet_pos: np.ndarray  # (2,) [m]
    magnet_vel: np.ndarray  # (2,) [m/s]
    alpha: float  # magnet intensity in [0, 1]
    theta: float  # path progress [m]

    def __post_init__(self):
        object.__setattr__(self, "magnet_pos", np.asarray(self.magnet_pos, float).reshape(2))
        object.__setattr__(self, "magnet_vel", np.asarray(self.magnet_vel, float).reshape(2))
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise ValueError("system state must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([
            self.magnet_pos[0], self.magnet_pos[1],
            self.magnet_vel[0], self.magnet_vel[1],
            self.alpha, self.theta,
        ])

    @classmethod
    def from_array(cls, x) -> "SystemState":
        return cls(np.array(x[0:2]), np.array(x[2:4]), float(x[4]), float(x[5]))

    @classmethod
    def at_rest(cls, pos, theta: float = 0.0) -> "SystemState":
        return cls(np.asarray(pos, float), np.zeros(2), 0.0, theta)


@dataclass(frozen=True)
class ControlInput:
    magnet_acc: np.ndarray  # (2,) [m/s^2]
    alpha_rate: float  # [1/s]
    theta_rate: float  # [m/s], non-negative

    def __post_init__(self):
        object.__setattr__(self, "magnet_acc", np.asarray(self.magnet_acc, float).reshape(2))

    def as_array(self) -> np.ndarray:
        return np.array([self.magnet_acc[0], self.magnet_acc[1],
                         self.alpha_rate, self.theta_rate])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        return cls(np.array(u[0:2]), float(u[2]), float(u[3]))

    @classmethod
    def zero(cls) -> "ControlInput":
        return cls(np.zeros(2), 0.0, 0.0)


# The tuned weight table is calibrated for millimeter distances and
# millinewton forces (the hardware numbers are quoted in mm and mN); in that
# frame all terms land at comparable magnitudes. Cost code runs in strict
# SI, so the term weights are rescaled here: squared-length and
# squared-force terms by 1e6, the linear progress reward by 1e3.
_MM = 1e3
TERM_UNIT_SCALE = np.array([_MM**2, _MM**2, _MM**2, _MM**2, 1.0, _MM, _MM**2])


@dataclass(frozen=True)
class Weights:
    """Cost-term weights, in the calibration units of the tuned table.

    The default input penalties are unit weights on bound-normalized inputs
    (acceleration / intensity rate / progress rate divided by their limits),
    expressed here in SI: 1/2.5^2, 1/10^2, 1/0.25^2.
    """

    lag: float = 1.5
    contour: float = 1.5
    progress: float = 10.0
    progress_rate: float = 0.1
    force: float = 10.0
    proximity: float = 0.05
    intensity: float = 7.0
    input_acc: float = 0.16
    input_alpha_rate: float = 0.01
    input_theta_rate: float = 16.0
    horizon_decay: float = 0.9

    def __post_init__(self):
        for name in ("lag", "contour", "progress", "progress_rate", "force",
                     "proximity", "intensity"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be >= 0")
        for name in ("input_acc", "input_alpha_rate", "input_theta_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"input penalty {name} must be > 0")
        if not 0.0 < self.horizon_decay <= 1.0:
            raise ValueError("horizon_decay must be in (0, 1]")

    def term_array(self) -> np.ndarray:
        """Term weights rescaled to SI, kernel order."""
        return np.array([self.lag, self.contour, self.force, self.proximity,
                         self.intensity, self.progress,
                         self.progress_rate]) * TERM_UNIT_SCALE

    def input_array(self) -> np.ndarray:
        return np.array([self.input_acc, self.input_alpha_rate, self.input_theta_rate])


@dataclass(frozen=True)
class Constraints:
    """Admissible states and inputs of the virtual stage."""

    workspace_min: np.ndarray = field(default_factory=lambda: np.array([-0.15, -0.15]))
    workspace_max: np.ndarray = field(default_factory=lambda: np.array([0.15, 0.15]))
    max_speed: float = 0.25
    max_acc: float = 2.5
    alpha_rate_max: float = 10.0
    theta_rate_max: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "workspace_min", np.asarray(self.workspace_min, float).reshape(2))
        object.__setattr__(self, "workspace_max", np.asarray(self.workspace_max, float).reshape(2))
        if not np.all(self.workspace_max > self.workspace_min):
            raise ValueError("workspace box must be nonempty")
        for name in ("max_speed", "max_acc", "alpha_rate_max", "theta_rate_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    def input_bounds(self):
        lo = np.array([-self.max_acc, -self.max_acc, -self.alpha_rate_max, 0.0])
        hi = np.array([self.max_acc, self.max_acc, self.alpha_rate_max,
                       self.theta_rate_max])
        return lo, hi

    def state_bounds(self, path_length: float):
        lo = np.array([self.workspace_min[0], self.workspace_min[1],
                       -self.max_speed, -self.max_speed, 0.0, 0.0])
        hi = np.array([self.workspace_max[0], self.workspace_max[1],
                       self.max_speed, self.max_speed, 1.0, path_length])
        return lo, hi


@dataclass(frozen=True)
class SolverConfig:
    horizon: int = 10
    dt: float = 0.02
    max_iterations: int = 30
    grad_tol: float = 1e-6
    qp_max_iterations: int = 500
    qp_tol: float = 1e-7
    line_search_max: int = 25
    stiffness_scale: float = 5.0  # guidance spring stiffness c = scale / h

    def __post_init__(self):
        if self.horizon < 1 or not self.dt > 0:
            raise ValueError("horizon must be >= 1 and dt > 0")


@dataclass(frozen=True)
class SolveResult:
    states: list  # N+1 SystemState
    inputs: list  # N ControlInput
    cost: float
    iterations: int
    converged: bool
    diagnostics: dict

    @property
    def first_input(self) -> ControlInput:
        return self.inputs[0]


# --- functional operations ------------------------------------------------------


def dynamics_step(x: SystemState, u: ControlInput, dt: float) -> SystemState:
    """Forward-Euler step; constraint enforcement is the solver's job."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return SystemState.from_array(K.euler_step(x.as_array(), u.as_array(), dt))


def lag_contour_errors(pen, theta: float, path: ReferencePath):
    """Squared lag (along-tangent) and contour (orthogonal) errors."""
    p = np.asarray(pen, float).reshape(2)
    r = evaluate(path, theta) - p
    n = tangent(path, theta)
    lag = float(r @ n)
    e_c = r - lag * n
    return lag * lag, float(e_c @ e_c)


def _em_array(em: EmParams, stiffness_scale: float) -> np.ndarray:
    return np.array([force_constant(em), em.h, stiffness_scale / em.h])


def stage_cost(
    x: SystemState, u: ControlInput, pen_pred, path: ReferencePath,
    weights: Weights, em: EmParams, prev_theta_rate: float = 0.0,
    stiffness_scale: float = 5.0,
) -> float:
    """Single-stage cost: force matching, proximity, intensity, lag/contour,
    progress reward, progress-rate smoothness, and the input penalty."""
    pen = np.asarray(pen_pred, float).reshape(2)
    J, _, _, _ = K.stage_state_terms(
        x.as_array(), pen, *path.arrays(), _em_array(em, stiffness_scale),
        weights.term_array(),
    )
    trd = u.theta_rate - prev_theta_rate
    R = weights.input_array()
    ua = u.as_array()
    J += weights.progress_rate * trd * trd
    J += R[0] * (ua[0] ** 2 + ua[1] ** 2) + R[1] * ua[2] ** 2 + R[2] * ua[3] ** 2
    return float(J)


def stage_cost_gradient(
    x: SystemState, u: ControlInput, pen_pred, path: ReferencePath,
    weights: Weights, em: EmParams, prev_theta_rate: float = 0.0,
    stiffness_scale: float = 5.0,
):
    """Analytic gradient of stage_cost w.r.t. the 6 state and 4 input entries."""
    pen = np.asarray(pen_pred, float).reshape(2)
    _, gx, _, _ = K.stage_state_terms(
        x.as_array(), pen, *path.arrays(), _em_array(em, stiffness_scale),
        weights.term_array(),
    )
    R = weights.input_array()
    ua = u.as_array()
    gu = np.array([
        2.0 * R[0] * ua[0],
        2.0 * R[0] * ua[1],
        2.0 * R[1] * ua[2],
        2.0 * R[2] * ua[3] + 2.0 * weights.progress_rate * (ua[3] - prev_theta_rate),
    ])
    return np.asarray(gx), gu


def open_loop_step(t: float, path: ReferencePath, speed: float):
    """Pre-timed baseline: magnet rides the path at fixed speed, full power."""
    if not speed > 0:
        raise ValueError(f"speed must be positive, got {speed}")
    theta = min(speed * t, path.length)
    return evaluate(path, theta), 1.0


# --- controller -----------------------------------------------------------------


class MpccController:
    """Stateful receding-horizon controller (one instance per session)."""

    def __init__(
        self, path: ReferencePath, em: EmParams,
        weights: Weights = None, constraints: Constraints = None,
        config: SolverConfig = None,
    ):
        self.path = path
        self.em = em
        self.weights = weights or Weights()
        self.constraints = constraints or Constraints()
        self.config = config or SolverConfig()
        N = self.config.horizon
        self._P = K.sensitivity_blocks(self.config.dt, N)
        self._A_rows = self._build_constraint_matrix()
        lo, hi = self.constraints.input_bounds()
        self._u_scale = np.tile(np.maximum(np.abs(lo), np.abs(hi)), N)
        A = self._A_rows * self._u_scale[None, :]
        rn = np.linalg.norm(A, axis=1)
        rn[rn == 0] = 1.0
        self._A_scaled = A / rn[:, None]
        self._row_norm = rn
        self.reset()

    def reset(self, pen_pos=None, theta: float = None):
        """Drop warm-start state; optionally re-anchor progress to the pen."""
        self._U_prev = None
        self._y_prev = np.zeros(self._A_rows.shape[0])
        self._applied_theta_rate = 0.0
        if theta is not None:
            self.theta = float(theta)
        elif pen_pos is not None:
            self.theta = closest_progress(self.path, pen_pos, 0.0)
        else:
            self.theta = 0.0

    def set_path(self, path: ReferencePath, theta: float = None):
        self.path = path
        self.theta = min(self.theta if theta is None else theta, path.length)
        self._U_prev = None
        self._y_prev[:] = 0.0

    def set_weights(self, weights: Weights):
        self.weights = weights

    def _build_constraint_matrix(self) -> np.ndarray:
        N = self.config.horizon
        nv = N * NU
        A = np.zeros((nv + N * NX, nv))
        A[:nv, :nv] = np.eye(nv)
        for k in range(1, N + 1):
            for j in range(k):
                A[nv + (k - 1) * NX: nv + k * NX, j * NU:(j + 1) * NU] = self._P[k - 1 - j]
        return A

    def _project_state(self, x0: SystemState):
        xlo, xhi = self.constraints.state_bounds(self.path.length)
        arr = x0.as_array()
        clipped = np.clip(arr, xlo, xhi)
        changed = not np.array_equal(arr, clipped)
        return clipped, changed

    def _bounds(self, x0_arr, U, trate_lo=None, trate_hi=None):
        """QP bounds on the scaled step variable for the current iterate."""
        N = self.config.horizon
        nv = N * NU
        ulo, uhi = self.constraints.input_bounds()
        lo_in = np.tile(ulo, N)
        hi_in = np.tile(uhi, N)
        if trate_lo is not None:
            lo_in[3::NU] = trate_lo
            hi_in[3::NU] = trate_hi
        xlo, xhi = self.constraints.state_bounds(self.path.length)
        lo_all = np.concatenate([lo_in, np.tile(xlo, N)])
        hi_all = np.concatenate([hi_in, np.tile(xhi, N)])
        X = K.rollout(x0_arr, U, self.config.dt)
        b = np.concatenate([U.ravel(), X[1:].ravel()])
        lz = (lo_all - b) / self._row_norm
        uz = (hi_all - b) / self._row_norm
        return lz, uz, lo_in, hi_in

    def _restore_feasibility(self, x0_arr, U, trate_lo, trate_hi):
        """Project the warm start into the feasible set (min-norm step QP)."""
        nv = U.size
        lz, uz, lo_in, hi_in = self._bounds(x0_arr, U, trate_lo, trate_hi)
        if np.all(lz <= 0.0) and np.all(uz >= 0.0):
            return U, False
        Hs = np.eye(nv)
        gs = np.zeros(nv)
        z, y, _, _, _ = K.admm_qp(
            Hs, gs, self._A_scaled, lz, uz, np.zeros_like(self._y_prev),
            self.config.qp_max_iterations * 2, self.config.qp_tol,
        )
        U_new = U + (self._u_scale * z).reshape(U.shape)
        U_new = np.clip(U_new, lo_in.reshape(U.shape), hi_in.reshape(U.shape))
        return U_new, True

    def _solve_nlp(self, x0_arr, pens, U0, trate_lo=None, trate_hi=None):
        cfg = self.config
        N = cfg.horizon
        nv = N * NU
        w = self.weights.term_array()
        R = self.weights.input_array()
        em = _em_array(self.em, cfg.stiffness_scale)
        args = (pens, self._applied_theta_rate, cfg.dt, self.weights.horizon_decay,
                *self.path.arrays(), em, w, R, self._P)

        lz, uz, lo_in, hi_in = self._bounds(x0_arr, U0, trate_lo, trate_hi)
        U = np.clip(U0, lo_in.reshape(U0.shape), hi_in.reshape(U0.shape))
        U, restored = self._restore_feasibility(x0_arr, U, trate_lo, trate_hi)

        cost, _, _, _ = K.horizon_eval(U, x0_arr, *args, 0)
        history = [float(cost)]
        qp_total = 0
        converged = False
        step_norm = math.inf
        grad_norm = math.inf
        it = 0
        for it in range(1, cfg.max_iterations + 1):
            cost, g, H, _ = K.horizon_eval(U, x0_arr, *args, 2)
            # scaled-space QP: du = S z, objective normalized to O(1)
            S = self._u_scale
            Hs = (H * S[None, :]) * S[:, None]
            Hs = 0.5 * (Hs + Hs.T)
            try:
                np.linalg.cholesky(Hs + 1e-10 * np.eye(nv))
            except np.linalg.LinAlgError:
                # exact curvature can be indefinite far from the optimum
                evals, evecs = np.linalg.eigh(Hs)
                Hs = (evecs * np.maximum(evals, 1e-8)) @ evecs.T
            Hs[np.diag_indices_from(Hs)] += 1e-10
            gs = g * S
            obj_scale = max(float(np.abs(Hs).max()), 1e-9)
            lz, uz, _, _ = self._bounds(x0_arr, U, trate_lo, trate_hi)
            z, y, qp_it, rprim, rdual = K.admm_qp(
                Hs / obj_scale, gs / obj_scale, self._A_scaled, lz, uz,
                self._y_prev / obj_scale, cfg.qp_max_iterations, cfg.qp_tol,
            )
            self._y_prev = y * obj_scale
            qp_total += qp_it
            du = (S * z).reshape(U.shape)
            step_norm = float(np.abs(du).max())
            pg = np.clip(U.ravel() - g, lo_in, hi_in) - U.ravel()
            grad_norm = float(np.abs(pg).max())
            if step_norm <= cfg.grad_tol:
                converged = True
                break
            descent = float(g @ du.ravel())
            t = 1.0
            accepted = False
            for _ in range(cfg.line_search_max):
                cand = U + t * du
                c_new, _, _, _ = K.horizon_eval(cand, x0_arr, *args, 0)
                if c_new <= cost + 1e-4 * t * descent:
                    improvement = cost - c_new
                    U = cand
                    cost = c_new
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                converged = step_norm <= 10 * cfg.grad_tol
                break
            history.append(float(cost))
            if improvement <= 1e-9 * (1.0 + abs(cost)):
                converged = True
                break

        U = np.clip(U, lo_in.reshape(U.shape), hi_in.reshape(U.shape))
        X = K.rollout(x0_arr, U, cfg.dt)
        cost, _, _, breakdown = K.horizon_eval(U, x0_arr, *args, 0)
        xlo, xhi = self.constraints.state_bounds(self.path.length)
        viol = max(
            float(np.max(xlo[None, :] - X[1:], initial=0.0)),
            float(np.max(X[1:] - xhi[None, :], initial=0.0)),
        )
        states = [SystemState.from_array(X[k]) for k in range(N + 1)]
        inputs = [ControlInput.from_array(U[k]) for k in range(N)]
        diagnostics = {
            "objective_history": history,
            "qp_iterations": qp_total,
            "max_state_violation": viol,
            "cost_breakdown": breakdown,
            "grad_norm": grad_norm,
            "step_norm": step_norm,
            "feasibility_restored": restored,
        }
        return SolveResult(states, inputs, float(cost), it, converged, diagnostics), U

    def _warm_start(self, trate_pin=None):
        N = self.config.horizon
        if self._U_prev is None:
            U0 = np.zeros((N, NU))
        else:
            U0 = np.vstack([self._U_prev[1:], self._U_prev[-1:]])
        if trate_pin is not None:
            U0[:, 3] = trate_pin
        return U0

    def solve(self, x0: SystemState, pen_est: PenEstimate) -> SolveResult:
        """Full time-free solve: progress rate is a free decision variable."""
        x0_arr, projected = self._project_state(x0)
        pens = np.vstack([
            pen_est.position,
            predict_horizon(pen_est, self.config.horizon, self.config.dt),
        ])
        result, U = self._solve_nlp(x0_arr, pens, self._warm_start())
        result.diagnostics["x0_projected"] = projected
        self._U_prev = U
        return result

    def mpc_solve(self, x0: SystemState, pen_est: PenEstimate,
                  ref_speed: float, clock_t: float) -> SolveResult:
        """Time-dependent baseline: progress is pinned to the wall clock."""
        if ref_speed < 0:
            raise ValueError("ref_speed must be >= 0")
        cfg = self.config
        L = self.path.length
        sched = np.minimum(
            ref_speed * (clock_t + np.arange(cfg.horizon + 1) * cfg.dt), L
        )
        rates = np.diff(sched) / cfg.dt
        x0_pinned = replace(x0, theta=float(sched[0]))
        x0_arr, projected = self._project_state(x0_pinned)
        x0_arr[5] = sched[0]  # exact clock progress even at the path end
        pens = np.vstack([
            pen_est.position,
            predict_horizon(pen_est, cfg.horizon, cfg.dt),
        ])
        result, U = self._solve_nlp(
            x0_arr, pens, self._warm_start(trate_pin=rates),
            trate_lo=rates, trate_hi=rates,
        )
        result.diagnostics["x0_projected"] = projected
        self._U_prev = U
        return result

    def advance(self, result: SolveResult):
        """Bookkeeping after applying the first input to the plant."""
        self._applied_theta_rate = result.first_input.theta_rate
        self.theta = result.states[1].theta


def solve(
    x0: SystemState, pen_est: PenEstimate, path: ReferencePath,
    weights: Weights = None, constraints: Constraints = None,
    config: SolverConfig = None, em: EmParams = None,
    warm_start: SolveResult = None,
) -> SolveResult:
    """One-shot functional solve (fresh controller; optional warm start)."""
    ctrl = MpccController(path, em or EmParams.table_defaults(),
                          weights, constraints, config)
    if warm_start is not None:
        ctrl._U_prev = np.array([u.as_array() for u in warm_start.inputs])
    return ctrl.solve(x0, pen_est)


def mpc_step(
    x0: SystemState, pen_est: PenEstimate, path: ReferencePath,
    ref_speed: float, clock_t: float,
    weights: Weights = None, constraints: Constraints = None,
    config: SolverConfig = None, em: EmParams = None,
) -> SolveResult:
    """One-shot time-dependent baseline step."""
    ctrl = MpccController(path, em or EmParams.table_defaults(),
                          weights, constraints, config)
    return ctrl.mpc_solve(x0, pen_est, ref_speed, clock_t)
