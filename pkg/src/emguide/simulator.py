"""Deterministic closed-loop simulator: pen, simulated user, and stage.

Replaces the physical rig for experiments: the pen is a damped point mass
pushed by a simulated user spring (tracking the user's own progress along
the shape, on the user's own clock) plus the magnet's pull. The stage
saturates commands to its speed/acceleration limits. Runs are reproducible
bit-for-bit for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .em_model import EmParams, actuation_force_from_positions
from .estimation import PenTracker
from .mpcc import (
    Constraints,
    MpccController,
    SolverConfig,
    SystemState,
    Weights,
    open_loop_step,
)
from .path import ReferencePath, evaluate

CONTROLLER_KINDS = ("mpcc", "mpc", "open_loop", "none")


@dataclass
class PenModel:
    """Damped point mass holding the pen magnet."""

    mass: float = 0.02  # [kg]
    damping: float = 1.0  # [N s/m]
    position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if not self.mass > 0 or self.damping < 0:
            raise ValueError("mass must be > 0 and damping >= 0")
        self.position = np.asarray(self.position, float).reshape(2).copy()
        self.velocity = np.asarray(self.velocity, float).reshape(2).copy()


@dataclass(frozen=True)
class UserModel:
    """Simulated user intent: a spring toward their own advancing target.

    The user advances along the shape at their own pace (with an optional
    mid-drawing pause), independent of any controller clock. Their aim
    carries a slowly drifting error (Ornstein-Uhlenbeck) on top of per-step
    jitter, so an unguided drawing has human-like millimeter inaccuracy.
    compliance scales how much of the guidance force reaches the pen.
    """

    intent_gain: float = 30.0  # [N/m]
    speed: float = 0.08  # nominal progress rate [m/s]
    pause_start: float = 0.8  # [s]; pause disabled if duration is 0
    pause_duration: float = 0.5  # [s]
    catch_up: float = 1.4  # post-pause speed factor until back on pace
    noise_std: float = 0.0003  # white target jitter [m]
    wander_std: float = 0.0025  # stationary std of the aim drift [m]
    wander_tau: float = 1.0  # drift correlation time [s]
    compliance: float = 0.25  # in [0, 1]

    def __post_init__(self):
        if self.intent_gain < 0 or self.noise_std < 0 or self.wander_std < 0:
            raise ValueError("gains and noise must be >= 0")
        if not self.wander_tau > 0:
            raise ValueError("wander_tau must be > 0")
        if not 0.0 <= self.compliance <= 1.0:
            raise ValueError("compliance must be in [0, 1]")
        if not self.speed > 0 or self.catch_up < 1.0:
            raise ValueError("speed must be > 0 and catch_up >= 1")

    def progress_rate(self, t: float) -> float:
        """Progress rate at time t: pause, then hurry until back on pace."""
        if self.pause_duration > 0:
            t_end = self.pause_start + self.pause_duration
            if self.pause_start <= t < t_end:
                return 0.0
            if t >= t_end and self.catch_up > 1.0:
                deficit_end = t_end + self.pause_duration / (self.catch_up - 1.0)
                if t < deficit_end:
                    return self.speed * self.catch_up
        return self.speed


@dataclass
class StageModel:
    """Bi-axial stage carrying the magnet; saturates speed and acceleration."""

    max_speed: float = 0.25  # [m/s] per axis
    max_acc: float = 2.5  # [m/s^2] per axis
    workspace_min: np.ndarray = field(default_factory=lambda: np.array([-0.15, -0.15]))
    workspace_max: np.ndarray = field(default_factory=lambda: np.array([0.15, 0.15]))
    dispersion_std: float = 0.0  # positioning jitter [m]
    position: np.ndarray = field(default_factory=lambda: np.zeros(2))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if self.dispersion_std < 0:
            raise ValueError("dispersion_std must be >= 0")
        self.workspace_min = np.asarray(self.workspace_min, float).reshape(2)
        self.workspace_max = np.asarray(self.workspace_max, float).reshape(2)
        self.position = np.asarray(self.position, float).reshape(2).copy()
        self.velocity = np.asarray(self.velocity, float).reshape(2).copy()

    def step_accel(self, accel, dt: float):
        a = np.clip(np.asarray(accel, float), -self.max_acc, self.max_acc)
        self.velocity = np.clip(self.velocity + a * dt, -self.max_speed, self.max_speed)
        self._advance(dt)

    def step_toward(self, target, dt: float):
        desired = np.clip((np.asarray(target, float) - self.position) / dt,
                          -self.max_speed, self.max_speed)
        self.velocity = np.clip(desired, self.velocity - self.max_acc * dt,
                                self.velocity + self.max_acc * dt)
        self._advance(dt)

    def _advance(self, dt: float):
        pos = self.position + self.velocity * dt
        clipped = np.clip(pos, self.workspace_min, self.workspace_max)
        self.velocity[pos != clipped] = 0.0
        self.position = clipped

    def effective_position(self, rng) -> np.ndarray:
        if self.dispersion_std > 0:
            return self.position + rng.normal(0.0, self.dispersion_std, 2)
        return self.position.copy()


TRACE_COLUMNS = (
    "t", "pen_x", "pen_y", "magnet_x", "magnet_y", "magnet_vx", "magnet_vy",
    "alpha", "theta", "force_x", "force_y",
    "cost_lag", "cost_contour", "cost_force", "cost_proximity",
    "cost_intensity", "cost_progress", "cost_progress_rate", "cost_input",
    "solver_iterations", "solver_converged", "solve_cost",
)


@dataclass
class Trace:
    """Per-step record of one experiment run (uniform dt, monotone time)."""

    columns: dict  # name -> np.ndarray, keys == TRACE_COLUMNS
    dt: float
    controller: str
    seed: int
    diverged: bool = False

    def __len__(self):
        return len(self.columns["t"])

    @property
    def pen(self) -> np.ndarray:
        return np.column_stack([self.columns["pen_x"], self.columns["pen_y"]])

    @property
    def magnet(self) -> np.ndarray:
        return np.column_stack([self.columns["magnet_x"], self.columns["magnet_y"]])

    @property
    def theta(self) -> np.ndarray:
        return self.columns["theta"]

    def to_csv(self, filename):
        with open(filename, "w") as fh:
            fh.write("# controller=%s seed=%d dt=%.17g diverged=%d\n"
                     % (self.controller, self.seed, self.dt, int(self.diverged)))
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            n = len(self)
            cols = [self.columns[c] for c in TRACE_COLUMNS]
            for i in range(n):
                fh.write(",".join("%.17g" % col[i] for col in cols) + "\n")

    @classmethod
    def from_csv(cls, filename) -> "Trace":
        with open(filename) as fh:
            header = fh.readline().strip().lstrip("# ").split()
            meta = dict(kv.split("=") for kv in header)
            names = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        data = np.array(rows, dtype=float)
        columns = {name: data[:, i].copy() for i, name in enumerate(names)}
        return cls(columns=columns, dt=float(meta["dt"]),
                   controller=meta["controller"], seed=int(meta["seed"]),
                   diverged=bool(int(meta["diverged"])))


def pen_step(pen: PenModel, user_force, em_force, compliance: float, dt: float) -> PenModel:
    """Semi-implicit Euler step of the pen mass."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    total = (np.asarray(user_force, float) + compliance * np.asarray(em_force, float)
             - pen.damping * pen.velocity)
    acc = total / pen.mass
    vel = pen.velocity + acc * dt
    pos = pen.position + vel * dt
    return PenModel(pen.mass, pen.damping, pos, vel)


@dataclass(frozen=True)
class SimConfig:
    """Experiment wiring: timing, noise, and controller parameters."""

    dt: float = 0.02
    timeout: float = 30.0
    settle_time: float = 0.3
    controller_decimation: int = 1  # solve every k-th sim step
    meas_noise_std: float = 0.0  # pen measurement noise fed to the filter [m]
    divergence_factor: float = 2.0
    mpc_ref_speed: float = None  # defaults to the user's nominal speed
    open_loop_speed: float = None
    weights: Weights = field(default_factory=Weights)
    constraints: Constraints = field(default_factory=Constraints)
    solver: SolverConfig = field(default_factory=SolverConfig)
    em: EmParams = field(default_factory=EmParams.table_defaults)

    def __post_init__(self):
        if self.controller_decimation < 1:
            raise ValueError("controller_decimation must be >= 1")
        # the controller may run every k-th step, but the shared tick must match
        if not math.isclose(self.dt, self.solver.dt):
            raise ValueError("simulator dt must equal the controller dt")


def run_experiment(
    controller: str, path: ReferencePath, user: UserModel,
    config: SimConfig = None, seed: int = 0,
) -> Trace:
    """Closed-loop rollout until the user finishes the shape (plus settle).

    Identical seeds produce bit-identical traces. Divergence (pen leaving
    the workspace by the configured factor) stops the run early and flags
    the trace.
    """
    if controller not in CONTROLLER_KINDS:
        raise ValueError(f"controller must be one of {CONTROLLER_KINDS}")
    cfg = config or SimConfig()
    rng = np.random.default_rng(seed)
    dt = cfg.dt

    start = evaluate(path, 0.0)
    pen = PenModel(position=start.copy())
    stage = StageModel(
        max_speed=cfg.constraints.max_speed, max_acc=cfg.constraints.max_acc,
        workspace_min=cfg.constraints.workspace_min,
        workspace_max=cfg.constraints.workspace_max,
        position=start.copy(),
    )

    ctrl = None
    tracker = None
    if controller in ("mpcc", "mpc"):
        ctrl = MpccController(path, cfg.em, cfg.weights, cfg.constraints, cfg.solver)
        ctrl.reset(pen_pos=pen.position)
        tracker = PenTracker(meas_noise=max(cfg.meas_noise_std**2, 2.5e-7))

    mpc_speed = cfg.mpc_ref_speed if cfg.mpc_ref_speed is not None else user.speed
    ol_speed = cfg.open_loop_speed if cfg.open_loop_speed is not None else user.speed

    span = cfg.divergence_factor * (stage.workspace_max - stage.workspace_min)
    center = 0.5 * (stage.workspace_max + stage.workspace_min)

    rows = []
    diverged = False
    user_theta = 0.0
    finish_t = None
    alpha = 0.0
    accel_cmd = np.zeros(2)
    theta_out = 0.0
    wander = np.zeros(2)
    diag = dict(breakdown=np.zeros(8), iterations=0, converged=1.0, cost=0.0)

    n_steps = int(round(cfg.timeout / dt))
    for i in range(n_steps):
        t = i * dt

        # --- controller tick ---------------------------------------------
        if i % cfg.controller_decimation == 0:
            if controller in ("mpcc", "mpc"):
                meas = pen.position.copy()
                if cfg.meas_noise_std > 0:
                    meas = meas + rng.normal(0.0, cfg.meas_noise_std, 2)
                est = tracker.step(meas, dt)
                x0 = SystemState(stage.position, stage.velocity, alpha, ctrl.theta)
                if controller == "mpcc":
                    res = ctrl.solve(x0, est)
                else:
                    res = ctrl.mpc_solve(x0, est, mpc_speed, t)
                ctrl.advance(res)
                accel_cmd = res.first_input.magnet_acc
                alpha = min(max(res.states[1].alpha, 0.0), 1.0)
                theta_out = res.states[0].theta
                bd = res.diagnostics["cost_breakdown"][0]
                diag = dict(breakdown=bd, iterations=res.iterations,
                            converged=float(res.converged), cost=res.cost)
            elif controller == "open_loop":
                target, alpha = open_loop_step(t, path, ol_speed)
                stage_target = target
                theta_out = min(ol_speed * t, path.length)

        # --- stage -------------------------------------------------------
        if controller == "open_loop":
            stage.step_toward(stage_target, dt)
        elif controller in ("mpcc", "mpc"):
            stage.step_accel(accel_cmd, dt)

        # --- forces and pen ----------------------------------------------
        if controller == "none":
            em_force = np.zeros(2)
        else:
            em_force = actuation_force_from_positions(
                pen.position, stage.effective_position(rng), alpha, cfg.em
            )
        user_theta = min(user_theta + user.progress_rate(t) * dt, path.length)
        target_pt = evaluate(path, user_theta)
        if user.wander_std > 0:
            decay = math.exp(-dt / user.wander_tau)
            wander = decay * wander + rng.normal(
                0.0, user.wander_std * math.sqrt(1.0 - decay * decay), 2
            )
        noise = rng.normal(0.0, 1.0, 2) * user.noise_std if user.noise_std > 0 else np.zeros(2)
        user_force = user.intent_gain * (target_pt + wander - pen.position + noise)
        pen = pen_step(pen, user_force, em_force, user.compliance, dt)

        bd = diag["breakdown"]
        rows.append((
            t, pen.position[0], pen.position[1],
            stage.position[0], stage.position[1],
            stage.velocity[0], stage.velocity[1],
            alpha, theta_out, em_force[0], em_force[1],
            bd[0], bd[1], bd[2], bd[3], bd[4], bd[5], bd[6], bd[7],
            float(diag["iterations"]), diag["converged"], diag["cost"],
        ))

        off = np.abs(pen.position - center)
        if np.any(off > 0.5 * span):
            diverged = True
            break
        if user_theta >= path.length and finish_t is None:
            finish_t = t
        if finish_t is not None and t - finish_t >= cfg.settle_time:
            break

    data = np.array(rows)
    columns = {name: data[:, j].copy() for j, name in enumerate(TRACE_COLUMNS)}
    return Trace(columns=columns, dt=dt, controller=controller, seed=seed,
                 diverged=diverged)
