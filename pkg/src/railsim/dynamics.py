"""Kinematic bicycle model, PID tracking controllers and ego forecasting.

The forecaster rolls the ego forward with the two PID controllers while every
other actor replays its recorded future ("on rails"), and reports the first
box overlap between ego and any actor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import HorizonExceeded, PathTooShort
from .scene import (
    DEFAULT_N_PATH_WPS,
    DEFAULT_N_SPEED_WPS,
    SPEED_WP_DT,
    EgoState,
    OrientedBox,
    Pose,
    Trajectory,
    path_waypoints,
)
from .validation import arc_lengths, check_polyline, wrap_angle


@dataclass(frozen=True)
class PidConfig:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral_clamp: float = 10.0
    output_clamp: float = math.inf

    def __post_init__(self):
        if not (self.integral_clamp > 0 and self.output_clamp > 0):
            raise ValueError("PID clamps must be positive")


@dataclass(frozen=True)
class DynamicsConfig:
    """Integrator, actuator limits and controller gains.

    Gains are local defaults that satisfy the convergence checks in the test
    suite; they are not the values of any particular expert driver.
    """

    dt: float = 0.25
    substeps: int = 5
    max_steer: float = 1.22
    min_accel: float = -6.0
    max_accel: float = 3.0
    wheelbase: float = 2.9
    lateral: PidConfig = field(default_factory=lambda: PidConfig(kp=1.0, ki=0.05, kd=0.15, integral_clamp=2.0))
    longitudinal: PidConfig = field(default_factory=lambda: PidConfig(kp=2.0, ki=0.1, kd=0.0, integral_clamp=5.0))
    lookahead_min: float = 2.0
    lookahead_time: float = 0.5
    brake_speed: float = 0.05
    # steering is scaled by steer_speed_ref / v above this speed so the
    # per-tick yaw response (which grows with v / L) stays stable
    steer_speed_ref: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.dt <= 0.5:
            raise ValueError(f"dt must lie in (0, 0.5], got {self.dt}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not (self.max_steer > 0 and self.min_accel < 0 < self.max_accel):
            raise ValueError("invalid actuator clamps")
        for name in ("lateral", "longitudinal"):
            value = getattr(self, name)
            if isinstance(value, dict):
                object.__setattr__(self, name, PidConfig(**value))


@dataclass(frozen=True)
class ControlAction:
    steer: float
    accel: float

    @classmethod
    def clamped(cls, steer, accel, cfg):
        return cls(
            min(max(steer, -cfg.max_steer), cfg.max_steer),
            min(max(accel, cfg.min_accel), cfg.max_accel),
        )


@dataclass(frozen=True)
class Collision:
    actor_id: str
    step: int


@dataclass(frozen=True, eq=False)
class RolloutResult:
    poses: np.ndarray  # (steps + 1, 3): x, y, yaw
    speeds: np.ndarray  # (steps + 1,)
    controls: np.ndarray  # (steps, 2): steer, accel
    collided: Optional[Collision]
    trajectory: Trajectory

    def pose(self, i):
        return Pose(*self.poses[i])


# --------------------------------------------------------------------------
# Vehicle model
# --------------------------------------------------------------------------


def _integrate(x, y, yaw, v, steer, accel, dt, substeps, wheelbase):
    h = dt / substeps
    yaw_rate_gain = math.tan(steer) / wheelbase
    cos, sin = math.cos, math.sin
    dv = accel * h
    for _ in range(substeps):
        step = v * h
        x += step * cos(yaw)
        y += step * sin(yaw)
        yaw += step * yaw_rate_gain
        v += dv
        if v < 0.0:
            v = 0.0
    return x, y, wrap_angle(yaw), v


def bicycle_step(state: EgoState, action: ControlAction, dt: float, substeps: int = 1) -> EgoState:
    """Advance a rear-axle kinematic bicycle by ``dt`` with forward Euler.

    Each of the ``substeps`` sub-intervals applies::

        x += v cos(yaw) h;  y += v sin(yaw) h;  yaw += v / L tan(steer) h;  v = max(0, v + a h)
    """
    if not 0.0 < dt <= 0.5:
        raise ValueError(f"dt must lie in (0, 0.5], got {dt}")
    x, y, yaw, v = _integrate(
        state.pose.x, state.pose.y, state.pose.yaw, state.speed,
        action.steer, action.accel, dt, int(substeps), state.wheelbase,
    )
    return replace(state, pose=Pose(x, y, yaw), speed=v, accel=action.accel, steer=action.steer)


# --------------------------------------------------------------------------
# Controllers
# --------------------------------------------------------------------------


class PID:
    """Discrete PID with integral clamping; ``reset`` clears the history."""

    def __init__(self, cfg: PidConfig):
        self.cfg = cfg
        self.reset()

    def reset(self):
        self._integral = 0.0
        self._prev = None

    def __call__(self, error, dt):
        cfg = self.cfg
        self._integral = min(max(self._integral + error * dt, -cfg.integral_clamp), cfg.integral_clamp)
        deriv = 0.0 if self._prev is None else (error - self._prev) / dt
        self._prev = error
        out = cfg.kp * error + cfg.ki * self._integral + cfg.kd * deriv
        return min(max(out, -cfg.output_clamp), cfg.output_clamp)


class _PathTracker:
    """Nearest-point cursor on a polyline that only moves forward.

    The coarse search runs over vertices with numpy; the exact foot point is
    then refined on the two segments adjacent to the nearest vertex.
    """

    def __init__(self, path_xy):
        self.xy = path_xy
        self.s = arc_lengths(path_xy)
        self._px = np.ascontiguousarray(path_xy[:, 0])
        self._py = np.ascontiguousarray(path_xy[:, 1])
        self._cursor = 0
        self._first = True

    def project(self, x, y, reach=None):
        """Arc position of the nearest path point; searches ``reach`` meters past the cursor."""
        lo = self._cursor
        n = len(self.s)
        if reach is None or self._first:
            hi = n
            self._first = False
        else:
            hi = min(int(self.s.searchsorted(self.s[lo] + reach, side="right")) + 1, n)
        dx = self._px[lo:hi] - x
        dy = self._py[lo:hi] - y
        k = lo + int(np.argmin(dx * dx + dy * dy))
        best_d2, best_s, best_seg = math.inf, 0.0, lo
        for j in (k - 1, k):
            if j < lo or j + 1 >= n:
                continue
            ax, ay, bx, by = self.xy[j:j + 2].ravel().tolist()
            ex, ey = bx - ax, by - ay
            l2 = ex * ex + ey * ey
            t = 0.0 if l2 <= 1e-24 else min(1.0, max(0.0, ((x - ax) * ex + (y - ay) * ey) / l2))
            qx, qy = ax + t * ex - x, ay + t * ey - y
            d2 = qx * qx + qy * qy
            if d2 < best_d2:
                best_d2, best_s, best_seg = d2, float(self.s[j]) + t * math.sqrt(l2), j
        self._cursor = best_seg
        return best_s

    def point_at(self, arc):
        s = self.s
        end = float(s[-1])
        if arc >= end:
            ax, ay, bx, by = self.xy[-2:].ravel().tolist()
            n = math.hypot(bx - ax, by - ay)
            over = arc - end
            return bx + (bx - ax) / n * over, by + (by - ay) / n * over
        k = min(max(int(s.searchsorted(arc, side="right")) - 1, 0), len(s) - 2)
        s0, s1 = float(s[k]), float(s[k + 1])
        f = (arc - s0) / max(s1 - s0, 1e-12)
        ax, ay, bx, by = self.xy[k:k + 2].ravel().tolist()
        return ax + f * (bx - ax), ay + f * (by - ay)


def lookahead_distance(speed, cfg: DynamicsConfig):
    return max(cfg.lookahead_min, cfg.lookahead_time * speed)


def _heading_error(tracker, x, y, yaw, speed, cfg):
    arc = tracker.project(x, y, reach=2.0 + 2.0 * speed * cfg.dt)
    px, py = tracker.point_at(arc + lookahead_distance(speed, cfg))
    return wrap_angle(math.atan2(py - y, px - x) - yaw)


def _steer_schedule(speed, cfg):
    return cfg.steer_speed_ref / speed if speed > cfg.steer_speed_ref else 1.0


def lateral_pid(path, state: EgoState, cfg: DynamicsConfig = DynamicsConfig()) -> float:
    """Single-shot steering command toward a speed-scaled lookahead point on ``path``.

    Positive steer turns left. Uses a fresh controller (empty integral, no
    derivative history); ``forecast_ego`` keeps controller state across steps.
    """
    pts = check_polyline(path, name="path")
    tracker = _PathTracker(pts)
    if tracker.s[-1] < 1e-6:
        raise PathTooShort("path has zero length")
    err = _heading_error(tracker, state.pose.x, state.pose.y, state.pose.yaw, state.speed, cfg)
    steer = PID(cfg.lateral)(err, cfg.dt) * _steer_schedule(state.speed, cfg)
    return min(max(steer, -cfg.max_steer), cfg.max_steer)


def longitudinal_pid(target_speed, current_speed, cfg: DynamicsConfig = DynamicsConfig(), pid=None) -> float:
    """Acceleration command for a speed error, clamped to the actuator limits.

    A target at or below ``cfg.brake_speed`` commands full braking.
    """
    if target_speed < 0 or current_speed < 0:
        raise ValueError("speeds must be >= 0")
    if target_speed <= cfg.brake_speed:
        return cfg.min_accel
    pid = pid or PID(cfg.longitudinal)
    accel = pid(target_speed - current_speed, cfg.dt)
    return min(max(accel, cfg.min_accel), cfg.max_accel)


# --------------------------------------------------------------------------
# Collision geometry
# --------------------------------------------------------------------------


def boxes_overlap(a, b):
    """Vectorised separating-axis test for rectangles.

    ``a`` and ``b`` are broadcastable arrays ``(..., 5)`` of
    ``(x, y, yaw, half_length, half_width)``. Touching boxes count as
    overlapping.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ca, sa = np.cos(a[..., 2]), np.sin(a[..., 2])
    cb, sb = np.cos(b[..., 2]), np.sin(b[..., 2])
    dx = b[..., 0] - a[..., 0]
    dy = b[..., 1] - a[..., 1]
    # |u_i . v_j| between the axis sets; reused for all four projections
    c = np.abs(ca * cb + sa * sb)   # a.x . b.x  ==  a.y . b.y
    s = np.abs(sa * cb - ca * sb)   # a.x . b.y  ==  a.y . b.x
    hla, hwa, hlb, hwb = a[..., 3], a[..., 4], b[..., 3], b[..., 4]
    sep = np.abs(dx * ca + dy * sa) > hla + hlb * c + hwb * s
    sep |= np.abs(-dx * sa + dy * ca) > hwa + hlb * s + hwb * c
    sep |= np.abs(dx * cb + dy * sb) > hlb + hla * c + hwa * s
    sep |= np.abs(-dx * sb + dy * cb) > hwb + hla * s + hwa * c
    return ~sep


def obb_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """True iff the two oriented rectangles intersect (boundaries included)."""
    return bool(boxes_overlap(a.as_array(), b.as_array()))


def world_on_rails_actors(frame, step):
    """Actor boxes at recorded ``step``, independent of anything the ego does."""
    if not 0 <= step <= frame.horizon:
        raise HorizonExceeded(f"step {step} outside recorded horizon 0..{frame.horizon}")
    return [
        OrientedBox(Pose(*row[:3]), (row[3], row[4]))
        for row in frame.actor_boxes[step]
    ]


def first_collision(ego_boxes, actor_boxes, actor_ids, start=1):
    """First ``(step, actor)`` overlap, scanning steps then actors in record order."""
    if actor_boxes.shape[1] == 0 or len(ego_boxes) <= start:
        return None
    hits = boxes_overlap(ego_boxes[start:, None, :], actor_boxes[start : len(ego_boxes)])
    idx = np.argwhere(hits)
    if idx.size == 0:
        return None
    step, j = idx[0]
    return Collision(actor_ids[j], int(step) + start)


# --------------------------------------------------------------------------
# Forecasting
# --------------------------------------------------------------------------


def derive_trajectory(poses, path_xy, dt, n_speed_wps=DEFAULT_N_SPEED_WPS, n_path_wps=DEFAULT_N_PATH_WPS):
    """Speed waypoints sampled every 0.25 s from the rollout, path waypoints every 1 m on ``path_xy``.

    Rollouts shorter than the speed horizon hold their final position.
    """
    stride = max(1, int(round(SPEED_WP_DT / dt)))
    idx = np.minimum(np.arange(n_speed_wps) * stride, len(poses) - 1)
    return Trajectory(poses[idx, :2], path_waypoints(path_xy, n_path_wps))


def forecast_ego(
    frame,
    path,
    target_speed_profile,
    steps,
    dt=None,
    *,
    config: DynamicsConfig = DynamicsConfig(),
    accel_profile=None,
    steer_profile=None,
    check_collisions=True,
    n_speed_wps=DEFAULT_N_SPEED_WPS,
    n_path_wps=DEFAULT_N_PATH_WPS,
) -> RolloutResult:
    """Roll the ego forward ``steps`` ticks along ``path``.

    :param frame: scene providing the initial ego state and on-rails actors.
    :param path: ``(n, 2|3)`` ego-local path the lateral controller follows.
    :param target_speed_profile: scalar or per-step target speeds (m/s).
    :param accel_profile: optional per-step accelerations replacing the
        longitudinal controller (still clamped).
    :param steer_profile: optional per-step steering replacing the lateral
        controller (still clamped).
    :return: poses and speeds for every tick including the start, the applied
        controls, the first collision (if any) and the derived trajectory.
    """
    cfg = config if dt is None or dt == config.dt else replace(config, dt=dt)
    dt = cfg.dt
    steps = int(steps)
    if check_collisions and steps > frame.horizon:
        raise HorizonExceeded(f"{steps} steps requested, actors are recorded for {frame.horizon}")
    path_xy = check_polyline(path, name="path")
    targets = np.broadcast_to(np.asarray(target_speed_profile, dtype=float), (steps,)) if steps else np.zeros(0)
    if np.any(targets < 0):
        raise ValueError("target speeds must be >= 0")
    accels = None if accel_profile is None else np.broadcast_to(np.asarray(accel_profile, dtype=float), (steps,))
    steers = None if steer_profile is None else np.broadcast_to(np.asarray(steer_profile, dtype=float), (steps,))

    tracker = _PathTracker(path_xy)
    lat_pid = PID(cfg.lateral)
    lon_pid = PID(cfg.longitudinal)
    ego = frame.ego
    wheelbase = ego.wheelbase
    x, y, yaw, v = ego.pose.x, ego.pose.y, ego.pose.yaw, ego.speed
    poses = np.empty((steps + 1, 3))
    speeds = np.empty(steps + 1)
    controls = np.empty((steps, 2))
    poses[0] = (x, y, yaw)
    speeds[0] = v
    max_steer, lo_acc, hi_acc = cfg.max_steer, cfg.min_accel, cfg.max_accel
    for i in range(steps):
        if steers is None:
            steer = lat_pid(_heading_error(tracker, x, y, yaw, v, cfg), dt) * _steer_schedule(v, cfg)
        else:
            steer = steers[i]
        steer = min(max(steer, -max_steer), max_steer)
        if accels is None:
            target = targets[i]
            accel = lo_acc if target <= cfg.brake_speed else lon_pid(target - v, dt)
        else:
            accel = accels[i]
        accel = min(max(accel, lo_acc), hi_acc)
        x, y, yaw, v = _integrate(x, y, yaw, v, steer, accel, dt, cfg.substeps, wheelbase)
        poses[i + 1] = (x, y, yaw)
        speeds[i + 1] = v
        controls[i] = (steer, accel)

    collided = None
    if check_collisions and frame.actors:
        ego_boxes = np.empty((steps + 1, 5))
        ego_boxes[:, :3] = poses
        ego_boxes[:, 3:] = ego.half_extents
        collided = first_collision(ego_boxes, frame.actor_boxes, [a.id for a in frame.actors])
    traj = derive_trajectory(poses, path_xy, dt, n_speed_wps, n_path_wps)
    return RolloutResult(poses, speeds, controls, collided, traj)


class EgoForecaster(BaseEstimator):
    """Estimator-style wrapper around ``forecast_ego``.

    Parameters
    ----------
    dt, substeps, max_steer, min_accel, max_accel :
        Integrator step and actuator limits.
    lateral, longitudinal : PidConfig or None
        Controller gains; ``None`` keeps the defaults.
    steps : int
        Rollout length in ticks.
    """

    def __init__(self, dt=0.25, substeps=5, max_steer=1.22, min_accel=-6.0, max_accel=3.0,
                 lateral=None, longitudinal=None, steps=10):
        self.dt = dt
        self.substeps = substeps
        self.max_steer = max_steer
        self.min_accel = min_accel
        self.max_accel = max_accel
        self.lateral = lateral
        self.longitudinal = longitudinal
        self.steps = steps

    def _config(self):
        base = DynamicsConfig()
        return DynamicsConfig(
            dt=self.dt, substeps=self.substeps, max_steer=self.max_steer,
            min_accel=self.min_accel, max_accel=self.max_accel,
            lateral=self.lateral or base.lateral, longitudinal=self.longitudinal or base.longitudinal,
        )

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def predict(self, frame, path=None, target_speed=None, **kwargs):
        """Forecast one frame; defaults follow the route at the current speed."""
        cfg = getattr(self, "config_", None) or self._config()
        path = frame.route.dense_path if path is None else path
        target = frame.ego.speed if target_speed is None else target_speed
        steps = kwargs.pop("steps", self.steps)
        return forecast_ego(frame, path, target, steps, config=cfg, **kwargs)
