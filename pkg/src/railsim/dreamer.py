"""Instruction-conditioned alternative trajectories ("dream" samples).

For every recorded frame the dreamer produces alternative ego behaviours in
five modes (objects, faster, slower, target speed, lane change), rolls each
one out with the forecaster against the on-rails actors, and labels it safe
or unsafe with a templated reason.
"""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .dynamics import Collision, DynamicsConfig, forecast_ego
from .exceptions import EgoAlreadyStopped, InvariantViolation, MissingParam, NotApplicable
from .scene import SPEED_WP_DT, ActorClass, LaneType, SceneFrame, Trajectory, project_onto_polyline
from .validation import arc_lengths


class DreamMode(str, enum.Enum):
    OBJECTS = "Objects"
    FASTER = "Faster"
    SLOWER = "Slower"
    TARGET_SPEED = "TargetSpeed"
    LANE_CHANGE = "LaneChange"


MODE_ORDER = (DreamMode.FASTER, DreamMode.SLOWER, DreamMode.TARGET_SPEED, DreamMode.LANE_CHANGE, DreamMode.OBJECTS)
_MODE_STREAM = {m: i for i, m in enumerate(DreamMode)}


@dataclass(frozen=True)
class DreamerConfig:
    seed: int = 0
    horizon: int = 10
    n_speed_wps: int = 11
    n_path_wps: int = 10
    modes: tuple = tuple(m.value for m in MODE_ORDER)
    objects_radius: float = 15.0
    objects_min_ahead: float = 3.0
    contact_tolerance: float = 1.0
    reach_margin: float = 0.9
    faster_min_fraction: float = 0.5
    slower_min_speed: float = 1.0
    max_target_speed: float = 35.0
    lane_start_range: tuple = (0.5, 1.5)
    lane_length_range: tuple = (1.5, 3.0)
    lane_min_length: float = 5.0
    lane_max_start_fraction: float = 0.5
    moving_speed: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(DreamMode(m).value for m in self.modes))
        object.__setattr__(self, "lane_start_range", tuple(self.lane_start_range))
        object.__setattr__(self, "lane_length_range", tuple(self.lane_length_range))
        if self.horizon < 1 or self.n_speed_wps < 2 or self.n_path_wps < 1:
            raise ValueError("horizon and waypoint counts must be positive")


@dataclass(frozen=True, eq=False)
class DreamSample:
    sample_id: str
    frame_id: str
    mode: DreamMode
    instruction: str
    trajectory: Trajectory
    params: dict
    ego_speed: float
    expert: Trajectory
    dreamer_flag: bool = True
    safe: bool = True
    rejection_reason: Optional[str] = None
    violations: tuple = ()
    collision: Optional[Collision] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", DreamMode(self.mode))
        if not self.safe and not self.rejection_reason:
            raise InvariantViolation("rejection_reason", "unsafe samples need a rejection reason")

    def to_record(self):
        return {
            "sample_id": self.sample_id,
            "frame_id": self.frame_id,
            "mode": self.mode.value,
            "instruction": self.instruction,
            "dreamer_flag": self.dreamer_flag,
            "safe": self.safe,
            "rejection_reason": self.rejection_reason,
            "violations": list(self.violations),
            "params": self.params,
            "trajectory": {"speed_wps": self.trajectory.speed_wps.tolist(), "path_wps": self.trajectory.path_wps.tolist()},
            "collision": None if self.collision is None else {"actor_id": self.collision.actor_id, "step": self.collision.step},
            "reference": {
                "ego_speed": self.ego_speed,
                "expert": {"speed_wps": self.expert.speed_wps.tolist(), "path_wps": self.expert.path_wps.tolist()},
            },
        }

    @classmethod
    def from_record(cls, rec):
        ref = rec["reference"]
        col = rec.get("collision")
        return cls(
            sample_id=rec["sample_id"],
            frame_id=rec["frame_id"],
            mode=rec["mode"],
            instruction=rec["instruction"],
            trajectory=Trajectory(rec["trajectory"]["speed_wps"], rec["trajectory"]["path_wps"]),
            params=rec.get("params", {}),
            ego_speed=ref["ego_speed"],
            expert=Trajectory(ref["expert"]["speed_wps"], ref["expert"]["path_wps"]),
            dreamer_flag=rec.get("dreamer_flag", True),
            safe=rec.get("safe", True),
            rejection_reason=rec.get("rejection_reason"),
            violations=tuple(rec.get("violations", ())),
            collision=None if col is None else Collision(col["actor_id"], col["step"]),
        )


def mode_rng(seed, frame_id, mode):
    """Independent generator per (master seed, frame, mode).

    Adding or removing a mode never shifts another mode's draws, and the
    stream does not depend on processing order.
    """
    key = zlib.crc32(str(frame_id).encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key, _MODE_STREAM[DreamMode(mode)]]))


# --------------------------------------------------------------------------
# Instruction text
# --------------------------------------------------------------------------

_TEMPLATES = {
    DreamMode.FASTER: ("Accelerate.", "Speed up.", "Increase your speed.", "Drive faster."),
    DreamMode.SLOWER: ("Slow down.", "Brake.", "Reduce your speed.", "Decelerate now."),
    DreamMode.TARGET_SPEED: (
        "Drive at {speed} m/s.",
        "Reach a speed of {speed} m/s.",
        "Change your speed to {speed} m/s.",
        "Adjust your speed to {speed} m/s.",
    ),
    DreamMode.LANE_CHANGE: (
        "Change to the {side} {target}.",
        "Perform a lane change onto the {target} on your {side}.",
        "Move over to the {target} to your {side}.",
    ),
    DreamMode.OBJECTS: (
        "Drive towards the {object}.",
        "Head straight for the {object}.",
        "Steer towards the {object} and reach it.",
    ),
}
_REQUIRED = {
    DreamMode.TARGET_SPEED: ("target_speed",),
    DreamMode.LANE_CHANGE: ("side", "lane_type"),
    DreamMode.OBJECTS: ("object",),
}


def _lane_target(lane_type, lane_index):
    lane_type = LaneType(lane_type)
    if lane_type is LaneType.SIDEWALK:
        return "sidewalk"
    if lane_type is LaneType.PARKING:
        return "parking lane"
    if lane_type is LaneType.DRIVING_OPPOSITE:
        return "oncoming lane"
    return "lane" if lane_index <= 1 else "lane after next"


def instruction_text(mode, params, rng):
    """Fill a randomly chosen paraphrase template for ``mode``."""
    mode = DreamMode(mode)
    missing = [k for k in _REQUIRED.get(mode, ()) if k not in params]
    if missing:
        raise MissingParam(f"{mode.value} instruction needs {missing}")
    templates = _TEMPLATES[mode]
    template = templates[int(rng.integers(len(templates)))]
    if mode is DreamMode.TARGET_SPEED:
        return template.format(speed=f"{params['target_speed']:g}")
    if mode is DreamMode.LANE_CHANGE:
        return template.format(side=params["side"], target=_lane_target(params["lane_type"], params.get("lane_index", 1)))
    if mode is DreamMode.OBJECTS:
        return template.format(object=params["object"])
    return template


# --------------------------------------------------------------------------
# Geometry helpers
# --------------------------------------------------------------------------


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def lateral_blend(path_xy, start, length, offset):
    """Shift a path sideways by ``offset`` with a smoothstep ramp over ``[start, start + length]``.

    ``start`` is an arc position on ``path_xy``; the ramp has zero slope at
    both knots so the blended path's heading stays continuous.
    """
    path_xy = np.asarray(path_xy, dtype=float)[:, :2]
    s = arc_lengths(path_xy)
    heading = np.arctan2(*np.gradient(path_xy, axis=0)[:, ::-1].T)
    normal = np.column_stack([-np.sin(heading), np.cos(heading)])
    d = offset * _smoothstep((s - start) / max(length, 1e-9))
    return path_xy + d[:, None] * normal


def _expert_speed_profile(frame, steps, dt):
    speeds = frame.expert.speeds(SPEED_WP_DT)
    t = (np.arange(steps) + 1) * dt
    t_mid = (np.arange(len(speeds)) + 1) * SPEED_WP_DT
    return np.interp(t, t_mid, speeds)


def _segments_cross(p0, p1, q0, q1):
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    d1, d2 = orient(q0, q1, p0), orient(q0, q1, p1)
    d3, d4 = orient(p0, p1, q0), orient(p0, p1, q1)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0)


# --------------------------------------------------------------------------
# Generators
# --------------------------------------------------------------------------


class _Context:
    """Per-call bundle of configs so generators share one signature."""

    def __init__(self, cfg: DreamerConfig, dyn: DynamicsConfig):
        self.cfg = cfg
        self.dyn = dyn

    def steps(self, frame):
        return min(self.cfg.horizon, frame.horizon)

    def rollout(self, frame, path, targets, steps=None, **kw):
        return forecast_ego(
            frame, path, targets, self.steps(frame) if steps is None else steps, config=self.dyn,
            n_speed_wps=self.cfg.n_speed_wps, n_path_wps=self.cfg.n_path_wps, **kw,
        )


def _sample(frame, mode, k, instruction, roll, params, rng):
    return DreamSample(
        sample_id=f"{frame.frame_id}:{mode.value}:{k}",
        frame_id=frame.frame_id,
        mode=mode,
        instruction=instruction,
        trajectory=roll.trajectory,
        params=params,
        ego_speed=frame.ego.speed,
        expert=frame.expert,
        dreamer_flag=bool(rng.random() < 0.5),
        collision=roll.collided,
    )


def gen_faster(frame, rng, cfg=DreamerConfig(), dyn=DynamicsConfig()):
    """Keep the route, drive with a constant acceleration of more than half the maximum."""
    ctx = _Context(cfg, dyn)
    fraction = 1.0 - rng.uniform(0.0, 1.0 - cfg.faster_min_fraction)  # in (min_fraction, 1]
    accel = fraction * dyn.max_accel
    roll = ctx.rollout(frame, frame.route.xy, frame.ego.speed, accel_profile=accel)
    params = {"accel": accel, "accel_fraction": fraction}
    return _sample(frame, DreamMode.FASTER, 0, instruction_text(DreamMode.FASTER, params, rng), roll, params, rng)


def gen_slower(frame, rng, cfg=DreamerConfig(), dyn=DynamicsConfig()):
    """Keep the route and brake fully."""
    if frame.ego.speed <= cfg.slower_min_speed:
        raise EgoAlreadyStopped(f"ego speed {frame.ego.speed:.2f} m/s is at or below {cfg.slower_min_speed} m/s")
    ctx = _Context(cfg, dyn)
    roll = ctx.rollout(frame, frame.route.xy, 0.0, accel_profile=dyn.min_accel)
    params = {"accel": dyn.min_accel}
    return _sample(frame, DreamMode.SLOWER, 0, instruction_text(DreamMode.SLOWER, params, rng), roll, params, rng)


def gen_target_speed(frame, rng, cfg=DreamerConfig(), dyn=DynamicsConfig(), target_speed=None):
    """Track a random target speed in ``[0, max_target_speed]`` on the route."""
    ctx = _Context(cfg, dyn)
    if target_speed is None:
        target_speed = round(float(rng.uniform(0.0, cfg.max_target_speed)), 1)
    roll = ctx.rollout(frame, frame.route.xy, target_speed)
    params = {"target_speed": float(target_speed)}
    text = instruction_text(DreamMode.TARGET_SPEED, params, rng)
    return _sample(frame, DreamMode.TARGET_SPEED, 0, text, roll, params, rng)


def gen_lane_changes(frame, rng, cfg=DreamerConfig(), dyn=DynamicsConfig()):
    """One sample per neighbouring lane, blending the route onto that lane's centre.

    Start distance and transition length are drawn per sample and scale with
    the ego speed; the start is capped so the manoeuvre begins inside the
    path-waypoint window.
    """
    if frame.in_junction or frame.deviation_phase is not None:
        raise NotApplicable("lane changes are not generated in junctions or during a deviation")
    ctx = _Context(cfg, dyn)
    v = frame.ego.speed
    route = frame.route.xy
    s_ego = float(project_onto_polyline((0.0, 0.0), route)[0][0])
    steps = ctx.steps(frame)
    profile = _expert_speed_profile(frame, steps, dyn.dt)
    lanes = frame.route.lane_info
    out = []
    options = [("left", i) for i in range(len(lanes.left))] + [("right", i) for i in range(len(lanes.right))]
    for k, (side, idx) in enumerate(options):
        lane = (lanes.left if side == "left" else lanes.right)[idx]
        start = min(rng.uniform(*cfg.lane_start_range) * v, cfg.lane_max_start_fraction * cfg.n_path_wps)
        length = max(cfg.lane_min_length, rng.uniform(*cfg.lane_length_range) * v)
        offset = lanes.lane_offset(side, idx)
        path = lateral_blend(route, s_ego + start, length, offset)
        roll = ctx.rollout(frame, path, profile)
        params = {
            "side": side, "lane_index": idx + 1, "lane_type": lane.type.value,
            "offset": offset, "start": start, "length": length,
        }
        text = instruction_text(DreamMode.LANE_CHANGE, params, rng)
        out.append(_sample(frame, DreamMode.LANE_CHANGE, k, text, roll, params, rng))
    return out


def _reach_bounds(v0, horizon_t, dyn, margin):
    """Shortest and longest distance coverable in ``horizon_t`` under the accel clamps."""
    far = v0 * horizon_t + 0.5 * margin * dyn.max_accel * horizon_t ** 2
    decel = margin * dyn.min_accel
    if v0 + decel * horizon_t <= 0.0:
        near = v0 * v0 / (-2.0 * decel)
    else:
        near = v0 * horizon_t + 0.5 * decel * horizon_t ** 2
    return near, far


def gen_objects(frame, rng, cfg=DreamerConfig(), dyn=DynamicsConfig()):
    """Drive into each reachable object near the route.

    Objects must lie within ``objects_radius`` of the route and at least
    ``objects_min_ahead`` meters ahead. For each, the latest recorded tick at
    which the object's on-rails position can be reached under the accel
    clamps becomes the contact tick; the route is bent through that position
    and the held target speed is solved by bisection on the actual rollout.
    The rollout ends at contact and the speed waypoints hold the contact
    position afterwards. Samples whose endpoint misses the object by more
    than ``contact_tolerance`` are dropped. Returns ``[]`` when nothing is
    eligible.
    """
    ctx = _Context(cfg, dyn)
    route = frame.route.xy
    v0 = frame.ego.speed
    dt = dyn.dt
    max_steps = ctx.steps(frame)
    s_ego = float(project_onto_polyline((0.0, 0.0), route)[0][0])
    route_len = arc_lengths(route)[-1]
    out = []
    for actor in frame.actors:
        _, _, dist = project_onto_polyline((actor.pose.x, actor.pose.y), route)
        if dist[0] > cfg.objects_radius or actor.pose.x < cfg.objects_min_ahead:
            continue
        plan = None
        for k in range(max_steps, 0, -1):
            px, py = actor.state_at(k)[:2]
            s_p, lat_p, _ = project_onto_polyline((px, py), route)
            s_p, lat_p = float(s_p[0]), float(lat_p[0])
            if s_p - s_ego < 1.0 or s_p >= route_len - 1e-6:
                continue
            path = lateral_blend(route, s_ego, s_p - s_ego, lat_p)
            arcs = arc_lengths(path)
            distance = float(np.interp(s_p, arc_lengths(route), arcs) - np.interp(s_ego, arc_lengths(route), arcs))
            near, far = _reach_bounds(v0, k * dt, dyn, cfg.reach_margin)
            if near <= distance <= far:
                plan = (k, (px, py), path, distance)
                break
        if plan is None:
            continue
        k, target_xy, path, distance = plan
        speed = _solve_contact_speed(ctx, frame, path, k, distance, v0)
        roll = ctx.rollout(frame, path, speed, steps=k)
        miss = math.hypot(roll.poses[-1, 0] - target_xy[0], roll.poses[-1, 1] - target_xy[1])
        if miss > cfg.contact_tolerance:
            continue
        try:
            roll.trajectory.validate()
        except InvariantViolation:
            continue
        params = {
            "actor_id": actor.id, "object": actor.description(), "object_class": actor.cls.value,
            "contact_step": k, "target_speed": speed, "contact_miss": miss,
        }
        text = instruction_text(DreamMode.OBJECTS, params, rng)
        out.append(_sample(frame, DreamMode.OBJECTS, len(out), text, roll, params, rng))
    return out


def _solve_contact_speed(ctx, frame, path, steps, distance, v0, iters=40, tol=0.02):
    hi = v0 + ctx.dyn.max_accel * steps * ctx.dyn.dt + 5.0
    lo = 0.0
    s0 = float(project_onto_polyline((0.0, 0.0), path)[0][0])

    def progress(v):
        roll = ctx.rollout(frame, path, v, steps=steps, check_collisions=False)
        return float(project_onto_polyline(roll.poses[-1, :2], path)[0][0]) - s0

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        err = progress(mid) - distance
        if abs(err) < tol:
            return mid
        if err < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# Safety
# --------------------------------------------------------------------------

_UNSAFE_LANES = {
    LaneType.SIDEWALK.value: ("sidewalk", "This would mean driving onto the sidewalk, which is not allowed."),
    LaneType.DRIVING_OPPOSITE.value: (
        "oncoming_lane", "This would mean driving into the lane of oncoming traffic.",
    ),
}


def annotate_safety(sample: DreamSample, frame: SceneFrame, moving_speed=DreamerConfig.moving_speed) -> DreamSample:
    """Mark a sample unsafe on collision, forbidden lane, or running a red light / stop line.

    The rejection reason is the sentence for the first violation found, in
    that priority order.
    """
    found = []
    if sample.collision is not None:
        try:
            what = frame.actor(sample.collision.actor_id).description()
        except KeyError:
            what = "object"
        found.append(("collision", f"This would cause a collision with the {what}."))
    lane_type = sample.params.get("lane_type") if sample.mode is DreamMode.LANE_CHANGE else None
    if lane_type in _UNSAFE_LANES:
        found.append(_UNSAFE_LANES[lane_type])
    w = sample.trajectory.speed_wps
    if len(w) >= 2 and frame.traffic_controls:
        seg_speed = np.hypot(*np.diff(w, axis=0).T) / SPEED_WP_DT
        for tc in frame.traffic_controls:
            if tc.kind == "traffic_light" and tc.state != "red":
                continue
            crossed = _segments_cross(w[:-1], w[1:], tc.line[0], tc.line[1]) & (seg_speed > moving_speed)
            if np.any(crossed):
                if tc.kind == "traffic_light":
                    found.append(("red_light", "This would mean running the red traffic light."))
                else:
                    found.append(("stop_sign", "This would mean driving past the stop sign without stopping."))
    if not found:
        return replace(sample, safe=True, rejection_reason=None, violations=())
    return replace(sample, safe=False, rejection_reason=found[0][1], violations=tuple(f[0] for f in found))


# --------------------------------------------------------------------------
# Estimator
# --------------------------------------------------------------------------

_GENERATORS = {
    DreamMode.FASTER: gen_faster,
    DreamMode.SLOWER: gen_slower,
    DreamMode.TARGET_SPEED: gen_target_speed,
    DreamMode.LANE_CHANGE: gen_lane_changes,
    DreamMode.OBJECTS: gen_objects,
}


def generate_frame(frame, seed=0, cfg=DreamerConfig(), dyn=DynamicsConfig()):
    """All enabled modes for one frame, safety-annotated, in a fixed mode order."""
    samples = []
    for mode in MODE_ORDER:
        if mode.value not in cfg.modes:
            continue
        rng = mode_rng(seed, frame.frame_id, mode)
        try:
            made = _GENERATORS[mode](frame, rng, cfg, dyn)
        except (EgoAlreadyStopped, NotApplicable):
            continue
        for s in made if isinstance(made, list) else [made]:
            samples.append(annotate_safety(s, frame, cfg.moving_speed))
    return samples


class ActionDreamer(BaseEstimator):
    """Estimator-style front end: ``transform`` maps frames to lists of dream samples.

    Parameters
    ----------
    seed : int, optional
        Master seed; each (frame, mode) pair derives its own stream from it.
        Defaults to the seed in ``config``.
    config : DreamerConfig, optional
    dynamics : DynamicsConfig, optional
    """

    def __init__(self, seed=None, config=None, dynamics=None):
        self.seed = seed
        self.config = config
        self.dynamics = dynamics

    def fit(self, X=None, y=None):
        self.config_ = self.config or DreamerConfig()
        self.dynamics_ = self.dynamics or DynamicsConfig()
        self.seed_ = self.config_.seed if self.seed is None else int(self.seed)
        return self

    def generate(self, frame):
        if not hasattr(self, "config_"):
            self.fit()
        return generate_frame(frame, self.seed_, self.config_, self.dynamics_)

    def transform(self, X):
        return [self.generate(frame) for frame in X]

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)
