"""Synthetic scene construction for tests, benchmarks and demo logs.

Routes are built by integrating a curvature profile with exact 0.1 m chords,
so they satisfy the dense-path spacing rule to machine precision. Expert
trajectories and controls are produced by the forecaster itself.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .dynamics import DynamicsConfig, forecast_ego
from .scene import (
    ROUTE_SPACING,
    ActorTrack,
    EgoState,
    Hazards,
    IdmLeader,
    JunctionActor,
    JunctionContext,
    Lane,
    LaneInfo,
    LaneType,
    Pose,
    RouteSpec,
    SceneFrame,
    TrafficControl,
    Trajectory,
)


def route_from_curvature(length, curvature=0.0, start=(0.0, 0.0), heading=0.0, spacing=ROUTE_SPACING):
    """Dense ``(n, 3)`` path of ``length`` meters following ``curvature(s)``.

    ``curvature`` may be a constant or a callable of arc length. Each step is
    a chord of exactly ``spacing`` meters.
    """
    n = int(round(length / spacing))
    kappa = curvature if callable(curvature) else (lambda s, k=float(curvature): k)
    pts = np.empty((n + 1, 3))
    x, y = start
    h = heading
    for i in range(n + 1):
        pts[i] = (x, y, h)
        k = kappa(i * spacing)
        # chord at the mid heading of the arc keeps |step| == spacing exactly
        dh = 2.0 * math.asin(max(-1.0, min(1.0, 0.5 * spacing * k))) if k else 0.0
        mid = h + 0.5 * dh
        x += spacing * math.cos(mid)
        y += spacing * math.sin(mid)
        h += dh
    pts[:, 2] = np.arctan2(np.sin(pts[:, 2]), np.cos(pts[:, 2]))
    return pts


def straight_route(length=60.0, behind=2.0, lateral=0.0):
    return route_from_curvature(length + behind, 0.0, start=(-behind, lateral))


def constant_velocity_future(x, y, yaw, speed, horizon, dt=0.25):
    t = dt * np.arange(1, horizon + 1)
    return np.column_stack([
        x + speed * math.cos(yaw) * t,
        y + speed * math.sin(yaw) * t,
        np.full(horizon, yaw),
        np.full(horizon, speed),
    ])


def make_actor(actor_id, cls, x, y, yaw=0.0, speed=0.0, horizon=10, half_extents=None, dt=0.25, **kw):
    """Actor with a constant-velocity recorded future."""
    if half_extents is None:
        half_extents = {
            "pedestrian": (0.3, 0.3),
            "cone": (0.2, 0.2),
            "bicycle": (0.9, 0.35),
            "traffic_light": (0.3, 0.3),
            "stop_sign": (0.2, 0.2),
        }.get(str(getattr(cls, "value", cls)), (2.3, 1.0))
    return ActorTrack(
        id=str(actor_id), cls=cls, pose=Pose(x, y, yaw), speed=speed, half_extents=half_extents,
        future=constant_velocity_future(x, y, yaw, speed, horizon, dt), **kw,
    )


def make_frame(
    frame_id="f0",
    speed=5.0,
    route=None,
    actors=(),
    horizon=10,
    expert_speed=None,
    lane_info=None,
    timestamp=0.0,
    config=DynamicsConfig(),
    **context,
):
    """A validated frame whose expert trajectory follows ``route`` at ``expert_speed``.

    Extra keyword arguments are passed to ``SceneFrame`` (speed_limit,
    junction, idm_leader, traffic_controls, hazards, ...).
    """
    route = straight_route() if route is None else np.asarray(route, dtype=float)
    lane_info = lane_info if lane_info is not None else LaneInfo()
    ego = EgoState(Pose(0.0, 0.0, 0.0), speed=speed, wheelbase=config.wheelbase)
    placeholder = Trajectory(np.zeros((11, 2)), np.column_stack([np.arange(1.0, 11.0), np.zeros(10)]))
    frame = SceneFrame(
        frame_id=frame_id, timestamp=timestamp, ego=ego,
        route=RouteSpec(route, target_points=route[[len(route) // 2, -1], :2], lane_info=lane_info),
        expert=placeholder, actors=tuple(actors), horizon=horizon, **context,
    )
    target = speed if expert_speed is None else expert_speed
    steps = max(horizon, 10)
    roll = forecast_ego(frame, route, target, steps, config=config, check_collisions=False)
    ego = replace(ego, accel=float(roll.controls[0, 1]), steer=float(roll.controls[0, 0]))
    return replace(frame, ego=ego, expert=roll.trajectory, expert_controls=roll.controls)


_COLORS = ("red", "blue", "white", "black", "silver", "green")
_VEHICLE_TYPES = ("car", "SUV", "van", "police car", "truck")


def random_frame(rng, frame_id, timestamp=0.0, horizon=10, n_actors=None, config=DynamicsConfig()):
    """A randomized urban frame: curved route, random lanes, actors and traffic controls."""
    speed = float(rng.uniform(0.0, 14.0))
    kappa = float(rng.choice([0.0, 0.0, rng.uniform(-0.03, 0.03)]))
    route = route_from_curvature(70.0, kappa, start=(-2.0, 0.0))

    def lane():
        kind = rng.choice([t.value for t in LaneType], p=[0.45, 0.25, 0.15, 0.15])
        return Lane(kind, 2.0 if kind == "sidewalk" else float(rng.uniform(3.0, 3.8)))

    lane_info = LaneInfo(
        ego_lane_width=float(rng.uniform(3.0, 3.8)),
        left=tuple(lane() for _ in range(rng.integers(0, 3))),
        right=tuple(lane() for _ in range(rng.integers(0, 2))),
    )
    n_actors = int(rng.integers(0, 6)) if n_actors is None else n_actors
    actors = []
    for j in range(n_actors):
        cls = rng.choice(["vehicle", "pedestrian", "cone", "static_obstacle", "bicycle"], p=[0.45, 0.15, 0.2, 0.1, 0.1])
        s = float(rng.uniform(4.0, 45.0))
        base = route[min(int(s / ROUTE_SPACING), len(route) - 1)]
        lat = float(rng.uniform(-8.0, 8.0))
        x = base[0] - lat * math.sin(base[2])
        y = base[1] + lat * math.cos(base[2])
        moving = cls in ("vehicle", "pedestrian", "bicycle")
        v = float(rng.uniform(0.0, 8.0 if cls == "vehicle" else 1.5)) if moving else 0.0
        yaw = float(base[2] + (rng.choice([0.0, math.pi]) if cls == "vehicle" else rng.uniform(-math.pi, math.pi)))
        kw = {}
        if cls == "vehicle":
            kw = {"color": str(rng.choice(_COLORS)), "subtype": str(rng.choice(_VEHICLE_TYPES))}
        elif cls == "pedestrian":
            kw = {"subtype": str(rng.choice(["adult", "child"]))}
        actors.append(make_actor(f"a{j}", cls, x, y, yaw, v, horizon=horizon, **kw))
    controls = ()
    hazards = Hazards()
    if rng.random() < 0.2:
        s = float(rng.uniform(5.0, 30.0))
        base = route[int(s / ROUTE_SPACING)]
        nx, ny = -math.sin(base[2]), math.cos(base[2])
        line = [[base[0] - 1.75 * nx, base[1] - 1.75 * ny], [base[0] + 1.75 * nx, base[1] + 1.75 * ny]]
        if rng.random() < 0.5:
            state = str(rng.choice(["red", "green"]))
            controls = (TrafficControl("traffic_light", line, state=state),)
            hazards = Hazards(red_light=state == "red")
        else:
            controls = (TrafficControl("stop_sign", line),)
            hazards = Hazards(stop_sign=True)
    expert_speed = speed if rng.random() < 0.5 else max(0.0, speed + float(rng.uniform(-8.0, 6.0)))
    leader = None
    ahead = [a for a in actors if a.cls.value == "vehicle" and a.pose.x > 4.0 and abs(a.pose.y) < 2.0]
    if ahead and expert_speed < speed:
        lead = min(ahead, key=lambda a: a.pose.x)
        leader = IdmLeader(lead.id, float(lead.pose.x), expert_speed)
        hazards = replace(hazards, vehicle="front")
    junction = None
    if rng.random() < 0.15:
        junction = JunctionContext(
            float(rng.uniform(0.0, 40.0)),
            tuple(
                JunctionActor(a.id, approaching=bool(rng.random() < 0.3), inside=bool(rng.random() < 0.3),
                              moving_away=bool(rng.random() < 0.5))
                for a in actors if a.cls.value == "vehicle"
            ),
        )
    return make_frame(
        frame_id, speed=speed, route=route, actors=actors, horizon=horizon, lane_info=lane_info,
        timestamp=timestamp, traffic_controls=controls, hazards=hazards, expert_speed=expert_speed,
        idm_leader=leader, junction=junction,
        in_junction=bool(rng.random() < 0.1), speed_limit=13.9, town=str(rng.choice(["Town12", "Town13", "Town05"])),
        config=config,
    )


def random_log(n_frames, seed=0, horizon=10, dt=0.25):
    rng = np.random.default_rng(seed)
    return [random_frame(rng, f"f{i:05d}", timestamp=i * dt, horizon=horizon) for i in range(n_frames)]
