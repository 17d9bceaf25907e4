"""Recorded-scene domain types, path utilities and scene-log persistence.

All per-frame geometry is ego-local: the ego reference point sits at the
origin and looks along +x. ``SceneFrame.anchor`` keeps the world-frame pose of
that origin so frames can be related to each other.

Scene logs are UTF-8 JSON Lines. The first line carries the schema id, every
following line is one frame (see ``frame_to_record`` for the layout).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional, Sequence

import numpy as np

from .exceptions import (
    DegeneratePolyline,
    InvariantViolation,
    MalformedRecord,
    MixedFrameRates,
    PathTooShort,
    TooFewWaypoints,
)
from .validation import arc_lengths, check_points, check_polyline, check_positive, wrap_angle

SCHEMA_ID = "railsim.scene/1"

ROUTE_SPACING = 0.1
ROUTE_SPACING_TOL = 1e-6
PATH_WP_SPACING = 1.0
PATH_WP_TOL = 0.05
SPEED_WP_DT = 0.25
DEFAULT_N_SPEED_WPS = 11
DEFAULT_N_PATH_WPS = 10
DEFAULT_HORIZON = 10


class ActorClass(str, enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    BICYCLE = "bicycle"
    STATIC_OBSTACLE = "static_obstacle"
    TRAFFIC_LIGHT = "traffic_light"
    STOP_SIGN = "stop_sign"
    EMERGENCY_VEHICLE = "emergency_vehicle"
    CONE = "cone"
    CONSTRUCTION = "construction"
    ACCIDENT = "accident"


class LaneType(str, enum.Enum):
    DRIVING_SAME = "driving_same"
    DRIVING_OPPOSITE = "driving_opposite"
    PARKING = "parking"
    SIDEWALK = "sidewalk"


class HighLevelCommand(str, enum.Enum):
    FOLLOW_LANE = "follow_lane"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    GO_STRAIGHT = "go_straight"
    LANE_CHANGE_LEFT = "lane_change_left"
    LANE_CHANGE_RIGHT = "lane_change_right"


class DeviationPhase(str, enum.Enum):
    BEFORE = "before"
    DURING = "during"
    END = "end"


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        x, y, yaw = float(self.x), float(self.y), float(self.yaw)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(yaw)):
            raise InvariantViolation("pose", f"non-finite pose ({x}, {y}, {yaw})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "yaw", wrap_angle(yaw))

    def as_array(self):
        return np.array([self.x, self.y, self.yaw])

    @classmethod
    def from_seq(cls, seq):
        return cls(seq[0], seq[1], seq[2] if len(seq) > 2 else 0.0)


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle with half-length along ``center.yaw`` and half-width across it."""

    center: Pose
    half_extents: tuple

    def __post_init__(self):
        hl, hw = (float(v) for v in self.half_extents)
        if not (hl > 0.0 and hw > 0.0):
            raise InvariantViolation("half_extents", f"must be strictly positive, got ({hl}, {hw})")
        object.__setattr__(self, "half_extents", (hl, hw))

    def as_array(self):
        return np.array([self.center.x, self.center.y, self.center.yaw, *self.half_extents])

    def corners(self):
        c, s = math.cos(self.center.yaw), math.sin(self.center.yaw)
        hl, hw = self.half_extents
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + [self.center.x, self.center.y]


@dataclass(frozen=True)
class EgoState:
    pose: Pose
    speed: float
    wheelbase: float = 2.9
    half_extents: tuple = (2.45, 1.05)
    accel: float = 0.0
    steer: float = 0.0

    def __post_init__(self):
        if not float(self.speed) >= 0.0:
            raise InvariantViolation("ego.speed", f"must be >= 0, got {self.speed}")
        if not float(self.wheelbase) > 0.0:
            raise InvariantViolation("ego.wheelbase", f"must be > 0, got {self.wheelbase}")
        object.__setattr__(self, "speed", float(self.speed))
        object.__setattr__(self, "wheelbase", float(self.wheelbase))
        object.__setattr__(self, "accel", float(self.accel))
        object.__setattr__(self, "steer", float(self.steer))
        object.__setattr__(self, "half_extents", tuple(float(v) for v in self.half_extents))

    @property
    def bbox(self):
        return OrientedBox(self.pose, self.half_extents)


@dataclass(frozen=True)
class ActorTrack:
    """A non-ego object with its recorded current state and future states.

    ``future`` holds one ``(x, y, yaw, speed)`` row per recorded future tick.
    """

    id: str
    cls: ActorClass
    pose: Pose
    speed: float = 0.0
    half_extents: tuple = (2.3, 1.0)
    future: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    color: Optional[str] = None
    subtype: Optional[str] = None
    state: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "cls", ActorClass(self.cls))
        fut = np.asarray(self.future, dtype=float).reshape(-1, 4)
        if not np.all(np.isfinite(fut)):
            raise InvariantViolation(f"actors[{self.id}].future", "non-finite state")
        if float(self.speed) < 0.0 or np.any(fut[:, 3] < 0.0):
            raise InvariantViolation(f"actors[{self.id}].speed", "speeds must be >= 0")
        fut = fut.copy()
        fut[:, 2] = wrap_angle(fut[:, 2])
        fut.flags.writeable = False
        object.__setattr__(self, "future", fut)
        object.__setattr__(self, "speed", float(self.speed))
        object.__setattr__(self, "half_extents", tuple(float(v) for v in self.half_extents))

    @property
    def horizon(self):
        return len(self.future)

    def state_at(self, step):
        """``(x, y, yaw, speed)`` at ``step``; step 0 is the current record."""
        if step == 0:
            return (self.pose.x, self.pose.y, self.pose.yaw, self.speed)
        return tuple(self.future[step - 1])

    def description(self):
        """Short natural-language noun phrase, e.g. ``"red SUV"``."""
        if self.cls is ActorClass.PEDESTRIAN:
            return "child" if self.subtype == "child" else "pedestrian"
        if self.cls in (ActorClass.VEHICLE, ActorClass.EMERGENCY_VEHICLE):
            noun = self.subtype or ("emergency vehicle" if self.cls is ActorClass.EMERGENCY_VEHICLE else "car")
            return f"{self.color} {noun}" if self.color else noun
        noun = {
            ActorClass.BICYCLE: "bicycle",
            ActorClass.STATIC_OBSTACLE: "obstacle",
            ActorClass.TRAFFIC_LIGHT: "traffic light",
            ActorClass.STOP_SIGN: "stop sign",
            ActorClass.CONE: "traffic cone",
            ActorClass.CONSTRUCTION: "construction site",
            ActorClass.ACCIDENT: "accident",
        }[self.cls]
        if self.subtype and self.cls in (ActorClass.STATIC_OBSTACLE, ActorClass.BICYCLE):
            noun = self.subtype
        return f"{self.state} {noun}" if self.state else noun


@dataclass(frozen=True)
class Lane:
    type: LaneType
    width: float = 3.5

    def __post_init__(self):
        object.__setattr__(self, "type", LaneType(self.type))
        check_positive(self.width, "lane width")
        object.__setattr__(self, "width", float(self.width))


@dataclass(frozen=True)
class LaneInfo:
    """Lanes beside the ego lane, ordered from the ego lane outwards."""

    ego_lane_width: float = 3.5
    left: tuple = ()
    right: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ego_lane_width", float(self.ego_lane_width))
        object.__setattr__(self, "left", tuple(l if isinstance(l, Lane) else Lane(**l) for l in self.left))
        object.__setattr__(self, "right", tuple(l if isinstance(l, Lane) else Lane(**l) for l in self.right))

    def lane_offset(self, side, index):
        """Signed lateral offset of the centre of lane ``index`` (0-based) on ``side``."""
        lanes = self.left if side == "left" else self.right
        offset = 0.5 * self.ego_lane_width + sum(l.width for l in lanes[:index]) + 0.5 * lanes[index].width
        return offset if side == "left" else -offset


@dataclass(frozen=True)
class RouteSpec:
    dense_path: np.ndarray
    target_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    hlc: Optional[HighLevelCommand] = None
    lane_info: LaneInfo = field(default_factory=LaneInfo)

    def __post_init__(self):
        path = np.asarray(self.dense_path, dtype=float)
        if path.ndim != 2 or path.shape[1] not in (2, 3) or len(path) < 2:
            raise InvariantViolation("route.dense_path", f"need (n>=2, 2|3) array, got shape {path.shape}")
        if not np.all(np.isfinite(path)):
            raise InvariantViolation("route.dense_path", "non-finite point")
        gaps = np.hypot(*np.diff(path[:, :2], axis=0).T)
        bad = np.flatnonzero(np.abs(gaps - ROUTE_SPACING) > ROUTE_SPACING_TOL)
        if bad.size:
            raise InvariantViolation(
                "route.dense_path", f"spacing must be {ROUTE_SPACING} m, gap {bad[0]} is {gaps[bad[0]]:.6f} m"
            )
        path = path.copy()
        path.flags.writeable = False
        tps = np.asarray(self.target_points, dtype=float).reshape(-1, 2).copy()
        tps.flags.writeable = False
        object.__setattr__(self, "dense_path", path)
        object.__setattr__(self, "target_points", tps)
        if self.hlc is not None:
            object.__setattr__(self, "hlc", HighLevelCommand(self.hlc))
        if isinstance(self.lane_info, dict):
            object.__setattr__(self, "lane_info", LaneInfo(**self.lane_info))

    @property
    def total_length(self):
        return (len(self.dense_path) - 1) * ROUTE_SPACING

    @property
    def xy(self):
        return self.dense_path[:, :2]


@dataclass(frozen=True)
class Trajectory:
    """Disentangled action: speed waypoints every 0.25 s, path waypoints every 1 m."""

    speed_wps: np.ndarray
    path_wps: np.ndarray

    def __post_init__(self):
        w = check_points(self.speed_wps, name="speed_wps", allow_yaw=False).copy()
        p = check_points(self.path_wps, name="path_wps", allow_yaw=False).copy()
        w.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "speed_wps", w)
        object.__setattr__(self, "path_wps", p)

    def validate(self, tol=PATH_WP_TOL, field_name="trajectory"):
        gaps = np.hypot(*np.diff(self.path_wps, axis=0).T)
        bad = np.flatnonzero(np.abs(gaps - PATH_WP_SPACING) > tol)
        if bad.size:
            raise InvariantViolation(
                f"{field_name}.path_wps", f"arc spacing must be 1 m +- {tol}, gap {bad[0]} is {gaps[bad[0]]:.4f} m"
            )
        return self

    def speeds(self, dt=SPEED_WP_DT):
        return np.hypot(*np.diff(self.speed_wps, axis=0).T) / dt

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.speed_wps, other.speed_wps) and np.array_equal(self.path_wps, other.path_wps)

    __hash__ = None


@dataclass(frozen=True)
class TrafficControl:
    """A stop line governed by a traffic light or stop sign (ego-local segment)."""

    kind: str
    line: np.ndarray
    state: Optional[str] = None
    actor_id: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("traffic_light", "stop_sign"):
            raise InvariantViolation("traffic_controls.kind", f"unknown kind {self.kind!r}")
        line = np.asarray(self.line, dtype=float).reshape(2, 2).copy()
        line.flags.writeable = False
        object.__setattr__(self, "line", line)


@dataclass(frozen=True)
class JunctionActor:
    actor_id: str
    approaching: bool = False
    inside: bool = False
    moving_away: bool = False


@dataclass(frozen=True)
class JunctionContext:
    distance_to_junction: float
    actors: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self, "actors", tuple(a if isinstance(a, JunctionActor) else JunctionActor(**a) for a in self.actors)
        )


@dataclass(frozen=True)
class IdmLeader:
    """Object the expert's car-following model treats as limiting the target speed.

    ``cause`` names why a leading vehicle is itself slowing (``"red_light"``,
    ``"stop_sign"``, ``"pedestrian"``), when known.
    """

    actor_id: str
    distance: float
    expert_target_speed: float
    cause: Optional[str] = None


@dataclass(frozen=True)
class Hazards:
    vehicle: Optional[str] = None  # "front" | "left" | "right"
    walker: bool = False
    stop_sign: bool = False
    red_light: bool = False
    swerving: bool = False


@dataclass(frozen=True, eq=False)
class SceneFrame:
    frame_id: str
    timestamp: float
    ego: EgoState
    route: RouteSpec
    expert: Trajectory
    actors: tuple = ()
    dt_record: float = 0.25
    horizon: int = DEFAULT_HORIZON
    speed_limit: float = 13.9
    junction: Optional[JunctionContext] = None
    in_junction: bool = False
    idm_leader: Optional[IdmLeader] = None
    scenario_type: Optional[str] = None
    deviation_phase: Optional[DeviationPhase] = None
    traffic_controls: tuple = ()
    hazards: Hazards = field(default_factory=Hazards)
    town: Optional[str] = None
    anchor: Pose = field(default_factory=lambda: Pose(0.0, 0.0, 0.0))
    expert_controls: Optional[np.ndarray] = None

    def __post_init__(self):
        if not float(self.dt_record) > 0.0:
            raise InvariantViolation("dt_record", f"must be > 0, got {self.dt_record}")
        object.__setattr__(self, "frame_id", str(self.frame_id))
        object.__setattr__(self, "timestamp", float(self.timestamp))
        object.__setattr__(self, "dt_record", float(self.dt_record))
        object.__setattr__(self, "actors", tuple(self.actors))
        object.__setattr__(self, "traffic_controls", tuple(self.traffic_controls))
        if self.deviation_phase is not None:
            object.__setattr__(self, "deviation_phase", DeviationPhase(self.deviation_phase))
        for actor in self.actors:
            if actor.horizon != self.horizon:
                raise InvariantViolation(
                    f"actors[{actor.id}].future", f"has {actor.horizon} states, declared horizon is {self.horizon}"
                )
        if len({a.id for a in self.actors}) != len(self.actors):
            raise InvariantViolation("actors", "duplicate actor id")
        self.expert.validate(field_name="expert")
        if self.expert_controls is not None:
            ctrl = np.asarray(self.expert_controls, dtype=float).reshape(-1, 2).copy()
            ctrl.flags.writeable = False
            object.__setattr__(self, "expert_controls", ctrl)

    def actor(self, actor_id):
        for a in self.actors:
            if a.id == actor_id:
                return a
        raise KeyError(actor_id)

    @cached_property
    def actor_boxes(self):
        """``(horizon + 1, n_actors, 5)`` array of on-rails boxes ``(x, y, yaw, hl, hw)``."""
        out = np.empty((self.horizon + 1, len(self.actors), 5))
        for j, a in enumerate(self.actors):
            out[0, j, :3] = (a.pose.x, a.pose.y, a.pose.yaw)
            out[1:, j, :3] = a.future[:, :3]
            out[:, j, 3:] = a.half_extents
        out.flags.writeable = False
        return out

    def expert_target_speed(self):
        if self.idm_leader is not None:
            return self.idm_leader.expert_target_speed
        return target_speed_from_wps(self.expert.speed_wps, SPEED_WP_DT)


@dataclass(frozen=True)
class SceneLog(Sequence):
    frames: tuple
    schema: str = SCHEMA_ID

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, item):
        return self.frames[item]

    def __iter__(self):
        return iter(self.frames)

    @property
    def dt_record(self):
        return self.frames[0].dt_record if self.frames else None


# --------------------------------------------------------------------------
# Path utilities
# --------------------------------------------------------------------------


def resample_path(polyline, spacing):
    """Resample a polyline so consecutive points are exactly ``spacing`` apart.

    Parameters
    ----------
    polyline : array-like of shape (n, 2) or (n, 3), or list of Pose
        Input vertices; a yaw column is ignored.
    spacing : float
        Straight-line gap between consecutive output points, in meters.

    Returns
    -------
    ndarray of shape (m, 3)
        Points ``(x, y, yaw)`` on the input polyline. Each point is the first
        place further along the polyline at distance ``spacing`` from the
        previous one, so every gap is exactly ``spacing`` and resampling the
        output again reproduces it. The end point is appended when it lies
        beyond the last full step, keeping the final partial segment.
        ``yaw`` is the heading of the input segment the point falls on.
    """
    spacing = check_positive(spacing, "spacing")
    pts = check_points(polyline, name="polyline", min_points=2)[:, :2]
    seg_len = np.hypot(*np.diff(pts, axis=0).T)
    keep = np.concatenate(([True], seg_len > 0.0))
    pts = pts[keep]
    if len(pts) < 2 or float(np.sum(np.hypot(*np.diff(pts, axis=0).T))) < spacing:
        raise DegeneratePolyline(f"polyline is shorter than spacing {spacing} m")
    out = [(pts[0, 0], pts[0, 1], math.atan2(pts[1, 1] - pts[0, 1], pts[1, 0] - pts[0, 0]))]
    cx, cy = pts[0]
    seg, t0 = 0, 0.0
    r2 = spacing * spacing
    while seg < len(pts) - 1:
        ax, ay = pts[seg]
        dx, dy = pts[seg + 1] - pts[seg]
        # smallest t > t0 on this segment with |a + t d - c| = spacing
        fx, fy = ax - cx, ay - cy
        a = dx * dx + dy * dy
        b = 2.0 * (fx * dx + fy * dy)
        c = fx * fx + fy * fy - r2
        disc = b * b - 4.0 * a * c
        t = None
        if disc >= 0.0:
            root = math.sqrt(disc)
            for cand in ((-b - root) / (2.0 * a), (-b + root) / (2.0 * a)):
                if t0 < cand <= 1.0 + 1e-12:
                    t = min(cand, 1.0)
                    break
        if t is None:
            seg, t0 = seg + 1, 0.0
            continue
        cx, cy = ax + t * dx, ay + t * dy
        out.append((cx, cy, math.atan2(dy, dx)))
        t0 = t
    ex, ey = pts[-1]
    if math.hypot(ex - cx, ey - cy) > 1e-9:
        d = pts[-1] - pts[-2]
        out.append((ex, ey, math.atan2(d[1], d[0])))
    res = np.array(out)
    res[:, 2] = wrap_angle(res[:, 2])
    return res


def _points_at(pts, s, targets):
    # drop zero-length segments so interpolation and headings stay defined
    keep = np.concatenate(([True], np.diff(s) > 0.0))
    pts, s = pts[keep], s[keep]
    seg = np.clip(np.searchsorted(s, targets, side="right") - 1, 0, len(s) - 2)
    d = pts[seg + 1] - pts[seg]
    frac = (targets - s[seg]) / (s[seg + 1] - s[seg])
    xy = pts[seg] + d * frac[:, None]
    yaw = np.arctan2(d[:, 1], d[:, 0])
    return np.column_stack([xy, wrap_angle(yaw)])


def point_at_arc(polyline, arc):
    """Interpolated ``(x, y, yaw)`` at arc position(s) ``arc``; extrapolates past the ends."""
    pts = check_points(polyline, name="polyline", min_points=2)
    s = arc_lengths(pts)
    return _points_at(pts, s, np.atleast_1d(np.asarray(arc, dtype=float)))


def project_onto_polyline(points, polyline):
    """Project points onto a polyline.

    :return: ``(arc, lateral, distance)`` arrays; ``lateral`` is positive to
        the left of the travel direction.
    """
    q = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
    pts = np.asarray(polyline, dtype=float)[:, :2]
    s = arc_lengths(pts)
    a, b = pts[:-1], pts[1:]
    d = b - a
    len2 = np.einsum("ij,ij->i", d, d)
    len2 = np.where(len2 > 0.0, len2, 1.0)
    rel = q[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("qij,ij->qi", rel, d) / len2, 0.0, 1.0)
    foot = a[None] + t[..., None] * d[None]
    dist2 = np.sum((q[:, None, :] - foot) ** 2, axis=-1)
    k = np.argmin(dist2, axis=1)
    rows = np.arange(len(q))
    arc = s[k] + t[rows, k] * np.sqrt(len2[k])
    cross = d[k, 0] * rel[rows, k, 1] - d[k, 1] * rel[rows, k, 0]
    dist = np.sqrt(dist2[rows, k])
    return arc, np.sign(cross) * dist, dist


def path_waypoints(path, n, spacing=PATH_WP_SPACING, origin=(0.0, 0.0)):
    """``n`` path waypoints at ``spacing``, ``spacing * 2``, ... ahead of ``origin``'s projection.

    Paths shorter than needed are extended straight along their final heading.
    """
    pts = check_polyline(path, name="path")
    s = arc_lengths(pts)
    start, _, _ = project_onto_polyline(origin, pts)
    targets = start[0] + spacing * np.arange(1, n + 1)
    out = _points_at(pts, s, np.minimum(targets, s[-1]))
    over = targets - s[-1]
    if np.any(over > 0.0):
        tail = pts[-1] - pts[-2]
        tail /= np.hypot(*tail)
        out[over > 0.0, :2] = pts[-1] + over[over > 0.0, None] * tail
    return out[:, :2]


def decode_waypoints(diffs):
    """Turn per-step waypoint differences into absolute waypoints by cumulative sum."""
    d = check_points(diffs, name="diffs", allow_yaw=False)
    return np.cumsum(d, axis=0)


def target_speed_from_wps(wps, dt):
    """Speed implied by the last two speed waypoints, in m/s."""
    dt = check_positive(dt, "dt")
    w = np.asarray(wps, dtype=float)
    if w.ndim != 2 or len(w) < 2:
        raise TooFewWaypoints(f"need at least 2 speed waypoints, got {len(w) if w.ndim == 2 else w.shape}")
    return float(np.hypot(*(w[-1, :2] - w[-2, :2])) / dt)


def target_angle_from_path(path_wps, lookahead):
    """Heading from the ego origin to the path point ``lookahead`` meters of arc ahead.

    The path is measured from the origin through the given waypoints.
    """
    lookahead = check_positive(lookahead, "lookahead")
    p = check_points(path_wps, name="path_wps", allow_yaw=True)
    pts = np.vstack([[0.0, 0.0], p])
    s = arc_lengths(pts)
    if s[-1] + 1e-12 < lookahead:
        raise PathTooShort(f"path length {s[-1]:.3f} m is shorter than lookahead {lookahead} m")
    x = np.interp(lookahead, s, pts[:, 0])
    y = np.interp(lookahead, s, pts[:, 1])
    return wrap_angle(math.atan2(y, x))


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def _opt(d, key, cast=None):
    v = d.get(key)
    return v if v is None or cast is None else cast(v)


def frame_to_record(frame):
    """Serialize a frame to a plain JSON-compatible dict."""
    ego = frame.ego
    rec = {
        "frame_id": frame.frame_id,
        "timestamp": frame.timestamp,
        "ego": {
            "pose": [ego.pose.x, ego.pose.y, ego.pose.yaw],
            "speed": ego.speed,
            "wheelbase": ego.wheelbase,
            "half_extents": list(ego.half_extents),
            "accel": ego.accel,
            "steer": ego.steer,
        },
        "actors": [
            {
                "id": a.id,
                "class": a.cls.value,
                "pose": [a.pose.x, a.pose.y, a.pose.yaw],
                "speed": a.speed,
                "half_extents": list(a.half_extents),
                "future": a.future.tolist(),
                "color": a.color,
                "subtype": a.subtype,
                "state": a.state,
            }
            for a in frame.actors
        ],
        "route": {
            "dense_path": frame.route.dense_path.tolist(),
            "target_points": frame.route.target_points.tolist(),
            "hlc": frame.route.hlc.value if frame.route.hlc else None,
            "lane_info": {
                "ego_lane_width": frame.route.lane_info.ego_lane_width,
                "left": [{"type": l.type.value, "width": l.width} for l in frame.route.lane_info.left],
                "right": [{"type": l.type.value, "width": l.width} for l in frame.route.lane_info.right],
            },
        },
        "expert": {
            "speed_wps": frame.expert.speed_wps.tolist(),
            "path_wps": frame.expert.path_wps.tolist(),
            "controls": None if frame.expert_controls is None else frame.expert_controls.tolist(),
        },
        "context": {
            "dt_record": frame.dt_record,
            "horizon": frame.horizon,
            "speed_limit": frame.speed_limit,
            "in_junction": frame.in_junction,
            "junction": None
            if frame.junction is None
            else {
                "distance_to_junction": frame.junction.distance_to_junction,
                "actors": [vars(a) for a in frame.junction.actors],
            },
            "idm_leader": None if frame.idm_leader is None else vars(frame.idm_leader),
            "scenario_type": frame.scenario_type,
            "deviation_phase": frame.deviation_phase.value if frame.deviation_phase else None,
            "traffic_controls": [
                {"kind": t.kind, "line": t.line.tolist(), "state": t.state, "actor_id": t.actor_id}
                for t in frame.traffic_controls
            ],
            "hazards": vars(frame.hazards),
            "town": frame.town,
            "anchor": [frame.anchor.x, frame.anchor.y, frame.anchor.yaw],
        },
    }
    return rec


def frame_from_record(rec, line=None):
    """Build a validated ``SceneFrame`` from a decoded record.

    Structural problems raise ``MalformedRecord``; value problems raise
    ``InvariantViolation``. Both carry ``line`` when given.
    """
    try:
        ego_r, route_r, expert_r = rec["ego"], rec["route"], rec["expert"]
        ctx = rec.get("context") or {}
        fid, ts = rec["frame_id"], rec["timestamp"]
    except (KeyError, TypeError) as exc:
        raise MalformedRecord(line, f"missing key {exc}") from None
    try:
        ego = EgoState(
            pose=Pose.from_seq(ego_r["pose"]),
            speed=ego_r["speed"],
            wheelbase=ego_r.get("wheelbase", 2.9),
            half_extents=tuple(ego_r.get("half_extents", (2.45, 1.05))),
            accel=ego_r.get("accel", 0.0),
            steer=ego_r.get("steer", 0.0),
        )
        actors = tuple(
            ActorTrack(
                id=str(a["id"]),
                cls=a["class"],
                pose=Pose.from_seq(a["pose"]),
                speed=a.get("speed", 0.0),
                half_extents=tuple(a.get("half_extents", (2.3, 1.0))),
                future=np.asarray(a.get("future") or np.zeros((0, 4)), dtype=float),
                color=a.get("color"),
                subtype=a.get("subtype"),
                state=a.get("state"),
            )
            for a in rec.get("actors", [])
        )
        li = route_r.get("lane_info") or {}
        route = RouteSpec(
            dense_path=route_r["dense_path"],
            target_points=route_r.get("target_points") or np.zeros((0, 2)),
            hlc=route_r.get("hlc"),
            lane_info=LaneInfo(
                ego_lane_width=li.get("ego_lane_width", 3.5),
                left=tuple(Lane(**l) for l in li.get("left", [])),
                right=tuple(Lane(**l) for l in li.get("right", [])),
            ),
        )
        expert = Trajectory(expert_r["speed_wps"], expert_r["path_wps"])
        junction = ctx.get("junction")
        frame = SceneFrame(
            frame_id=fid,
            timestamp=ts,
            ego=ego,
            route=route,
            expert=expert,
            actors=actors,
            dt_record=ctx.get("dt_record", 0.25),
            horizon=int(ctx.get("horizon", DEFAULT_HORIZON)),
            speed_limit=float(ctx.get("speed_limit", 13.9)),
            junction=None if junction is None else JunctionContext(**junction),
            in_junction=bool(ctx.get("in_junction", False)),
            idm_leader=_opt(ctx, "idm_leader", lambda d: IdmLeader(**d)),
            scenario_type=ctx.get("scenario_type"),
            deviation_phase=ctx.get("deviation_phase"),
            traffic_controls=tuple(TrafficControl(**t) for t in ctx.get("traffic_controls", [])),
            hazards=Hazards(**(ctx.get("hazards") or {})),
            town=ctx.get("town"),
            anchor=Pose.from_seq(ctx.get("anchor", (0.0, 0.0, 0.0))),
            expert_controls=expert_r.get("controls"),
        )
    except InvariantViolation as exc:
        raise InvariantViolation(exc.field, str(exc).split(": ", 1)[-1], line=line) from None
    except KeyError as exc:
        raise MalformedRecord(line, f"missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(line, str(exc)) from None
    return frame


def iter_scene_log(path) -> Iterator[SceneFrame]:
    """Stream frames from a scene log, validating each line as it is read.

    Frame rates must agree across the log and timestamps must not decrease.
    """
    dt_record = None
    last_ts = -math.inf
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        try:
            schema = json.loads(header).get("schema")
        except (json.JSONDecodeError, AttributeError):
            raise MalformedRecord(1, "first line must be a schema header") from None
        if schema != SCHEMA_ID:
            raise MalformedRecord(1, f"unsupported schema {schema!r}, expected {SCHEMA_ID!r}")
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise MalformedRecord(lineno, "record must be an object")
            frame = frame_from_record(rec, line=lineno)
            if dt_record is None:
                dt_record = frame.dt_record
            elif frame.dt_record != dt_record:
                raise MixedFrameRates(f"line {lineno}: dt_record {frame.dt_record} differs from {dt_record}")
            if frame.timestamp < last_ts:
                raise InvariantViolation("timestamp", "frames must be ordered by timestamp", line=lineno)
            last_ts = frame.timestamp
            yield frame


def load_scene_log(path):
    """Load and validate a whole scene log into memory."""
    return SceneLog(tuple(iter_scene_log(path)))


def save_scene_log(path, frames):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": SCHEMA_ID}) + "\n")
        for frame in frames:
            fh.write(json.dumps(frame_to_record(frame), separators=(",", ":")) + "\n")
