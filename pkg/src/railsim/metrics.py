"""Scoring: driving score, route termination, Bench2Drive metrics and dreaming success rules.

All functions are pure. Runs are scored independently and aggregated with
arithmetic means, so evaluation order never matters.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import EmptySequence, IncomparableHorizons, InvariantViolation, MissingTrace
from .scene import SPEED_WP_DT, Trajectory, project_onto_polyline, target_speed_from_wps
from .validation import arc_lengths, check_points


class InfractionKind(str, enum.Enum):
    PEDESTRIAN_COLLISION = "PedestrianCollision"
    VEHICLE_COLLISION = "VehicleCollision"
    STATIC_COLLISION = "StaticCollision"
    RED_LIGHT = "RedLight"
    STOP_SIGN = "StopSign"
    EMERGENCY_YIELD = "EmergencyYield"
    MIN_SPEED = "MinSpeed"
    OFF_ROAD = "OffRoad"


class Termination(str, enum.Enum):
    FINISHED = "Finished"
    ROUTE_DEVIATION = "RouteDeviation"
    BLOCKED = "Blocked"
    COMM_TIMEOUT = "CommTimeout"
    ROUTE_TIMEOUT = "RouteTimeout"


@dataclass(frozen=True)
class InfractionEvent:
    """One infraction. ``detail`` carries kind-specific numbers.

    OffRoad events use ``detail["length"]`` (meters driven off-road);
    MinSpeed events may give ``detail["deficit"]`` in [0, 1], the fraction
    by which the ego fell short of the required speed.
    """

    kind: InfractionKind
    timestamp: float = 0.0
    route_s: float = 0.0
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", InfractionKind(self.kind))
        except ValueError:
            raise InvariantViolation("infractions.kind", f"unknown infraction kind {self.kind!r}") from None


@dataclass(frozen=True)
class PenaltyTable:
    pedestrian: float = 0.50
    vehicle: float = 0.60
    static: float = 0.65
    red_light: float = 0.70
    stop_sign: float = 0.80
    emergency_yield: float = 0.70
    min_speed_floor: float = 0.70

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not 0.0 < value <= 1.0:
                raise ValueError(f"penalty {name} must be in (0, 1], got {value}")

    def coefficient(self, event: InfractionEvent) -> float:
        kind = event.kind
        if kind is InfractionKind.OFF_ROAD:
            return 1.0
        if kind is InfractionKind.MIN_SPEED:
            deficit = float(np.clip(event.detail.get("deficit", 1.0), 0.0, 1.0))
            return 1.0 - (1.0 - self.min_speed_floor) * deficit
        return {
            InfractionKind.PEDESTRIAN_COLLISION: self.pedestrian,
            InfractionKind.VEHICLE_COLLISION: self.vehicle,
            InfractionKind.STATIC_COLLISION: self.static,
            InfractionKind.RED_LIGHT: self.red_light,
            InfractionKind.STOP_SIGN: self.stop_sign,
            InfractionKind.EMERGENCY_YIELD: self.emergency_yield,
        }[kind]


@dataclass(frozen=True, eq=False)
class KinematicsTrace:
    """Per-tick ego kinematics used for comfort and efficiency."""

    t: np.ndarray
    speed: np.ndarray
    lon_accel: np.ndarray
    lat_accel: np.ndarray
    jerk: np.ndarray
    lon_jerk: np.ndarray
    yaw_rate: np.ndarray
    yaw_accel: np.ndarray

    def __post_init__(self):
        n = None
        for name in self.__dataclass_fields__:
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise InvariantViolation(f"kinematics.{name}", f"length {len(arr)} != {n}")
            object.__setattr__(self, name, arr)

    @classmethod
    def from_poses(cls, t, x, y, yaw):
        """Finite-difference kinematics from a sampled pose trace."""
        t = np.asarray(t, dtype=float)
        x, y, yaw = (np.asarray(a, dtype=float) for a in (x, y, yaw))
        vx, vy = np.gradient(x, t), np.gradient(y, t)
        speed = np.hypot(vx, vy)
        ax, ay = np.gradient(vx, t), np.gradient(vy, t)
        c, s = np.cos(yaw), np.sin(yaw)
        lon = ax * c + ay * s
        lat = -ax * s + ay * c
        jx, jy = np.gradient(ax, t), np.gradient(ay, t)
        yaw_rate = np.gradient(np.unwrap(yaw), t)
        return cls(
            t=t, speed=speed, lon_accel=lon, lat_accel=lat, jerk=np.hypot(jx, jy),
            lon_jerk=np.gradient(lon, t), yaw_rate=yaw_rate, yaw_accel=np.gradient(yaw_rate, t),
        )

    def to_record(self):
        return {name: getattr(self, name).tolist() for name in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class RouteRun:
    route_id: str
    route_length: float
    completed_length: float
    infractions: tuple = ()
    termination: Termination = Termination.FINISHED
    kinematics: Optional[KinematicsTrace] = None
    surrounding_speed: Optional[np.ndarray] = None
    scenario_type: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "termination", Termination(self.termination))
        object.__setattr__(
            self, "infractions",
            tuple(e if isinstance(e, InfractionEvent) else InfractionEvent(**e) for e in self.infractions),
        )
        if not self.route_length > 0:
            raise InvariantViolation("route_length", "must be > 0")
        if self.completed_length < 0 or self.completed_length > self.route_length + 1e-9:
            raise InvariantViolation("completed_length", "must lie in [0, route_length]")
        if self.surrounding_speed is not None:
            sur = np.asarray([np.nan if v is None else v for v in self.surrounding_speed], dtype=float)
            if self.kinematics is not None and len(sur) != len(self.kinematics.t):
                raise InvariantViolation("surrounding_speed", "length differs from kinematics trace")
            object.__setattr__(self, "surrounding_speed", sur)

    @classmethod
    def from_record(cls, rec):
        kin = rec.get("kinematics")
        return cls(
            route_id=str(rec["route_id"]),
            route_length=float(rec["route_length"]),
            completed_length=float(rec["completed_length"]),
            infractions=tuple(InfractionEvent(**e) for e in rec.get("infractions", ())),
            termination=rec.get("termination", "Finished"),
            kinematics=None if kin is None else KinematicsTrace(**kin),
            surrounding_speed=rec.get("surrounding_speed"),
            scenario_type=rec.get("scenario_type"),
        )


# --------------------------------------------------------------------------
# Leaderboard metrics
# --------------------------------------------------------------------------


def infraction_score(events, table: PenaltyTable = PenaltyTable(), ignore=()) -> float:
    """Product of one penalty coefficient per event, starting from 1.0."""
    ignore = {InfractionKind(k) for k in ignore}
    score = 1.0
    for e in events:
        if e.kind not in ignore:
            score *= table.coefficient(e)
    return score


def offroad_length(run: RouteRun) -> float:
    return sum(float(e.detail.get("length", 0.0)) for e in run.infractions if e.kind is InfractionKind.OFF_ROAD)


def route_completion(run: RouteRun) -> float:
    """Completed percentage, reduced by the off-road distance, clamped to [0, 100]."""
    rc = 100.0 * (run.completed_length - offroad_length(run)) / run.route_length
    return float(min(100.0, max(0.0, rc)))


def driving_score(run: RouteRun, table: PenaltyTable = PenaltyTable()) -> float:
    """Driving score on a 0-100 scale: route completion (%) times infraction score."""
    return route_completion(run) * infraction_score(run.infractions, table)


def route_progress(trace_xy, route_xy, window=20.0):
    """Monotone arc progress of a driven trace along a route polyline.

    Each sample is projected onto the part of the route within ``window``
    meters of the progress so far, so loops or nearby parallel segments
    cannot make progress jump ahead.
    """
    pts = check_points(trace_xy, name="trace")
    route = check_points(route_xy, name="route", min_points=2)
    arcs = arc_lengths(route)
    progress = np.empty(len(pts))
    best = 0.0
    for i, p in enumerate(pts):
        lo = max(0, int(np.searchsorted(arcs, best - window)) - 1)
        hi = min(len(route), int(np.searchsorted(arcs, best + window)) + 1)
        s, _, _ = project_onto_polyline(p, route[lo:hi])
        best = max(best, float(arcs[lo] + s[0]))
        progress[i] = best
    return progress


@dataclass(frozen=True)
class TerminationLimits:
    max_deviation: float = 30.0
    blocked_time: float = 180.0
    comm_timeout: float = 60.0
    allotted_time: Optional[float] = None
    progress_eps: float = 0.1


def check_termination(trace, route_xy, limits: TerminationLimits = TerminationLimits()):
    """First termination event along a driven trace.

    :param trace: mapping with ``t`` (sim seconds), ``x``, ``y`` and an
        optional ``wall_time`` series.
    :param route_xy: route polyline in the same frame as the trace.
    :return: ``Termination`` member; events on the same tick are ranked
        deviation, blocked, communication, route timeout.
    """
    t = np.asarray(trace["t"], dtype=float)
    if len(t) == 0:
        raise EmptySequence("trace is empty")
    if np.any(np.diff(t) < 0):
        raise ValueError("trace timestamps must be monotone")
    xy = np.column_stack([trace["x"], trace["y"]])
    route = check_points(route_xy, name="route", min_points=2)
    _, _, dist = project_onto_polyline(xy, route)
    progress = route_progress(xy, route)
    wall = trace.get("wall_time")
    wall = None if wall is None else np.asarray(wall, dtype=float)
    anchor_s, anchor_t = progress[0], t[0]
    for i in range(len(t)):
        if dist[i] > limits.max_deviation:
            return Termination.ROUTE_DEVIATION
        if progress[i] >= anchor_s + limits.progress_eps:
            anchor_s, anchor_t = progress[i], t[i]
        elif t[i] - anchor_t > limits.blocked_time:
            return Termination.BLOCKED
        if wall is not None and i > 0 and wall[i] - wall[i - 1] > limits.comm_timeout:
            return Termination.COMM_TIMEOUT
        if limits.allotted_time is not None and t[i] - t[0] > limits.allotted_time:
            return Termination.ROUTE_TIMEOUT
    return Termination.FINISHED


# --------------------------------------------------------------------------
# Bench2Drive metrics
# --------------------------------------------------------------------------


def b2d_driving_score(run: RouteRun, table: PenaltyTable = PenaltyTable()) -> float:
    """Driving score with the minimum-speed penalty ignored."""
    return route_completion(run) * infraction_score(run.infractions, table, ignore=(InfractionKind.MIN_SPEED,))


def route_success(run: RouteRun) -> bool:
    """Finished the whole route with no infraction other than minimum speed."""
    return (
        run.termination is Termination.FINISHED
        and route_completion(run) >= 100.0
        and all(e.kind is InfractionKind.MIN_SPEED for e in run.infractions)
    )


def success_rate(runs) -> float:
    runs = list(runs)
    if not runs:
        raise EmptySequence("no runs")
    return 100.0 * sum(route_success(r) for r in runs) / len(runs)


@dataclass(frozen=True)
class ComfortThresholds:
    jerk: float = 8.37
    lat_accel: float = 4.89
    lon_accel_max: float = 2.40
    lon_accel_min: float = -4.05
    yaw_accel: float = 1.93
    lon_jerk: float = 4.13
    yaw_rate: float = 0.95


COMFORT_DIMENSIONS = ("jerk", "lat_accel", "lon_accel", "yaw_accel", "lon_jerk", "yaw_rate")


def comfortness(run, thresholds: ComfortThresholds = ComfortThresholds(), mode="mean"):
    """Per-dimension comfort flags plus ``overall``.

    With ``mode="mean"`` each measure is averaged over the route (absolute
    values, except longitudinal acceleration which keeps its sign so it can
    be compared with both bounds). ``mode="max"`` uses the extreme value
    instead. Bounds are inclusive.
    """
    kin = run.kinematics if isinstance(run, RouteRun) else run
    if kin is None or len(kin.t) == 0:
        raise MissingTrace("comfortness needs a kinematics trace")
    if mode == "mean":
        agg_abs = lambda a: float(np.mean(np.abs(a)))
        lon_lo = lon_hi = float(np.mean(kin.lon_accel))
    elif mode == "max":
        agg_abs = lambda a: float(np.max(np.abs(a)))
        lon_lo, lon_hi = float(np.min(kin.lon_accel)), float(np.max(kin.lon_accel))
    else:
        raise ValueError(f"mode must be 'mean' or 'max', got {mode!r}")
    th = thresholds
    flags = {
        "jerk": agg_abs(kin.jerk) <= th.jerk,
        "lat_accel": agg_abs(kin.lat_accel) <= th.lat_accel,
        "lon_accel": th.lon_accel_min <= lon_lo and lon_hi <= th.lon_accel_max,
        "yaw_accel": agg_abs(kin.yaw_accel) <= th.yaw_accel,
        "lon_jerk": agg_abs(kin.lon_jerk) <= th.lon_jerk,
        "yaw_rate": agg_abs(kin.yaw_rate) <= th.yaw_rate,
    }
    flags["overall"] = all(flags[d] for d in COMFORT_DIMENSIONS)
    return flags


def fleet_comfortness(runs, thresholds: ComfortThresholds = ComfortThresholds(), mode="mean") -> float:
    runs = list(runs)
    if not runs:
        raise EmptySequence("no runs")
    return 100.0 * sum(comfortness(r, thresholds, mode)["overall"] for r in runs) / len(runs)


def efficiency(run: RouteRun, eps=1e-3) -> Optional[float]:
    """Mean ratio of ego speed to mean surrounding speed, times 100.

    Ticks without surrounding actors (NaN) are skipped; ``None`` when no
    tick has any.
    """
    if run.kinematics is None or run.surrounding_speed is None:
        raise MissingTrace("efficiency needs ego and surrounding speed traces")
    sur = run.surrounding_speed
    ok = np.isfinite(sur)
    if not np.any(ok):
        return None
    return float(100.0 * np.mean(run.kinematics.speed[ok] / np.maximum(eps, sur[ok])))


# --------------------------------------------------------------------------
# Leaderboard aggregation
# --------------------------------------------------------------------------

REPORT_COLUMNS = ("route_id", "DS", "RC", "IS", "B2D_DS", "success", "efficiency", "comfort", "termination")


def score_run(run: RouteRun, table: PenaltyTable = PenaltyTable(), thresholds=ComfortThresholds(), comfort_mode="mean"):
    row = {
        "route_id": run.route_id,
        "DS": driving_score(run, table),
        "RC": route_completion(run),
        "IS": infraction_score(run.infractions, table),
        "B2D_DS": b2d_driving_score(run, table),
        "success": route_success(run),
        "efficiency": None,
        "comfort": None,
        "termination": run.termination.value,
    }
    if run.kinematics is not None and len(run.kinematics.t):
        row["comfort"] = comfortness(run, thresholds, comfort_mode)["overall"]
        if run.surrounding_speed is not None:
            row["efficiency"] = efficiency(run)
    return row


def mean_row(rows):
    """Arithmetic mean per numeric column; booleans become percentages, absent values are skipped."""
    rows = list(rows)
    if not rows:
        raise EmptySequence("no rows to aggregate")
    out = {"route_id": "mean"}
    for col in REPORT_COLUMNS[1:-1]:
        vals = [r[col] for r in rows if r[col] is not None]
        if not vals:
            out[col] = None
        elif isinstance(vals[0], bool):
            out[col] = 100.0 * sum(vals) / len(vals)
        else:
            out[col] = float(np.mean(vals))
    out["termination"] = ""
    return out


# --------------------------------------------------------------------------
# Dreaming success rules
# --------------------------------------------------------------------------


def ade(a, b) -> float:
    """Mean pointwise distance after truncating to the shorter sequence."""
    a = np.asarray(a, dtype=float).reshape(-1, 2) if len(a) else np.zeros((0, 2))
    b = np.asarray(b, dtype=float).reshape(-1, 2) if len(b) else np.zeros((0, 2))
    n = min(len(a), len(b))
    if n == 0:
        raise EmptySequence("ade needs two non-empty sequences")
    return float(np.mean(np.hypot(*(a[:n] - b[:n]).T)))


def speed_slope(speed_wps, dt=SPEED_WP_DT, per="second"):
    """Least-squares slope of the target speeds decoded from consecutive waypoints.

    ``per="second"`` regresses against time, ``per="step"`` against the
    waypoint index.
    """
    w = np.asarray(speed_wps, dtype=float)
    speeds = np.hypot(*np.diff(w, axis=0).T) / dt
    if len(speeds) < 2:
        raise EmptySequence("need at least three speed waypoints for a slope")
    x = np.arange(len(speeds), dtype=float)
    if per == "second":
        x = x * dt
    elif per != "step":
        raise ValueError(f"per must be 'second' or 'step', got {per!r}")
    return float(np.polyfit(x, speeds, 1)[0])


def dream_success(pred: Trajectory, sample, frame=None, *, slope_per="second", dt=SPEED_WP_DT) -> bool:
    """Whether a predicted trajectory follows a dream sample's instruction.

    ``frame`` is accepted for interface symmetry; samples carry the ego
    speed and the expert trajectory they were generated against.
    """
    from .dreamer import DreamMode

    truth = sample.trajectory
    expert = sample.expert
    if len(pred.speed_wps) != len(truth.speed_wps) or len(pred.path_wps) != len(truth.path_wps):
        raise IncomparableHorizons(
            f"prediction has {len(pred.speed_wps)}/{len(pred.path_wps)} waypoints, "
            f"sample has {len(truth.speed_wps)}/{len(truth.path_wps)}"
        )
    v = sample.ego_speed if frame is None else frame.ego.speed
    mode = DreamMode(sample.mode)
    if mode is DreamMode.SLOWER:
        return speed_slope(pred.speed_wps, dt, slope_per) < -0.05 * v
    if mode is DreamMode.FASTER:
        return speed_slope(pred.speed_wps, dt, slope_per) > 0.05 * v
    if mode is DreamMode.TARGET_SPEED:
        got = target_speed_from_wps(pred.speed_wps, dt)
        instructed = float(sample.params["target_speed"])
        reachable = target_speed_from_wps(truth.speed_wps, dt)
        return abs(got - instructed) <= 0.2 * instructed or abs(got - reachable) <= 0.2 * reachable
    if mode is DreamMode.LANE_CHANGE:
        end = pred.path_wps[-1]
        return math.dist(end, truth.path_wps[-1]) < math.dist(end, expert.path_wps[-1])
    # objects
    if ade(truth.path_wps, expert.path_wps) > 1.0:
        return ade(pred.path_wps, expert.path_wps) > ade(pred.path_wps, truth.path_wps)
    mean_pred = float(np.mean(pred.speeds(dt)))
    mean_truth = float(np.mean(truth.speeds(dt)))
    return ade(pred.path_wps, truth.path_wps) < 1.0 and abs(mean_pred - mean_truth) <= 0.3 * mean_truth


DREAM_CATEGORIES = ("Faster", "Slower", "TargetSpeed", "LaneChange", "Objects")


def dream_success_table(results):
    """Per-category success rate (%) from ``(mode, success)`` pairs.

    Categories without samples are reported as ``None``; ``Avg`` is the mean
    over the categories that are present.
    """
    hits = {c: [] for c in DREAM_CATEGORIES}
    for mode, ok in results:
        hits[getattr(mode, "value", mode)].append(bool(ok))
    table = {c: (100.0 * sum(v) / len(v) if v else None) for c, v in hits.items()}
    present = [x for x in table.values() if x is not None]
    table["Avg"] = float(np.mean(present)) if present else None
    return table


def early_stop_gate(traveled, steer, threshold, steer_eps=0.01) -> bool:
    """Stop the run once ``threshold`` meters are driven and the wheel is near straight."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    return traveled >= threshold and abs(steer) < steer_eps
