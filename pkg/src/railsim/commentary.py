"""Rule-based commentary labels: what the ego should do next and why.

A label has four parts, composed into one text:

    <route action> <speed action> <speed reason>. [<junction notice>.]

Every part is a pure function of the frame.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .scene import SPEED_WP_DT, ActorClass, DeviationPhase, SceneFrame

log = logging.getLogger(__name__)

DEFAULT_ROUTE_ACTION = "Follow the route."
END_OF_DEVIATION = "Return to your original route after avoiding the obstacle."
DURING_PREFIX = "Stay on your current lane to"

# scenarios whose expert behaviour leaves the centre of the route lane
DEVIATION_TEMPLATES = {
    "ConstructionObstacle": "Go around the construction site.",
    "ConstructionObstacleTwoWays": "Go around the construction site.",
    "Accident": "Go around the accident in your lane.",
    "AccidentTwoWays": "Go around the accident in your lane.",
    "ParkedObstacle": "Go around the parked vehicle in your lane.",
    "ParkedObstacleTwoWays": "Go around the parked vehicle in your lane.",
    "VehicleOpensDoorTwoWays": "Go around the vehicle with the open door.",
    "HazardAtSideLane": "Overtake the bikes on your lane.",
    "HazardAtSideLaneTwoWays": "Overtake the bikes on your lane.",
    "YieldToEmergencyVehicle": "Give way to the emergency vehicle.",
    "InvadingTurn": (
        "Move slightly to the right to circumvent the oncoming cars entering your lane "
        "because of the construction cones."
    ),
}
# scenario types that exist but never change the route action
KNOWN_PLAIN_SCENARIOS = frozenset({
    "ControlLoss", "SignalizedJunctionLeftTurn", "NonSignalizedJunctionLeftTurn", "SignalizedJunctionRightTurn",
    "NonSignalizedJunctionRightTurn", "OppositeVehicleRunningRedLight", "OppositeVehicleTakingPriority",
    "CrossingBicycleFlow", "MergerIntoSlowTraffic", "HighwayCutIn", "StaticCutIn", "HighwayExit",
    "ParkingExit", "ParkingCutIn", "PedestrianCrossing", "DynamicObjectCrossing", "BlockedIntersection",
    "EnterActorFlow", "InterurbanActorFlow", "VehicleTurningRoute", "VehicleTurningRoutePedestrian",
})


class SpeedAction(str, enum.Enum):
    REMAIN_STOPPED = "RemainStopped"
    COME_TO_STOP = "ComeToStop"
    MAINTAIN_SPEED = "MaintainSpeed"
    MAINTAIN_REDUCED_SPEED = "MaintainReducedSpeed"
    INCREASE_SPEED = "IncreaseSpeed"
    SLOW_DOWN = "SlowDown"
    WAIT_FOR_GAP = "WaitForGap"

    @property
    def phrase(self):
        return _PHRASES[self]


_PHRASES = {
    SpeedAction.REMAIN_STOPPED: "Remain stopped",
    SpeedAction.COME_TO_STOP: "Come to a stop now",
    SpeedAction.MAINTAIN_SPEED: "Maintain your current speed",
    SpeedAction.MAINTAIN_REDUCED_SPEED: "Maintain the reduced speed",
    SpeedAction.INCREASE_SPEED: "Increase your speed",
    SpeedAction.SLOW_DOWN: "Slow down",
    SpeedAction.WAIT_FOR_GAP: "Wait for a gap in the traffic before changing lanes",
}
_STOPPING = (SpeedAction.COME_TO_STOP, SpeedAction.REMAIN_STOPPED, SpeedAction.SLOW_DOWN)


@dataclass(frozen=True)
class CommentaryConfig:
    v_stop: float = 0.1
    band_fraction: float = 0.1
    band_min: float = 0.5
    junction_distance: float = 20.0
    stopped_waypoints: int = 8
    slowing_margin: float = 0.5

    def band(self, speed_limit):
        return max(self.band_min, self.band_fraction * speed_limit)


@dataclass(frozen=True)
class CommentaryLabel:
    route_action: str
    speed_action: SpeedAction
    speed_reason: str
    junction_notice: Optional[str] = None

    @property
    def full_text(self):
        text = f"{self.route_action} {self.speed_action.phrase} {self.speed_reason}."
        if self.junction_notice:
            text += f" {self.junction_notice[0].upper()}{self.junction_notice[1:]}."
        return text


def is_deviation_scenario(scenario_type):
    return scenario_type in DEVIATION_TEMPLATES


def route_action(frame: SceneFrame) -> str:
    """First sentence: the route-level manoeuvre for the current scenario phase."""
    scenario, phase = frame.scenario_type, frame.deviation_phase
    if scenario is None or phase is None:
        return DEFAULT_ROUTE_ACTION
    if scenario not in DEVIATION_TEMPLATES:
        if scenario not in KNOWN_PLAIN_SCENARIOS:
            log.warning("unknown scenario type %r in frame %s, using the default route action", scenario, frame.frame_id)
        return DEFAULT_ROUTE_ACTION
    phase = DeviationPhase(phase)
    template = DEVIATION_TEMPLATES[scenario]
    if phase is DeviationPhase.BEFORE:
        return template
    if phase is DeviationPhase.DURING:
        return f"{DURING_PREFIX} {template[0].lower()}{template[1:]}"
    return END_OF_DEVIATION


def speed_action(frame: SceneFrame, cfg: CommentaryConfig = CommentaryConfig()) -> SpeedAction:
    """Classify the expert's speed decision into one of the closed set of actions.

    The bands are disjoint and cover every input: stop cases first, then the
    maintain band, then increase / slow down.
    """
    v = frame.ego.speed
    target = frame.expert_target_speed()
    band = cfg.band(frame.speed_limit)
    if (
        is_deviation_scenario(frame.scenario_type)
        and frame.deviation_phase is DeviationPhase.BEFORE
        and v < cfg.v_stop
        and np.all(frame.expert.speeds(SPEED_WP_DT)[: cfg.stopped_waypoints] < cfg.v_stop)
    ):
        return SpeedAction.WAIT_FOR_GAP
    if target < cfg.v_stop:
        return SpeedAction.REMAIN_STOPPED if v < cfg.v_stop else SpeedAction.COME_TO_STOP
    if abs(target - v) <= band:
        return SpeedAction.MAINTAIN_REDUCED_SPEED if target < frame.speed_limit - band else SpeedAction.MAINTAIN_SPEED
    return SpeedAction.INCREASE_SPEED if target > v else SpeedAction.SLOW_DOWN


def relative_position(x, y):
    """Coarse bearing of an ego-local point, e.g. ``"to the front left"``."""
    bearing = math.degrees(math.atan2(y, x))
    if abs(bearing) <= 15.0:
        return "in front of you"
    if abs(bearing) >= 165.0:
        return "behind you"
    side = "left" if bearing > 0 else "right"
    if abs(bearing) <= 75.0:
        return f"to the front {side}"
    if abs(bearing) <= 105.0:
        return f"to your {side}"
    return f"to the rear {side}"


_CAUSES = {"red_light": "a red traffic light", "stop_sign": "a stop sign", "pedestrian": "a pedestrian"}


def speed_reason(frame: SceneFrame, action: Optional[SpeedAction] = None, cfg: CommentaryConfig = CommentaryConfig()) -> str:
    """Why the speed action is taken, from the object limiting the expert's target speed."""
    action = speed_action(frame, cfg) if action is None else action
    leader = frame.idm_leader
    if leader is None:
        return "to reach the target speed"
    try:
        actor = frame.actor(leader.actor_id)
    except KeyError:
        return "because of the object ahead" if action in _STOPPING else "to reach the target speed"
    desc = actor.description()
    cls = actor.cls
    if cls is ActorClass.TRAFFIC_LIGHT:
        if actor.state == "green":
            return "because the traffic light is green"
        return f"because of the {desc}"
    if cls is ActorClass.STOP_SIGN:
        if action is SpeedAction.INCREASE_SPEED:
            return "since you've already stopped at the stop sign"
        if action is SpeedAction.REMAIN_STOPPED:
            return "to wait at the stop sign"
        if action in _STOPPING:
            return "to stop at the stop sign"
        return "because of the stop sign"
    if cls is ActorClass.PEDESTRIAN:
        if action in _STOPPING:
            return f"due to the {desc} crossing in front of you"
        return f"to avoid a collision with the {desc}"
    if cls in (ActorClass.VEHICLE, ActorClass.EMERGENCY_VEHICLE):
        where = relative_position(actor.pose.x, actor.pose.y)
        who = desc if where == "in front of you" else f"{desc} {where}"
        future_speed = actor.future[-1, 3] if actor.horizon else actor.speed
        if future_speed < actor.speed - cfg.slowing_margin:
            cause = _CAUSES.get(leader.cause)
            return f"to remain behind the {who} that is slowing down" + (f" because of {cause}" if cause else "")
        if action is SpeedAction.INCREASE_SPEED:
            return f"to follow the {who}"
        if action in (SpeedAction.MAINTAIN_SPEED, SpeedAction.MAINTAIN_REDUCED_SPEED, SpeedAction.REMAIN_STOPPED):
            return f"to remain behind the {who}"
        return f"to avoid a collision with the {who}"
    return f"to avoid a collision with the {desc}"


JUNCTION_BUSY = "pay attention to the vehicle in the junction"
JUNCTION_APPROACHING = "pay attention to the vehicles coming towards the junction"
JUNCTION_LEAVING = "the other vehicles are stopped at the junction and the vehicle in the junction is moving away"
JUNCTION_CLEAR = "the other vehicles are stopped at the junction and the junction is clear"


def junction_notice(frame: SceneFrame, cfg: CommentaryConfig = CommentaryConfig()) -> Optional[str]:
    """Summary of the vehicles around an upcoming junction, or ``None`` when not near one."""
    jc = frame.junction
    if jc is None or jc.distance_to_junction > cfg.junction_distance or not jc.actors:
        return None
    if any(a.inside and not a.moving_away for a in jc.actors):
        return JUNCTION_BUSY
    if any(a.approaching for a in jc.actors):
        return JUNCTION_APPROACHING
    if any(a.inside for a in jc.actors):
        return JUNCTION_LEAVING
    return JUNCTION_CLEAR


def label_frame(frame: SceneFrame, cfg: CommentaryConfig = CommentaryConfig()) -> CommentaryLabel:
    action = speed_action(frame, cfg)
    return CommentaryLabel(
        route_action=route_action(frame),
        speed_action=action,
        speed_reason=speed_reason(frame, action, cfg),
        junction_notice=junction_notice(frame, cfg),
    )


class CommentaryLabeler(TransformerMixin, BaseEstimator):
    """Transformer mapping frames to ``CommentaryLabel`` objects.

    :param v_stop: speed below which the ego counts as stopped (m/s).
    :param band_fraction: maintain band as a fraction of the speed limit.
    :param band_min: lower bound on the maintain band (m/s).
    :param junction_distance: distance within which junction notices are added (m).
    """

    def __init__(self, v_stop=0.1, band_fraction=0.1, band_min=0.5, junction_distance=20.0):
        self.v_stop = v_stop
        self.band_fraction = band_fraction
        self.band_min = band_min
        self.junction_distance = junction_distance

    def fit(self, X=None, y=None):
        self.config_ = CommentaryConfig(
            v_stop=self.v_stop, band_fraction=self.band_fraction,
            band_min=self.band_min, junction_distance=self.junction_distance,
        )
        return self

    def transform(self, X):
        if not hasattr(self, "config_"):
            self.fit()
        return [label_frame(f, self.config_) for f in X]
