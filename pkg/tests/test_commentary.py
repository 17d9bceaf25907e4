import logging
import re
from dataclasses import replace

import pytest

from railsim.commentary import (
    END_OF_DEVIATION,
    JUNCTION_APPROACHING,
    JUNCTION_BUSY,
    JUNCTION_CLEAR,
    JUNCTION_LEAVING,
    CommentaryLabel,
    CommentaryLabeler,
    SpeedAction,
    junction_notice,
    label_frame,
    relative_position,
    route_action,
    speed_action,
    speed_reason,
)
from railsim.scene import IdmLeader, JunctionActor, JunctionContext
from railsim.synthetic import make_actor, make_frame


def _leader(actor, target, cause=None, distance=None):
    return IdmLeader(actor.id, distance if distance is not None else actor.pose.x, target, cause=cause)


class TestRouteAction:
    def test_default(self):
        assert route_action(make_frame()) == "Follow the route."

    def test_during_construction(self):
        f = make_frame(scenario_type="ConstructionObstacle", deviation_phase="during")
        assert route_action(f) == "Stay on your current lane to go around the construction site."

    def test_before_construction(self):
        f = make_frame(scenario_type="ConstructionObstacle", deviation_phase="before")
        assert route_action(f) == "Go around the construction site."

    def test_end(self):
        f = make_frame(scenario_type="Accident", deviation_phase="end")
        assert route_action(f) == END_OF_DEVIATION

    def test_unknown_scenario_warns(self, caplog):
        f = make_frame(scenario_type="MadeUpScenario", deviation_phase="before")
        with caplog.at_level(logging.WARNING):
            assert route_action(f) == "Follow the route."
        assert "MadeUpScenario" in caplog.text


class TestSpeedAction:
    def test_remain_stopped(self):
        assert speed_action(make_frame(speed=0.05, expert_speed=0.0)) is SpeedAction.REMAIN_STOPPED

    def test_come_to_stop(self):
        car = make_actor("v", "vehicle", 8.0, 0.0)
        f = make_frame(speed=5.0, actors=[car], idm_leader=_leader(car, 0.0))
        assert speed_action(f) is SpeedAction.COME_TO_STOP

    def test_maintain(self):
        assert speed_action(make_frame(speed=8.0, speed_limit=8.0)) is SpeedAction.MAINTAIN_SPEED

    def test_maintain_reduced(self):
        assert speed_action(make_frame(speed=5.0, speed_limit=13.9)) is SpeedAction.MAINTAIN_REDUCED_SPEED

    def test_increase(self):
        assert speed_action(make_frame(speed=2.0, expert_speed=9.0)) is SpeedAction.INCREASE_SPEED

    def test_slow_down(self):
        car = make_actor("v", "vehicle", 15.0, 0.0, speed=3.0)
        f = make_frame(speed=10.0, actors=[car], idm_leader=_leader(car, 4.0))
        assert speed_action(f) is SpeedAction.SLOW_DOWN

    def test_wait_for_gap(self):
        f = make_frame(speed=0.0, expert_speed=0.0, scenario_type="ParkedObstacle", deviation_phase="before")
        assert speed_action(f) is SpeedAction.WAIT_FOR_GAP
        assert SpeedAction.WAIT_FOR_GAP.phrase == "Wait for a gap in the traffic before changing lanes"


class TestSpeedReason:
    def test_red_light(self):
        light = make_actor("tl", "traffic_light", 12.0, 3.0, state="red")
        f = make_frame(speed=5.0, actors=[light], idm_leader=_leader(light, 0.0))
        assert speed_action(f) is SpeedAction.COME_TO_STOP
        assert "red traffic light" in speed_reason(f)

    def test_green_light(self):
        light = make_actor("tl", "traffic_light", 12.0, 3.0, state="green")
        f = make_frame(speed=3.0, actors=[light], idm_leader=_leader(light, 9.0))
        assert speed_reason(f) == "because the traffic light is green"

    def test_no_leader(self):
        f = make_frame(speed=2.0, expert_speed=9.0)
        assert speed_reason(f) == "to reach the target speed"

    def test_red_suv_slowing(self):
        suv = make_actor("v", "vehicle", 12.0, 0.0, speed=6.0, color="red", subtype="SUV")
        fut = suv.future.copy()
        fut[:, 3] = [6.0 - 0.5 * i for i in range(1, 11)]
        suv = replace(suv, future=fut)
        f = make_frame(speed=8.0, actors=[suv], idm_leader=_leader(suv, 3.0, cause="red_light"))
        label = label_frame(f)
        assert label.speed_reason == "to remain behind the red SUV that is slowing down because of a red traffic light"
        assert label.full_text.endswith(
            "to remain behind the red SUV that is slowing down because of a red traffic light."
        )

    @pytest.mark.parametrize("speed,expert,want", [
        (4.0, 0.0, "to stop at the stop sign"),
        (0.0, 0.0, "to wait at the stop sign"),
        (0.0, 6.0, "since you've already stopped at the stop sign"),
    ])
    def test_stop_sign(self, speed, expert, want):
        sign = make_actor("ss", "stop_sign", 8.0, 3.0)
        f = make_frame(speed=speed, actors=[sign], idm_leader=_leader(sign, expert))
        assert speed_reason(f) == want

    def test_pedestrian(self):
        ped = make_actor("p", "pedestrian", 9.0, 0.5, subtype="child")
        f = make_frame(speed=6.0, actors=[ped], idm_leader=_leader(ped, 0.0))
        assert speed_reason(f) == "due to the child crossing in front of you"

    def test_relative_position(self):
        assert relative_position(10, 0) == "in front of you"
        assert relative_position(5, 5) == "to the front left"
        assert relative_position(0, -5) == "to your right"
        assert relative_position(-10, 0) == "behind you"


class TestJunction:
    def _frame(self, distance, *actors):
        return make_frame(junction=JunctionContext(distance, tuple(actors)))

    def test_clear(self):
        f = self._frame(10.0, JunctionActor("a"), JunctionActor("b"))
        assert junction_notice(f) == JUNCTION_CLEAR

    def test_approaching(self):
        f = self._frame(10.0, JunctionActor("a", approaching=True))
        assert junction_notice(f) == JUNCTION_APPROACHING

    def test_busy_beats_approaching(self):
        f = self._frame(10.0, JunctionActor("a", approaching=True), JunctionActor("b", inside=True))
        assert junction_notice(f) == JUNCTION_BUSY

    def test_leaving(self):
        f = self._frame(10.0, JunctionActor("a", inside=True, moving_away=True))
        assert junction_notice(f) == JUNCTION_LEAVING

    def test_far(self):
        assert junction_notice(self._frame(50.0, JunctionActor("a", approaching=True))) is None

    def test_no_junction(self):
        assert junction_notice(make_frame()) is None


class TestLabel:
    def test_cruise_sentence(self):
        f = make_frame(speed=8.0, speed_limit=8.0)
        assert label_frame(f).full_text == "Follow the route. Maintain your current speed to reach the target speed."

    def test_junction_sentence_capitalised(self):
        f = make_frame(speed=8.0, speed_limit=8.0,
                       junction=JunctionContext(5.0, (JunctionActor("a", approaching=True),)))
        assert label_frame(f).full_text.endswith(" Pay attention to the vehicles coming towards the junction.")

    def test_grammar_on_synthetic(self, synthetic_frames):
        phrases = "|".join(re.escape(a.phrase) for a in SpeedAction)
        pattern = re.compile(rf"^[A-Z][^.]*\. ({phrases}) [^.]+\.( [A-Z][^.]+\.)?$")
        labels = CommentaryLabeler().fit_transform(synthetic_frames)
        for label in labels:
            assert isinstance(label, CommentaryLabel)
            assert pattern.match(label.full_text), label.full_text

    def test_pure(self, synthetic_frames):
        a = [l.full_text for l in CommentaryLabeler().fit_transform(synthetic_frames)]
        b = [l.full_text for l in CommentaryLabeler().fit_transform(synthetic_frames)]
        assert a == b
