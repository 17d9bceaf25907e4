from dataclasses import replace

import pytest

from railsim.buckets import (
    BucketSampler,
    BucketSpec,
    build_buckets,
    default_bucket_specs,
    frame_features,
    sample_epoch,
)
from railsim.exceptions import AllBucketsEmpty, EmptyLog
from railsim.scene import Hazards
from railsim.synthetic import make_frame

BASE = make_frame("base", speed=5.0)


def frame(fid, **ego):
    ctx = {k: ego.pop(k) for k in ("hazards", "town") if k in ego}
    return replace(BASE, frame_id=fid, ego=replace(BASE.ego, **ego), **ctx)


def members(index, fid):
    return {name for name, ids in index.items() if fid in ids}


class TestDefaults:
    def test_sixteen_uniform(self):
        specs = default_bucket_specs()
        assert len(specs) == 16
        assert sum(s.weight for s in specs) == pytest.approx(1.0)
        assert len({s.weight for s in specs}) == 1

    def test_mild_accel_excluded(self):
        index = build_buckets([frame("a", accel=0.5)], default_bucket_specs())
        assert not {n for n in members(index, "a") if "accel" in n or n == "start_from_stop"}

    def test_straight_excluded_from_steering(self):
        index = build_buckets([frame("s", steer=0.0)], default_bucket_specs())
        assert not {"steer_left", "steer_right"} & members(index, "s")

    def test_catch_all(self):
        frames = [frame(f"f{i}", accel=a) for i, a in enumerate((-5, 0, 3))]
        assert build_buckets(frames, default_bucket_specs())["all"] == ["f0", "f1", "f2"]

    @pytest.mark.parametrize("accel,speed,want", [
        (-5.0, 5.0, "accel_hard_brake"),
        (-2.0, 5.0, "accel_brake"),
        (1.5, 5.0, "accel_mild"),
        (2.5, 5.0, "accel_strong"),
        (2.5, 0.1, "start_from_stop"),
    ])
    def test_accel_bands(self, accel, speed, want):
        index = build_buckets([frame("x", accel=accel, speed=speed)], default_bucket_specs())
        got = {n for n in members(index, "x") if n.startswith("accel") or n == "start_from_stop"}
        assert got == {want}

    def test_hazards_and_town(self):
        f = frame("h", hazards=Hazards(vehicle="left", walker=True), town="Town02")
        got = members(build_buckets([f], default_bucket_specs()), "h")
        assert {"vehicle_hazard_left", "walker_hazard", "old_towns", "all"} <= got
        assert "vehicle_hazard_front" not in got

    def test_missing_flag_fails_predicate(self):
        assert frame_features(BASE)["town"] is None
        assert not BucketSpec("t", {"town": {"in": ["Town01"]}}).matches(frame_features(BASE))


class TestBuild:
    def test_empty_log(self):
        with pytest.raises(EmptyLog):
            build_buckets([], default_bucket_specs())

    def test_rebuild_identical(self, synthetic_frames):
        specs = default_bucket_specs()
        assert build_buckets(synthetic_frames, specs) == build_buckets(iter(synthetic_frames), specs)

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            BucketSpec("x", {"accel": {"approx": 1.0}})
        with pytest.raises(ValueError):
            BucketSpec("x", {}, weight=-1.0)


class TestSample:
    def test_single_bucket(self):
        ids = sample_epoch({"A": ["a", "b"]}, {"A": 1.0}, 100, seed=1)
        assert set(ids) <= {"a", "b"} and len(ids) == 100

    def test_same_seed(self):
        index = {"A": ["a1", "a2"], "B": ["b1"]}
        w = {"A": 0.3, "B": 0.7}
        assert sample_epoch(index, w, 500, seed=4) == sample_epoch(index, w, 500, seed=4)
        assert sample_epoch(index, w, 500, seed=4) != sample_epoch(index, w, 500, seed=5)

    def test_all_empty(self):
        with pytest.raises(AllBucketsEmpty):
            sample_epoch({"A": [], "B": ["b"]}, {"A": 1.0, "B": 0.0}, 10)

    def test_zero_weight_skipped(self):
        ids = sample_epoch({"A": ["a"], "B": ["b"]}, {"A": 1.0, "B": 0.0}, 50)
        assert set(ids) == {"a"}

    def test_sampler_estimator(self, synthetic_frames):
        sampler = BucketSampler(seed=3).fit(synthetic_frames)
        ids = sampler.sample(200)
        known = {f.frame_id for f in synthetic_frames}
        assert len(ids) == 200 and set(ids) <= known
        assert sampler.sample(200) == ids
