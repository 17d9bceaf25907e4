"""Training-data buckets: declarative frame predicates plus weighted epoch sampling."""

from __future__ import annotations

import operator
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import AllBucketsEmpty, EmptyLog

_OPS = {
    "gt": operator.gt,
    "ge": operator.ge,
    "lt": operator.lt,
    "le": operator.le,
    "eq": operator.eq,
    "in": lambda value, options: value in options,
}

OLD_TOWNS = ("Town01", "Town02", "Town03", "Town04", "Town05", "Town06", "Town07", "Town10HD")


def frame_features(frame):
    """Flat feature record that bucket predicates are evaluated against."""
    hz = frame.hazards
    return {
        "speed": frame.ego.speed,
        "accel": frame.ego.accel,
        "steer": frame.ego.steer,
        "hazard_vehicle": hz.vehicle,
        "hazard_walker": hz.walker,
        "hazard_stop_sign": hz.stop_sign,
        "hazard_red_light": hz.red_light,
        "swerving": hz.swerving,
        "town": frame.town,
    }


@dataclass(frozen=True)
class BucketSpec:
    """Named bucket. ``predicate`` maps feature name to ``{op: value}``; all
    conditions must hold. An empty predicate matches every frame."""

    name: str
    predicate: dict = field(default_factory=dict)
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"bucket {self.name}: weight must be >= 0")
        for feat, cond in self.predicate.items():
            if not isinstance(cond, dict) or not cond:
                raise ValueError(f"bucket {self.name}: condition for {feat!r} must be a non-empty mapping")
            unknown = set(cond) - set(_OPS)
            if unknown:
                raise ValueError(f"bucket {self.name}: unknown operators {sorted(unknown)}")

    def matches(self, features) -> bool:
        for feat, cond in self.predicate.items():
            value = features.get(feat)
            if value is None:
                return False
            for op, ref in cond.items():
                if op == "in":
                    ref = tuple(ref)
                if not _OPS[op](value, ref):
                    return False
        return True


def default_bucket_specs():
    """The sixteen default buckets with uniform weights.

    Acceleration buckets all exclude ``-1 <= accel <= 1``; steering buckets
    exclude near-straight driving.
    """
    specs = [
        BucketSpec("accel_hard_brake", {"accel": {"lt": -4.0}}),
        BucketSpec("accel_brake", {"accel": {"ge": -4.0, "lt": -1.0}}),
        BucketSpec("accel_mild", {"accel": {"gt": 1.0, "le": 2.0}, "speed": {"ge": 0.5}}),
        BucketSpec("accel_strong", {"accel": {"gt": 2.0}, "speed": {"ge": 0.5}}),
        BucketSpec("start_from_stop", {"accel": {"gt": 1.0}, "speed": {"lt": 0.5}}),
        BucketSpec("steer_left", {"steer": {"gt": 0.05}}),
        BucketSpec("steer_right", {"steer": {"lt": -0.05}}),
        BucketSpec("vehicle_hazard_front", {"hazard_vehicle": {"eq": "front"}}),
        BucketSpec("vehicle_hazard_left", {"hazard_vehicle": {"eq": "left"}}),
        BucketSpec("vehicle_hazard_right", {"hazard_vehicle": {"eq": "right"}}),
        BucketSpec("stop_sign", {"hazard_stop_sign": {"eq": True}}),
        BucketSpec("red_light", {"hazard_red_light": {"eq": True}}),
        BucketSpec("walker_hazard", {"hazard_walker": {"eq": True}}),
        BucketSpec("swerving", {"swerving": {"eq": True}}),
        BucketSpec("old_towns", {"town": {"in": list(OLD_TOWNS)}}),
        BucketSpec("all", {}),
    ]
    w = 1.0 / len(specs)
    return [BucketSpec(s.name, s.predicate, w) for s in specs]


def build_buckets(frames, specs):
    """Map bucket name to the sorted ids of the frames satisfying its predicate.

    ``frames`` may be any iterable (a streaming log reader works); every
    frame is visited once.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("at least one bucket spec is required")
    if len({s.name for s in specs}) != len(specs):
        raise ValueError("bucket names must be unique")
    index = {s.name: [] for s in specs}
    seen = 0
    for frame in frames:
        seen += 1
        feats = frame_features(frame)
        for s in specs:
            if s.matches(feats):
                index[s.name].append(frame.frame_id)
    if seen == 0:
        raise EmptyLog("cannot build buckets from an empty log")
    return {name: sorted(ids) for name, ids in index.items()}


def sample_epoch(index, weights, n, seed=0, return_buckets=False):
    """Draw ``n`` frame ids: a bucket by weight, then a frame uniformly inside it.

    Buckets that are empty or have zero weight are skipped and the remaining
    weights renormalised. With ``return_buckets`` the bucket of every draw is
    returned as well.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    names = [k for k in index if index[k] and weights.get(k, 0.0) > 0.0]
    if not names:
        raise AllBucketsEmpty("no bucket has both frames and positive weight")
    p = np.array([weights[k] for k in names], dtype=float)
    p /= p.sum()
    rng = np.random.default_rng(seed)
    which = rng.choice(len(names), size=n, p=p)
    out = np.empty(n, dtype=object)
    for b, name in enumerate(names):
        pos = np.flatnonzero(which == b)
        if pos.size:
            ids = index[name]
            out[pos] = [ids[i] for i in rng.integers(len(ids), size=pos.size)]
    ids = out.tolist()
    if return_buckets:
        return ids, [names[b] for b in which]
    return ids


class BucketSampler(BaseEstimator):
    """``fit`` indexes a log into buckets, ``sample`` draws an epoch.

    Parameters
    ----------
    specs : list of BucketSpec, optional
        Defaults to ``default_bucket_specs()``.
    seed : int
    """

    def __init__(self, specs=None, seed=0):
        self.specs = specs
        self.seed = seed

    def fit(self, X, y=None):
        specs = self.specs if self.specs is not None else default_bucket_specs()
        self.index_ = build_buckets(X, specs)
        self.weights_ = {s.name: s.weight for s in specs}
        return self

    def sample(self, n, seed=None):
        return sample_epoch(self.index_, self.weights_, n, self.seed if seed is None else seed)
