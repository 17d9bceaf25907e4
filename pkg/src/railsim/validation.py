"""Input validation helpers in the spirit of ``sklearn.utils.check_array``.

All public entry points funnel array-like geometry through these so the
internals can assume contiguous float64 arrays of the right shape.
"""

import math

import numpy as np

from .exceptions import DegeneratePolyline, EmptySequence


def wrap_angle(angle):
    """Map an angle (scalar or array) to the half-open interval (-pi, pi]."""
    if isinstance(angle, float) or np.ndim(angle) == 0:
        a = math.remainder(float(angle), 2.0 * math.pi)
        return math.pi if a <= -math.pi else a
    a = np.remainder(np.asarray(angle, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(a <= -math.pi, math.pi, a)


def check_points(points, *, name="points", min_points=1, allow_yaw=True):
    """Validate a sequence of 2D points and return an ``(n, 2)`` float array.

    Accepts ``(n, 2)`` or, when ``allow_yaw`` is set, ``(n, 3)`` input whose
    third column is dropped. Pose objects with ``x``/``y`` attributes are
    also accepted.
    """
    if len(points) and hasattr(points[0], "x") and not isinstance(points, np.ndarray):
        points = [(p.x, p.y) for p in points]
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in ((2, 3) if allow_yaw else (2,)):
        raise ValueError(f"{name} must have shape (n, 2){' or (n, 3)' if allow_yaw else ''}, got {arr.shape}")
    if arr.shape[0] < min_points:
        if min_points == 1:
            raise EmptySequence(f"{name} is empty")
        raise ValueError(f"{name} needs at least {min_points} points, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr[:, :2])


def check_polyline(polyline, *, name="polyline"):
    """Validate a polyline with at least two points and non-zero length."""
    pts = check_points(polyline, name=name, min_points=2)
    if not np.any(np.hypot(*np.diff(pts, axis=0).T) > 0.0):
        raise DegeneratePolyline(f"{name} has zero length")
    return pts


def arc_lengths(points):
    """Cumulative arc length at every vertex of an ``(n, 2)`` polyline."""
    seg = np.hypot(*np.diff(points, axis=0).T)
    return np.concatenate(([0.0], np.cumsum(seg)))


def check_positive(value, name):
    value = float(value)
    if not value > 0.0 or not math.isfinite(value):
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value
