"""Independent reference computations for the test suite.

Nothing here imports railsim: each oracle re-derives its answer from first
principles (closed-form geometry, brute force, naive loops) so a bug in the
library cannot hide in a shared helper.
"""

import math

import numpy as np


def circle_fit_radius(xy):
    """Algebraic least-squares circle fit (x^2 + y^2 + D x + E y + F = 0)."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    A = np.column_stack([x, y, np.ones_like(x)])
    b = -(x * x + y * y)
    (D, E, F), *_ = np.linalg.lstsq(A, b, rcond=None)
    return math.sqrt(D * D / 4.0 + E * E / 4.0 - F)


def point_in_box(points, cx, cy, yaw, hl, hw):
    """Closed containment test of points in an oriented rectangle (inclusive edges)."""
    p = np.asarray(points, dtype=float)
    dx, dy = p[:, 0] - cx, p[:, 1] - cy
    c, s = math.cos(yaw), math.sin(yaw)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (np.abs(u) <= hl) & (np.abs(v) <= hw)


def box_boundary_points(cx, cy, yaw, hl, hw, spacing):
    """Points every ``spacing`` meters along the rectangle outline, corners included."""
    corners_local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
    c, s = math.cos(yaw), math.sin(yaw)
    corners = [(cx + u * c - v * s, cy + u * s + v * c) for u, v in corners_local]
    pts = []
    for i in range(4):
        a = np.array(corners[i])
        b = np.array(corners[(i + 1) % 4])
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / spacing)) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        pts.append(a + t * (b - a))
    pts.append(np.array([[cx, cy]]))
    return np.vstack(pts)


def brute_force_overlap(a, b, spacing=5e-4):
    """Do two oriented rectangles ``(x, y, yaw, hl, hw)`` share a point?

    Samples each outline densely (plus its centre) and tests containment in
    the other rectangle. Two convex regions intersect iff an outline point of
    one lies in the other or one contains the other's centre, so the only
    misses are overlaps thinner than the sampling spacing.
    """
    ra = math.hypot(a[3], a[4])
    rb = math.hypot(b[3], b[4])
    if math.hypot(a[0] - b[0], a[1] - b[1]) > ra + rb + 1e-9:
        return False
    pa = box_boundary_points(*a, spacing)
    if point_in_box(pa, *b).any():
        return True
    pb = box_boundary_points(*b, spacing)
    return bool(point_in_box(pb, *a).any())


def prefix_sum(diffs):
    out = []
    x = y = 0.0
    for dx, dy in diffs:
        x += dx
        y += dy
        out.append((x, y))
    return out


def naive_ade(a, b):
    n = min(len(a), len(b))
    total = 0.0
    for i in range(n):
        total += math.sqrt((a[i][0] - b[i][0]) ** 2 + (a[i][1] - b[i][1]) ** 2)
    return total / n


def arc_points(radius, arcs):
    """Points on a left-turning circle through the origin, tangent to +x."""
    arcs = np.asarray(arcs, dtype=float)
    return np.column_stack([radius * np.sin(arcs / radius), radius * (1.0 - np.cos(arcs / radius))])


def chord_angle(radius, arc):
    """Angle of the chord from the start of a circular arc: half the swept angle."""
    return arc / (2.0 * radius)


def contact_step(gap, speed, dt):
    """First tick at which an ego moving at constant ``speed`` closes a straight-line ``gap``."""
    if gap <= 0:
        return 0
    return int(math.ceil(gap / (speed * dt) - 1e-12))


def reach_window(v0, t, a_max, a_min):
    """Closed-form min and max distance reachable in ``t`` seconds from speed ``v0``."""
    far = v0 * t + 0.5 * a_max * t * t
    t_stop = v0 / -a_min
    near = v0 * v0 / (-2.0 * a_min) if t >= t_stop else v0 * t + 0.5 * a_min * t * t
    return near, far


def ols_slope(y, x):
    n = len(y)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((xi - mx) * (yi - my) for xi, yi in zip(x, y))
    den = sum((xi - mx) ** 2 for xi in x)
    return num / den
