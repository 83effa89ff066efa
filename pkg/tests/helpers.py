"""Shared test oracles and small world builders.

The oracles here are deliberately independent of the library's computation
paths: obstruction counts come from dense sampling along the link, and WkNN
estimates from a plain Python sort-and-accumulate loop.
"""

import math

import numpy as np

from radioloc.floorplan import (
    Bounds,
    Floorplan,
    ObstacleFamily,
    PlanarObstacle,
    Point3,
)
from radioloc.propagation import AccessPoint, PropagationParams


def oracle_count_2d(plan, tx, rx, samples=2000):
    """Dense-sampling obstruction count for the 2D projection of a link.

    Walks `samples` points along the segment, watches the sign of the
    side-of-obstacle-line test, and counts a sign change as a crossing when
    the (linearly interpolated, hence exact) crossing point falls strictly
    inside the obstacle segment.
    """
    ax, ay = tx.x, tx.y
    bx, by = rx.x, rx.y
    story_lo = min(plan.story_of(tx.z), plan.story_of(rx.z))
    story_hi = max(plan.story_of(tx.z), plan.story_of(rx.z))
    ts = np.linspace(0.0, 1.0, samples)
    px = ax + ts * (bx - ax)
    py = ay + ts * (by - ay)

    counts = {key: 0 for key in plan.obstacle_keys()}
    if (ax, ay) != (bx, by):
        for obs in plan.obstacles:
            if not story_lo <= obs.floor_index <= story_hi:
                continue
            vx, vy = obs.x2 - obs.x1, obs.y2 - obs.y1
            side = vx * (py - obs.y1) - vy * (px - obs.x1)
            signs = np.sign(side)
            # Samples can land exactly on the obstacle line (sign 0); a
            # crossing is a transition between nonzero signs. The zero of the
            # affine side function is recovered exactly by interpolation.
            nz = np.nonzero(signs)[0]
            seq = signs[nz]
            changes = np.nonzero(seq[:-1] * seq[1:] < 0)[0]
            for c in changes:
                i0, i1 = nz[c], nz[c + 1]
                f0, f1 = side[i0], side[i1]
                t_star = ts[i0] + (ts[i1] - ts[i0]) * (-f0) / (f1 - f0)
                cx = ax + t_star * (bx - ax)
                cy = ay + t_star * (by - ay)
                u = ((cx - obs.x1) * vx + (cy - obs.y1) * vy) / (vx * vx + vy * vy)
                if 0.0 < u < 1.0:
                    counts[(obs.family, obs.type_index)] += 1
    floors = sum(1 for z in plan.floors if min(tx.z, rx.z) < z < max(tx.z, rx.z))
    return counts, floors


def oracle_wknn(rp_rss, rp_positions, target, k, order=2.0, cap=1e9):
    """Brute-force top-k weighted centroid with sequential accumulation."""
    n = len(rp_rss)
    sims = []
    for i in range(n):
        acc = 0.0
        for a, b in zip(rp_rss[i], target):
            d = abs(float(a) - float(b))
            acc += d * d if order == 2.0 else d ** order
        if acc == 0.0:
            sims.append(cap)
        else:
            dist = math.sqrt(acc) if order == 2.0 else acc ** (1.0 / order)
            sims.append(1.0 / dist)
    ranked = sorted(range(n), key=lambda i: (-sims[i], i))[:k]
    num = [0.0, 0.0, 0.0]
    den = 0.0
    for i in ranked:
        w = sims[i]
        for axis in range(3):
            num[axis] = num[axis] + w * float(rp_positions[i][axis])
        den = den + w
    return [v / den for v in num], ranked, [sims[i] for i in ranked]


def random_plan(rng, n_obstacles=10):
    """A random rectangular plan with random obstacle segments, one story."""
    w = float(rng.uniform(15.0, 50.0))
    h = float(rng.uniform(10.0, 30.0))
    obstacles = []
    for _ in range(n_obstacles):
        x1, x2 = rng.uniform(0.0, w, 2)
        y1, y2 = rng.uniform(0.0, h, 2)
        if (x1, y1) == (x2, y2):
            continue
        family = ObstacleFamily.WALL if rng.random() < 0.7 else ObstacleFamily.DOOR
        obstacles.append(PlanarObstacle(float(x1), float(y1), float(x2), float(y2),
                                        family=family))
    return Floorplan(bounds=Bounds(0.0, 0.0, w, h), obstacles=tuple(obstacles))


def random_point(rng, plan, z=1.2):
    b = plan.bounds
    return Point3(float(rng.uniform(b.min_x + 0.01, b.max_x - 0.01)),
                  float(rng.uniform(b.min_y + 0.01, b.max_y - 0.01)), z)


def tiny_world():
    """A hand-built plan + APs + known params for exact fitting tests.

    Three walls and one door arranged so links from the two APs to a spread of
    survey points produce varied crossing counts.
    """
    plan = Floorplan(
        bounds=Bounds(0.0, 0.0, 20.0, 10.0),
        obstacles=(
            PlanarObstacle(5.0, 0.0, 5.0, 10.0, family=ObstacleFamily.WALL),
            PlanarObstacle(10.0, 0.0, 10.0, 6.0, family=ObstacleFamily.WALL),
            PlanarObstacle(15.0, 2.0, 15.0, 10.0, family=ObstacleFamily.WALL),
            PlanarObstacle(10.0, 7.0, 10.0, 8.5, family=ObstacleFamily.DOOR),
        ),
    )
    aps = [
        AccessPoint("a", Point3(1.0, 5.0, 2.5), eirp_dbm=20.0),
        AccessPoint("b", Point3(19.0, 1.0, 2.5), eirp_dbm=20.0),
    ]
    params = PropagationParams.simple(gamma=2.8, lc_db=1.5, wall_db=5.0, door_db=1.0)
    return plan, aps, params


def survey_points(nx=6, ny=3, z=1.2):
    pts = []
    for j in range(ny):
        for i in range(nx):
            pts.append(Point3(0.7 + i * 19.0 / nx, 0.9 + j * 4.05, z))
    return pts
