"""Independent geometric oracles used across the test suite."""

import math
from functools import lru_cache

import numpy as np
from shapely.geometry import LineString, Point
from shapely.geometry import Polygon as SPolygon

from activeloc.planners import smoothness
from activeloc.scene import ActionLimits, Disc, Polygon, Scene, SceneObject


def to_shapely(shape):
    if isinstance(shape, Disc):
        # fine polygonal approximation of the circle
        return Point(shape.center).buffer(shape.radius, quad_segs=2048)
    return SPolygon(shape.vertices)


@lru_cache(maxsize=256)
def _outlines(scene: Scene):
    return tuple(to_shapely(o.shape).exterior for o in scene.objects)


def brute_ray(scene: Scene, x: float, y: float, bearing: float, max_range: float):
    """First hit (distance, object index) along one ray, via shapely intersection."""
    far = (x + max_range * math.cos(bearing), y + max_range * math.sin(bearing))
    ray = LineString([(x, y), far])
    best, idx = math.inf, -1
    for i, ring in enumerate(_outlines(scene)):
        hit = ray.intersection(ring)
        if hit.is_empty:
            continue
        pts = [hit] if hit.geom_type == "Point" else list(getattr(hit, "geoms", []))
        for p in pts:
            for c in (p.coords if hasattr(p, "coords") else []):
                d = math.hypot(c[0] - x, c[1] - y)
                if d > 1e-9 and d < best - 1e-9:
                    best, idx = d, i
    return best, idx


def brute_visible_fraction(scene: Scene, x: float, y: float, theta: float, fov: float, target: int, lo: float, hi: float, n: int):
    """Share of n bearings across [lo, hi] that are inside the view and hit the target first."""
    b = lo + (np.arange(n) + 0.5) * (hi - lo) / n
    seen = 0
    for bb in b:
        off = math.remainder(bb - theta, 2 * math.pi)
        if abs(off) > fov / 2:
            continue
        _, i = brute_ray(scene, x, y, bb, 50.0)
        seen += i == target
    return seen / n


def random_scene(rng):
    """A target disc (object 0) and one to three box occluders."""
    objs = [SceneObject("t", 3, Disc(tuple(rng.uniform(1.0, 3.0, 2)), rng.uniform(0.1, 0.3)), "target")]
    for k in range(rng.integers(1, 4)):
        c = rng.uniform(0.6, 3.4, 2)
        w, h = rng.uniform(0.05, 0.4, 2)
        objs.append(SceneObject(f"o{k}", 2, Polygon.rectangle(c[0] - w, c[1] - h, c[0] + w, c[1] + h)))
    return Scene((0.0, 0.0, 4.0, 4.0), tuple(objs))


class Bowl:
    """Linear dynamics z' = z + a with reward -|z - goal|^2."""

    limits = ActionLimits()

    def __init__(self, goal):
        self.goal = np.asarray(goal, dtype=float)

    def rollout(self, z0, seqs, e_g=None):
        lat = np.asarray(z0, dtype=float) + np.cumsum(seqs, axis=1)
        return lat, -((lat - self.goal) ** 2).sum(axis=2)

    def objective(self, z0, seqs, e_g, gamma, a_prev, grad=False):
        lat, rew = self.rollout(z0, seqs)
        J = rew.sum(axis=1) - gamma * smoothness(seqs, a_prev)
        if not grad:
            return J, None
        assert gamma == 0
        # d/da_t of sum_tau r(z_tau) collects every later step
        g = np.flip(np.cumsum(np.flip(-2 * (lat - self.goal), axis=1), axis=1), axis=1)
        return J, g
