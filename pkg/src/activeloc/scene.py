"""Planar world: SE(2) pose algebra, convex obstacles and semantic range scans.

Poses and actions are plain named tuples so they stay cheap inside planning
loops. A :class:`Scene` is immutable; per-scene ray-casting tables are built
lazily and cached on the instance.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
SENTINEL_NONE = -1

# Global class vocabulary; one-hot encodings of scans index into this.
CLASS_NAMES: tuple[str, ...] = (
    "wall",
    "shelf",
    "box",
    "mug",
    "book",
    "plant",
    "ball",
    "bottle",
    "lamp",
)

ROLES = ("target", "occluder", "wall")


class PoseOutOfBounds(ValueError):
    pass


class SceneError(ValueError):
    pass


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = math.remainder(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    return t


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    t = np.remainder(theta + math.pi, TWO_PI) - math.pi
    return np.where(t <= -math.pi, t + TWO_PI, t)


class Pose(NamedTuple):
    x: float
    y: float
    theta: float

    @classmethod
    def make(cls, x: float, y: float, theta: float) -> "Pose":
        return cls(float(x), float(y), normalize_angle(float(theta)))


class Action(NamedTuple):
    dx: float
    dy: float
    dtheta: float


@dataclass(frozen=True)
class ActionLimits:
    lin: float = 0.15
    ang: float = math.pi / 4

    @property
    def scale(self) -> np.ndarray:
        return np.array([self.lin, self.lin, self.ang])

    def clamp(self, a: Sequence[float]) -> Action:
        return Action(
            min(max(float(a[0]), -self.lin), self.lin),
            min(max(float(a[1]), -self.lin), self.lin),
            min(max(float(a[2]), -self.ang), self.ang),
        )

    def contains(self, a: Sequence[float], tol: float = 1e-12) -> bool:
        return abs(a[0]) <= self.lin + tol and abs(a[1]) <= self.lin + tol and abs(a[2]) <= self.ang + tol


def compose(p: Pose, a: Sequence[float]) -> Pose:
    """Apply a body-frame motion ``a`` to pose ``p``."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    dx, dy, dth = float(a[0]), float(a[1]), float(a[2])
    return Pose(p.x + c * dx - s * dy, p.y + s * dx + c * dy, normalize_angle(p.theta + dth))


def relative_action(p_i: Pose, p_j: Pose) -> Action:
    """Body-frame motion taking ``p_i`` to ``p_j`` (inverse of :func:`compose`)."""
    c, s = math.cos(p_i.theta), math.sin(p_i.theta)
    wx, wy = p_j.x - p_i.x, p_j.y - p_i.y
    return Action(c * wx + s * wy, -s * wx + c * wy, normalize_angle(p_j.theta - p_i.theta))


def concat_actions(a: Sequence[float], b: Sequence[float]) -> Action:
    """Single action equivalent to applying ``a`` then ``b``."""
    c, s = math.cos(a[2]), math.sin(a[2])
    return Action(a[0] + c * b[0] - s * b[1], a[1] + s * b[0] + c * b[1], normalize_angle(a[2] + b[2]))


# --------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    kind = "disc"

    def __post_init__(self):
        if not self.radius > 0:
            raise SceneError("disc radius must be positive")

    @property
    def centroid(self) -> tuple[float, float]:
        return self.center

    def distance(self, x: float, y: float) -> float:
        """Signed distance from a point to the boundary (negative inside)."""
        return math.hypot(x - self.center[0], y - self.center[1]) - self.radius

    def bbox(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        r = self.radius
        return cx - r, cy - r, cx + r, cy + r

    def to_json(self) -> dict:
        return {"kind": "disc", "params": {"center": list(self.center), "radius": self.radius}}


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[tuple[float, float], ...]

    kind = "polygon"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise SceneError("polygon needs at least three 2D vertices")
        area = _signed_area(v)
        if abs(area) < 1e-12:
            raise SceneError("degenerate polygon")
        if area < 0:
            object.__setattr__(self, "vertices", tuple(map(tuple, v[::-1].tolist())))
            v = v[::-1]
        e = np.roll(v, -1, axis=0) - v
        nxt = np.roll(e, -1, axis=0)
        if np.any(e[:, 0] * nxt[:, 1] - e[:, 1] * nxt[:, 0] < -1e-12):
            raise SceneError("polygon must be convex")

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "Polygon":
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    @cached_property
    def _arr(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def centroid(self) -> tuple[float, float]:
        v = self._arr
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cr = x * yn - xn * y
        a = cr.sum() / 2.0
        return float(((x + xn) * cr).sum() / (6 * a)), float(((y + yn) * cr).sum() / (6 * a))

    def distance(self, x: float, y: float) -> float:
        v = self._arr
        e = np.roll(v, -1, axis=0) - v
        rel = np.array([x, y]) - v
        cross = e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0]
        t = np.clip((rel * e).sum(1) / (e * e).sum(1), 0.0, 1.0)
        d = np.hypot(rel[:, 0] - t * e[:, 0], rel[:, 1] - t * e[:, 1]).min()
        return -float(d) if np.all(cross >= 0) else float(d)

    def bbox(self) -> tuple[float, float, float, float]:
        v = self._arr
        return float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max())

    def to_json(self) -> dict:
        return {"kind": "polygon", "params": {"vertices": [list(p) for p in self.vertices]}}


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float((x * np.roll(y, -1) - np.roll(x, -1) * y).sum())


Shape = Disc | Polygon


@dataclass(frozen=True)
class SceneObject:
    id: str
    class_id: int
    shape: Shape
    role: str = "occluder"
    query: str | None = None
    reward_params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.role not in ROLES:
            raise SceneError(f"unknown role {self.role!r}")
        if not 0 <= self.class_id < len(CLASS_NAMES):
            raise SceneError(f"class id {self.class_id} outside vocabulary")

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.class_id]

    @property
    def query_text(self) -> str:
        return self.query or self.class_name


@dataclass(frozen=True)
class CameraModel:
    fov: float = math.pi / 2
    n_rays: int = 32
    max_range: float = 4.0

    def __post_init__(self):
        if not 0 < self.fov <= math.pi:
            raise ValueError("fov must lie in (0, pi]")
        if self.n_rays < 8:
            raise ValueError("need at least 8 rays")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")

    def bearings(self, theta: float) -> np.ndarray:
        i = np.arange(self.n_rays)
        return theta - self.fov / 2 + i * (self.fov / (self.n_rays - 1))


@dataclass(frozen=True)
class Observation:
    depths: np.ndarray
    classes: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, Observation)
            and np.array_equal(self.depths, other.depths)
            and np.array_equal(self.classes, other.classes)
        )

    __hash__ = None

    def to_json(self) -> dict:
        return {"depths": self.depths.tolist(), "classes": self.classes.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Observation":
        return cls(np.asarray(d["depths"], dtype=float), np.asarray(d["classes"], dtype=np.int64))


@dataclass(frozen=True)
class Scene:
    bounds: tuple[float, float, float, float]
    objects: tuple[SceneObject, ...]
    free_radius: float = 0.1
    name: str = ""

    def __post_init__(self):
        x0, y0, x1, y1 = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise SceneError("empty bounds")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("object ids must be unique")
        tol = 1e-9
        for o in self.objects:
            bx0, by0, bx1, by1 = o.shape.bbox()
            if bx0 < x0 - tol or by0 < y0 - tol or bx1 > x1 + tol or by1 > y1 + tol:
                raise SceneError(f"object {o.id} leaves the scene bounds")

    # -- lookup

    @cached_property
    def index(self) -> dict[str, int]:
        return {o.id: i for i, o in enumerate(self.objects)}

    def get(self, object_id: str) -> SceneObject:
        return self.objects[self.index[object_id]]

    @property
    def targets(self) -> list[SceneObject]:
        return [o for o in self.objects if o.role == "target"]

    def without(self, object_id: str) -> "Scene":
        return Scene(self.bounds, tuple(o for o in self.objects if o.id != object_id), self.free_radius, self.name)

    def contains(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1

    # -- ray tables

    @cached_property
    def _discs(self):
        idx = [i for i, o in enumerate(self.objects) if isinstance(o.shape, Disc)]
        c = np.array([self.objects[i].shape.center for i in idx], dtype=float).reshape(-1, 2)
        r = np.array([self.objects[i].shape.radius for i in idx], dtype=float)
        return np.array(idx, dtype=np.int64), c, r

    @cached_property
    def _edges(self):
        idx, p, e, starts = [], [], [], []
        count = 0
        for i, o in enumerate(self.objects):
            if isinstance(o.shape, Polygon):
                v = o.shape._arr
                starts.append(count)
                count += len(v)
                p.append(v)
                e.append(np.roll(v, -1, axis=0) - v)
                idx.append(i)
        if not idx:
            return np.zeros(0, np.int64), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, np.int64)
        return np.array(idx, np.int64), np.concatenate(p), np.concatenate(e), np.array(starts, np.int64)

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(canonical_json(scene_to_json(self)).encode()).hexdigest()


# --------------------------------------------------------------------------
# ray casting


def cast_rays(scene: Scene, x: float, y: float, bearings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance and object index for each bearing.

    Misses return ``inf`` and index -1. Equidistant hits resolve to the lowest
    object index.
    """
    bearings = np.asarray(bearings, dtype=float)
    n = len(scene.objects)
    t = np.full((bearings.size, max(n, 1)), np.inf)
    dx, dy = np.cos(bearings)[:, None], np.sin(bearings)[:, None]

    didx, cen, rad = scene._discs
    if didx.size:
        fx, fy = x - cen[:, 0], y - cen[:, 1]
        b = fx * dx + fy * dy
        c = fx * fx + fy * fy - rad * rad
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        near = -b - sq
        far = -b + sq
        tt = np.where(near > 1e-12, near, np.where(far > 1e-12, far, np.inf))
        tt = np.where(disc >= 0, tt, np.inf)
        t[:, didx] = tt

    pidx, P, E, starts = scene._edges
    if pidx.size:
        # ray o + t d against segment P + s E
        ox, oy = P[:, 0] - x, P[:, 1] - y
        denom = dx * E[:, 1] - dy * E[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = (ox * E[:, 1] - oy * E[:, 0]) / denom
            s = (ox * dy - oy * dx) / denom
        ok = (np.abs(denom) > 1e-15) & (tt > 1e-12) & (s >= -1e-12) & (s <= 1 + 1e-12)
        tt = np.where(ok, tt, np.inf)
        t[:, pidx] = np.minimum.reduceat(tt, starts, axis=1)

    if n == 0:
        return np.full(bearings.size, np.inf), np.full(bearings.size, -1, np.int64)
    hit = np.argmin(t, axis=1)
    dist = t[np.arange(bearings.size), hit]
    hit = np.where(np.isfinite(dist), hit, -1)
    return dist, hit


def render_scan(scene: Scene, p: Pose, cam: CameraModel) -> Observation:
    if not scene.contains(p.x, p.y):
        raise PoseOutOfBounds(f"pose {tuple(p)} outside scene bounds {scene.bounds}")
    dist, hit = cast_rays(scene, p.x, p.y, cam.bearings(p.theta))
    miss = dist >= cam.max_range
    depths = np.where(miss, cam.max_range, dist)
    class_of = np.array([o.class_id for o in scene.objects] + [SENTINEL_NONE], dtype=np.int64)
    classes = np.where(miss, SENTINEL_NONE, class_of[hit])
    return Observation(depths, classes)


def is_collision_free(scene: Scene, p: Pose) -> bool:
    r = scene.free_radius
    x0, y0, x1, y1 = scene.bounds
    if not (x0 + r <= p.x <= x1 - r and y0 + r <= p.y <= y1 - r):
        return False
    return all(o.shape.distance(p.x, p.y) > r for o in scene.objects)


def clearance(scene: Scene, xy: np.ndarray) -> np.ndarray:
    """Signed distance from each point to the nearest object (``inf`` if none)."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    out = np.full(len(xy), np.inf)
    _, cen, rad = scene._discs
    if rad.size:
        d = np.hypot(xy[:, None, 0] - cen[None, :, 0], xy[:, None, 1] - cen[None, :, 1]) - rad
        out = np.minimum(out, d.min(axis=1))
    for o in scene.objects:
        if isinstance(o.shape, Polygon):
            v = o.shape._arr
            e = np.roll(v, -1, axis=0) - v
            rel = xy[:, None, :] - v[None]
            cross = e[:, 0] * rel[..., 1] - e[:, 1] * rel[..., 0]
            t = np.clip((rel * e).sum(-1) / (e * e).sum(-1), 0.0, 1.0)
            d = np.hypot(rel[..., 0] - t * e[:, 0], rel[..., 1] - t * e[:, 1]).min(axis=1)
            out = np.minimum(out, np.where((cross >= 0).all(axis=1), -d, d))
    return out


def free_mask(scene: Scene, xy: np.ndarray) -> np.ndarray:
    """Vectorized :func:`is_collision_free` over positions (heading is irrelevant)."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    r = scene.free_radius
    x0, y0, x1, y1 = scene.bounds
    inb = (xy[:, 0] >= x0 + r) & (xy[:, 0] <= x1 - r) & (xy[:, 1] >= y0 + r) & (xy[:, 1] <= y1 - r)
    return inb & (clearance(scene, xy) > r)


def segment_collision_free(scene: Scene, p, q, resolution: float = 0.01) -> bool:
    """Collision check of the straight translation from ``p`` to ``q``."""
    n = max(1, int(math.ceil(math.hypot(q[0] - p[0], q[1] - p[1]) / resolution)))
    s = np.linspace(0.0, 1.0, n + 1)[:, None]
    pts = np.array([p[0], p[1]]) * (1 - s) + np.array([q[0], q[1]]) * s
    return bool(free_mask(scene, pts).all())


# --------------------------------------------------------------------------
# files


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _class_id(value) -> int:
    if isinstance(value, str):
        try:
            return CLASS_NAMES.index(value)
        except ValueError:
            raise SceneError(f"unknown class {value!r}") from None
    return int(value)


def shape_from_json(d: dict) -> Shape:
    kind, params = d["kind"], d["params"]
    if kind == "disc":
        return Disc(tuple(map(float, params["center"])), float(params["radius"]))
    if kind == "polygon":
        return Polygon(tuple(tuple(map(float, v)) for v in params["vertices"]))
    if kind == "rect":
        return Polygon.rectangle(*map(float, params["xyxy"]))
    raise SceneError(f"unknown shape kind {kind!r}")


def scene_from_json(d: dict) -> Scene:
    objects = []
    for o in d["objects"]:
        objects.append(
            SceneObject(
                id=str(o["id"]),
                class_id=_class_id(o["class"]),
                shape=shape_from_json(o["shape"]),
                role=o.get("role", "occluder"),
                query=o.get("query"),
                reward_params=dict(o.get("reward_params", {})),
            )
        )
    return Scene(tuple(map(float, d["bounds"])), tuple(objects), float(d.get("free_radius", 0.1)), d.get("name", ""))


def scene_to_json(scene: Scene) -> dict:
    objs = []
    for o in scene.objects:
        od = {"id": o.id, "class": o.class_name, "shape": o.shape.to_json(), "role": o.role}
        if o.query:
            od["query"] = o.query
        if o.reward_params:
            od["reward_params"] = dict(o.reward_params)
        objs.append(od)
    d = {"bounds": list(scene.bounds), "free_radius": scene.free_radius, "objects": objs}
    if scene.name:
        d["name"] = scene.name
    return d


def load_scene(path: str | Path) -> Scene:
    with open(path) as f:
        return scene_from_json(json.load(f))


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_json(scene), indent=2) + "\n")
