"""Ground-truth localization reward computed from visibility geometry.

Stands in for an open-vocabulary detector: confidence falls off with
occlusion and distance, and the apparent size of the target plays the role of
the bounding-box proportion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .scene import CameraModel, Disc, Pose, Scene, cast_rays, wrap_angles

N_VIS_SAMPLES = 64


class UnknownTarget(KeyError):
    pass


@dataclass(frozen=True)
class RewardParams:
    d_near: float = 0.5
    d_scale: float = 1.5
    b_sat: float = 0.3

    def override(self, d: dict | None) -> "RewardParams":
        if not d:
            return self
        known = {f.name for f in fields(self)}
        return replace(self, **{k: float(v) for k, v in d.items() if k in known})


@dataclass(frozen=True)
class SuccessThresholds:
    conf_min: float = 0.7
    bbox_min: float = 0.15

    def __post_init__(self):
        if not (0 <= self.conf_min <= 1 and 0 <= self.bbox_min <= 1):
            raise ValueError("thresholds must lie in [0, 1]")

    def override(self, d: dict | None) -> "SuccessThresholds":
        if not d:
            return self
        return SuccessThresholds(
            float(d.get("conf_min", self.conf_min)), float(d.get("bbox_min", self.bbox_min))
        )


@dataclass(frozen=True)
class VisibilityReport:
    target_id: str
    visible_fraction: float
    angular_extent_visible: float
    distance: float
    in_fov: bool


def _target(scene: Scene, target_id: str):
    i = scene.index.get(target_id)
    if i is None or scene.objects[i].role != "target":
        raise UnknownTarget(target_id)
    return i, scene.objects[i]


def angular_interval(shape, x: float, y: float) -> tuple[float, float]:
    """Bearing interval (lo, hi) subtended by a shape seen from (x, y)."""
    cx, cy = shape.centroid
    mid = math.atan2(cy - y, cx - x)
    if isinstance(shape, Disc):
        d = math.hypot(cx - x, cy - y)
        half = math.asin(min(1.0, shape.radius / d)) if d > 0 else math.pi
        return mid - half, mid + half
    v = shape._arr
    rel = wrap_angles(np.arctan2(v[:, 1] - y, v[:, 0] - x) - mid)
    return mid + float(rel.min()), mid + float(rel.max())


def visibility(scene: Scene, p: Pose, cam: CameraModel, target_id: str, n_samples: int = N_VIS_SAMPLES) -> VisibilityReport:
    idx, obj = _target(scene, target_id)
    lo, hi = angular_interval(obj.shape, p.x, p.y)
    width = hi - lo
    bearings = lo + (np.arange(n_samples) + 0.5) * (width / n_samples)
    in_view = np.abs(wrap_angles(bearings - p.theta)) <= cam.fov / 2
    cx, cy = obj.shape.centroid
    distance = math.hypot(cx - p.x, cy - p.y)
    if not in_view.any():
        return VisibilityReport(target_id, 0.0, 0.0, distance, False)
    dist, hit = cast_rays(scene, p.x, p.y, bearings[in_view])
    seen = int(np.count_nonzero((hit == idx) & (dist < cam.max_range)))
    frac = seen / n_samples
    return VisibilityReport(target_id, frac, min(frac * width, cam.fov), distance, True)


def detection_confidence(rep: VisibilityReport, cam: CameraModel, params: RewardParams = RewardParams()) -> float:
    if not rep.in_fov:
        return 0.0
    return rep.visible_fraction * math.exp(-max(0.0, rep.distance - params.d_near) / params.d_scale)


def bbox_proportion(rep: VisibilityReport, cam: CameraModel) -> float:
    if not rep.in_fov:
        return 0.0
    return min(1.0, max(0.0, rep.angular_extent_visible / cam.fov))


def target_params(scene: Scene, target_id: str, base: RewardParams = RewardParams()) -> RewardParams:
    return base.override(scene.get(target_id).reward_params)


def target_thresholds(scene: Scene, target_id: str, base: SuccessThresholds = SuccessThresholds()) -> SuccessThresholds:
    return base.override(scene.get(target_id).reward_params)


def reward_from_report(rep: VisibilityReport, cam: CameraModel, params: RewardParams) -> float:
    conf = detection_confidence(rep, cam, params)
    if conf == 0.0:
        return 0.0
    return conf * min(1.0, bbox_proportion(rep, cam) / params.b_sat)


def ground_truth_reward(scene: Scene, p: Pose, cam: CameraModel, target_id: str, params: RewardParams | None = None) -> float:
    """Confidence times the saturating apparent-size factor, in [0, 1]."""
    rep = visibility(scene, p, cam, target_id)
    if params is None:
        params = target_params(scene, target_id)
    return reward_from_report(rep, cam, params)


def is_success(
    rep: VisibilityReport,
    cam: CameraModel,
    thresholds: SuccessThresholds = SuccessThresholds(),
    params: RewardParams = RewardParams(),
) -> bool:
    # inclusive on both thresholds
    return detection_confidence(rep, cam, params) >= thresholds.conf_min and bbox_proportion(rep, cam) >= thresholds.bbox_min


def success_at(scene: Scene, p: Pose, cam: CameraModel, target_id: str, thresholds: SuccessThresholds | None = None) -> bool:
    rep = visibility(scene, p, cam, target_id)
    th = target_thresholds(scene, target_id, thresholds or SuccessThresholds())
    return is_success(rep, cam, th, target_params(scene, target_id))
