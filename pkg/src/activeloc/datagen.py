"""Offline dataset generation: goal-directed trajectories, perturbation, labels.

Trajectories come from a small RRT (uniform sampling, straight-line steering,
goal bias) that finishes with a straight approach toward the target. The path
is then resampled into poses 1-5 cm apart, perturbed, rendered, and every
pose is labeled with the oracle reward of every target in the scene.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .oracle import ground_truth_reward, visibility
from .scene import (
    CameraModel,
    Observation,
    Pose,
    Scene,
    canonical_json,
    free_mask,
    is_collision_free,
    relative_action,
    render_scan,
    segment_collision_free,
)


class PlanningFailed(RuntimeError):
    pass


class InsufficientLength(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryParams:
    n_waypoints: int = 20
    step_lo: float = 0.01
    step_hi: float = 0.05
    perturb_lin_sigma: float = 0.05
    perturb_ang_sigma: float = 0.4
    rrt_iterations: int = 1500
    goal_radius: float = 0.6
    rrt_step: float = 0.3
    goal_bias: float = 0.2

    def __post_init__(self):
        if self.n_waypoints < 2:
            raise ValueError("n_waypoints must be >= 2")
        if not 0 < self.step_lo <= self.step_hi:
            raise ValueError("need 0 < step_lo <= step_hi")
        if self.perturb_lin_sigma < 0 or self.perturb_ang_sigma < 0:
            raise ValueError("perturbation sigmas must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryParams":
        return cls(**d)


@dataclass(frozen=True)
class DatasetRecord:
    observation: Observation
    pose: Pose
    rewards: dict[str, float]
    trajectory_id: int
    step_index: int

    def to_json(self) -> dict:
        return {
            "observation": self.observation.to_json(),
            "pose": list(self.pose),
            "rewards": dict(sorted(self.rewards.items())),
            "trajectory_id": self.trajectory_id,
            "step_index": self.step_index,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetRecord":
        return cls(
            Observation.from_json(d["observation"]),
            Pose(*map(float, d["pose"])),
            {k: float(v) for k, v in d["rewards"].items()},
            int(d["trajectory_id"]),
            int(d["step_index"]),
        )


@dataclass
class Dataset:
    scene_ref: str
    vocab_ref: str
    records: list[DatasetRecord]
    targets: dict[str, str] = field(default_factory=dict)
    camera: CameraModel = field(default_factory=CameraModel)
    params: TrajectoryParams = field(default_factory=TrajectoryParams)
    seed: int = 0
    start_region: tuple[float, float, float, float] | None = None

    def header(self) -> dict:
        return {
            "scene_ref": self.scene_ref,
            "vocab_ref": self.vocab_ref,
            "params": asdict(self.params),
            "seed": self.seed,
            "targets": dict(sorted(self.targets.items())),
            "camera": asdict(self.camera),
            "start_region": list(self.start_region) if self.start_region else None,
        }

    def trajectories(self) -> dict[int, list[DatasetRecord]]:
        out: dict[int, list[DatasetRecord]] = {}
        for r in self.records:
            out.setdefault(r.trajectory_id, []).append(r)
        for recs in out.values():
            recs.sort(key=lambda r: r.step_index)
        return dict(sorted(out.items()))


# --------------------------------------------------------------------------
# trajectories


def in_viewing_zone(scene: Scene, p: Pose, cam: CameraModel, target_id: str, goal_radius: float) -> bool:
    rep = visibility(scene, p, cam, target_id)
    return rep.in_fov and rep.distance <= goal_radius + 1e-9


def _approach(scene: Scene, xy, goal, goal_radius: float):
    """Stop point of a straight run from ``xy`` toward ``goal``, or None if blocked."""
    d = math.hypot(goal[0] - xy[0], goal[1] - xy[1])
    if d <= goal_radius:
        return tuple(xy)
    s = (d - goal_radius) / d
    stop = (xy[0] + s * (goal[0] - xy[0]), xy[1] + s * (goal[1] - xy[1]))
    if segment_collision_free(scene, xy, stop):
        return stop
    return None


def _resample(polyline: list[tuple[float, float]], rng: np.random.Generator, lo: float, hi: float) -> list[tuple[float, float]]:
    """Points along a polyline whose consecutive chord lengths lie in [lo, hi]."""
    pts = np.asarray(polyline, dtype=float)
    end = pts[-1]
    cur = pts[0].copy()
    seg = 0
    out = [tuple(cur)]
    while True:
        d_end = float(np.hypot(*(end - cur)))
        if d_end <= hi:
            if d_end >= lo:
                out.append(tuple(end))
            return out
        s = rng.uniform(lo, hi)
        if d_end < hi + lo:
            s = d_end / 2.0
        # first point along the remaining polyline at chord distance s from cur
        a = cur
        while True:
            b = pts[seg + 1]
            if np.hypot(*(b - cur)) >= s:
                # solve |a + u (b - a) - cur| = s for the first u in [0, 1]
                dvec, f = b - a, a - cur
                qa, qb, qc = dvec @ dvec, 2 * f @ dvec, f @ f - s * s
                disc = max(qb * qb - 4 * qa * qc, 0.0)
                u = (-qb + math.sqrt(disc)) / (2 * qa)
                cur = a + min(max(u, 0.0), 1.0) * dvec
                break
            seg += 1
            a = pts[seg]
        out.append(tuple(cur))


def sample_trajectory(
    scene: Scene,
    start: Pose,
    target_id: str,
    rng_seed,
    params: TrajectoryParams = TrajectoryParams(),
    cam: CameraModel = CameraModel(),
) -> list[Pose]:
    """Collision-free path from ``start`` that ends facing the target."""
    if not is_collision_free(scene, start):
        raise ValueError("start pose is in collision")
    if in_viewing_zone(scene, start, cam, target_id, params.goal_radius):
        return [start]
    rng = np.random.default_rng(rng_seed)
    goal = scene.get(target_id).shape.centroid
    x0, y0, x1, y1 = scene.bounds

    nodes = [(start.x, start.y)]
    parent = [-1]

    def finish(i: int, stop) -> list[Pose]:
        chain = []
        while i >= 0:
            chain.append(nodes[i])
            i = parent[i]
        chain.reverse()
        if math.hypot(stop[0] - chain[-1][0], stop[1] - chain[-1][1]) > 1e-9:
            chain.append(stop)
        return _headings(_resample(chain, rng, params.step_lo, params.step_hi), start, goal)

    stop = _approach(scene, nodes[0], goal, params.goal_radius)
    if stop is not None:
        return finish(0, stop)
    arr = np.array(nodes)
    for _ in range(params.rrt_iterations):
        if rng.random() < params.goal_bias:
            sample = goal
        else:
            sample = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        k = int(np.argmin(np.hypot(arr[:, 0] - sample[0], arr[:, 1] - sample[1])))
        nx, ny = nodes[k]
        d = math.hypot(sample[0] - nx, sample[1] - ny)
        if d < 1e-9:
            continue
        s = min(1.0, params.rrt_step / d)
        new = (nx + s * (sample[0] - nx), ny + s * (sample[1] - ny))
        if not free_mask(scene, np.array([new]))[0] or not segment_collision_free(scene, nodes[k], new):
            continue
        nodes.append(new)
        parent.append(k)
        arr = np.vstack([arr, new])
        stop = _approach(scene, new, goal, params.goal_radius)
        if stop is not None:
            return finish(len(nodes) - 1, stop)
    raise PlanningFailed(f"no path to {target_id!r} after {params.rrt_iterations} iterations")


def _headings(points, start: Pose, goal) -> list[Pose]:
    if len(points) == 1:
        return [Pose.make(points[0][0], points[0][1], math.atan2(goal[1] - points[0][1], goal[0] - points[0][0]))]
    out = []
    for i, (x, y) in enumerate(points):
        j = min(i, len(points) - 2)
        hx, hy = points[j + 1][0] - points[j][0], points[j + 1][1] - points[j][1]
        out.append(Pose.make(x, y, math.atan2(hy, hx)))
    return out


def perturb(traj: list[Pose], rng_seed, params: TrajectoryParams, scene: Scene | None = None) -> list[Pose]:
    """Gaussian pose jitter; colliding draws are retried 10 times, then the pose is kept as is."""
    if not traj:
        raise ValueError("empty trajectory")
    if params.perturb_lin_sigma == 0 and params.perturb_ang_sigma == 0:
        return list(traj)
    rng = np.random.default_rng(rng_seed)
    out = []
    for p in traj:
        q = p
        for _ in range(10):
            nx, ny = rng.normal(0.0, params.perturb_lin_sigma, 2)
            nt = rng.normal(0.0, params.perturb_ang_sigma)
            cand = Pose.make(p.x + nx, p.y + ny, p.theta + nt)
            if scene is None or is_collision_free(scene, cand):
                q = cand
                break
        out.append(q)
    return out


# --------------------------------------------------------------------------
# datasets


def sample_free_pose(scene: Scene, rng: np.random.Generator, region=None, max_tries: int = 10000) -> Pose:
    x0, y0, x1, y1 = region or scene.bounds
    for _ in range(max_tries):
        p = Pose.make(rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-math.pi, math.pi))
        if is_collision_free(scene, p):
            return p
    raise PlanningFailed("could not sample a collision-free pose")


def build_dataset(
    scene: Scene,
    n_trajectories: int,
    cam: CameraModel = CameraModel(),
    params: TrajectoryParams = TrajectoryParams(),
    rng_seed: int = 0,
    vocab_ref: str = "",
    start_region: tuple[float, float, float, float] | None = None,
) -> Dataset:
    """Render and label ``n_trajectories`` windows of ``params.n_waypoints`` poses.

    Trajectory ``i`` draws from its own generator seeded by ``(rng_seed, i)``,
    so the output does not depend on generation order.
    """
    targets = scene.targets
    if not targets:
        raise ValueError("scene has no target candidates")
    records: list[DatasetRecord] = []
    for tid in range(n_trajectories):
        rng = np.random.default_rng([rng_seed, tid])
        poses = None
        for _ in range(100):
            start = sample_free_pose(scene, rng, start_region)
            target = targets[int(rng.integers(len(targets)))]
            try:
                path = sample_trajectory(scene, start, target.id, int(rng.integers(2**63)), params, cam)
            except PlanningFailed:
                continue
            if len(path) < params.n_waypoints:
                continue
            i0 = int(rng.integers(len(path) - params.n_waypoints + 1))
            poses = perturb(path[i0 : i0 + params.n_waypoints], int(rng.integers(2**63)), params, scene)
            break
        if poses is None:
            raise PlanningFailed(f"trajectory {tid}: 100 start attempts failed")
        for k, p in enumerate(poses):
            obs = render_scan(scene, p, cam)
            rewards = {t.id: ground_truth_reward(scene, p, cam, t.id) for t in targets}
            records.append(DatasetRecord(obs, p, rewards, tid, k))
    return Dataset(
        scene_ref=scene.digest,
        vocab_ref=vocab_ref,
        records=records,
        targets={t.id: t.query_text for t in targets},
        camera=cam,
        params=params,
        seed=rng_seed,
        start_region=tuple(start_region) if start_region else None,
    )


def save_dataset(ds: Dataset, path: str | Path) -> None:
    lines = [canonical_json(ds.header())]
    lines += [canonical_json(r.to_json()) for r in ds.records]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    with open(path) as f:
        header = json.loads(f.readline())
        records = [DatasetRecord.from_json(json.loads(line)) for line in f if line.strip()]
    region = header.get("start_region")
    return Dataset(
        scene_ref=header["scene_ref"],
        vocab_ref=header["vocab_ref"],
        records=records,
        targets=header.get("targets", {}),
        camera=CameraModel(**header["camera"]) if "camera" in header else CameraModel(),
        params=TrajectoryParams.from_dict(header["params"]),
        seed=header["seed"],
        start_region=tuple(region) if region else None,
    )


# --------------------------------------------------------------------------
# training sequences


@dataclass(frozen=True)
class TrainingSequence:
    observations: list[Observation]  # H + 1
    actions: list  # H actions, actions[k] maps observations[k] to observations[k + 1]
    rewards: list[dict[str, float]]  # reward maps of observations[1:]
    poses: list[Pose]

    @property
    def pairs(self) -> list[tuple[Observation, tuple]]:
        return list(zip(self.observations[:-1], self.actions))


def sample_training_sequence(ds: Dataset, H: int, rng_seed, stride: int = 1) -> TrainingSequence:
    """H consecutive steps (every ``stride``-th record) from one trajectory."""
    span = H * stride + 1
    trajs = [recs for recs in ds.trajectories().values() if len(recs) >= span]
    if H < 1 or not trajs:
        raise InsufficientLength(f"no trajectory has {span} records")
    rng = np.random.default_rng(rng_seed)
    recs = trajs[int(rng.integers(len(trajs)))]
    i0 = int(rng.integers(len(recs) - span + 1))
    chosen = recs[i0 : i0 + span : stride]
    poses = [r.pose for r in chosen]
    return TrainingSequence(
        observations=[r.observation for r in chosen],
        actions=[relative_action(poses[k], poses[k + 1]) for k in range(H)],
        rewards=[r.rewards for r in chosen[1:]],
        poses=poses,
    )
