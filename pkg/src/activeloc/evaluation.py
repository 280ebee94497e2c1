"""Trial batteries: difficulty tiers, optimal-distance estimates, metrics, reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib.resources import files
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .oracle import (
    SuccessThresholds,
    detection_confidence,
    success_at,
    target_params,
    target_thresholds,
    visibility,
)
from .planners import PlannerConfig, execute_episode, make_planner
from .scene import (
    CameraModel,
    Pose,
    Scene,
    canonical_json,
    free_mask,
    is_collision_free,
    load_scene,
    scene_from_json,
    scene_to_json,
)
from .world_model import Vocabulary, WorldModel

log = logging.getLogger(__name__)

TIERS = ("easy", "medium", "hard")


class Unreachable(RuntimeError):
    pass


@dataclass(frozen=True)
class DifficultyThresholds:
    easy_conf: float = 0.5
    easy_distance: float = 1.0
    easy_occlusion: float = 0.25
    hard_conf: float = 0.1
    hard_occlusion: float = 0.75
    hard_distance: float = 2.5

    @classmethod
    def from_dict(cls, d: dict | None) -> "DifficultyThresholds":
        return cls(**(d or {}))


def classify_initial_difficulty(
    scene: Scene, start: Pose, cam: CameraModel, target_id: str, th: DifficultyThresholds = DifficultyThresholds()
) -> str:
    rep = visibility(scene, start, cam, target_id)
    conf = detection_confidence(rep, cam, target_params(scene, target_id))
    occlusion = 1.0 - rep.visible_fraction
    if conf >= th.easy_conf and rep.distance <= th.easy_distance and occlusion <= th.easy_occlusion:
        return "easy"
    if conf < th.hard_conf or occlusion >= th.hard_occlusion or rep.distance > th.hard_distance:
        return "hard"
    return "medium"


# --------------------------------------------------------------------------
# optimal distance


@dataclass(frozen=True)
class _Grid:
    origin: tuple[float, float]
    res: float
    shape: tuple[int, int]
    free: np.ndarray
    dist: np.ndarray  # distance to the nearest success cell, inf if cut off


def _success_cells(scene: Scene, centers: np.ndarray, free: np.ndarray, cam: CameraModel, target_id: str, th: SuccessThresholds) -> np.ndarray:
    cx, cy = scene.get(target_id).shape.centroid
    d = np.hypot(centers[:, 0] - cx, centers[:, 1] - cy)
    params = target_params(scene, target_id)
    # confidence decays with distance, so cells beyond this radius cannot succeed
    reach = params.d_near + params.d_scale * math.log(1.0 / th.conf_min) if th.conf_min > 0 else np.inf
    out = np.zeros(len(centers), dtype=bool)
    for i in np.flatnonzero(free & (d <= reach + 1e-9)):
        x, y = centers[i]
        p = Pose.make(x, y, math.atan2(cy - y, cx - x))
        out[i] = success_at(scene, p, cam, target_id, th)
    return out


@lru_cache(maxsize=64)
def _distance_grid(scene_json: str, target_id: str, cam: CameraModel, th: SuccessThresholds, res: float) -> _Grid:
    scene = scene_from_json(json.loads(scene_json))
    x0, y0, x1, y1 = scene.bounds
    nx, ny = int(round((x1 - x0) / res)), int(round((y1 - y0) / res))
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    centers = np.stack([x0 + (ix.ravel() + 0.5) * res, y0 + (iy.ravel() + 0.5) * res], axis=1)
    free = free_mask(scene, centers)
    goal = _success_cells(scene, centers, free, cam, target_id, th)
    fg = free.reshape(nx, ny)
    rows, cols, w = [], [], []
    for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
        xs = slice(0, nx - dx)
        ys = slice(max(0, -dy), ny - max(0, dy))
        xt = slice(dx, nx)
        yt = slice(max(0, dy), ny - max(0, -dy))
        ok = fg[xs, ys] & fg[xt, yt]
        if dx and dy:
            # no corner cutting past an obstacle
            ok &= fg[xt, ys] & fg[xs, yt]
        src = (ix[xs, ys] * ny + iy[xs, ys])[ok]
        dst = (ix[xt, yt] * ny + iy[xt, yt])[ok]
        step = res * math.hypot(dx, dy)
        rows += [src, dst]
        cols += [dst, src]
        w += [np.full(src.size, step)] * 2
    n = nx * ny
    graph = coo_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    sources = np.flatnonzero(goal)
    if sources.size:
        dist = dijkstra(graph, directed=False, indices=sources, min_only=True)
    else:
        dist = np.full(n, np.inf)
    return _Grid((x0, y0), res, (nx, ny), fg, dist.reshape(nx, ny))


def estimate_optimal_distance(
    scene: Scene,
    start: Pose,
    target_id: str,
    cam: CameraModel = CameraModel(),
    thresholds: SuccessThresholds = SuccessThresholds(),
    res: float = 0.05,
) -> float:
    """Shortest collision-free path length to a pose satisfying the success test.

    Path lengths come from an 8-connected grid search; the start connects to
    the nearest free cell of its own 3x3 neighbourhood.
    """
    th = target_thresholds(scene, target_id, thresholds)
    if success_at(scene, start, cam, target_id, th):
        return 0.0
    grid = _distance_grid(canonical_json(scene_to_json(scene)), target_id, cam, th, res)
    i = int((start.x - grid.origin[0]) / res)
    j = int((start.y - grid.origin[1]) / res)
    best = math.inf
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            a, b = i + di, j + dj
            if 0 <= a < grid.shape[0] and 0 <= b < grid.shape[1] and grid.free[a, b]:
                cx = grid.origin[0] + (a + 0.5) * res
                cy = grid.origin[1] + (b + 0.5) * res
                best = min(best, math.hypot(start.x - cx, start.y - cy) + grid.dist[a, b])
    if not math.isfinite(best):
        raise Unreachable(f"no success pose reachable for {target_id}")
    return best


def efficiency_score(success: bool, d: float, d_star: float, floor: float = 0.05) -> float:
    """Success indicator times exp(-d / d*); d* is floored at one grid cell."""
    if not success:
        return 0.0
    if d_star == 0.0:
        return 1.0 if d == 0.0 else math.exp(-d / floor)
    return math.exp(-d / max(d_star, floor))


# --------------------------------------------------------------------------
# tasks and trials


@dataclass(frozen=True)
class TaskSpec:
    scene: str
    target_id: str
    query: str
    start: Pose
    max_steps: int
    tier: str
    seed: int
    thresholds: SuccessThresholds = SuccessThresholds()

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}")


@dataclass
class TrialResult:
    model: str
    scene: str
    planner: str
    tier: str
    seed: int
    target: str
    query: str
    success: bool
    distance: float
    d_star: float
    efficiency: float
    steps: int
    error: str = ""


def _proposal_pose(scene: Scene, target_id: str, tier: str, rng: np.random.Generator, cam: CameraModel, region) -> Pose:
    cx, cy = scene.get(target_id).shape.centroid
    if region is not None:
        x0, y0, x1, y1 = region
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        bearing = math.atan2(cy - y, cx - x)
        spread = cam.fov / 2 if tier == "easy" else math.pi
        return Pose.make(x, y, bearing + rng.uniform(-spread, spread))
    if tier == "hard":
        x0, y0, x1, y1 = scene.bounds
        return Pose.make(rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-math.pi, math.pi))
    r_hi, spread = (1.0, cam.fov / 2) if tier == "easy" else (2.5, math.pi / 2)
    r = rng.uniform(0.2, r_hi)
    phi = rng.uniform(-math.pi, math.pi)
    x, y = cx + r * math.cos(phi), cy + r * math.sin(phi)
    return Pose.make(x, y, phi + math.pi + rng.uniform(-spread, spread))


def sample_task(
    scene: Scene,
    scene_name: str,
    tier: str,
    seed: int,
    cam: CameraModel = CameraModel(),
    max_steps: int = 40,
    thresholds: SuccessThresholds = SuccessThresholds(),
    difficulty: DifficultyThresholds = DifficultyThresholds(),
    region=None,
    max_tries: int = 20000,
    target_id: str | None = None,
) -> TaskSpec:
    """Rejection-sample a collision-free, not-yet-successful start in ``tier``.

    The target is drawn uniformly from the scene's targets unless given.
    """
    rng = np.random.default_rng(seed)
    targets = scene.targets
    target = targets[int(rng.integers(len(targets)))]
    if target_id is not None:
        target = scene.get(target_id)
    for _ in range(max_tries):
        p = _proposal_pose(scene, target.id, tier, rng, cam, region)
        if not is_collision_free(scene, p):
            continue
        if classify_initial_difficulty(scene, p, cam, target.id, difficulty) != tier:
            continue
        if success_at(scene, p, cam, target.id, thresholds):
            continue
        return TaskSpec(scene_name, target.id, target.query_text, p, max_steps, tier, int(seed), thresholds)
    raise Unreachable(f"could not sample a {tier} start in {scene_name}")


def run_trial(task: TaskSpec, scene: Scene, model, planner, planner_seed: int, cam: CameraModel, vocab: Vocabulary, model_name: str = "full") -> TrialResult:
    base = dict(model=model_name, scene=task.scene, planner=planner.name, tier=task.tier, seed=planner_seed, target=task.target_id, query=task.query)
    try:
        d_star = estimate_optimal_distance(scene, task.start, task.target_id, cam, task.thresholds)
        trace = execute_episode(
            scene, cam, model, planner, task.query, task.start, task.max_steps, task.thresholds,
            target_id=task.target_id, seed=planner_seed, vocab=vocab,
        )
    except Exception as exc:  # recorded, never aborts the battery
        log.warning("trial failed: %s", exc)
        return TrialResult(**base, success=False, distance=0.0, d_star=0.0, efficiency=0.0, steps=0, error=f"{type(exc).__name__}: {exc}")
    eff = efficiency_score(trace.success, trace.distance, d_star)
    return TrialResult(**base, success=trace.success, distance=trace.distance, d_star=d_star, efficiency=eff, steps=trace.steps)


# --------------------------------------------------------------------------
# batteries


@dataclass
class EvalConfig:
    scenes: list[str]
    planners: list[str]
    n_trials: int = 50
    master_seed: int = 0
    tiers: list[str] = field(default_factory=lambda: list(TIERS))
    thresholds: dict = field(default_factory=dict)
    difficulty: dict = field(default_factory=dict)
    ckpt: str | None = None
    narrow_ckpt: str | None = None
    max_steps: int = 40
    planner_config: dict = field(default_factory=dict)
    start_region: list | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "EvalConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def resolve_scene(ref: str) -> tuple[str, Scene]:
    """A scene file path, or the name of a packaged scene."""
    p = Path(ref)
    if p.suffix == ".json" and p.exists():
        return p.stem, load_scene(p)
    packaged = files("activeloc") / "data" / "scenes" / f"{ref}.json"
    return ref, load_scene(packaged)


def trial_seed(master: int, *indices: int) -> int:
    return int(np.random.SeedSequence([master, *indices]).generate_state(1)[0])


def run_trials(config: EvalConfig, models: dict | None = None, vocab: Vocabulary | None = None, cam: CameraModel = CameraModel()) -> tuple[list[TrialResult], list[dict]]:
    """Run every (model, scene, planner, tier, trial) cell.

    Tasks depend only on (master seed, scene, tier, trial) and planner seeds
    only on the task, so every planner faces the same starts.
    """
    vocab = vocab or Vocabulary.load()
    if models is None:
        models = {}
        if config.ckpt:
            models["full"] = WorldModel.load(config.ckpt)
        if config.narrow_ckpt:
            models["narrow"] = WorldModel.load(config.narrow_ckpt)
    if not models:
        raise ValueError("no model checkpoint given")
    th = SuccessThresholds().override(config.thresholds)
    diff = DifficultyThresholds.from_dict(config.difficulty)
    pcfg = PlannerConfig.from_dict(config.planner_config)
    rows: list[TrialResult] = []
    for si, ref in enumerate(config.scenes):
        name, scene = resolve_scene(ref)
        for ti, tier in enumerate(config.tiers):
            tasks = []
            for k in range(config.n_trials):
                s = trial_seed(config.master_seed, si, TIERS.index(tier), k)
                try:
                    tasks.append(sample_task(scene, name, tier, s, cam, config.max_steps, th, diff, config.start_region))
                except Unreachable as exc:
                    tasks.append(exc)
            for model_name, model in models.items():
                for planner_name in config.planners:
                    planner = make_planner(planner_name, pcfg, vocab, cam)
                    for k, task in enumerate(tasks):
                        ps = trial_seed(config.master_seed, si, TIERS.index(tier), k, 1)
                        if isinstance(task, Exception):
                            rows.append(TrialResult(model_name, name, planner_name, tier, ps, "", "", False, 0.0, 0.0, 0.0, 0, f"Unreachable: {task}"))
                            continue
                        rows.append(run_trial(task, scene, model, planner, ps, cam, vocab, model_name))
    return rows, aggregate(rows)


def aggregate(rows: list[TrialResult], keys=("model", "scene", "planner", "tier")) -> list[dict]:
    cells: dict[tuple, list[TrialResult]] = {}
    for r in rows:
        cells.setdefault(tuple(getattr(r, k) for k in keys), []).append(r)
    out = []
    for key, rs in cells.items():
        n = len(rs)
        out.append(
            {
                **dict(zip(keys, key)),
                "n": n,
                "success_rate": sum(r.success for r in rs) / n,
                "mean_efficiency": sum(r.efficiency for r in rs) / n,
                "errors": sum(bool(r.error) for r in rs),
            }
        )
    return out


CSV_FIELDS = [f for f in TrialResult.__dataclass_fields__]


def results_csv(rows: list[TrialResult]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = asdict(r)
        d = {k: (repr(v) if isinstance(v, float) else v) for k, v in d.items()}
        w.writerow(d)
    return buf.getvalue()


def _agg_csv(agg: list[dict]) -> str:
    if not agg:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(agg[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(agg)
    return buf.getvalue()


def write_results(out_dir: str | Path, rows: list[TrialResult], agg: list[dict], plot_data: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials.csv").write_text(results_csv(rows))
    (out / "aggregate.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    if plot_data:
        # planner x tier (difficulty figure) and planner x scene (environment figure)
        (out / "by_tier.csv").write_text(_agg_csv(aggregate(rows, ("model", "planner", "tier"))))
        (out / "by_scene.csv").write_text(_agg_csv(aggregate(rows, ("model", "planner", "scene"))))
