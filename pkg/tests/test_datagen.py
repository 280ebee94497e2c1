import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activeloc.datagen import (
    InsufficientLength,
    PlanningFailed,
    TrajectoryParams,
    build_dataset,
    in_viewing_zone,
    load_dataset,
    perturb,
    sample_training_sequence,
    sample_trajectory,
    save_dataset,
)
from activeloc.evaluation import resolve_scene
from activeloc.scene import CameraModel, Disc, Polygon, Pose, Scene, SceneObject, compose, is_collision_free, relative_action

BOUNDS = (0.0, 0.0, 4.0, 4.0)
CAM = CameraModel()


def lone_target():
    return Scene(BOUNDS, (SceneObject("mug", 3, Disc((3.5, 2.0), 0.15), "target"),))


@pytest.fixture(scope="module")
def clutter():
    return resolve_scene("desk_clutter")[1]


@pytest.fixture(scope="module")
def small_ds(clutter):
    return build_dataset(clutter, 6, rng_seed=5)


def test_straight_path_in_empty_scene():
    params = TrajectoryParams(step_lo=0.01, step_hi=0.05, goal_radius=0.6)
    start = Pose(0.9, 2.0, math.pi / 2)  # facing away, 2 m from the viewing zone
    path = sample_trajectory(lone_target(), start, "mug", 0, params)
    assert len(path) >= 40
    d = [math.hypot(3.5 - p.x, 2.0 - p.y) for p in path]
    assert all(b < a for a, b in zip(d, d[1:]))
    steps = [math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(path, path[1:])]
    assert min(steps) >= 0.01 - 1e-12 and max(steps) <= 0.05 + 1e-12
    assert in_viewing_zone(lone_target(), path[-1], CAM, "mug", params.goal_radius)
    # headings follow the direction of travel
    assert all(abs(math.remainder(p.theta, 2 * math.pi)) < 1e-9 for p in path[:-1])


def test_start_inside_viewing_zone():
    start = Pose(3.0, 2.0, 0.0)
    assert sample_trajectory(lone_target(), start, "mug", 0) == [start]


def test_enclosed_start_fails():
    walls = [
        SceneObject("a", 0, Polygon.rectangle(0.5, 0.5, 1.5, 0.6), "wall"),
        SceneObject("b", 0, Polygon.rectangle(0.5, 1.4, 1.5, 1.5), "wall"),
        SceneObject("c", 0, Polygon.rectangle(0.5, 0.5, 0.6, 1.5), "wall"),
        SceneObject("d", 0, Polygon.rectangle(1.4, 0.5, 1.5, 1.5), "wall"),
    ]
    scene = Scene(BOUNDS, tuple(walls) + lone_target().objects)
    with pytest.raises(PlanningFailed):
        sample_trajectory(scene, Pose(1.0, 1.0, 0.0), "mug", 0, TrajectoryParams(rrt_iterations=200))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_rrt_paths_are_feasible(seed):
    scene = resolve_scene("desk_clutter")[1]
    rng = np.random.default_rng(seed)
    params = TrajectoryParams()
    while True:
        start = Pose.make(*rng.uniform(0.2, 3.8, 2), rng.uniform(-math.pi, math.pi))
        if is_collision_free(scene, start):
            break
    target = scene.targets[seed % len(scene.targets)].id
    try:
        path = sample_trajectory(scene, start, target, seed, params)
    except PlanningFailed:
        return
    assert all(is_collision_free(scene, p) for p in path)
    steps = [math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(path, path[1:])]
    assert all(params.step_lo - 1e-9 <= s <= params.step_hi + 1e-9 for s in steps)
    assert in_viewing_zone(scene, path[-1], CAM, target, params.goal_radius)


def test_perturb_zero_sigma_is_identity():
    traj = [Pose(1, 1, 0.1), Pose(1.1, 1, 0.2)]
    assert perturb(traj, 0, TrajectoryParams(perturb_lin_sigma=0, perturb_ang_sigma=0)) == traj


def test_perturb_mean_displacement():
    sigma = 0.02
    traj = [Pose(2.0, 2.0, 0.0)] * 10_000
    out = perturb(traj, 1, TrajectoryParams(perturb_lin_sigma=sigma, perturb_ang_sigma=0.1))
    disp = np.array([math.hypot(p.x - 2.0, p.y - 2.0) for p in out])
    # Rayleigh mean
    assert disp.mean() == pytest.approx(sigma * math.sqrt(math.pi / 2), rel=0.05)


def test_perturb_never_collides():
    scene = Scene(BOUNDS, (SceneObject("box", 2, Polygon.rectangle(2.0, 1.0, 2.5, 3.0)),))
    near = Pose(2.0 - scene.free_radius - 0.005, 2.0, 0.0)
    out = perturb([near] * 500, 4, TrajectoryParams(perturb_lin_sigma=0.5), scene)
    assert all(is_collision_free(scene, p) for p in out)
    assert any(p != near for p in out)


def test_dataset_size_matches_full_scale():
    scene = resolve_scene("desk_open")[1]
    ds = build_dataset(scene, 500, rng_seed=3)
    assert len(ds.records) == 10_000
    assert len(ds.trajectories()) == 500


def test_empty_dataset(tmp_path):
    scene = lone_target()
    ds = build_dataset(scene, 0, rng_seed=0, vocab_ref="v")
    assert ds.records == [] and ds.scene_ref == scene.digest and ds.vocab_ref == "v"
    save_dataset(ds, tmp_path / "d.jsonl")
    assert load_dataset(tmp_path / "d.jsonl").records == []


def test_dataset_is_deterministic(tmp_path, clutter):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(build_dataset(clutter, 3, rng_seed=8), a)
    save_dataset(build_dataset(clutter, 3, rng_seed=8), b)
    assert a.read_bytes() == b.read_bytes()
    save_dataset(build_dataset(clutter, 3, rng_seed=9), b)
    assert a.read_bytes() != b.read_bytes()


def test_dataset_round_trip(tmp_path, small_ds):
    path = tmp_path / "d.jsonl"
    save_dataset(small_ds, path)
    again = load_dataset(path)
    assert again.header() == small_ds.header()
    assert [r.to_json() for r in again.records] == [r.to_json() for r in small_ds.records]
    first = path.read_text().splitlines()[0]
    assert '"scene_ref"' in first and '"vocab_ref"' in first


def test_records_are_valid(small_ds, clutter):
    target_ids = {t.id for t in clutter.targets}
    for r in small_ds.records:
        assert is_collision_free(clutter, r.pose)
        assert set(r.rewards) == target_ids
        assert all(0.0 <= v <= 1.0 for v in r.rewards.values())
        assert -math.pi < r.pose.theta <= math.pi
    assert small_ds.scene_ref == clutter.digest


def test_adjacent_records_are_consistent_with_action_labels(small_ds):
    for recs in small_ds.trajectories().values():
        for a, b in zip(recs, recs[1:]):
            q = compose(a.pose, relative_action(a.pose, b.pose))
            assert max(abs(q.x - b.pose.x), abs(q.y - b.pose.y), abs(math.remainder(q.theta - b.pose.theta, 2 * math.pi))) <= 1e-10


def test_start_region_restricts_starts(clutter, monkeypatch):
    from activeloc import datagen

    starts = []
    real = datagen.sample_trajectory

    def spy(scene, start, *args, **kw):
        starts.append(start)
        return real(scene, start, *args, **kw)

    monkeypatch.setattr(datagen, "sample_trajectory", spy)
    region = (0.2, 0.2, 1.2, 3.8)
    ds = build_dataset(clutter, 4, rng_seed=2, start_region=region)
    assert ds.start_region == region and starts
    assert all(0.2 <= p.x <= 1.2 and 0.2 <= p.y <= 3.8 for p in starts)


def test_training_sequence_h1(small_ds):
    seq = sample_training_sequence(small_ds, 1, 0)
    assert len(seq.pairs) == 1
    assert seq.actions[0] == relative_action(seq.poses[0], seq.poses[1])
    assert len(seq.rewards) == 1


@pytest.mark.parametrize("stride", [1, 3])
def test_training_sequence_h4_chains_to_final_pose(small_ds, stride):
    for seed in range(20):
        seq = sample_training_sequence(small_ds, 4, seed, stride)
        assert len(seq.pairs) == 4 and len(seq.rewards) == 4
        p = seq.poses[0]
        for a in seq.actions:
            p = compose(p, a)
        q = seq.poses[-1]
        assert max(abs(p.x - q.x), abs(p.y - q.y), abs(math.remainder(p.theta - q.theta, 2 * math.pi))) <= 1e-10


def test_training_sequence_too_long(small_ds):
    with pytest.raises(InsufficientLength):
        sample_training_sequence(small_ds, 25, 0)


def test_params_validation():
    with pytest.raises(ValueError):
        TrajectoryParams(step_lo=0.1, step_hi=0.05)
    with pytest.raises(ValueError):
        TrajectoryParams(perturb_lin_sigma=-1)
    with pytest.raises(ValueError):
        TrajectoryParams(n_waypoints=1)
