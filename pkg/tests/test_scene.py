import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activeloc.scene import (
    SENTINEL_NONE,
    CameraModel,
    Disc,
    Polygon,
    Pose,
    PoseOutOfBounds,
    Scene,
    SceneError,
    SceneObject,
    compose,
    concat_actions,
    is_collision_free,
    load_scene,
    normalize_angle,
    relative_action,
    render_scan,
    save_scene,
    scene_from_json,
    scene_to_json,
)

from helpers import brute_ray

BOUNDS = (0.0, 0.0, 4.0, 4.0)
coord = st.floats(0.0, 4.0, allow_nan=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)
poses = st.builds(Pose.make, coord, coord, angle)
small = st.floats(-0.5, 0.5, allow_nan=False)
actions = st.tuples(small, small, st.floats(-1.0, 1.0, allow_nan=False))


def empty_scene():
    return Scene(BOUNDS, ())


def rot(t):
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def test_compose_identity_heading():
    assert compose(Pose(0, 0, 0), (1, 0, 0)) == Pose(1, 0, 0)


def test_compose_quarter_turn():
    p = compose(Pose(0, 0, math.pi / 2), (1, 0, 0))
    assert p == pytest.approx((0, 1, math.pi / 2), abs=1e-15)


def test_compose_matches_rotation_matrices():
    p = Pose(1, 1, math.pi / 4)
    # homogeneous transform product
    T_p = np.eye(3)
    T_p[:2, :2], T_p[:2, 2] = rot(p.theta), (p.x, p.y)
    T_a = np.eye(3)
    T_a[:2, :2], T_a[:2, 2] = rot(math.pi / 8), (0.1, 0)
    T = T_p @ T_a
    q = compose(p, (0.1, 0, math.pi / 8))
    assert q.x == pytest.approx(T[0, 2], abs=1e-14)
    assert q.y == pytest.approx(T[1, 2], abs=1e-14)
    assert q.theta == pytest.approx(math.atan2(T[1, 0], T[0, 0]), abs=1e-14)


def test_relative_action_examples():
    assert relative_action(Pose(0, 0, 0), Pose(1, 0, 0)) == (1, 0, 0)
    a = relative_action(Pose(0, 0, math.pi / 2), Pose(0, 1, math.pi / 2))
    assert a == pytest.approx((1, 0, 0), abs=1e-15)
    p = Pose.make(0.3, -2, 2.5)
    assert relative_action(p, p) == (0, 0, 0)


def test_theta_wraps_to_half_open_interval():
    assert normalize_angle(-math.pi) == math.pi
    assert normalize_angle(3 * math.pi) == math.pi
    assert compose(Pose(0, 0, math.pi), (0, 0, math.pi / 2)).theta == pytest.approx(-math.pi / 2)


@settings(max_examples=300)
@given(poses, poses)
def test_relative_action_inverts_compose(p, q):
    r = compose(p, relative_action(p, q))
    assert abs(r.x - q.x) <= 1e-12 and abs(r.y - q.y) <= 1e-12
    assert abs(math.remainder(r.theta - q.theta, 2 * math.pi)) <= 1e-12
    assert -math.pi < r.theta <= math.pi


def test_compose_associative_on_random_triples():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        p = Pose.make(*rng.uniform(0, 4, 2), rng.uniform(-math.pi, math.pi))
        a, b = rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.5, 0.5, 3)
        lhs = compose(compose(p, a), b)
        rhs = compose(p, concat_actions(a, b))
        worst = max(worst, abs(lhs.x - rhs.x), abs(lhs.y - rhs.y), abs(math.remainder(lhs.theta - rhs.theta, 2 * math.pi)))
    assert worst <= 1e-10


@given(poses, actions)
def test_compose_keeps_theta_normalized(p, a):
    assert -math.pi < compose(p, a).theta <= math.pi


def test_empty_scene_scan_misses_everything():
    cam = CameraModel()
    obs = render_scan(empty_scene(), Pose(2, 2, 0.3), cam)
    assert np.all(obs.depths == cam.max_range)
    assert np.all(obs.classes == SENTINEL_NONE)


def test_perpendicular_wall_center_ray():
    wall = SceneObject("w", 0, Polygon.rectangle(3.0, 0.5, 3.05, 3.5), "wall")
    scene = Scene(BOUNDS, (wall,))
    cam = CameraModel(n_rays=33)
    obs = render_scan(scene, Pose(1.0, 2.0, 0.0), cam)
    assert obs.depths[16] == pytest.approx(2.0, abs=1e-9)
    assert obs.classes[16] == 0


def test_ray_fan_includes_both_edges():
    cam = CameraModel(fov=1.0, n_rays=11)
    b = cam.bearings(0.2)
    assert b[0] == pytest.approx(0.2 - 0.5) and b[-1] == pytest.approx(0.2 + 0.5)


def test_out_of_bounds_pose_rejected():
    with pytest.raises(PoseOutOfBounds):
        render_scan(empty_scene(), Pose(5, 1, 0), CameraModel())


def occluded_scene():
    target = SceneObject("mug", 3, Disc((3.0, 2.0), 0.25), "target")
    occ = SceneObject("box", 2, Polygon.rectangle(2.0, 2.0, 2.2, 2.6), "occluder")
    return Scene(BOUNDS, (target, occ))


def test_partially_occluded_disc_matches_dense_brute_force():
    scene = occluded_scene()
    cam = CameraModel(fov=math.pi / 3, n_rays=16)
    p = Pose(0.8, 2.05, 0.0)
    obs = render_scan(scene, p, cam)
    dense = CameraModel(fov=cam.fov, n_rays=10 * (cam.n_rays - 1) + 1)
    bearings = dense.bearings(p.theta)
    hits = []
    for i in range(0, len(bearings), 10):
        d, j = brute_ray(scene, p.x, p.y, bearings[i], cam.max_range)
        hits.append(scene.objects[j].class_id if j >= 0 else SENTINEL_NONE)
        if j >= 0:
            assert obs.depths[i // 10] == pytest.approx(d, abs=1e-5)
    np.testing.assert_array_equal(obs.classes, hits)
    # the scan really is split between target and occluder
    assert {2, 3} <= set(hits)


def test_equidistant_hits_resolve_to_lowest_index():
    a = SceneObject("a", 1, Polygon.rectangle(2.0, 1.0, 2.5, 2.0))
    b = SceneObject("b", 2, Polygon.rectangle(2.0, 2.0, 2.5, 3.0))
    obs = render_scan(Scene(BOUNDS, (a, b)), Pose(1.0, 2.0, 0.0), CameraModel(n_rays=9))
    assert obs.classes[4] == 1


@settings(max_examples=100, deadline=None)
@given(poses)
def test_scan_deterministic_and_consistent(p):
    scene = occluded_scene()
    cam = CameraModel()
    a, b = render_scan(scene, p, cam), render_scan(scene, p, cam)
    assert a.depths.tobytes() == b.depths.tobytes()
    assert a.classes.tobytes() == b.classes.tobytes()
    assert np.array_equal(a.depths == cam.max_range, a.classes == SENTINEL_NONE)
    assert np.all((a.depths > 0) & (a.depths <= cam.max_range))


@settings(max_examples=100, deadline=None)
@given(poses, st.integers(0, 1))
def test_removing_object_never_shortens_depths(p, k):
    scene = occluded_scene()
    cam = CameraModel()
    full = render_scan(scene, p, cam)
    fewer = render_scan(scene.without(scene.objects[k].id), p, cam)
    assert np.all(fewer.depths >= full.depths)


def test_collision_checks():
    scene = occluded_scene()
    assert is_collision_free(empty_scene(), Pose(2, 2, 0))
    assert not is_collision_free(scene, Pose(2.1, 2.3, 0))
    assert not is_collision_free(scene, Pose(3.0, 2.0, 0))
    r = scene.free_radius
    assert is_collision_free(scene, Pose(3.0 + 0.25 + r + 1e-3, 2.0, 0))
    assert not is_collision_free(scene, Pose(3.0 + 0.25 + r - 1e-3, 2.0, 0))


def test_scene_validation():
    with pytest.raises(SceneError):
        Disc((0, 0), 0.0)
    with pytest.raises(SceneError):
        Polygon(((0, 0), (1, 1), (2, 2)))
    with pytest.raises(SceneError):
        Scene(BOUNDS, (SceneObject("a", 1, Disc((1, 1), 0.1)), SceneObject("a", 1, Disc((2, 2), 0.1))))
    with pytest.raises(SceneError):
        Scene(BOUNDS, (SceneObject("a", 1, Disc((3.95, 1), 0.1)),))


def test_polygon_orientation_normalized():
    cw = Polygon(((0, 0), (0, 1), (1, 1), (1, 0)))
    assert cw.distance(0.5, 0.5) == pytest.approx(-0.5)
    assert cw.distance(2.0, 0.5) == pytest.approx(1.0)


def test_scene_json_round_trip(tmp_path):
    scene = occluded_scene()
    path = tmp_path / "s.json"
    save_scene(scene, path)
    again = load_scene(path)
    assert scene_to_json(again) == scene_to_json(scene)
    assert again.digest == scene.digest
    assert scene_from_json(scene_to_json(scene)).objects == scene.objects
