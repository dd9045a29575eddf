import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import room, room_dict
from navstack.messages import Pose2D, Twist, ray_offsets
from navstack.sim_world import (CATEGORIES, InvalidPose, NoiseModel, RobotState, WorldError,
                                apply_depth_noise, check_collision, distance_to_object, load_world,
                                raycast, render_depth, render_semantic, step, world_from_dict)


# -- loading -------------------------------------------------------------------


def test_bundled_apartment(apartment):
    interior = apartment.width * apartment.height
    assert 70 < interior < 85
    assert set(apartment.categories) == set(CATEGORIES)
    assert len(apartment.starts) == 15
    for s in apartment.starts:
        assert not check_collision(apartment, s, apartment.robot_radius)
    # closed world
    occ = apartment.occupied
    assert occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()


def test_object_in_wall_is_named(tmp_path):
    d = room_dict(4, 4, objects=[("chair", 2.0, 2.0, 0.2), ("sofa", 0.02, 2.0, 0.2)])
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    with pytest.raises(WorldError, match="sofa"):
        load_world(p)


def test_minimal_room_loads():
    w = room(10, 10, objects=[("chair", 5.0, 5.0, 0.25)], starts=[(2.0, 2.0, 0.0)])
    assert w.categories == ("chair",) or list(w.categories) == ["chair"]


def test_start_without_clearance_rejected():
    with pytest.raises(WorldError, match="clearance"):
        room(4, 4, starts=[(0.1, 2.0, 0.0)])


def test_open_boundary_rejected():
    d = room_dict(2, 2)
    d["grid"][3] = "." + d["grid"][3][1:]
    with pytest.raises(WorldError, match="boundary"):
        world_from_dict(d)


def test_missing_start_rejected():
    d = room_dict(2, 2)
    d["starts"] = []
    with pytest.raises(WorldError):
        world_from_dict(d)


def test_unknown_category_rejected():
    with pytest.raises(WorldError):
        room(4, 4, objects=[("spaceship", 2.0, 2.0, 0.2)])


def test_roundtrip_to_dict():
    w = room(3, 2, objects=[("plant", 1.5, 1.0, 0.2)])
    w2 = world_from_dict(w.to_dict())
    assert np.array_equal(w.occupied, w2.occupied)
    assert w2.objects == w.objects


# -- kinematics ----------------------------------------------------------------


def test_step_straight():
    s = step(RobotState(Pose2D(0, 0, 0)), Twist(0.3, 0.0), 0.1)
    assert s.pose.x == pytest.approx(0.03, abs=1e-12)
    assert s.pose.y == 0.0 and s.pose.heading == 0.0


def test_step_pure_rotation():
    s = step(RobotState(Pose2D(1, 2, 0)), Twist(0.0, 0.5), 1.0)
    assert s.pose.heading == pytest.approx(28.64788975654116, abs=1e-9)
    assert (s.pose.x, s.pose.y) == (1, 2)


def _euler_midpoint(v, w, dt, n):
    # substep integrator with the heading taken at each substep midpoint
    x = y = th = 0.0
    h = dt / n
    for _ in range(n):
        tm = th + 0.5 * w * h
        x += v * math.cos(tm) * h
        y += v * math.sin(tm) * h
        th += w * h
    return x, y, th


def test_step_arc_matches_substep_integration():
    s = step(RobotState(Pose2D(0, 0, 0)), Twist(0.3, 0.3), 1.0)
    ex, ey, eth = _euler_midpoint(0.3, 0.3, 1.0, 1000)
    assert abs(s.pose.x - ex) < 1e-6 and abs(s.pose.y - ey) < 1e-6
    assert math.radians(s.pose.heading) == pytest.approx(eth, abs=1e-12)
    # closed form: R = v / w = 1, swept angle 0.3 rad
    assert s.pose.x == pytest.approx(0.29552020666133955, abs=1e-12)
    assert s.pose.y == pytest.approx(0.044663510874399815, abs=1e-12)


@given(x=st.floats(-5, 5), y=st.floats(-5, 5), h=st.floats(0, 359.99), v=st.floats(-0.5, 0.5),
       dt=st.floats(0.001, 2.0))
def test_straight_step_is_reversible(x, y, h, v, dt):
    s0 = RobotState(Pose2D(x, y, h))
    s2 = step(step(s0, Twist(v, 0.0), dt), Twist(-v, 0.0), dt)
    assert math.hypot(s2.pose.x - x, s2.pose.y - y) < 1e-9


def test_distance_equals_speed_integral():
    rng = np.random.default_rng(3)
    s = RobotState(Pose2D(0, 0, 0))
    total = 0.0
    cmds = [(rng.uniform(-0.3, 0.3), rng.uniform(-0.5, 0.5), rng.uniform(0.01, 0.1)) for _ in range(200)]
    for v, w, dt in cmds:
        # straight-line length of an arc chord is shorter; use pure translation and rotation steps
        s = step(s, Twist(v, 0.0), dt)
        total += abs(v) * dt
        s = step(s, Twist(0.0, w), dt)
    expected = sum(abs(v) * dt for v, _, dt in cmds)
    assert total == pytest.approx(expected, abs=1e-12)


def test_step_deterministic_with_seed():
    n = NoiseModel(actuation_scale_sigma=0.05)
    a = step(RobotState(Pose2D(0, 0)), Twist(0.2, 0.1), 0.5, n, rng=np.random.default_rng(1))
    b = step(RobotState(Pose2D(0, 0)), Twist(0.2, 0.1), 0.5, n, rng=np.random.default_rng(1))
    assert a == b


def test_step_stops_at_contact():
    w = room(2, 2)
    s = step(RobotState(Pose2D(1.0, 1.0, 0), radius=0.18), Twist(0.3, 0.0), 10.0, world=w)
    assert s.collision
    assert not check_collision(w, s.pose, 0.18)
    # the wall's inner face is at x = 2.05
    assert s.pose.x == pytest.approx(2.05 - 0.18, abs=0.005)


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        step(RobotState(Pose2D(0, 0)), Twist(), 0.0)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(odom_xy_sigma=-1)
    with pytest.raises(ValueError):
        NoiseModel(depth_dropout_prob=1.0)


# -- sensors -------------------------------------------------------------------


def test_depth_to_wall_in_empty_room():
    w = room(4, 4)
    scan = render_depth(w, Pose2D(2.05, 2.05, 0), 90, 181, 5.0)
    mid = scan.ranges[90]
    assert abs(mid - 2.0) <= w.resolution / 2
    # every ray of the symmetric fan: wall at 2 m / cos(offset)
    offs = np.radians(ray_offsets(90, 181))
    assert np.allclose(scan.ranges, 2.0 / np.cos(offs), atol=w.resolution / 2)


def test_depth_clamped_to_max_range():
    w = room(10, 2)
    scan = render_depth(w, Pose2D(0.55, 1.05, 0), 2, 3, 3.0)
    assert np.allclose(scan.ranges, 3.0)


def test_depth_dropout_near_one_zeroes_everything():
    # probabilities must stay below 1; the largest float below 1 drops every ray
    n = NoiseModel(depth_dropout_prob=float(np.nextafter(1.0, 0.0)))
    w = room(4, 4)
    scan = render_depth(w, Pose2D(2, 2, 0), 90, 50, 5.0, noise=n, rng=np.random.default_rng(0))
    assert np.all(scan.ranges == 0.0)


def test_impulse_values_in_range():
    n = NoiseModel(depth_impulse_prob=0.5)
    out, imp, _ = apply_depth_noise(np.full(1000, 2.0), 5.0, n, np.random.default_rng(0))
    assert np.all((out[imp] > 0) & (out[imp] <= 5.0))
    assert np.all(out[~imp] == 2.0)


def test_semantic_direct_hit_occlusion_and_empty():
    w = room(6, 6, objects=[("chair", 3.25, 1.0, 0.25), ("sofa", 1.0, 4.5, 0.3)],
             walls=[(0.5, 3.5, 1.6, 3.6)], starts=[(2.0, 1.0, 0.0)])
    # two rays over a 1 degree fov: ray 1 points exactly along the heading
    sem = render_semantic(w, Pose2D(2.0, 1.0, 0.0), 1.0, 2, 5.0)
    assert sem.labels[1] == "chair"
    assert sem.hit_ranges[1] == pytest.approx(1.0, abs=1e-9)
    assert sem.visible[1]
    # sofa sits behind a wall segment when seen from (1.0, 1.0) looking +y
    sem = render_semantic(w, Pose2D(1.0, 1.0, 90.0), 1.0, 2, 5.0)
    assert sem.labels[1] == "wall"
    far = room(20, 3, starts=[(1.0, 1.5, 0.0)])
    sem = render_semantic(far, Pose2D(1.0, 1.5, 0.0), 1.0, 2, 5.0)
    assert sem.labels[1] == "none" and sem.hit_ranges[1] == 5.0


def test_render_inside_wall_rejected():
    w = room(4, 4)
    with pytest.raises(InvalidPose):
        render_depth(w, Pose2D(0.01, 2.0, 0), 90, 10, 5.0)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(0.3, 9.7), y=st.floats(0.3, 7.2), h=st.floats(0, 359.9))
def test_depth_consistent_with_occupancy(apartment, x, y, h):
    pose = Pose2D(x, y, h)
    if check_collision(apartment, pose, 0.0):
        return
    fov, n, max_range = 90.0, 45, 5.0
    hits = raycast(apartment, pose, fov, n, max_range)
    ang = np.radians(h + ray_offsets(fov, n))
    res = apartment.resolution
    occ = apartment.occupancy_with_objects()
    for r in range(n):
        d = hits.distances[r]
        ts = np.arange(0.0, max(d - res * math.sqrt(2), 0.0), 0.01)
        ix = np.floor((x + np.cos(ang[r]) * ts) / res).astype(int)
        iy = np.floor((y + np.sin(ang[r]) * ts) / res).astype(int)
        assert not apartment.occupied[iy, ix].any()
        # objects: no footprint strictly nearer than the reading
        for o in apartment.objects:
            px, py = x + np.cos(ang[r]) * ts, y + np.sin(ang[r]) * ts
            assert np.all((px - o.x) ** 2 + (py - o.y) ** 2 >= o.radius ** 2 - 1e-9)
    assert occ.shape == apartment.occupied.shape


# -- collision and distance ----------------------------------------------------


def test_collision_basic():
    w = room(4, 4)
    assert not check_collision(w, Pose2D(2.0, 2.0), 0.18)
    assert check_collision(w, Pose2D(0.15, 2.0), 0.18)


def test_point_containment_half_open_cells():
    # binary-exact resolution so cell edges are representable
    res = 0.125
    rng = np.random.default_rng(0)
    d = room_dict(4, 4, res=res, starts=[(2.0, 2.0, 0.0)])
    occ = np.array([[c == "#" for c in row] for row in d["grid"][::-1]])
    occ[1:-1, 1:-1] |= rng.random((occ.shape[0] - 2, occ.shape[1] - 2)) < 0.2
    occ[13:20, 13:20] = False
    d["grid"] = ["".join("#" if c else "." for c in row) for row in occ[::-1]]
    w = world_from_dict(d)
    checked = 0
    for iy, ix in np.argwhere(~occ):
        # lower-left edges belong to the free cell itself
        if occ[iy, ix - 1]:
            assert not check_collision(w, (ix * res, (iy + 0.5) * res), 0.0)
            checked += 1
        if occ[iy - 1, ix]:
            assert not check_collision(w, ((ix + 0.5) * res, iy * res), 0.0)
            checked += 1
        # the upper/right edge belongs to the next cell
        if occ[iy, ix + 1]:
            assert check_collision(w, ((ix + 1) * res, (iy + 0.5) * res), 0.0)
    assert checked > 50


def test_collision_with_object_footprint():
    w = room(4, 4, objects=[("plant", 2.0, 2.0, 0.2)])
    assert check_collision(w, Pose2D(2.3, 2.0), 0.18)
    assert not check_collision(w, Pose2D(2.5, 2.0), 0.18)


def test_distance_to_object():
    w = room(4, 4, objects=[("chair", 1.6, 1.8, 0.1), ("bed", 3.0, 1.0, 0.2), ("bed", 1.5, 1.0, 0.2)])
    assert distance_to_object(w, (1.0, 1.0), "chair") == pytest.approx(1.0)
    assert distance_to_object(w, Pose2D(1.0, 1.0), "bed") == pytest.approx(0.5)
    with pytest.raises(WorldError):
        distance_to_object(w, (1, 1), "plant")
