import numpy as np
import pytest

from conftest import room
from navstack.bus import Bus
from navstack.camera_api import COLOR, DEPTH, STATUS, CameraConfig, CameraNode
from navstack.messages import Pose2D, ray_offsets
from navstack.scheduler import SimClock
from navstack.sim_world import NoiseModel


def make_camera(pose=Pose2D(2.0, 2.0, 0.0), noise=None, config=None, world=None):
    world = world or room(4, 4, objects=[("chair", 3.0, 2.0, 0.2)])
    clock = SimClock()
    bus = Bus(time_source=lambda: clock.now)
    holder = {"pose": pose}
    cam = CameraNode(bus, clock, world, lambda t: holder["pose"], noise or NoiseModel(),
                     np.random.default_rng(0), config or CameraConfig())
    return clock, bus, cam, holder


def test_stationary_zero_noise_captures_identical():
    clock, bus, cam, _ = make_camera()
    s1, d1 = cam.capture()
    s2, d2 = cam.capture()
    assert np.array_equal(d1.ranges, d2.ranges)
    assert s1.labels == s2.labels


def test_ray_spacing():
    offs = ray_offsets(90.0, 180)
    assert offs[0] == -45.0 and offs[179] == 44.5
    assert np.allclose(np.diff(offs), 0.5)


def test_impulse_count_binomial():
    n, p = 10000, 0.2
    clock, bus, cam, _ = make_camera(noise=NoiseModel(depth_impulse_prob=p),
                                     config=CameraConfig(n_rays=n, fov=360.0, max_range=50.0))
    _, depth = cam.capture()
    truth = cam._hits(Pose2D(2.0, 2.0, 0.0)).distances
    changed = int(np.sum(depth.ranges != truth))
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(changed - n * p) <= 3 * sigma


def test_rate_and_phase():
    clock, bus, cam, _ = make_camera(config=CameraConfig(rate_hz=10.0))
    sub = bus.subscribe(DEPTH, queue_capacity=100)
    clock.advance(1.0 - 1e-6)
    assert len(sub.drain()) == 10
    clock, bus, cam, _ = make_camera(config=CameraConfig(rate_hz=1.0))
    sub = bus.subscribe(DEPTH, queue_capacity=100)
    clock.advance(0.5)
    assert len(sub.drain()) == 1
    with pytest.raises(ValueError):
        cam.set_rate(0)


def test_pair_shares_stamp_and_pose():
    clock, bus, cam, holder = make_camera(noise=NoiseModel(depth_gaussian_sigma=0.05))
    color = bus.subscribe(COLOR, queue_capacity=100)
    depth = bus.subscribe(DEPTH, queue_capacity=100)
    for k in range(5):
        holder["pose"] = Pose2D(1.0 + 0.3 * k, 2.0, 10.0 * k)
        clock.advance(0.2)
    for c, d in zip(color.drain(), depth.drain()):
        assert c.stamp == d.stamp
        assert c.payload.pose_hint == d.payload.pose_hint


def test_depth_and_semantic_agree_without_noise():
    clock, bus, cam, _ = make_camera()
    sem, depth = cam.capture()
    assert np.allclose(sem.hit_ranges, depth.ranges, atol=0.05 * np.sqrt(2))
    assert "chair" in sem.labels


def test_invalid_pose_flags_capture_error():
    clock, bus, cam, holder = make_camera()
    status = bus.subscribe(STATUS)
    holder["pose"] = Pose2D(0.01, 2.0, 0.0)
    clock.advance(0.25)
    err = status.poll()
    assert err is not None and "occupied" in err.payload.message


def test_config_validation():
    with pytest.raises(ValueError):
        CameraConfig(n_rays=0)
    with pytest.raises(ValueError):
        CameraConfig(fov=400)
    with pytest.raises(ValueError):
        CameraConfig(max_range=0)
