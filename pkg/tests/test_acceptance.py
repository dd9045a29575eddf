"""Acceptance suite: one test per numbered criterion.

A PASS/FAIL line per criterion is printed in the terminal summary (see conftest).
"""

import math
import threading
import time

import numpy as np
import pytest

from conftest import dijkstra_8, room
from navstack.bus import Bus, ServiceTimeout
from navstack.discrete_move import (STRAIGHT_TOLERANCE_M, TURN_TOLERANCE_DEG, LINEAR_CREEP, MotionConfig,
                                    profile_speed, straight_error, turn_error)
from navstack.evaluation import (HarnessOptions, aggregate, run_single, run_suite, stability_stats, success,
                                 write_report)
from navstack.messages import ActionKind, DepthScan, DiscreteAction, Pose2D
from navstack.planner import OccupancyGrid, extract_path, fast_marching
from navstack.sim_world import NoiseModel, bundled_world_path, load_world
from navstack.stack import Stack, StackOptions
from navstack.vsn_core import LIMIT_REACHED, median_filter

from test_eval import PIRLNAV_TABLE, VLV_TABLE, fake_log, table_outcomes

pytestmark = pytest.mark.acceptance

GRID_SEED = 0


# 1 ----------------------------------------------------------------------------


def test_criterion_01_controller_tolerance():
    noise = NoiseModel(actuation_scale_sigma=0.05, odom_xy_sigma=0.002, odom_heading_sigma=0.05, rng_seed=11)
    world = room(12, 12, starts=[(6.0, 6.0, 0.0)])
    stack = Stack(world, Pose2D(6.0, 6.0, 0.0), StackOptions(camera=None, noise=noise))
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    failures = []
    try:
        for i in range(1000):
            if rng.random() < 0.5:
                d = float(rng.uniform(0.1, 1.0))
                pose = stack.true_pose()
                th = math.radians(pose.heading)
                ahead = (pose.x + d * math.cos(th) - 6.0, pose.y + d * math.sin(th) - 6.0)
                forward = rng.random() < 0.5
                # keep the random walk inside the room by flipping direction when needed
                if forward and math.hypot(*ahead) > 3.5:
                    forward = False
                elif not forward and math.hypot(pose.x - d * math.cos(th) - 6.0,
                                                pose.y - d * math.sin(th) - 6.0) > 3.5:
                    forward = True
                action = DiscreteAction.forward(d) if forward else DiscreteAction.backward(d)
            else:
                deg = float(rng.uniform(10.0, 180.0))
                action = DiscreteAction.left(deg) if rng.random() < 0.5 else DiscreteAction.right(deg)
            r = stack.mover.execute(action)
            ok = r.success and (abs(r.final_straight_error) < STRAIGHT_TOLERANCE_M
                                if action.kind.is_move else
                                min(r.final_turn_error, 360.0 - r.final_turn_error) < TURN_TOLERANCE_DEG)
            if not ok:
                failures.append((i, action, r))
    finally:
        stack.close()
    elapsed = time.perf_counter() - t0
    assert not failures, failures[:3]
    assert elapsed < 60.0


# 2 ----------------------------------------------------------------------------


def test_criterion_02_velocity_profile():
    cfg = MotionConfig()
    world = room(6, 6, starts=[(1.0, 3.0, 0.0)])
    stack = Stack(world, Pose2D(1.0, 3.0, 0.0), StackOptions(camera=None, noise=NoiseModel.zero(),
                                                            record_ticks=True))
    try:
        r = stack.mover.execute(DiscreteAction.forward(1.0))
        trace = list(stack.mover.trace)
    finally:
        stack.close()
    assert r.success
    a = cfg.linear_velocity ** 2 / (2 * (1.0 / 3.0))
    dt = 1.0 / cfg.tick_rate
    assert all(abs(t.v) <= cfg.linear_velocity + 1e-12 for t in trace)
    speeds = [0.0] + [t.v for t in trace]
    for v0, v1 in zip(speeds, speeds[1:]):
        assert abs(v1 - v0) <= a * dt + LINEAR_CREEP + 1e-12
    step = cfg.linear_velocity * dt  # one tick of travel
    for t in trace:
        if t.phase == "accel":
            assert t.covered < 1.0 / 3.0 + 1e-9
        elif t.phase == "cruise":
            assert 1.0 / 3.0 - step <= t.covered <= 2.0 / 3.0 + step
        elif t.phase == "decel":
            assert t.covered >= 2.0 / 3.0 - step
    assert {"accel", "cruise", "decel"} <= {t.phase for t in trace}
    assert profile_speed(0.0, 0.09, 0.5, "accel", 0.3) == pytest.approx(0.3, abs=1e-12)


# 3 ----------------------------------------------------------------------------


def test_criterion_03_error_functions():
    rng = np.random.default_rng(3)
    alphas = rng.uniform(-1e4, 1e4, 100_000)
    betas = rng.uniform(-1e4, 1e4, 100_000)
    ds = rng.uniform(0.0, 10.0, 100_000)
    xs = rng.uniform(-100, 100, 100_000)
    ys = rng.uniform(-100, 100, 100_000)
    for a, b, d, x, y in zip(alphas.tolist(), betas.tolist(), ds.tolist(), xs.tolist(), ys.tolist()):
        e = turn_error(a, b)
        assert 0.0 <= e < 360.0
        assert turn_error(a, a) == 0.0
        assert abs(straight_error(d, x, y, x, y) - d) <= 1e-12
    assert abs(straight_error(5.0, 3.0, 4.0, 0.0, 0.0)) <= 1e-12


# 4 ----------------------------------------------------------------------------


def test_criterion_04_median_oracle():
    rng = np.random.default_rng(4)
    pose = Pose2D(0.0, 0.0, 0.0)
    for trial in range(200):
        clean = rng.uniform(0.2, 5.0, 180)
        frames = np.tile(clean, (5, 1))
        for ray in range(180):
            bad = rng.choice(5, size=int(rng.integers(0, 3)), replace=False)
            frames[bad, ray] = rng.choice([0.0, 5.0, 0.01], size=bad.size)
        scans = [DepthScan(f.copy(), 90.0, float(i), pose) for i, f in enumerate(frames)]
        out = median_filter(scans).ranges
        assert np.array_equal(out, clean)
        if trial < 10:
            for _ in range(100):
                perm = rng.permutation(5)
                assert np.array_equal(median_filter([scans[i] for i in perm]).ranges, clean)


# 5 ----------------------------------------------------------------------------


def test_criterion_05_fmm_vs_dijkstra():
    t0 = time.perf_counter()
    res = 0.05
    for seed in range(50):
        rng = np.random.default_rng(seed)
        occ = rng.random((64, 64)) < 0.2
        goal = (int(rng.integers(64)), int(rng.integers(64)))
        occ[goal] = False
        d = dijkstra_8(occ, goal, res)
        same = np.argwhere(np.isfinite(d) & (d > 0))
        start = tuple(same[rng.integers(len(same))])
        grid = OccupancyGrid.from_bool(occ, res)
        field = fast_marching(grid, grid.center_of(*goal), inflation=0.0)
        v = field.values[start]
        assert abs(v - d[start]) / d[start] <= 0.08
        path = extract_path(field, grid.center_of(*start))
        for (x0, y0), (x1, y1) in zip(path, path[1:]):
            for t in (0.0, 0.5, 1.0):
                iy, ix = field.cell_of(x0 + t * (x1 - x0), y0 + t * (y1 - y0))
                assert not occ[iy, ix]
    assert time.perf_counter() - t0 < 30.0


# 6 ----------------------------------------------------------------------------


def test_criterion_06_sr_fixtures():
    vlv = aggregate(table_outcomes(VLV_TABLE))
    assert [vlv.per_category[c].sr for c in VLV_TABLE] == [40.0, 40.0, 40.0, 20.0, 6.67]
    assert vlv.overall.sr == 29.33
    pirl = aggregate(table_outcomes(PIRLNAV_TABLE))
    assert [pirl.per_category[c].sr for c in PIRLNAV_TABLE] == [33.33, 33.33, 33.33, 20.0, 6.67, 0.0]
    assert pirl.overall.sr == 21.11
    km, hours = stability_stats([fake_log(path=1120.0, sim_time=8 * 3600.0),
                                 fake_log(path=4100.0, sim_time=30 * 3600.0)])
    assert round(km, 2) == 5.22 and round(hours, 2) == 38.0


# 7 and 9 ----------------------------------------------------------------------


def run_grid(out_root):
    world = load_world(bundled_world_path())
    opts = HarnessOptions()
    results = {}
    t0 = time.perf_counter()
    for policy in ("oracle", "random", "vlv"):
        report, logs = run_suite(world, policy, seed=GRID_SEED, opts=opts)
        paths = write_report(report, logs, out_root / policy, world)
        results[policy] = (report, paths["report"].read_bytes())
    return results, time.perf_counter() - t0


@pytest.fixture(scope="module")
def grid(tmp_path_factory):
    return run_grid(tmp_path_factory.mktemp("grid-a"))


def test_criterion_07_harness_soundness(grid):
    results, elapsed = grid
    oracle, random_, vlv = (results[p][0].overall.sr for p in ("oracle", "random", "vlv"))
    print(f"grid SR: oracle {oracle:.2f}%, random {random_:.2f}%, vlv {vlv:.2f}% in {elapsed:.0f} s")
    assert results["oracle"][0].overall.episodes == 105
    assert oracle == 100.0
    assert random_ <= 20.0
    assert vlv > random_ and vlv >= 60.0
    assert elapsed < 600.0


def test_criterion_09_determinism(grid, tmp_path_factory):
    first, _ = grid
    second, _ = run_grid(tmp_path_factory.mktemp("grid-b"))
    for policy in first:
        assert first[policy][1] == second[policy][1], policy


# 8 ----------------------------------------------------------------------------


class NeverStop:
    name = "never-stop"

    def reset(self, target):
        self.k = 0

    def act(self, obs):
        self.k += 1
        return DiscreteAction.left() if self.k % 2 else DiscreteAction.right()


class StopAt:
    name = "stop-at"

    def __init__(self, n):
        self.n = n

    def reset(self, target):
        self.k = 0

    def act(self, obs):
        self.k += 1
        return DiscreteAction.stop() if self.k >= self.n else DiscreteAction.left()


def test_criterion_08_budget():
    world = load_world(bundled_world_path())
    ep = run_single(world, 1, "chair", NeverStop(), 0)
    assert ep.n_actions == 150 and ep.status == LIMIT_REACHED
    assert not success(ep, world)
    far = run_single(world, 1, "chair", StopAt(1), 0)
    assert far.steps[-1].executed.kind is ActionKind.STOP
    assert far.distance_to_target_at_stop > 1.0 and not success(far, world)


# 10 ---------------------------------------------------------------------------


def test_criterion_10_bus_contract():
    bus = Bus()
    sub = bus.subscribe("/load", queue_capacity=200_000)
    pubs = [bus.advertise("/load", node=f"p{i}") for i in range(10)]
    n = 10_000

    def blast(i):
        for k in range(n):
            pubs[i].publish((i, k))

    threads = [threading.Thread(target=blast, args=(i,)) for i in range(10)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    got = [e.payload for e in sub.drain()]
    assert len(got) == 10 * n
    for i in range(10):
        assert [k for j, k in got if j == i] == list(range(n))

    timeout = 0.2
    bus.register_service("/slow", lambda req: time.sleep(1.0))
    t0 = time.monotonic()
    with pytest.raises(ServiceTimeout):
        bus.call_service("/slow", None, timeout=timeout)
    assert time.monotonic() - t0 <= 1.1 * timeout

    chain = Bus()
    chain.remap("/a", "/b")
    chain.remap("/b", "/c")
    assert chain.resolve("/a") == "/c"
    s = chain.subscribe("/c")
    chain.advertise("/a").publish("through")
    assert s.poll().payload == "through"
