import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import room
from navstack.evaluation import (aggregate, percent, run_suite, stability_stats, success, success_rate,
                                 write_report)
from navstack.messages import DiscreteAction, MoveResult, Pose2D
from navstack.vsn_core import COLLISION, LIMIT_REACHED, SUCCESS_CLAIMED, EpisodeLog, StepRecord

# per category: (successes out of 15, average actions)
VLV_TABLE = {"chair": (6, 30), "sofa": (6, 65), "table": (6, 42), "bed": (3, 39), "toilet": (1, 42)}
PIRLNAV_TABLE = {"chair": (5, 49), "monitor": (5, 91), "sofa": (5, 70), "bed": (3, 97),
                 "toilet": (1, 61), "plant": (0, 82)}


def fake_log(target="chair", n_actions=10, stop=True, dist=0.8, collision=False,
             path=0.0, sim_time=0.0, status=None):
    steps = [StepRecord(DiscreteAction.forward(), DiscreteAction.forward(),
                        MoveResult(True, achieved=0.25)) for _ in range(n_actions - 1)]
    last = DiscreteAction.stop() if stop else DiscreteAction.forward()
    steps.append(StepRecord(last, last, MoveResult(not collision, collision=collision)))
    if status is None:
        status = SUCCESS_CLAIMED if stop else (COLLISION if collision else LIMIT_REACHED)
    return EpisodeLog(id=f"x-{target}", target=target, start_index=1, steps=steps, status=status,
                      final_pose=Pose2D(0.0, 0.0, 0.0), distance_to_target_at_stop=dist if stop else None,
                      total_path_length=path, total_sim_time=sim_time)


def table_outcomes(table):
    out = []
    for cat, (s, avg) in table.items():
        out += [(cat, i < s, avg) for i in range(15)]
    return out


# -- success rule -----------------------------------------------------------------


def test_success_examples():
    assert success(fake_log(n_actions=47, dist=0.8))
    assert not success(fake_log(dist=1.2))
    assert not success(fake_log(dist=1.0))
    # reached 0.5 m but never stopped
    assert not success(fake_log(n_actions=150, stop=False, dist=0.5))


def test_success_needs_budget_and_no_collision():
    assert success(fake_log(n_actions=150))
    assert not success(fake_log(n_actions=151))
    ep = fake_log(n_actions=5)
    ep.steps[1] = StepRecord(DiscreteAction.forward(), DiscreteAction.forward(),
                             MoveResult(False, collision=True))
    assert not success(ep)


def test_success_uses_world_distance():
    w = room(4, 4, objects=[("chair", 2.0, 2.0, 0.2)])
    ep = fake_log(dist=5.0)
    ep.final_pose = Pose2D(2.0, 2.9, 0.0)
    assert success(ep, w)
    ep.final_pose = Pose2D(2.0, 3.3, 0.0)
    assert not success(ep, w)


# -- success rates ----------------------------------------------------------------


def test_vlv_table_overall():
    rep = aggregate(table_outcomes(VLV_TABLE))
    assert rep.overall.sr == 29.33
    assert (rep.overall.successes, rep.overall.episodes) == (22, 75)
    assert rep.per_category["chair"].sr == 40.0
    assert rep.per_category["toilet"].sr == 6.67
    for cat, (s, avg) in VLV_TABLE.items():
        assert rep.per_category[cat].average_actions == avg


def test_pirlnav_table_overall():
    rep = aggregate(table_outcomes(PIRLNAV_TABLE))
    assert rep.overall.sr == 21.11
    assert rep.per_category["monitor"].sr == 33.33
    assert rep.per_category["plant"].sr == 0.0
    # failures count toward the average
    assert rep.per_category["plant"].average_actions == 82


def test_zero_and_single():
    rep = aggregate([(c, False, 150) for c in ("chair", "bed") for _ in range(15)])
    assert rep.overall.sr == 0.0 and all(s.sr == 0.0 for s in rep.per_category.values())
    rep = success_rate([fake_log(n_actions=12)])
    assert rep.overall.sr == 100.0 and rep.per_category["chair"].average_actions == 12
    with pytest.raises(ValueError):
        success_rate([])


@given(st.lists(st.tuples(st.sampled_from(["chair", "sofa", "bed"]), st.booleans(), st.integers(1, 150)),
                min_size=1, max_size=200))
def test_sr_arithmetic(outcomes):
    rep = aggregate(outcomes)
    for cat, stats in rep.per_category.items():
        rows = [ok for c, ok, _ in outcomes if c == cat]
        assert abs(stats.sr - 100.0 * sum(rows) / len(rows)) < 0.005
    total = sum(ok for _, ok, _ in outcomes)
    assert rep.overall.sr == percent(total, len(outcomes))
    assert sum(s.episodes for s in rep.per_category.values()) == len(outcomes)


# -- stability --------------------------------------------------------------------


def test_stability_examples():
    logs = [fake_log(path=1120.0, sim_time=8 * 3600.0), fake_log(path=4100.0, sim_time=30 * 3600.0)]
    km, hours = stability_stats(logs)
    assert km == pytest.approx(5.22) and hours == pytest.approx(38.0)
    assert stability_stats([]) == (0.0, 0.0)
    assert stability_stats([fake_log(path=0.25)])[0] == pytest.approx(0.00025)


def test_report_distance_matches_logs():
    logs = [fake_log(path=p) for p in (1.0, 2.5, 0.25)]
    assert success_rate(logs).distance_km == pytest.approx(sum(lg.total_path_length for lg in logs) / 1000)


# -- suites and reports -----------------------------------------------------------


def small_world():
    return room(5, 4, objects=[("chair", 4.0, 3.0, 0.2), ("bed", 1.0, 3.2, 0.3)],
                starts=[(1.0, 1.0, 0.0), (2.5, 1.0, 90.0), (4.0, 1.0, 180.0)])


def test_suite_cardinality_and_determinism(tmp_path):
    w = small_world()
    rep, logs = run_suite(w, "random", ["chair", "bed"], seed=3)
    assert len(logs) == 6 and len({lg.id for lg in logs}) == 6
    paths = write_report(rep, logs, tmp_path / "a", w)
    assert len(list((tmp_path / "a" / "episodes").glob("*.json"))) == 6
    assert len(list((tmp_path / "a" / "plots").glob("*.svg"))) == 6
    data = json.loads(paths["report"].read_text())
    assert set(data["categories"]) == {"chair", "bed"}
    assert sum(data["action_histogram"].values()) == sum(lg.n_actions for lg in logs)
    rep2, logs2 = run_suite(w, "random", ["chair", "bed"], seed=3)
    write_report(rep2, logs2, tmp_path / "b", w)
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_suite_rejects_missing_category():
    from navstack.sim_world import WorldError
    with pytest.raises(WorldError):
        run_suite(small_world(), "random", ["toilet"])


def test_success_implies_final_stop():
    w = small_world()
    _, logs = run_suite(w, "oracle", ["chair"], seed=0)
    for lg in logs:
        if success(lg, w):
            assert lg.steps[-1].executed == DiscreteAction.stop()
    assert all(success(lg, w) for lg in logs)
