"""Evaluation protocol: episode runner, success rule, SR metrics and reports."""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .camera_api import CameraConfig
from .discrete_move import MotionConfig
from .messages import ActionKind
from .policies import ExternalPolicy, HeuristicScorer, OraclePolicy, RandomPolicy, VlvPolicy
from .sim_world import CATEGORIES, NoiseModel, WorldError, WorldMap, distance_to_object
from .stack import Stack, StackOptions
from .vsn_core import SUCCESS_CLAIMED, EpisodeLog, Observation, VsnConfig, VsnNode

log = logging.getLogger(__name__)

SUCCESS_RADIUS = 1.0
ACTION_BUDGET = 150
POLICIES = ("vlv", "random", "oracle", "external")


# ---------------------------------------------------------------------------
# success rule and metrics


def success(episode: EpisodeLog, world: WorldMap | None = None) -> bool:
    """STOP claimed, within 1 m of a target instance, at most 150 actions, no collision."""
    if episode.status != SUCCESS_CLAIMED:
        return False
    if not episode.steps or episode.steps[-1].executed.kind is not ActionKind.STOP:
        return False
    if episode.n_actions > ACTION_BUDGET:
        return False
    if any(s.result.collision for s in episode.steps):
        return False
    if world is not None and episode.final_pose is not None:
        dist = distance_to_object(world, episode.final_pose, episode.target)
    else:
        dist = episode.distance_to_target_at_stop
    return dist is not None and dist < SUCCESS_RADIUS


@dataclass(frozen=True)
class CategoryStats:
    successes: int
    episodes: int
    sr: float
    average_actions: float

    def to_dict(self) -> dict:
        return {"successes": self.successes, "episodes": self.episodes, "sr": self.sr,
                "average_actions": self.average_actions}


@dataclass
class SuccessReport:
    per_category: dict[str, CategoryStats]
    overall: CategoryStats
    distance_km: float = 0.0
    time_hours: float = 0.0
    action_histogram: dict[str, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "categories": {c: s.to_dict() for c, s in self.per_category.items()},
            "overall": self.overall.to_dict(),
            "stability": {"distance_km": self.distance_km, "time_hours": self.time_hours},
            "action_histogram": self.action_histogram,
        }


def percent(successes: int, episodes: int) -> float:
    """Success rate in percent rounded to two decimals."""
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    return round(100.0 * successes / episodes, 2)


def _stats(outcomes: Sequence[tuple[bool, int]]) -> CategoryStats:
    n = len(outcomes)
    s = sum(1 for ok, _ in outcomes if ok)
    avg = round(sum(a for _, a in outcomes) / n, 2)
    return CategoryStats(s, n, percent(s, n), avg)


def aggregate(outcomes: Iterable[tuple[str, bool, int]]) -> SuccessReport:
    """Build a report from (category, success, n_actions) triples.

    Average actions include failed episodes; the overall SR pools all episodes.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no episodes to aggregate")
    by_cat: dict[str, list[tuple[bool, int]]] = {}
    for cat, ok, n in outcomes:
        by_cat.setdefault(cat, []).append((ok, n))
    order = [c for c in CATEGORIES if c in by_cat] + sorted(c for c in by_cat if c not in CATEGORIES)
    per = {c: _stats(by_cat[c]) for c in order}
    overall = _stats([(ok, n) for _, ok, n in outcomes])
    return SuccessReport(per, overall)


def stability_stats(logs: Iterable[EpisodeLog]) -> tuple[float, float]:
    """Total distance (km) and time (hours) across logs."""
    meters = 0.0
    seconds = 0.0
    for lg in logs:
        meters += lg.total_path_length
        seconds += lg.total_sim_time
    return meters / 1000.0, seconds / 3600.0


def action_histogram(logs: Iterable[EpisodeLog]) -> dict[str, int]:
    counts = Counter(s.executed.kind.value for lg in logs for s in lg.steps)
    return {k.value: counts.get(k.value, 0) for k in ActionKind}


def success_rate(logs: Sequence[EpisodeLog], world: WorldMap | None = None) -> SuccessReport:
    if not logs:
        raise ValueError("success_rate needs at least one episode log")
    report = aggregate((lg.target, success(lg, world), lg.n_actions) for lg in logs)
    report.distance_km, report.time_hours = stability_stats(logs)
    report.action_histogram = action_histogram(logs)
    return report


# ---------------------------------------------------------------------------
# running episodes


@dataclass
class HarnessOptions:
    noise: NoiseModel = field(default_factory=NoiseModel.default)
    motion: MotionConfig = field(default_factory=MotionConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    vsn: VsnConfig = field(default_factory=VsnConfig)
    remaps: list[tuple[str, str]] = field(default_factory=list)
    lockstep: bool = True
    speedup: float = 50.0
    service_timeout: float | None = None
    false_negative: float = 0.0
    external: str | None = None
    frames_dir: str | None = None


def episode_seed(suite_seed: int, index: int) -> int:
    """Independent, reproducible seed for episode ``index`` of a suite."""
    return int(np.random.SeedSequence([suite_seed, index]).generate_state(1)[0])


def episode_id(policy: str, target: str, start_index: int) -> str:
    return f"{policy.split(':')[0]}-{target}-s{start_index:02d}"


def make_policy(name: str, world: WorldMap, stack: Stack, seed: int, opts: HarnessOptions):
    if name == "vlv":
        return VlvPolicy(HeuristicScorer(opts.false_negative, seed))
    if name == "random":
        return RandomPolicy(seed)
    if name == "oracle":
        return OraclePolicy(world, lambda: stack.true_pose())
    if name == "external":
        if not opts.external:
            raise ValueError("the external policy needs a module:callable reference")
        return ExternalPolicy.load(opts.external)
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")


def _frame_writer(root: Path):
    def sink(ep_id: str, step: int, obs: Observation) -> str:
        d = root / ep_id
        d.mkdir(parents=True, exist_ok=True)
        name = f"{step:03d}.npz"
        np.savez_compressed(d / name, depth=obs.depth.ranges, hit_ranges=obs.semantic.hit_ranges,
                            labels=np.array(obs.semantic.labels), gps=np.array(obs.gps),
                            compass=np.array(obs.compass))
        return f"{ep_id}/{name}"
    return sink


def run_single(world: WorldMap, start_index: int, target: str, policy, seed: int,
               opts: HarnessOptions | None = None) -> EpisodeLog:
    """Run one episode on a fresh simulator instance and bus.

    ``policy`` is a registered name or any object with ``reset`` and ``act``.
    """
    opts = opts or HarnessOptions()
    if target not in world.categories:
        raise WorldError(f"target {target!r} is not present in world {world.name!r}")
    if not 1 <= start_index <= len(world.starts):
        raise WorldError(f"start index {start_index} outside 1..{len(world.starts)}")
    start = world.starts[start_index - 1]
    stack_opts = StackOptions(motion=opts.motion, camera=opts.camera,
                              noise=replace(opts.noise, rng_seed=seed), remaps=list(opts.remaps),
                              lockstep=opts.lockstep, speedup=opts.speedup)
    stack = Stack(world, start, stack_opts)
    try:
        if isinstance(policy, str):
            pol = make_policy(policy, world, stack, seed, opts)
        else:
            pol, policy = policy, getattr(policy, "name", type(policy).__name__.lower())
        sink = _frame_writer(Path(opts.frames_dir)) if opts.frames_dir else None
        node = VsnNode(stack.bus, stack.driver, replace(opts.vsn, target=target),
                       service_timeout=opts.service_timeout, frame_sink=sink,
                       pose_probe=lambda: stack.true_pose())
        ep = EpisodeLog(id=episode_id(policy, target, start_index), target=target,
                        start_index=start_index, policy=getattr(pol, "name", policy), seed=seed,
                        start_pose=start, world=world.name, world_digest=world.digest)
        node.run_episode(pol, ep)
        ep.final_pose = stack.true_pose()
        if ep.status == SUCCESS_CLAIMED:
            ep.distance_to_target_at_stop = distance_to_object(world, ep.final_pose, target)
        return ep
    finally:
        stack.close()


@dataclass(frozen=True)
class EpisodeTask:
    index: int
    start_index: int
    target: str
    seed: int


def suite_tasks(world: WorldMap, categories: Sequence[str], suite_seed: int) -> list[EpisodeTask]:
    missing = [c for c in categories if c not in world.categories]
    if missing:
        raise WorldError(f"categories {missing} are not present in world {world.name!r}")
    tasks = []
    i = 0
    for cat in categories:
        for s in range(1, len(world.starts) + 1):
            tasks.append(EpisodeTask(i, s, cat, episode_seed(suite_seed, i)))
            i += 1
    return tasks


def _run_task(args) -> EpisodeLog:
    world, task, policy, opts = args
    return run_single(world, task.start_index, task.target, policy, task.seed, opts)


def run_suite(world: WorldMap, policy: str, categories: Sequence[str] | None = None,
              seed: int = 0, opts: HarnessOptions | None = None,
              parallel: int = 1) -> tuple[SuccessReport, list[EpisodeLog]]:
    """Every (start, category) pair once; deterministic given ``seed``."""
    opts = opts or HarnessOptions()
    categories = list(categories or world.categories)
    tasks = suite_tasks(world, categories, seed)
    jobs = [(world, t, policy, opts) for t in tasks]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            logs = list(ex.map(_run_task, jobs))
    else:
        logs = [_run_task(j) for j in jobs]
    report = success_rate(logs, world)
    report.meta = {"policy": policy, "world": world.name, "world_digest": world.digest,
                   "seed": seed, "categories": categories, "starts": len(world.starts),
                   "noise": opts.noise.to_dict(), "max_steps": opts.vsn.max_steps}
    return report, logs


# ---------------------------------------------------------------------------
# output


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_report(report: SuccessReport, logs: Sequence[EpisodeLog], out_dir: str | Path,
                 world: WorldMap | None = None) -> dict[str, Path]:
    """Write report.json, one JSON log and one SVG plot per episode, and the action histogram."""
    out = Path(out_dir)
    (out / "episodes").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "histogram": out / "actions.svg"}
    paths["report"].write_text(_dump(report.to_dict()), encoding="utf-8")
    for lg in logs:
        (out / "episodes" / f"{lg.id}.json").write_text(_dump(lg.to_dict()), encoding="utf-8")
        (out / "plots" / f"{lg.id}.svg").write_text(trajectory_svg(lg, world), encoding="utf-8")
    title = report.meta.get("policy", "policy") if report.meta else "policy"
    paths["histogram"].write_text(histogram_svg(report.action_histogram, title), encoding="utf-8")
    return paths


def write_episode(ep: EpisodeLog, out_dir: str | Path, world: WorldMap | None = None) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jp, sp = out / f"{ep.id}.json", out / f"{ep.id}.svg"
    jp.write_text(_dump(ep.to_dict()), encoding="utf-8")
    sp.write_text(trajectory_svg(ep, world), encoding="utf-8")
    return jp, sp


def trajectory_svg(ep: EpisodeLog, world: WorldMap | None = None, scale: float = 60.0) -> str:
    """Top-down plot: walls, target discs with the 1 m success radius, start and path."""
    if world is not None:
        w, h = world.width, world.height
    else:
        pts = list(ep.trajectory) or [(0.0, 0.0)]
        w = max(p[0] for p in pts) + 1.0
        h = max(p[1] for p in pts) + 1.0
    W, H = w * scale, h * scale

    def X(x):
        return f"{x * scale:.1f}"

    def Y(y):
        return f"{(h - y) * scale:.1f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{H:.0f}" '
             f'viewBox="0 0 {W:.0f} {H:.0f}">',
             f'<rect width="{W:.0f}" height="{H:.0f}" fill="white"/>']
    if world is not None:
        res = world.resolution
        ys, xs = np.nonzero(world.occupied)
        # merge horizontal runs to keep the file small
        runs: list[tuple[int, int, int]] = []
        for iy in np.unique(ys):
            cols = np.sort(xs[ys == iy])
            start = prev = cols[0]
            for c in cols[1:]:
                if c != prev + 1:
                    runs.append((iy, start, prev))
                    start = c
                prev = c
            runs.append((iy, start, prev))
        for iy, a, b in runs:
            parts.append(f'<rect x="{X(a * res)}" y="{Y((iy + 1) * res)}" '
                         f'width="{(b - a + 1) * res * scale:.1f}" height="{res * scale:.1f}" fill="#444"/>')
        for o in world.objects:
            is_target = o.category == ep.target
            if is_target:
                parts.append(f'<circle cx="{X(o.x)}" cy="{Y(o.y)}" r="{SUCCESS_RADIUS * scale:.1f}" '
                             f'fill="none" stroke="#2a2" stroke-dasharray="4 3"/>')
            parts.append(f'<circle cx="{X(o.x)}" cy="{Y(o.y)}" r="{o.radius * scale:.1f}" '
                         f'fill="{"#6c6" if is_target else "#bbb"}"/>')
            parts.append(f'<text x="{X(o.x)}" y="{Y(o.y)}" font-size="10" text-anchor="middle">'
                         f'{o.category}</text>')
    if ep.trajectory:
        pts = " ".join(f"{X(x)},{Y(y)}" for x, y in ep.trajectory)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#c22" stroke-width="2"/>')
    if ep.start_pose is not None:
        s = ep.start_pose
        parts.append(f'<circle cx="{X(s.x)}" cy="{Y(s.y)}" r="5" fill="#22c"/>')
    if ep.final_pose is not None:
        f = ep.final_pose
        parts.append(f'<circle cx="{X(f.x)}" cy="{Y(f.y)}" r="5" fill="none" stroke="#c22"/>')
    parts.append(f'<text x="5" y="14" font-size="12">{ep.id} {ep.status} actions={ep.n_actions}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def histogram_svg(hist: dict[str, int], title: str = "") -> str:
    keys = list(hist)
    peak = max(list(hist.values()) + [1])
    bw, gap, H = 70, 20, 220
    W = len(keys) * (bw + gap) + gap
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H + 60}">',
             f'<text x="5" y="15" font-size="12">actions: {title}</text>']
    for i, k in enumerate(keys):
        h = H * hist[k] / peak
        x = gap + i * (bw + gap)
        parts.append(f'<rect x="{x}" y="{20 + H - h:.1f}" width="{bw}" height="{h:.1f}" fill="#58a"/>')
        parts.append(f'<text x="{x + bw / 2}" y="{H + 35}" font-size="9" text-anchor="middle">{k}</text>')
        parts.append(f'<text x="{x + bw / 2}" y="{20 + H - h - 3:.1f}" font-size="10" '
                     f'text-anchor="middle">{hist[k]}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def default_out_dir() -> Path:
    return Path(os.environ.get("NAVSTACK_OUT", "navstack_out"))
