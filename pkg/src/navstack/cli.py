"""Command-line launcher: single episodes, full suites, log replay and a topology dump.

Navigation outcomes never change the exit code; only process-level problems
(missing files, bad config, world mismatch) exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .bus import BusError
from .config import ConfigError, FlatConfig, parse_bool, parse_flat_config
from .discrete_move import SERVICE as MOVE_SERVICE
from .discrete_move import motion_config_from_mapping
from .evaluation import (POLICIES, HarnessOptions, default_out_dir, run_single, run_suite,
                         success, trajectory_svg, write_episode, write_report)
from .messages import ActionKind, Pose2D, wrap_deg
from .policies import PolicyError
from .robot_api import RESET_ODOM
from .sim_world import NoiseModel, WorldError, bundled_world_path, load_world
from .stack import Stack, StackOptions
from .vsn_core import EpisodeLog, VsnNode, vsn_config_from_mapping

log = logging.getLogger("navstack")

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_MISMATCH = 3

# replay tolerance per executed action
REPLAY_XY_PER_ACTION = 0.005
REPLAY_DEG_PER_ACTION = 0.1


class CliError(Exception):
    pass


def _float_section(values: dict[str, str], section: str) -> dict[str, float]:
    out = {}
    for k, v in values.items():
        try:
            out[k] = float(v)
        except ValueError as exc:
            raise ConfigError(f"{section}.{k}: {v!r} is not a number") from exc
    return out


def harness_options(cfg: FlatConfig, base: HarnessOptions | None = None) -> HarnessOptions:
    """Apply the discrete_move, vsn, camera, noise and harness sections of a config."""
    opts = base or HarnessOptions()
    if "discrete_move" in cfg.sections:
        opts = replace(opts, motion=motion_config_from_mapping(cfg.section("discrete_move"), opts.motion))
    if "vsn" in cfg.sections:
        opts = replace(opts, vsn=vsn_config_from_mapping(cfg.section("vsn"), opts.vsn))
    if "camera" in cfg.sections:
        cam = _float_section(cfg.section("camera"), "camera")
        if "n_rays" in cam:
            cam["n_rays"] = int(cam["n_rays"])
        try:
            opts = replace(opts, camera=replace(opts.camera, **cam))
        except TypeError as exc:
            raise ConfigError(f"camera: {exc}") from exc
    if "noise" in cfg.sections:
        values = cfg.section("noise")
        if values.pop("preset", "default") == "zero":
            noise = NoiseModel.zero()
        else:
            noise = opts.noise
        try:
            noise = replace(noise, **_float_section(values, "noise"))
        except TypeError as exc:
            raise ConfigError(f"noise: {exc}") from exc
        opts = replace(opts, noise=noise)
    harness = cfg.section("harness")
    if "false_negative" in harness:
        opts = replace(opts, false_negative=float(harness.pop("false_negative")))
    if "service_timeout" in harness:
        opts = replace(opts, service_timeout=float(harness.pop("service_timeout")))
    if "lockstep" in harness:
        opts = replace(opts, lockstep=parse_bool(harness.pop("lockstep")))
    if harness:
        raise ConfigError(f"unknown harness keys: {', '.join(sorted(harness))}")
    if cfg.remaps:
        opts = replace(opts, remaps=opts.remaps + list(cfg.remaps))
    return opts


def _load_world(path: str | None):
    p = Path(path) if path else bundled_world_path()
    if not p.exists():
        raise CliError(f"world file not found: {p}")
    return load_world(p)


def _options(args) -> HarnessOptions:
    opts = HarnessOptions()
    if args.config:
        p = Path(args.config)
        if not p.exists():
            raise CliError(f"config file not found: {p}")
        opts = harness_options(parse_flat_config(p.read_text(encoding="utf-8")), opts)
    if args.max_steps is not None:
        opts = replace(opts, vsn=replace(opts.vsn, max_steps=args.max_steps))
    if args.lockstep is not None:
        opts = replace(opts, lockstep=args.lockstep)
    if args.zero_noise:
        opts = replace(opts, noise=NoiseModel.zero())
    if args.false_negative is not None:
        opts = replace(opts, false_negative=args.false_negative)
    if args.external:
        opts = replace(opts, external=args.external)
    return opts


def _out_dir(args, name: str) -> Path:
    return Path(args.out) if args.out else default_out_dir() / name


def cmd_run(args) -> int:
    world = _load_world(args.world)
    opts = _options(args)
    out = _out_dir(args, f"run-{args.policy}-{args.target}-s{args.start:02d}-seed{args.seed}")
    if args.frames:
        opts = replace(opts, frames_dir=str(out / "frames"))
    ep = run_single(world, args.start, args.target, args.policy, args.seed, opts)
    ok = success(ep, world)
    jp, sp = write_episode(ep, out, world)
    print(f"{ep.id}: status={ep.status} actions={ep.n_actions} success={str(ok).lower()}")
    print(f"log: {jp}")
    print(f"plot: {sp}")
    return EXIT_OK


def cmd_suite(args) -> int:
    world = _load_world(args.world)
    opts = _options(args)
    cats = [c.strip() for c in args.categories.split(",") if c.strip()] if args.categories else None
    out = _out_dir(args, f"suite-{args.policy}-{world.name}-seed{args.seed}")
    if args.frames:
        opts = replace(opts, frames_dir=str(out / "frames"))
    report, logs = run_suite(world, args.policy, cats, args.seed, opts, parallel=args.parallel)
    paths = write_report(report, logs, out, world)
    for cat, st in report.per_category.items():
        print(f"{cat:10s} {st.successes:3d}/{st.episodes:<3d} SR {st.sr:6.2f}%  avg actions {st.average_actions:.2f}")
    o = report.overall
    print(f"{'overall':10s} {o.successes:3d}/{o.episodes:<3d} SR {o.sr:6.2f}%  avg actions {o.average_actions:.2f}")
    print(f"distance {report.distance_km:.4f} km, time {report.time_hours:.4f} h")
    print(f"report: {paths['report']}")
    return EXIT_OK


def replay_episode(ep: EpisodeLog, world) -> tuple[Pose2D, list[Pose2D]]:
    """Re-execute the executed actions open-loop with zero noise; return final pose and trace."""
    start = ep.start_pose or world.starts[ep.start_index - 1]
    stack = Stack(world, start, StackOptions(camera=None, noise=NoiseModel.zero(), lockstep=True))
    trace = [start]
    try:
        stack.bus.call_service(RESET_ODOM, None)
        for rec in ep.steps:
            if rec.executed.kind is ActionKind.STOP:
                continue
            stack.bus.call_service(MOVE_SERVICE, rec.executed)
            trace.append(stack.true_pose())
        return stack.true_pose(), trace
    finally:
        stack.close()


def cmd_replay(args) -> int:
    p = Path(args.log)
    if not p.exists():
        raise CliError(f"episode log not found: {p}")
    try:
        ep = EpisodeLog.from_dict(json.loads(p.read_text(encoding="utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot parse episode log {p}: {exc}") from exc
    world = _load_world(args.world)
    if ep.world_digest and ep.world_digest != world.digest:
        raise CliError(f"world mismatch: log was recorded on {ep.world!r} ({ep.world_digest[:12]}), "
                       f"replay world is {world.name!r} ({world.digest[:12]})")
    final, trace = replay_episode(ep, world)
    n = sum(1 for s in ep.steps if s.executed.kind is not ActionKind.STOP)
    expected = ep.final_pose or ep.start_pose
    dxy = math.hypot(final.x - expected.x, final.y - expected.y)
    dth = wrap_deg(final.heading - expected.heading)
    dth = min(dth, 360.0 - dth)
    tol_xy, tol_th = REPLAY_XY_PER_ACTION * n, REPLAY_DEG_PER_ACTION * n
    out = _out_dir(args, "replay")
    out.mkdir(parents=True, exist_ok=True)
    replayed = replace(ep, final_pose=final, trajectory=[q.xy for q in trace])
    svg = out / f"{ep.id}-replay.svg"
    svg.write_text(trajectory_svg(replayed, world), encoding="utf-8")
    print(f"{ep.id}: replayed {n} actions, position error {dxy:.4f} m (bound {tol_xy:.4f}), "
          f"heading error {dth:.3f} deg (bound {tol_th:.3f})")
    print(f"plot: {svg}")
    if dxy > tol_xy + 1e-9 or dth > tol_th + 1e-9:
        print("replay mismatch: final pose outside the accumulated tolerance", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_topology(args) -> int:
    world = _load_world(args.world)
    opts = _options(args)
    stack = Stack(world, world.starts[0], StackOptions(motion=opts.motion, camera=opts.camera,
                                                       remaps=list(opts.remaps), lockstep=True))
    try:
        VsnNode(stack.bus, stack.driver, opts.vsn)
        print(json.dumps(stack.topology(), indent=2, sort_keys=True))
    finally:
        stack.close()
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--world", help="world JSON (default: bundled apartment)")
    p.add_argument("--config", help="flat section.key: value config file")
    p.add_argument("--out", help="output directory (default: $NAVSTACK_OUT or ./navstack_out)")
    p.add_argument("--max-steps", type=int, default=None, help="action budget per episode")
    p.add_argument("--lockstep", dest="lockstep", action="store_true", default=None,
                   help="deterministic single-threaded scheduling (default)")
    p.add_argument("--threaded", dest="lockstep", action="store_false",
                   help="run node loops on threads against a scaled wall clock")
    p.add_argument("--zero-noise", action="store_true", help="disable every noise source")
    p.add_argument("--false-negative", type=float, default=None,
                   help="detector miss probability for the vlv policy")
    p.add_argument("--external", help="module:callable for --policy external")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="navstack", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one episode")
    _add_common(r)
    r.add_argument("--policy", choices=POLICIES, default="vlv")
    r.add_argument("--target", required=True)
    r.add_argument("--start", type=int, default=1, help="start index 1..15")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--frames", action="store_true", help="store observation frames on disk")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run every start for every category")
    _add_common(s)
    s.add_argument("--policy", choices=POLICIES, default="vlv")
    s.add_argument("--categories", help="comma-separated subset (default: all in the world)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--parallel", type=int, default=1, help="worker processes")
    s.add_argument("--frames", action="store_true", help="store observation frames on disk")
    s.set_defaults(func=cmd_suite)

    p = sub.add_parser("replay", help="re-execute a logged episode open-loop")
    p.add_argument("log", help="episode log JSON")
    p.add_argument("--world", help="world JSON (default: bundled apartment)")
    p.add_argument("--out", help="output directory for the re-rendered plot")
    p.set_defaults(func=cmd_replay)

    t = sub.add_parser("topology", help="print the wired node graph as JSON")
    _add_common(t)
    t.set_defaults(func=cmd_topology)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, WorldError, BusError, PolicyError, OSError, ValueError) as exc:
        print(f"navstack: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
