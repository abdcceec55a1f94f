"""Command-line entry point: one binary, one subcommand per pipeline stage.

Stages compose through files and pipes; stdout carries only machine-readable
payload (JSON lines or CSV) and diagnostics go to stderr. Exit codes: 0 ok,
1 runtime failure, 2 bad arguments or malformed input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config, denoise, image_io, kinematics, learned, sim, so3, trajectory
from .classical import (CameraCalibration, GraspProposal, VisionError,
                        classical_pipeline, pixel_to_workspace)
from .so3 import Pose


class BadUsage(Exception):
    """Invalid arguments or malformed input files."""


def _load_cfg(args) -> config.PipelineConfig:
    try:
        cfg = config.load_config(args.config) if args.config else config.PipelineConfig()
        overrides = {}
        for item in args.set or []:
            if "=" not in item:
                raise ValueError(f"--set expects key=value, got {item!r}")
            key, val = item.split("=", 1)
            overrides[key.strip()] = val
        return config.apply_overrides(cfg, overrides)
    except (ValueError, OSError) as err:
        raise BadUsage(str(err)) from err


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise BadUsage(f"{what} not found: {p}")
    return p


def _load_params(path):
    try:
        return learned.load_params(_require_file(path, "params file"))
    except ValueError as err:
        raise BadUsage(str(err)) from err


def cmd_vision(args, cfg) -> int:
    rgb = image_io.load_ppm(_require_file(args.rgb, "rgb image"))
    if args.mode == "classical":
        proposal = classical_pipeline(rgb, cfg, args.t)
    else:
        if not args.depth:
            raise BadUsage("learned mode requires --depth")
        if not (args.params or cfg.params_path):
            raise BadUsage("learned mode requires --params or params_path")
        depth = image_io.load_pgm(_require_file(args.depth, "depth image"))
        params = _load_params(args.params or cfg.params_path)
        px, theta = learned.predict(params, rgb, depth)
        proposal = pixel_to_workspace(px, theta,
                                      CameraCalibration.from_config(cfg), args.t)
    print(proposal.to_json_line())
    if args.overlay:
        cal = CameraCalibration.from_config(cfg)
        overlay = sim.draw_overlay(rgb, cal.to_pixel(proposal.target),
                                   proposal.theta)
        image_io.save_ppm(overlay, args.overlay)
    return 0


def cmd_denoise(args, cfg) -> int:
    proposals = []
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            proposals.append(GraspProposal.from_json_line(line))
        except (ValueError, KeyError) as err:
            raise BadUsage(f"malformed proposal line {line!r}: {err}") from err
    if not proposals:
        print("no proposals on stdin", file=sys.stderr)
        return 1
    buf = denoise.ProposalBuffer(cfg.window, cfg.distance_threshold)
    for p in sorted(proposals, key=lambda p: p.t):
        buf.push(p)
    now = args.now if args.now is not None else max(p.t for p in proposals)
    print(denoise.denoise(buf, now).to_json_line())
    return 0


def _start_pose(args, cfg) -> Pose:
    if args.start:
        vals = [float(v) for v in args.start.split(",")]
        if len(vals) != 4:
            raise BadUsage("--start expects px,py,pz,yaw")
        return Pose(vals[:3], so3.grasp_orientation(vals[3]))
    arm = kinematics.load_arm(cfg.arm_file or kinematics.default_arm_path())
    return kinematics.fk(arm, sim.HOME_Q)


def cmd_plan(args, cfg) -> int:
    try:
        tx, ty = (float(v) for v in args.target.split(","))
    except ValueError as err:
        raise BadUsage("--target expects x,y in meters") from err
    proposal = GraspProposal(tx, ty, args.theta, args.ti)
    traj = trajectory.plan(_start_pose(args, cfg), proposal,
                           args.grasp_z if args.grasp_z is not None else cfg.grasp_z,
                           args.ti, args.tf)
    lines = ["t,px,py,pz,vx,vy,vz,r11,r12,r13,r21,r22,r23,r31,r32,r33,"
             "wffx,wffy,wffz"]
    for t in trajectory.sample_times(traj, args.rate):
        s = trajectory.sample(traj, t)
        vals = [t, *s.p_d, *s.pdot_d, *s.R_d.reshape(-1), *s.w_ff]
        lines.append(",".join(repr(float(v)) for v in vals))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _read_proposals_file(path) -> list[GraspProposal]:
    props = []
    for line in _require_file(path, "proposals file").read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            props.append(GraspProposal.from_json_line(line))
        except (ValueError, KeyError) as err:
            raise BadUsage(f"malformed proposal line {line!r}: {err}") from err
    return props


def cmd_simulate(args, cfg) -> int:
    params = None
    if args.vision == "learned":
        if not (args.params or cfg.params_path):
            raise BadUsage("learned vision requires --params or params_path")
        params = _load_params(args.params or cfg.params_path)
    if args.batch is not None:
        _, success_rate, good_rate = sim.run_batch(
            cfg, args.batch, args.seed, vision=args.vision, params=params,
            out_dir=args.out)
        print("episodes,success_rate,good_grasp_rate")
        print(f"{args.batch},{success_rate!r},{good_rate!r}")
        return 0
    proposals = None
    scene = None
    if args.vision == "file":
        if not args.proposals:
            raise BadUsage("--vision file requires --proposals")
        proposals = _read_proposals_file(args.proposals)
    else:
        scene = sim.generate_scene(args.seed, cfg, flat=args.flat)
    report = sim.run_episode(cfg, args.seed, scene=scene, vision=args.vision,
                             params=params, proposals=proposals,
                             out_dir=args.out)
    print(json.dumps(sim.report_to_dict(report), sort_keys=True))
    return 0


def cmd_train(args, cfg) -> int:
    dataset = learned.load_dataset(_require_file(Path(args.data) / "labels.csv",
                                                 "labels.csv").parent)
    if not dataset:
        print("dataset is empty", file=sys.stderr)
        return 1
    params, losses = learned.train(dataset, args.epochs, args.lr, args.seed,
                                   cfg.batch_size)
    learned.save_params(params, args.out)
    if args.loss_out:
        lines = ["epoch,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(losses)]
        Path(args.loss_out).write_text("\n".join(lines) + "\n")
    print(repr(losses[-1]) if losses else "nan")
    return 0


def cmd_genscenes(args, cfg) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["id,px,py,theta"]
    for i in range(args.n):
        scene = sim.generate_scene(args.seed + i, cfg, flat=args.flat)
        image_io.save_ppm(scene.rgb, out / f"scene_{i:04d}.ppm")
        image_io.save_pgm(scene.depth, out / f"scene_{i:04d}.pgm")
        if scene.label is not None:
            (px, py), theta = scene.label
            rows.append(f"{i},{float(px)!r},{float(py)!r},{float(theta)!r}")
    (out / "labels.csv").write_text("\n".join(rows) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="baggrasp",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", "-c", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")

    p = sub.add_parser("vision", help="one grasp proposal from an image pair")
    common(p)
    p.add_argument("--mode", choices=["classical", "learned"], default="classical")
    p.add_argument("--rgb", required=True)
    p.add_argument("--depth")
    p.add_argument("--params")
    p.add_argument("--overlay")
    p.add_argument("--t", type=float, default=0.0, help="proposal timestamp")
    p.set_defaults(func=cmd_vision)

    p = sub.add_parser("denoise", help="stdin proposal stream -> one proposal")
    common(p)
    p.add_argument("--now", type=float, help="window end (default: newest t)")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("plan", help="sampled trajectory CSV for a target")
    common(p)
    p.add_argument("--target", required=True, metavar="X,Y")
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--grasp-z", type=float, dest="grasp_z")
    p.add_argument("--ti", type=float, default=0.0)
    p.add_argument("--tf", type=float, default=5.0)
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--start", metavar="PX,PY,PZ,YAW",
                   help="start pose (default: arm home)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run one episode or a batch")
    common(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="artifact directory")
    p.add_argument("--batch", type=int, metavar="N")
    p.add_argument("--vision", choices=["classical", "learned", "file"],
                   default="classical")
    p.add_argument("--params")
    p.add_argument("--proposals", help="JSON-lines proposals for --vision file")
    p.add_argument("--flat", action="store_true", help="crease-free scene")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the learned vision model")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="params file to write")
    p.add_argument("--loss-out", dest="loss_out", help="per-epoch loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("genscenes", help="write a synthetic dataset directory")
    common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--flat", action="store_true")
    p.set_defaults(func=cmd_genscenes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = _load_cfg(args)
        return args.func(args, cfg)
    except BadUsage as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except image_io.FormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except VisionError as err:
        print(f"vision failure: {err}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
