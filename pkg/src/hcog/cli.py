"""Command-line surface.

Subcommands: ``plan`` (synthesize or validate a generation plan),
``generate`` (execute or resume a run), ``render`` (turntable PNGs from a
PLY), ``inspect`` (kernel statistics as JSON), and ``report`` (figures and
summary tables from a run directory).

Exit codes are stable: 0 success, 1 runtime failure, 2 configuration or
validation error. ``plan`` and ``inspect`` print machine-parseable JSON on
stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .camera import CameraView
from .config import ConfigError, RunConfig, load_run_config
from .images import save_png
from .pipeline import PipelineError, resume, run
from .planner import PlanError, load_plan, plan_to_dict, synthesize_plan, validate
from .ply import PlyError, load_ply
from .rasterizer import RenderOptions, render
from .report import write_report
from .scene import Mark
from .wire import LlmClient, WireError

__all__ = ["main"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hcog", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="synthesize or validate a generation plan")
    p_plan.add_argument("--prompt", required=True)
    source = p_plan.add_mutually_exclusive_group(required=True)
    source.add_argument("--llm-endpoint", help="chat-completions endpoint for plan synthesis")
    source.add_argument("--plan-file", help="offline plan JSON to validate and pass through")
    p_plan.add_argument("--out", required=True, help="where to write the validated plan JSON")

    p_gen = sub.add_parser("generate", help="run the generation pipeline")
    p_gen.add_argument("--config", required=True, help="run configuration JSON")
    p_gen.add_argument("--out-dir", required=True)
    p_gen.add_argument("--resume", metavar="CKPT_DIR", nargs="?", const="", default=None,
                       help="resume from a checkpointed run directory (default: --out-dir)")
    p_gen.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_render = sub.add_parser("render", help="render turntable PNGs from a PLY file")
    p_render.add_argument("--ply", required=True)
    p_render.add_argument("--azimuths", default="0,45,90,135,180,225,270,315")
    p_render.add_argument("--elevation", type=float, default=15.0)
    p_render.add_argument("--out-dir", required=True)
    p_render.add_argument("--width", type=int, default=128)
    p_render.add_argument("--height", type=int, default=128)
    p_render.add_argument("--radius", type=float, default=None, help="camera distance (default: auto)")

    p_inspect = sub.add_parser("inspect", help="print kernel statistics as JSON")
    p_inspect.add_argument("--ply", required=True)

    p_report = sub.add_parser("report", help="write figures and summaries for a run directory")
    p_report.add_argument("--run-dir", required=True)
    p_report.add_argument("--out-dir", default=None, help="default: the run directory itself")

    return parser


def _cmd_plan(args) -> int:
    if args.plan_file is not None:
        try:
            plan = load_plan(args.plan_file)
        except PlanError as exc:
            print(f"plan validation failed: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        # valid file passes through byte-identically
        with open(args.plan_file, "rb") as fh:
            payload = fh.read()
        with open(args.out, "wb") as fh:
            fh.write(payload)
    else:
        try:
            plan = synthesize_plan(args.prompt, llm_client=LlmClient(args.llm_endpoint))
        except (PlanError, WireError) as exc:
            print(f"plan synthesis failed: {exc}", file=sys.stderr)
            return EXIT_CONFIG if isinstance(exc, PlanError) else EXIT_RUNTIME
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(plan_to_dict(plan), fh, indent=2)
            fh.write("\n")
    print(json.dumps(plan_to_dict(plan)))
    return EXIT_OK


def _cmd_generate(args) -> int:
    flags = {}
    if args.seed is not None:
        flags["seed"] = args.seed
    try:
        config = RunConfig(load_run_config(args.config, flags=flags))
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.resume is not None:
            source = args.resume or args.out_dir
            scene, manifest = resume(config, source)
        else:
            scene, manifest = run(config, args.out_dir)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, WireError, PlanError, PlyError, OSError) as exc:
        print(f"run failed (resumable from the last checkpoint): {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"out_dir": args.out_dir, "finished": manifest["finished"], "kernels": len(scene)}))
    return EXIT_OK


def _cmd_render(args) -> int:
    try:
        azimuths = [float(a) for a in args.azimuths.split(",") if a.strip() != ""]
    except ValueError:
        print(f"bad --azimuths value: {args.azimuths!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        scene = load_ply(args.ply)
    except (PlyError, OSError) as exc:
        print(f"could not read {args.ply}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    os.makedirs(args.out_dir, exist_ok=True)
    radius = args.radius if args.radius is not None else scene.bounding_radius() * 1.8
    written = []
    for az in azimuths:
        view = CameraView(
            azimuth=az % 360.0,
            elevation=args.elevation,
            radius=radius,
            width=args.width,
            height=args.height,
        )
        out = render(scene, view)
        name = f"az{int(az) if float(az).is_integer() else az}.png"
        save_png(out.color, os.path.join(args.out_dir, name))
        written.append(name)
    print(json.dumps({"out_dir": args.out_dir, "images": written}))
    return EXIT_OK


def _cmd_inspect(args) -> int:
    try:
        scene = load_ply(args.ply)
    except (PlyError, OSError) as exc:
        print(f"could not read {args.ply}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    blocks = {}
    for b in sorted(set(scene.block_ids.tolist())):
        blocks[str(b)] = int((scene.block_ids == b).sum())
    if len(scene):
        bounds = {
            "min": [float(v) for v in scene.positions.min(axis=0)],
            "max": [float(v) for v in scene.positions.max(axis=0)],
        }
    else:
        bounds = {"min": [0.0, 0.0, 0.0], "max": [0.0, 0.0, 0.0]}
    info = {
        "kernels": len(scene),
        "marks": {
            "original": int((scene.marks == Mark.ORIGINAL).sum()),
            "extended": int((scene.marks == Mark.EXTENDED).sum()),
            "new_part": int((scene.marks == Mark.NEW_PART).sum()),
        },
        "blocks": blocks,
        "bounds": bounds,
    }
    print(json.dumps(info))
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        summary = write_report(args.run_dir, args.out_dir)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(summary))
    return EXIT_OK


_COMMANDS = {
    "plan": _cmd_plan,
    "generate": _cmd_generate,
    "render": _cmd_render,
    "inspect": _cmd_inspect,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
