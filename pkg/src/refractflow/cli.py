"""Command line front door: ``refractflow <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("refractflow")


def _load_config(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_gen_patterns(args) -> int:
    from .flowcodec import gen_patterns, save_stack

    stack = gen_patterns(args.bits, args.width, args.height)
    save_stack(args.out, stack.frames, stack)
    return 0


def cmd_decode_flow(args) -> int:
    from .flowcodec import decode_stack, flow_from_correspondence, load_stack
    from .gridcore import read_grid, write_grid

    frames, stack = load_stack(args.obj)
    ref_frames, ref_stack = load_stack(args.ref)
    m_obj = decode_stack(frames, stack, args.min_contrast)
    m_ref = decode_stack(ref_frames, ref_stack, args.min_contrast)
    flow = flow_from_correspondence(m_obj, m_ref, read_grid(args.mask), args.window)
    write_grid(args.out, flow)
    return 0


def cmd_render(args) -> int:
    from .harness import write_sample
    from .raysim import Scene

    info = write_sample(Scene.load(args.scene), args.out, previews=not args.no_previews)
    print(json.dumps(info))
    return 0


def cmd_flow2normal(args) -> int:
    from .flow2normal import InversionParams, d0_prior, normal_map_from_flow
    from .gridcore import load_camera, read_grid, write_grid

    mask = read_grid(args.mask)
    params = InversionParams(ior=args.ior, h=args.h, d0=args.d0 if args.d0 else args.h - 0.03)
    prior = d0_prior(read_grid(args.depth), mask, args.h) if args.depth else None
    normals, n_failed = normal_map_from_flow(read_grid(args.flow), mask, load_camera(args.camera),
                                             params, d0_map=prior)
    write_grid(args.out, normals)
    log.info("%d masked pixels without a normal", n_failed)
    return 0


def cmd_refine_depth(args) -> int:
    from .depthopt import EnergyWeights, depth_to_pointcloud, refine_depth
    from .gridcore import load_camera, read_grid, write_grid

    weights = EnergyWeights(args.lambda_data, args.lambda_smooth, args.lambda_normal, args.boundary_atten)
    cam = load_camera(args.camera)
    mask, normals = read_grid(args.mask), read_grid(args.normal)
    refined = refine_depth(read_grid(args.depth), mask, read_grid(args.boundary), normals, cam, weights)
    write_grid(args.out, refined)
    if args.cloud:
        depth_to_pointcloud(refined, normals, mask, cam).save(args.cloud)
    return 0


def cmd_plan_grasp(args) -> int:
    from .depthopt import PointCloudN
    from .graspisf import GripperModel, PlanConfig, plan_grasp, save_grasps

    cfg = _load_config(args.config)
    if "up" in cfg:
        cfg["up"] = tuple(cfg["up"])
    config = PlanConfig(**{**cfg, "n": args.n, "seed": args.seed})
    gripper = GripperModel.load(args.gripper) if args.gripper else GripperModel()
    cloud = PointCloudN.load(args.cloud)
    if args.largest:
        cloud = cloud.largest_component()
    plan = plan_grasp(cloud, gripper, config)
    save_grasps(args.out, plan)
    if not plan.found:
        log.error("no collision-free grasp found")
        return 1
    return 0


def cmd_gen_dataset(args) -> int:
    from .harness import GeneratorConfig, gen_dataset

    config = GeneratorConfig.from_dict(_load_config(args.config))
    gen_dataset(config, args.n, args.seed, args.out, workers=args.workers,
                previews=not args.no_previews)
    return 0


def _pipeline_params(args):
    from .harness import PipelineParams

    params = PipelineParams.from_dict(_load_config(args.config))
    params.record_timing = args.timing
    if args.seed is not None:
        from dataclasses import replace

        params.grasp = replace(params.grasp, seed=args.seed)
    return params


def cmd_pipeline(args) -> int:
    from .harness import run_pipeline

    res = run_pipeline(args.sample, args.out, _pipeline_params(args), start=args.start)
    if res.failed_stage:
        print(f"FAILED at stage {res.failed_stage}", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args) -> int:
    from .harness import evaluate

    rows = evaluate(args.dataset, args.out, _pipeline_params(args), workers=args.workers)
    failed = [r["sample_id"] for r in rows if r["failed_stage"]]
    for r in rows:
        if r["failed_stage"]:
            print(f"{r['sample_id']}: failed at {r['failed_stage']}", file=sys.stderr)
    return 1 if failed or not rows else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refractflow")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-patterns", help="write the Gray-code pattern stack")
    s.add_argument("--bits", type=int, default=10)
    s.add_argument("--width", type=int, default=1024)
    s.add_argument("--height", type=int, default=1024)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_patterns)

    s = sub.add_parser("decode-flow", help="refractive flow from object and reference captures")
    s.add_argument("--obj", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--min-contrast", type=float, default=0.05)
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decode_flow)

    s = sub.add_parser("render", help="render a scene description into a sample directory")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-previews", action="store_true")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("flow2normal", help="surface normals from refractive flow")
    s.add_argument("--flow", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--ior", type=float, default=1.5)
    s.add_argument("--h", type=float, required=True, help="camera to background distance (m)")
    s.add_argument("--d0", type=float, default=None, help="constant interface depth prior (m)")
    s.add_argument("--depth", default=None, help="sensor depth used as per-pixel prior")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_flow2normal)

    s = sub.add_parser("refine-depth", help="normal-guided depth refinement")
    for name in ("depth", "mask", "boundary", "normal", "camera", "out"):
        s.add_argument(f"--{name}", required=True)
    s.add_argument("--lambda-data", type=float, default=1000.0)
    s.add_argument("--lambda-smooth", type=float, default=0.001)
    s.add_argument("--lambda-normal", type=float, default=1.0)
    s.add_argument("--boundary-atten", type=float, default=0.01)
    s.add_argument("--cloud", default=None, help="also write the oriented point cloud")
    s.set_defaults(func=cmd_refine_depth)

    s = sub.add_parser("plan-grasp", help="rank parallel-jaw grasps on a point cloud")
    s.add_argument("--cloud", required=True)
    s.add_argument("--gripper", default=None)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", default=None)
    s.add_argument("--largest", action="store_true", help="plan on the largest component only")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plan_grasp)

    s = sub.add_parser("gen-dataset", help="render randomized table-top samples")
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--no-previews", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_dataset)

    for name, func, target in (("pipeline", cmd_pipeline, "sample"), ("evaluate", cmd_evaluate, "dataset")):
        s = sub.add_parser(name, help=f"run the full pipeline on a {target}")
        s.add_argument(f"--{target}", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--config", default=None)
        s.add_argument("--seed", type=int, default=None, help="grasp sampling seed")
        s.add_argument("--timing", action="store_true", help="fill the wall_ms_per_stage column")
        if name == "pipeline":
            s.add_argument("--start", default="decode_flow",
                           help="first stage to recompute; earlier ones are reloaded")
        else:
            s.add_argument("--workers", type=int, default=1)
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        log.error("%s", exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
