"""End-to-end run on one sample: decode, invert, refine, cloud, grasp."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..depthopt import EnergyWeights, PointCloudN, depth_to_pointcloud, refine_depth
from ..flow2normal import InversionParams, d0_prior, normal_map_from_flow
from ..flowcodec import decode_stack, flow_from_correspondence, load_stack
from ..graspisf import GraspPlan, GripperModel, PlanConfig, plan_grasp, save_grasps
from ..gridcore import Grid2, read_grid, save_png, write_grid
from ..raysim import Scene
from .metrics import angular_error_stats, depth_rmse, flow_rmse

log = logging.getLogger(__name__)

STAGES = ("decode_flow", "normals", "refine_depth", "pointcloud", "grasp")
CSV_COLUMNS = ("sample_id", "seed", "n_objects", "flow_rmse_px", "mean_deg", "median_deg",
               "pct11", "pct22", "pct30", "depth_rmse_mm", "best_grasp_energy", "wall_ms_per_stage")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage


@dataclass
class PipelineParams:
    ior: float = 1.5
    d0_min_gap: float = 0.03
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    gripper: GripperModel = field(default_factory=GripperModel)
    grasp: PlanConfig = field(default_factory=PlanConfig)
    record_timing: bool = False
    previews: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineParams":
        d = dict(d)
        out = cls()
        for key, typ in (("weights", EnergyWeights), ("gripper", GripperModel), ("grasp", PlanConfig)):
            if key in d:
                sub = dict(d.pop(key))
                if "up" in sub:
                    sub["up"] = tuple(sub["up"])
                setattr(out, key, typ(**sub))
        for k, v in d.items():
            setattr(out, k, v)
        return out


@dataclass
class PipelineResult:
    refined_depth: Grid2 | None = None
    cloud: PointCloudN | None = None
    plan: GraspPlan | None = None
    row: dict = field(default_factory=dict)
    timing_ms: dict = field(default_factory=dict)
    failed_stage: str | None = None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_line(row: dict) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def find_reference(sample_dir: Path) -> Path:
    for cand in (sample_dir / "reference", sample_dir.parent / "reference"):
        if (cand / "manifest.json").exists():
            return cand
    raise FileNotFoundError(f"no reference capture next to {sample_dir}")


def run_pipeline(sample_dir, out_dir, params: PipelineParams = PipelineParams(),
                 start: str = "decode_flow") -> PipelineResult:
    """Run the stages from ``start`` onward; earlier stages are reloaded from
    the intermediates already saved in ``out_dir``.

    A failing stage is recorded in ``result.failed_stage`` and in the
    written report; artifacts from the stages before it are kept.
    """
    sample_dir, out = Path(sample_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if start not in STAGES:
        raise ValueError(f"unknown stage {start!r}")
    scene = Scene.load(sample_dir / "scene.json")
    cam = scene.camera
    mask = read_grid(sample_dir / "mask.rfg")
    boundary = read_grid(sample_dir / "boundary.rfg")
    sensor = read_grid(sample_dir / "sensor_depth.rfg")
    gt = {n: read_grid(sample_dir / f"{n}.rfg") for n in ("gt_flow", "gt_normal", "gt_depth")}
    first = STAGES.index(start)
    res = PipelineResult()
    row = {"sample_id": sample_dir.name, "seed": scene.seed, "n_objects": len(scene.objects)}
    flow = normals = None

    def timed(stage, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except Exception as exc:  # report names the stage, keeps earlier artifacts
            res.failed_stage = stage
            raise StageError(stage, exc) from exc
        finally:
            res.timing_ms[stage] = round(1000.0 * (time.perf_counter() - t0), 3)

    try:
        if first <= 0:
            def decode():
                frames, stack = load_stack(sample_dir / "capture")
                ref_frames, ref_stack = load_stack(find_reference(sample_dir))
                f = flow_from_correspondence(decode_stack(frames, stack),
                                             decode_stack(ref_frames, ref_stack), mask)
                if not np.isfinite(f.data).any():
                    raise ValueError("no decodable flow inside the mask")
                return f
            flow = timed("decode_flow", decode)
            write_grid(out / "flow.rfg", flow)
        else:
            flow = read_grid(out / "flow.rfg")
        row["flow_rmse_px"] = flow_rmse(flow, gt["gt_flow"], mask)

        if first <= 1:
            def invert():
                prior = d0_prior(sensor, mask, scene.plane.distance_m, params.d0_min_gap)
                ip = InversionParams(ior=params.ior, h=scene.plane.distance_m,
                                     d0=scene.plane.distance_m - params.d0_min_gap)
                nm, n_fail = normal_map_from_flow(flow, mask, cam, ip, d0_map=prior)
                log.info("%s: %d pixels without a normal", sample_dir.name, n_fail)
                return nm
            normals = timed("normals", invert)
            write_grid(out / "normal.rfg", normals)
        else:
            normals = read_grid(out / "normal.rfg")
        nm = angular_error_stats(normals, gt["gt_normal"], mask)
        row.update(mean_deg=nm.mean_deg, median_deg=nm.median_deg, pct11=nm.pct_11_25,
                   pct22=nm.pct_22_5, pct30=nm.pct_30)

        if first <= 2:
            res.refined_depth = timed("refine_depth", lambda: refine_depth(
                sensor, mask, boundary, normals, cam, params.weights))
            write_grid(out / "refined_depth.rfg", res.refined_depth)
        else:
            res.refined_depth = read_grid(out / "refined_depth.rfg")
        row["depth_rmse_mm"] = 1000.0 * depth_rmse(res.refined_depth, gt["gt_depth"], mask)

        if first <= 3:
            res.cloud = timed("pointcloud", lambda: depth_to_pointcloud(
                res.refined_depth, normals, mask, cam))
            res.cloud.save(out / "cloud.txt")
        else:
            res.cloud = PointCloudN.load(out / "cloud.txt")

        up = tuple(float(v) for v in cam.rotation.T @ np.array([0.0, 0.0, 1.0]))
        cfg = PlanConfig(**{**asdict(params.grasp), "up": up})
        target = res.cloud.largest_component()
        res.plan = timed("grasp", lambda: plan_grasp(target, params.gripper, cfg))
        save_grasps(out / "grasps.json", res.plan)
        row["best_grasp_energy"] = res.plan.best.energy if res.plan.found else None
    except StageError as exc:
        log.error("%s: %s", sample_dir.name, exc)
    finally:
        if params.record_timing:
            row["wall_ms_per_stage"] = ";".join(f"{k}={v}" for k, v in res.timing_ms.items())
        res.row = row
        (out / "metrics.csv").write_text(",".join(CSV_COLUMNS) + "\n" + csv_line(row))
        (out / "timing.json").write_text(json.dumps(res.timing_ms, indent=2))
        (out / "report.json").write_text(json.dumps(
            {"failed_stage": res.failed_stage, "start": start}, indent=2))
        if params.previews:
            _previews(out, flow, normals, res.refined_depth)
    return res


def _previews(out: Path, flow, normals, depth):
    for name, grid, is_normal in (("flow", flow, False), ("normal", normals, True),
                                  ("refined_depth", depth, False)):
        if grid is not None:
            save_png(out / f"{name}.png", grid, normals=is_normal)


def evaluate(dataset_dir, out_dir, params: PipelineParams = PipelineParams(),
             workers: int = 1) -> list[dict]:
    """Pipeline over every ``sample_*`` directory; aggregate CSV is ordered
    by sample id whatever the completion order."""
    root, out = Path(dataset_dir), Path(out_dir)
    samples = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("sample_"))
    jobs = [(str(s), str(out / s.name), params) for s in samples]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    results.sort(key=lambda r: r[0]["sample_id"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row, _ in results:
            fh.write(csv_line(row))
    return [dict(row, failed_stage=failed) for row, failed in results]


def _run_job(job):
    sample, out, params = job
    res = run_pipeline(sample, out, params)
    return res.row, res.failed_stage
