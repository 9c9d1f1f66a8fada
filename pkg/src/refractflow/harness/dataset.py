"""Randomized table-top scenes rendered into sample directories."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..flowcodec import gen_patterns, save_stack
from ..gridcore import save_png, write_grid
from ..raysim import (Scene, TransparentObject, local_aabb, render_capture, render_channels,
                      rotation_about, table_scene, trace_image)

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 10_000

DEFAULT_FAMILIES = {
    "solid_sphere": {"radius": [0.015, 0.035]},
    "sphere_shell": {"outer_r": [0.02, 0.04], "thickness": [0.002, 0.004]},
    "cylinder_shell": {"r": [0.015, 0.035], "thickness": [0.002, 0.004], "height": [0.04, 0.1]},
    "slab": {"thickness": [0.004, 0.01], "extent": [0.03, 0.06]},
    "wedge": {"thickness": [0.02, 0.03], "extent": [0.03, 0.05], "tilt_deg": [5.0, 30.0]},
}


class GenerationError(RuntimeError):
    pass


@dataclass
class GeneratorConfig:
    families: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_FAMILIES.items()})
    min_objects: int = 1
    max_objects: int = 5
    table_depth: float = 0.5
    image_size: int = 256
    focal_px: float = 400.0
    contact_gap: float = 0.0005
    separation: float = 0.002
    border_px: int = 8
    ior: float = 1.5

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "GeneratorConfig":
        return cls.from_dict(json.loads(Path(path).read_text())) if path else cls()


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def sample_scene(config: GeneratorConfig, seed: int, index: int = 0) -> Scene:
    """Rejection-sample 1..5 upright objects resting on the table.

    Each object's lowest point sits ``contact_gap`` above the table, objects
    keep their xy bounding circles apart, and everything stays inside the
    camera footprint.
    """
    rng = np.random.default_rng(sample_seed(seed, index))
    n_obj = int(rng.integers(config.min_objects, config.max_objects + 1))
    half_view = (config.image_size / 2 - config.border_px) / config.focal_px
    names = sorted(config.families)
    placed: list[tuple[np.ndarray, float]] = []
    objects = []
    attempts = 0
    while len(objects) < n_obj:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise GenerationError(f"scene {index}: could not place {n_obj} objects "
                                  f"within {MAX_ATTEMPTS} attempts")
        shape = names[int(rng.integers(len(names)))]
        params = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in sorted(config.families[shape].items())}
        yaw = float(rng.uniform(0, 2 * np.pi))
        lo, hi = local_aabb(shape, params)
        radius = float(np.hypot(max(abs(lo[0]), hi[0]), max(abs(lo[1]), hi[1])))
        # footprint at the object's top, where perspective makes it widest
        top_depth = config.table_depth - (hi[2] - lo[2]) - config.contact_gap
        lim = half_view * top_depth - radius
        if lim <= 0:
            continue
        xy = rng.uniform(-1, 1, size=2) * lim
        if any(np.linalg.norm(xy - c) < radius + r + config.separation for c, r in placed):
            continue
        R = rotation_about([0, 0, 1], yaw)
        t = np.array([xy[0], xy[1], config.contact_gap - lo[2]])
        objects.append(TransparentObject(shape, params, R, t, config.ior))
        placed.append((xy, radius))
    return table_scene(objects, config.table_depth, config.image_size, config.focal_px,
                       seed=sample_seed(seed, index))


def write_sample(scene: Scene, directory, previews: bool = True) -> dict:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    traced = trace_image(scene)
    ch = render_channels(scene, traced)
    for name, grid in ch.items():
        write_grid(out / f"{name}.rfg", grid)
        if previews:
            save_png(out / f"{name}.png", grid, normals=(name == "gt_normal"))
    stack = gen_patterns(scene.plane.bits, scene.plane.width, scene.plane.height)
    save_stack(out / "capture", render_capture(scene, stack, traced), stack)
    scene.save(out / "scene.json")
    return {"n_objects": len(scene.objects),
            "shapes": "+".join(o.shape for o in scene.objects),
            "mask_pixels": int(ch.mask.plane().sum())}


def write_reference(scene: Scene, directory) -> None:
    stack = gen_patterns(scene.plane.bits, scene.plane.width, scene.plane.height)
    save_stack(directory, render_capture(scene.without_objects(), stack), stack)


def _generate_one(args):
    config, seed, index, root, previews = args
    scene = sample_scene(config, seed, index)
    info = write_sample(scene, Path(root) / f"sample_{index:04d}", previews)
    return {"sample_id": f"sample_{index:04d}", "seed": scene.seed, **info}


def gen_dataset(config: GeneratorConfig, n_samples: int, seed: int, out_dir,
                workers: int = 1, previews: bool = True) -> list[dict]:
    """Render ``n_samples`` scenes plus the shared object-free reference
    capture; writes ``manifest.csv`` ordered by sample id."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "generator.json").write_text(json.dumps({"seed": seed, "n_samples": n_samples,
                                                    "config": asdict(config)}, indent=2))
    jobs = [(config, seed, i, str(root), previews) for i in range(n_samples)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_generate_one, jobs))
    else:
        rows = [_generate_one(j) for j in jobs]
    write_reference(table_scene([], config.table_depth, config.image_size, config.focal_px),
                    root / "reference")
    rows.sort(key=lambda r: r["sample_id"])
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["sample_id", "seed", "n_objects", "shapes", "mask_pixels"])
        writer.writeheader()
        writer.writerows(rows)
    log.info("wrote %d samples to %s", len(rows), root)
    return rows
