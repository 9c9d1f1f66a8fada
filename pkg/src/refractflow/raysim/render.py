"""Ground-truth channels, simulated sensor depth and pattern captures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..gridcore import Grid2, as_mask, mask_bool, project
from .scene import Scene, SensorParams
from .tracer import RayOutcome, Status, TraceResult, trace_pixels

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z + np.uint64(0x9E3779B97F4A7C15)) & _M64
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
    return z ^ (z >> np.uint64(31))


def pixel_uniform(seed: int, x, y, stream: int) -> np.ndarray:
    """Counter-based uniform draws in (0, 1) keyed by (seed, x, y, stream).

    Independent of evaluation order, so any split of the image across
    workers reproduces the same numbers.
    """
    x = np.asarray(x, dtype=np.uint64)
    y = np.asarray(y, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _splitmix(np.full(x.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        key = _splitmix(key ^ (x * np.uint64(0x100000001B3)))
        key = _splitmix(key ^ (y * np.uint64(0xC2B2AE3D27D4EB4F)))
        key = _splitmix(key ^ np.uint64(stream))
    return ((key >> np.uint64(11)).astype(np.float64) + 0.5) / float(1 << 53)


def pixel_normal(seed: int, x, y, stream: int) -> np.ndarray:
    u1 = pixel_uniform(seed, x, y, 2 * stream + 1)
    u2 = pixel_uniform(seed, x, y, 2 * stream + 2)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(eq=False)
class GeoChannels:
    gt_depth: Grid2
    gt_normal: Grid2
    mask: Grid2
    boundary: Grid2
    gt_flow: Grid2
    sensor_depth: Grid2

    NAMES = ("gt_depth", "gt_normal", "mask", "boundary", "gt_flow", "sensor_depth")

    def items(self):
        return [(name, getattr(self, name)) for name in self.NAMES]


def boundary_from_mask(mask: Grid2) -> Grid2:
    """Morphological gradient (3x3 dilation minus 3x3 erosion)."""
    m = mask_bool(mask)
    se = np.ones((3, 3), dtype=bool)
    grad = ndimage.binary_dilation(m, se) & ~ndimage.binary_erosion(m, se, border_value=0)
    return as_mask(grad)


def sensor_depths(result: TraceResult, px, py, params: SensorParams, seed: int) -> np.ndarray:
    """Analytic RGB-D error model.

    Object-free rays return the plane depth plus Gaussian noise. Rays that
    hit glass first lose their return with probability ``p_fail`` beyond the
    grazing angle (Type I); otherwise they report the z-depth of the
    background point they finally reach (Type II), or nothing if they never
    reach it.
    """
    hit = result.hit
    depth = np.full(len(hit), np.nan)
    direct = ~hit & (result.status == Status.BACKGROUND_DIRECT)
    noise = pixel_normal(seed, px, py, 0)
    depth[direct] = result.background_point[direct, 2] + params.noise_sigma_m * noise[direct]
    refr = hit & (result.status == Status.BACKGROUND_REFRACTED)
    depth[refr] = result.background_point[refr, 2]
    grazing = hit & (result.incidence_deg() > params.grazing_deg)
    fail = grazing & (pixel_uniform(seed, px, py, 7) < params.p_fail)
    depth[fail] = np.nan
    return depth


def sensor_model(outcome: RayOutcome, params: SensorParams = SensorParams(), seed: int = 0,
                 pixel=(0, 0)) -> float:
    """Single-ray form of :func:`sensor_depths`."""
    res = TraceResult(np.array([outcome.status]), np.array([outcome.first_hit_depth]),
                      outcome.first_hit_normal[None], outcome.view_dir[None],
                      outcome.background_point[None], outcome.background_pattern_coord[None],
                      np.array([outcome.transmittance]), np.array([0]))
    return float(sensor_depths(res, [pixel[0]], [pixel[1]], params, seed)[0])


def trace_image(scene: Scene) -> TraceResult:
    xs, ys = scene.camera.pixel_grid()
    return trace_pixels(scene, xs, ys)


def render_channels(scene: Scene, traced: TraceResult | None = None) -> GeoChannels:
    cam = scene.camera
    h, w = cam.height, cam.width
    r = traced if traced is not None else trace_image(scene)
    xs, ys = cam.pixel_grid()
    px, py = xs.ravel(), ys.ravel()
    hit = r.hit
    depth = np.where(hit, r.first_hit_depth, scene.plane.distance_m)
    normal = np.where(hit[:, None], r.first_hit_normal, np.nan)
    flow = np.full((len(px), 2), np.nan)
    refr = hit & (r.status == Status.BACKGROUND_REFRACTED)
    if refr.any():
        flow[refr] = project(cam, r.background_point[refr]) - np.stack([px[refr], py[refr]], axis=1)
    mask = as_mask(hit.reshape(h, w))
    sensor = sensor_depths(r, px.astype(np.int64), py.astype(np.int64), scene.sensor, scene.seed)
    return GeoChannels(
        gt_depth=Grid2(depth.reshape(h, w)),
        gt_normal=Grid2(normal.reshape(h, w, 3)),
        mask=mask,
        boundary=boundary_from_mask(mask),
        gt_flow=Grid2(flow.reshape(h, w, 2)),
        sensor_depth=Grid2(sensor.reshape(h, w)),
    )


def render_capture(scene: Scene, stack, traced: TraceResult | None = None) -> list[Grid2]:
    """Camera images of every frame in ``stack`` shown on the pattern plane.

    Radiance is the displayed cell value carried along the traced path and
    scaled by the product of Fresnel transmittances, plus ambient light.
    """
    cam = scene.camera
    r = traced if traced is not None else trace_image(scene)
    pl = scene.plane
    coord = r.pattern_coord
    ok = np.all(np.isfinite(coord), axis=1)
    cu = np.zeros(len(coord), dtype=np.int64)
    cv = np.zeros(len(coord), dtype=np.int64)
    cu[ok] = np.floor(coord[ok, 0] + 0.5).astype(np.int64)
    cv[ok] = np.floor(coord[ok, 1] + 0.5).astype(np.int64)
    ok &= (cu >= 0) & (cu < stack.pattern_width) & (cv >= 0) & (cv < stack.pattern_height)
    if stack.pattern_width != pl.width or stack.pattern_height != pl.height:
        raise ValueError("pattern stack does not match the scene's display")
    gain = np.where(ok, r.transmittance, 0.0).astype(np.float32)
    ambient = np.float32(scene.ambient)
    frames = []
    for pattern in stack.frames:
        value = np.zeros(len(coord), dtype=np.float32)
        value[ok] = pattern[cv[ok], cu[ok]]
        frames.append(Grid2((ambient + gain * value).reshape(cam.height, cam.width)))
    return frames
