"""Vectorized Whitted-style tracing of camera rays through glass objects."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..gridcore import DomainError, project
from .optics import fresnel_transmittance, refract_many
from .scene import Scene

T_EPS = 1e-9
MAX_EVENTS = 48


class Status(IntEnum):
    BACKGROUND_DIRECT = 0
    BACKGROUND_REFRACTED = 1
    TIR_LOST = 2
    MISS = 3


@dataclass
class TraceResult:
    """Per-ray outcome arrays (length N); camera frame, meters."""

    status: np.ndarray
    first_hit_depth: np.ndarray
    first_hit_normal: np.ndarray
    view_dir: np.ndarray
    background_point: np.ndarray
    pattern_coord: np.ndarray
    transmittance: np.ndarray
    n_interfaces: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return np.isfinite(self.first_hit_depth)

    def incidence_deg(self) -> np.ndarray:
        cos = -np.einsum("ij,ij->i", self.view_dir, self.first_hit_normal)
        return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


@dataclass
class RayOutcome:
    status: Status
    first_hit_depth: float
    first_hit_normal: np.ndarray
    background_point: np.ndarray
    background_pattern_coord: np.ndarray
    transmittance: float
    view_dir: np.ndarray


def _nearest_hit(scene_objs, origin, direction, alive):
    """Closest accepted surface crossing per ray among all objects."""
    n = len(origin)
    best_t = np.full(n, np.inf)
    best_obj = np.full(n, -1)
    best_normal = np.full((n, 3), np.nan)
    idx = np.flatnonzero(alive)
    if idx.size == 0:
        return best_t, best_obj, best_normal
    o_all, d_all = origin[idx], direction[idx]
    for k, (obj, R, c) in enumerate(scene_objs):
        o = (o_all - c) @ R
        d = d_all @ R
        for surf in obj.surfaces:
            for t in surf.roots(o, d):
                cand = np.isfinite(t) & (t > T_EPS) & (t < best_t[idx])
                if not cand.any():
                    continue
                sub = np.flatnonzero(cand)
                p = o[sub] + t[sub, None] * d[sub]
                ok = surf.accept(p)
                sub = sub[ok]
                if sub.size == 0:
                    continue
                rows = idx[sub]
                best_t[rows] = t[sub]
                best_obj[rows] = k
                best_normal[rows] = surf.normal(p[ok]) @ R.T
    return best_t, best_obj, best_normal


def trace_rays(scene: Scene, directions: np.ndarray) -> TraceResult:
    """Trace rays leaving the camera center along ``directions`` (N, 3)."""
    d = np.asarray(directions, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    n = len(d)
    objs = list(scene.camera_frame_objects())
    iors = np.array([o.ior for o, _, _ in objs] + [scene.ior_air])

    origin = np.zeros((n, 3))
    direction = d.copy()
    inside = np.full(n, -1)
    alive = np.ones(n, dtype=bool)
    status = np.full(n, Status.BACKGROUND_DIRECT, dtype=np.int8)
    trans = np.ones(n)
    n_if = np.zeros(n, dtype=np.int32)
    first_depth = np.full(n, np.nan)
    first_normal = np.full((n, 3), np.nan)

    for _ in range(MAX_EVENTS):
        t, obj, normal = _nearest_hit(objs, origin, direction, alive)
        hit = alive & (obj >= 0)
        if not hit.any():
            break
        rows = np.flatnonzero(hit)
        t, obj, normal = t[rows], obj[rows], normal[rows]
        dirs = direction[rows]
        p = origin[rows] + t[:, None] * dirs
        entering = np.einsum("ij,ij->i", dirs, normal) < 0.0
        n1 = np.where(entering, scene.ior_air, iors[obj])
        n2 = np.where(entering, iors[obj], scene.ior_air)
        facing = np.where(entering[:, None], normal, -normal)

        first = np.isnan(first_depth[rows])
        first_depth[rows[first]] = p[first, 2]
        first_normal[rows[first]] = normal[first]

        new_dir, tir = refract_many(dirs, facing, n1 / n2)
        cos_i = -np.einsum("ij,ij->i", dirs, facing)
        cos_t = -np.einsum("ij,ij->i", np.where(tir[:, None], dirs, new_dir), facing)
        trans[rows] *= np.where(tir, 0.0, fresnel_transmittance(cos_i, cos_t, n1, n2))
        n_if[rows] += 1

        lost = rows[tir]
        status[lost] = Status.TIR_LOST
        alive[lost] = False
        ok = ~tir
        rows = rows[ok]
        origin[rows] = p[ok]
        direction[rows] = new_dir[ok]
        inside[rows] = np.where(entering[ok], obj[ok], -1)
    else:
        stuck = alive & (inside >= 0)
        status[stuck] = Status.TIR_LOST
        alive[stuck] = False

    h = scene.plane.distance_m
    bg = np.full((n, 3), np.nan)
    reach = alive & (direction[:, 2] > 0.0)
    status[alive & ~reach] = Status.MISS
    tp = (h - origin[reach, 2]) / direction[reach, 2]
    bg[reach] = origin[reach] + tp[:, None] * direction[reach]
    bg[reach, 2] = h
    refracted = reach & (n_if > 0)
    status[refracted] = Status.BACKGROUND_REFRACTED

    coord = np.full((n, 2), np.nan)
    if reach.any():
        pix = project(scene.camera, bg[reach])
        pl = scene.plane
        coord[reach, 0] = pix[:, 0] / pl.scale_px_per_unit + pl.offset_u
        coord[reach, 1] = pix[:, 1] / pl.scale_px_per_unit + pl.offset_v
    return TraceResult(status, first_depth, first_normal, d, bg, coord, trans, n_if)


def trace_pixels(scene: Scene, px, py) -> TraceResult:
    return trace_rays(scene, scene.camera.rays(np.ravel(px), np.ravel(py)))


def trace_pixel(scene: Scene, pixel) -> RayOutcome:
    x, y = float(pixel[0]), float(pixel[1])
    cam = scene.camera
    if not (-0.5 <= x < cam.width - 0.5 and -0.5 <= y < cam.height - 0.5):
        raise DomainError(f"pixel {pixel} outside image bounds")
    r = trace_pixels(scene, [x], [y])
    return RayOutcome(Status(int(r.status[0])), float(r.first_hit_depth[0]), r.first_hit_normal[0],
                      r.background_point[0], r.pattern_coord[0], float(r.transmittance[0]),
                      r.view_dir[0])
