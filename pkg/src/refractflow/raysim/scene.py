"""Scene description: camera, pattern plane, glass objects, sensor model."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..gridcore import Camera, DomainError, look_down_camera
from .shapes import TransparentObject, local_aabb


@dataclass(frozen=True)
class PatternPlane:
    """Fronto-parallel display at camera z-depth ``distance_m``.

    A camera pixel ``x`` looking straight at the plane sees pattern
    coordinate ``u = x / scale_px_per_unit + offset_u`` (same for ``v``).
    Pattern cell ``k`` covers ``u`` in ``[k - 0.5, k + 0.5)``; outside
    ``[0, width) x [0, height)`` cells the display is dark.
    """

    distance_m: float
    scale_px_per_unit: float = 1.0
    width: int = 384
    height: int = 384
    offset_u: float = 64.0
    offset_v: float = 64.0
    bits: int = 10

    def __post_init__(self):
        if not self.distance_m > 0:
            raise DomainError("pattern plane distance must be positive")
        if not self.scale_px_per_unit > 0:
            raise DomainError("pattern scale must be positive")
        if self.width > 2 ** self.bits or self.height > 2 ** self.bits:
            raise DomainError("pattern dimensions exceed 2**bits")


@dataclass(frozen=True)
class SensorParams:
    p_fail: float = 0.3
    grazing_deg: float = 70.0
    noise_sigma_m: float = 0.001


@dataclass(eq=False)
class Scene:
    camera: Camera
    plane: PatternPlane
    objects: list[TransparentObject] = field(default_factory=list)
    sensor: SensorParams = field(default_factory=SensorParams)
    seed: int = 0
    ambient: float = 0.0
    ior_air: float = 1.0

    def __post_init__(self):
        h = self.plane.distance_m
        for i, obj in enumerate(self.objects):
            lo, hi = local_aabb(obj.shape, obj.params)
            corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                                for z in (lo[2], hi[2])])
            z = self.camera.from_world(corners @ obj.rotation.T + obj.translation)[:, 2]
            if z.min() <= 0 or z.max() >= h:
                raise DomainError(f"object {i} is not strictly between camera and pattern plane")

    def camera_frame_objects(self):
        """Yield ``(object, R, c)`` with the object pose expressed in camera frame."""
        cam = self.camera
        for obj in self.objects:
            yield obj, cam.rotation.T @ obj.rotation, cam.from_world(obj.translation)

    def without_objects(self) -> "Scene":
        return Scene(self.camera, self.plane, [], self.sensor, self.seed, self.ambient)

    def to_dict(self) -> dict:
        return {
            "camera": self.camera.to_dict(),
            "plane": asdict(self.plane),
            "objects": [o.to_dict() for o in self.objects],
            "sensor": asdict(self.sensor),
            "seed": self.seed,
            "ambient": self.ambient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(Camera.from_dict(d["camera"]), PatternPlane(**d["plane"]),
                   [TransparentObject.from_dict(o) for o in d.get("objects", [])],
                   SensorParams(**d.get("sensor", {})), int(d.get("seed", 0)),
                   float(d.get("ambient", 0.0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text()))


def table_scene(objects=(), table_depth: float = 0.5, size: int = 256, f: float = 400.0,
                margin: int = 64, scale: float = 0.5, seed: int = 0, **plane_kw) -> Scene:
    """Top-down camera over a pattern display lying in the world z=0 table.

    The display covers the image plus ``margin`` pixels on every side, at
    ``scale`` camera pixels per pattern cell.
    """
    cam = look_down_camera(table_depth, size, size, f)
    cells = int(round((size + 2 * margin) / scale))
    offset = margin / scale
    plane = PatternPlane(table_depth, scale_px_per_unit=scale, width=cells, height=cells,
                         offset_u=offset, offset_v=offset, **plane_kw)
    return Scene(cam, plane, list(objects), seed=seed)
