"""Image grids, the pinhole camera, and the RFG1 grid file format.

Conventions used throughout the package:

* pixel centers sit at integer coordinates, pixel ``(0, 0)`` is top-left,
  ``x`` grows to the right and ``y`` grows downwards;
* depth is z-depth (length of the projection on the principal axis), never
  Euclidean ray length;
* invalid samples in float grids are NaN; masks live in separate grids.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RFG1"
DTYPE_F32 = 1
HEADER = struct.Struct("<4sIIII")


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class GridFormatError(ValueError):
    """A grid file is malformed. ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ShapeError(ValueError):
    """Inputs that must be aligned have mismatched shapes."""


@dataclass(frozen=True, eq=False)
class Grid2:
    """Row-major float32 raster of shape ``(height, width, channels)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ShapeError(f"grid data must be 2-D or 3-D, got ndim={arr.ndim}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ShapeError("grid width and height must be >= 1")
        if c not in (1, 2, 3):
            raise ShapeError(f"channels must be 1, 2 or 3, got {c}")
        arr = np.array(arr, dtype=np.float32, order="C", copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def plane(self, c: int = 0) -> np.ndarray:
        return self.data[:, :, c]

    def same_bits(self, other: "Grid2") -> bool:
        """Bit-level equality (NaN payloads included)."""
        return (self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())

    @classmethod
    def full(cls, height: int, width: int, channels: int = 1, value: float = 0.0) -> "Grid2":
        return cls(np.full((height, width, channels), value, dtype=np.float32))


def as_mask(values) -> Grid2:
    """Build a mask grid from anything truthy/falsy per pixel."""
    arr = np.asarray(values.data if isinstance(values, Grid2) else values)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ShapeError("mask must have a single channel")
        arr = arr[:, :, 0]
    return Grid2(np.where(np.nan_to_num(arr, nan=0.0) > 0.5, 1.0, 0.0).astype(np.float32))


def mask_bool(mask: Grid2) -> np.ndarray:
    """Boolean view of a mask grid; rejects anything but exact 0/1 values."""
    plane = mask.plane(0)
    if mask.channels != 1 or not np.all((plane == 0.0) | (plane == 1.0)):
        raise DomainError("mask values must be exactly 0.0 or 1.0")
    return plane == 1.0


def _check_rotation(rot: np.ndarray) -> None:
    if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
        raise DomainError("rotation must be a finite 3x3 matrix")
    if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(rot) - 1.0) > 1e-9:
        raise DomainError("rotation must be orthonormal with determinant +1")


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; ``rotation``/``translation`` map camera to world."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if self.width < 1 or self.height < 1:
            raise DomainError("camera resolution must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")
        _check_rotation(rot)
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer pixel-center coordinates ``(xs, ys)``, each ``(height, width)``."""
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return xs.astype(np.float64), ys.astype(np.float64)

    def rays(self, px, py) -> np.ndarray:
        """Direction with unit z through pixel(s); ``backproject`` at depth 1."""
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        return np.stack([(px - self.cx) / self.fx, (py - self.cy) / self.fy, np.ones_like(px)], axis=-1)

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.rotation.T + self.translation

    def from_world(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts) - self.translation) @ self.rotation

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(int(d["width"]), int(d["height"]), float(d["fx"]), float(d["fy"]),
                   float(d["cx"]), float(d["cy"]),
                   np.asarray(d.get("rotation", np.eye(3)), dtype=np.float64),
                   np.asarray(d.get("translation", np.zeros(3)), dtype=np.float64))


def look_down_camera(height_m: float, width: int = 256, height: int = 256, f: float = 400.0) -> Camera:
    """Camera ``height_m`` above a z-up world, looking straight down at z=0.

    World z=0 then sits at camera z-depth ``height_m``.
    """
    rot = np.diag([1.0, -1.0, -1.0])
    return Camera(width, height, f, f, (width - 1) / 2.0, (height - 1) / 2.0,
                  rot, np.array([0.0, 0.0, height_m]))


def project(camera: Camera, point) -> np.ndarray:
    """Camera-frame point(s) ``(..., 3)`` to continuous pixel(s) ``(..., 2)``."""
    p = np.asarray(point, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise DomainError("projection requires z > 0")
    return np.stack([camera.fx * p[..., 0] / z + camera.cx,
                     camera.fy * p[..., 1] / z + camera.cy], axis=-1)


def backproject(camera: Camera, pixel, depth) -> np.ndarray:
    """Pixel(s) ``(..., 2)`` at z-depth(s) to camera-frame point(s) ``(..., 3)``."""
    px = np.asarray(pixel, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise DomainError("backprojection requires depth > 0")
    x = (px[..., 0] - camera.cx) / camera.fx * d
    y = (px[..., 1] - camera.cy) / camera.fy * d
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def write_grid(path, grid: Grid2) -> None:
    header = HEADER.pack(MAGIC, grid.width, grid.height, grid.channels, DTYPE_F32)
    Path(path).write_bytes(header + grid.data.astype("<f4", copy=False).tobytes(order="C"))


def read_grid(path) -> Grid2:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise GridFormatError("truncated header", len(raw))
    magic, width, height, channels, dtype = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise GridFormatError(f"bad magic {magic!r}", 0)
    if dtype != DTYPE_F32:
        raise GridFormatError(f"unsupported dtype code {dtype}", 16)
    if width < 1 or height < 1 or channels not in (1, 2, 3):
        raise GridFormatError(f"bad dimensions {width}x{height}x{channels}", 4)
    expected = HEADER.size + 4 * width * height * channels
    if len(raw) != expected:
        raise GridFormatError(f"payload size mismatch, expected {expected} bytes total",
                              min(len(raw), expected))
    arr = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(height, width, channels)
    return Grid2(arr)


def grid_to_image(grid: Grid2, normals: bool = False) -> np.ndarray:
    """8-bit visualization: normals map [-1, 1] to [0, 255]; others are
    min-max normalized per channel. NaN renders black."""
    data = grid.data.astype(np.float64)
    valid = np.isfinite(data)
    if normals:
        out = (np.clip(data, -1, 1) + 1.0) * 127.5
    else:
        out = np.zeros_like(data)
        for c in range(data.shape[2]):
            ch, ok = data[:, :, c], valid[:, :, c]
            if ok.any():
                lo, hi = ch[ok].min(), ch[ok].max()
                out[:, :, c] = (ch - lo) / (hi - lo) * 255.0 if hi > lo else 128.0
    out = np.where(valid, out, 0.0)
    img = np.round(out).astype(np.uint8)
    if img.shape[2] == 2:
        img = np.concatenate([img, np.zeros_like(img[:, :, :1])], axis=2)
    return img[:, :, 0] if img.shape[2] == 1 else img


def save_png(path, grid: Grid2, normals: bool = False) -> None:
    from PIL import Image

    Image.fromarray(grid_to_image(grid, normals)).save(path)


def save_camera(path, camera: Camera) -> None:
    Path(path).write_text(json.dumps(camera.to_dict(), indent=2))


def load_camera(path) -> Camera:
    return Camera.from_dict(json.loads(Path(path).read_text()))
