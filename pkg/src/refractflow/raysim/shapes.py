"""Parametric transparent solids as sets of clipped quadric/plane surfaces.

Each surface reports ray roots in the object's local frame, an outward
normal (pointing out of the glass), and a clip predicate that keeps only
the part of the quadric that bounds the solid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..gridcore import DomainError

CLIP_TOL = 1e-9


def _quadratic_roots(a, b, c):
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0.0) & (np.abs(a) > 1e-300)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    # numerically stable pair of roots
    q = -0.5 * (b + np.copysign(sq, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = q / np.where(ok, a, 1.0)
        r2 = np.where(q != 0.0, c / q, r1)
    lo = np.where(ok, np.minimum(r1, r2), np.nan)
    hi = np.where(ok, np.maximum(r1, r2), np.nan)
    return lo, hi


class Sphere:
    def __init__(self, radius: float, sign: float = 1.0):
        self.radius = radius
        self.sign = sign

    def roots(self, o, d):
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * np.einsum("ij,ij->i", o, d)
        c = np.einsum("ij,ij->i", o, o) - self.radius ** 2
        return _quadratic_roots(a, b, c)

    def normal(self, p):
        return self.sign * p / np.linalg.norm(p, axis=1, keepdims=True)

    def accept(self, p):
        return np.ones(len(p), dtype=bool)


class Cylinder:
    """Lateral surface of a z-axis cylinder, clipped to ``|z| <= half_height``."""

    def __init__(self, radius: float, half_height: float, sign: float = 1.0):
        self.radius = radius
        self.half_height = half_height
        self.sign = sign

    def roots(self, o, d):
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2.0 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - self.radius ** 2
        return _quadratic_roots(a, b, c)

    def normal(self, p):
        n = np.zeros_like(p)
        n[:, :2] = p[:, :2]
        return self.sign * n / np.linalg.norm(n, axis=1, keepdims=True)

    def accept(self, p):
        return np.abs(p[:, 2]) <= self.half_height + CLIP_TOL


class Plane:
    """Plane ``n . x = offset`` with outward normal ``n`` and a clip callback."""

    def __init__(self, normal, offset: float, clip):
        self.n = np.asarray(normal, dtype=np.float64)
        self.n = self.n / np.linalg.norm(self.n)
        self.offset = offset
        self.clip = clip

    def roots(self, o, d):
        dn = d @ self.n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(dn) > 1e-300, (self.offset - o @ self.n) / dn, np.nan)
        return t, np.full_like(t, np.nan)

    def normal(self, p):
        return np.broadcast_to(self.n, p.shape).copy()

    def accept(self, p):
        return self.clip(p)


def _convex_polyhedron(halfspaces):
    """Faces of ``{x : n_i . x <= d_i}``; each face clipped by the others."""
    faces = []
    for i, (n, d) in enumerate(halfspaces):
        others = [(np.asarray(m, float) / np.linalg.norm(m), e / np.linalg.norm(m))
                  for j, (m, e) in enumerate(halfspaces) if j != i]

        def clip(p, others=others):
            ok = np.ones(len(p), dtype=bool)
            for m, e in others:
                ok &= p @ m <= e + CLIP_TOL
            return ok

        norm = np.linalg.norm(n)
        faces.append(Plane(np.asarray(n, float) / norm, d / norm, clip))
    return faces


SHAPE_PARAMS = {
    "solid_sphere": ("radius",),
    "sphere_shell": ("outer_r", "thickness"),
    "cylinder_shell": ("r", "thickness", "height"),
    "slab": ("thickness", "extent"),
    "wedge": ("thickness", "extent", "tilt_deg"),
}


def build_surfaces(shape: str, params: dict):
    if shape not in SHAPE_PARAMS:
        raise DomainError(f"unknown shape {shape!r}")
    missing = [k for k in SHAPE_PARAMS[shape] if k not in params]
    if missing:
        raise DomainError(f"shape {shape} missing parameters {missing}")
    p = {k: float(params[k]) for k in SHAPE_PARAMS[shape]}
    if any(v <= 0 for k, v in p.items() if k != "tilt_deg"):
        raise DomainError(f"shape {shape} needs positive dimensions")
    if shape == "solid_sphere":
        return [Sphere(p["radius"])]
    if shape == "sphere_shell":
        if p["thickness"] >= p["outer_r"]:
            raise DomainError("shell thickness must be below the outer radius")
        return [Sphere(p["outer_r"]), Sphere(p["outer_r"] - p["thickness"], -1.0)]
    if shape == "cylinder_shell":
        r, t, hh = p["r"], p["thickness"], p["height"] / 2.0
        if t >= r:
            raise DomainError("shell thickness must be below the radius")
        r_in = r - t

        def ring(q):
            rho2 = q[:, 0] ** 2 + q[:, 1] ** 2
            return (rho2 >= (r_in - CLIP_TOL) ** 2) & (rho2 <= (r + CLIP_TOL) ** 2)

        return [Cylinder(r, hh), Cylinder(r_in, hh, -1.0),
                Plane([0, 0, 1], hh, ring), Plane([0, 0, -1], hh, ring)]
    if shape == "slab":
        e, t = p["extent"] / 2.0, p["thickness"] / 2.0
        return _convex_polyhedron([([1, 0, 0], e), ([-1, 0, 0], e), ([0, 1, 0], e),
                                   ([0, -1, 0], e), ([0, 0, 1], t), ([0, 0, -1], t)])
    e, t = p["extent"] / 2.0, p["thickness"]
    tau = np.radians(p["tilt_deg"])
    if t - e * abs(np.tan(tau)) <= 0:
        raise DomainError("wedge top face dips below its base")
    top = np.array([np.sin(tau), 0.0, np.cos(tau)])
    return _convex_polyhedron([([1, 0, 0], e), ([-1, 0, 0], e), ([0, 1, 0], e),
                               ([0, -1, 0], e), (top, t * np.cos(tau)), ([0, 0, -1], 0.0)])


def local_aabb(shape: str, params: dict) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounds ``(lo, hi)`` of the solid in its local frame."""
    p = {k: float(v) for k, v in params.items()}
    if shape == "solid_sphere":
        r = np.full(3, p["radius"])
        return -r, r
    if shape == "sphere_shell":
        r = np.full(3, p["outer_r"])
        return -r, r
    if shape == "cylinder_shell":
        hi = np.array([p["r"], p["r"], p["height"] / 2])
        return -hi, hi
    e = p["extent"] / 2
    if shape == "slab":
        hi = np.array([e, e, p["thickness"] / 2])
        return -hi, hi
    top = p["thickness"] + e * abs(np.tan(np.radians(p["tilt_deg"])))
    return np.array([-e, -e, 0.0]), np.array([e, e, top])


@dataclass(eq=False)
class TransparentObject:
    """A glass solid posed in the world by ``rotation``/``translation``."""

    shape: str
    params: dict
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ior: float = 1.5

    def __post_init__(self):
        if not self.ior > 1.0:
            raise DomainError("object ior must exceed 1")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.surfaces = build_surfaces(self.shape, self.params)

    def to_dict(self) -> dict:
        return {"shape": self.shape, "params": {k: float(v) for k, v in self.params.items()},
                "pose": {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()},
                "ior": self.ior}

    @classmethod
    def from_dict(cls, d: dict) -> "TransparentObject":
        pose = d.get("pose", {})
        return cls(d["shape"], dict(d["params"]), np.asarray(pose.get("rotation", np.eye(3))),
                   np.asarray(pose.get("translation", np.zeros(3))), float(d.get("ior", 1.5)))


def rotation_about(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1 - np.cos(angle_rad)) * (K @ K)
