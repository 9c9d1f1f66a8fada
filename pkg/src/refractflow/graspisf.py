"""Top-down parallel-jaw grasp planning by iterative surface fitting.

Gripper frame: ``x`` is the closing axis (pads sit at ``x = +-opening/2``
with normals facing each other), ``z`` points back up the arm so the
gripper approaches along ``-z``, and ``y = z x x``. The origin is the
midpoint between the pad centers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .depthopt import PointCloudN
from .gridcore import DomainError


@dataclass(frozen=True)
class GripperModel:
    """Parallel jaw; defaults follow the Franka Emika Panda hand."""

    pad_width: float = 0.018
    pad_height: float = 0.028
    max_open: float = 0.08
    min_open: float = 0.0
    finger_thickness: float = 0.01
    finger_length: float = 0.05
    palm_depth: float = 0.03
    palm_height: float = 0.04

    def __post_init__(self):
        if not 0 <= self.min_open < self.max_open:
            raise DomainError("need 0 <= min_open < max_open")
        if min(self.pad_width, self.pad_height, self.finger_thickness, self.finger_length) <= 0:
            raise DomainError("gripper dimensions must be positive")

    @classmethod
    def load(cls, path) -> "GripperModel":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class GraspCandidate:
    rotation: np.ndarray        # gripper-to-cloud, columns are gripper axes
    center: np.ndarray
    opening: float
    energy: float = np.inf
    contacts: tuple[int, int] = (0, 0)
    index: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def closing_axis(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def pose(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.center
        return T

    def to_dict(self) -> dict:
        return {"pose": self.pose.ravel().tolist(), "opening": self.opening,
                "energy": None if not np.isfinite(self.energy) else self.energy,
                "contacts": list(self.contacts)}


@dataclass(frozen=True)
class PlanConfig:
    n: int = 200
    seed: int = 0
    iters: int = 10
    gamma: float = 0.25
    k_min: int = 15
    capture_depth: float = 0.005
    clearance: float = 0.005
    roll_jitter_deg: float = 10.0
    collision_margin: float = 0.002
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)


@dataclass
class GraspPlan:
    ranked: list[GraspCandidate]
    n_sampled: int
    n_fitted_finite: int

    @property
    def found(self) -> bool:
        return bool(self.ranked)

    @property
    def best(self) -> GraspCandidate | None:
        return self.ranked[0] if self.ranked else None


def _unit(v):
    return v / np.linalg.norm(v)


def _frame(closing: np.ndarray, up: np.ndarray) -> np.ndarray:
    x = _unit(closing - (closing @ up) * up)
    y = np.cross(up, x)
    return np.column_stack([x, y, up])


def _rotate_about(v, axis, angle):
    return (v * np.cos(angle) + np.cross(axis, v) * np.sin(angle)
            + axis * (axis @ v) * (1 - np.cos(angle)))


def antipodal_width(cloud: PointCloudN, p: np.ndarray, axis: np.ndarray, tube: float = 0.003) -> float:
    """Distance from ``p`` to the farthest opposite-facing surface point met
    when walking along ``-axis``; 0 if there is none."""
    v = p - cloud.points
    s = v @ axis
    lateral = np.linalg.norm(v - s[:, None] * axis, axis=1)
    near = (s > 1e-3) & (lateral < tube)
    opposite = near & (cloud.normals @ axis < -0.3)
    pick = opposite if opposite.any() else near
    return float(s[pick].max()) if pick.any() else 0.0


def sample_candidates(cloud: PointCloudN, gripper: GripperModel, n: int, seed: int,
                      config: PlanConfig = PlanConfig()) -> list[GraspCandidate]:
    """Top-down candidates seeded at random surface points.

    The closing axis follows the point normal projected on the horizontal
    plane, jittered by a random wrist roll. Near-vertical normals fall back
    to the horizontal direction from the cloud centroid, turned by a random
    angle. Every draw is made for every candidate so the random stream does
    not depend on which branch is taken.
    """
    if len(cloud) == 0:
        raise DomainError("cannot sample grasps on an empty cloud")
    rng = np.random.default_rng(seed)
    up = _unit(np.asarray(config.up, dtype=np.float64))
    centroid = cloud.points.mean(axis=0)
    jitter = np.radians(config.roll_jitter_deg)
    out = []
    for i in range(n):
        j = int(rng.integers(len(cloud)))
        roll = rng.uniform(-jitter, jitter)
        spin = rng.uniform(0.0, 2.0 * np.pi)
        p, n_p = cloud.points[j], cloud.normals[j]
        horiz = n_p - (n_p @ up) * up
        if np.linalg.norm(horiz) > 0.2:
            axis = _unit(horiz)
            axis = _rotate_about(axis, up, roll)
        else:
            radial = p - centroid
            radial -= (radial @ up) * up
            if np.linalg.norm(radial) < 1e-9:
                radial = np.cross(up, [1.0, 0.0, 0.0]) if abs(up[0]) < 0.9 else np.cross(up, [0.0, 1.0, 0.0])
            axis = _rotate_about(_unit(radial), up, spin)
        width = antipodal_width(cloud, p, axis)
        R = _frame(axis, up)
        center = p - axis * (width / 2.0)
        opening = float(np.clip(width + config.clearance, gripper.min_open, gripper.max_open))
        out.append(GraspCandidate(R, center, opening, index=i))
    return out


def _captured(cloud, R, c, o, gripper, depth):
    q = (cloud.points - c) @ R
    nrm = cloud.normals @ R
    inside = (np.abs(q[:, 1]) <= gripper.pad_width / 2) & (np.abs(q[:, 2]) <= gripper.pad_height / 2)
    pads = []
    for s in (1.0, -1.0):
        sel = inside & (np.abs(q[:, 0] - s * o / 2) <= depth)
        pads.append((s, q[sel], nrm[sel]))
    return pads


def surface_energy(cloud, R, c, o, gripper, config: PlanConfig):
    """Mean per-point fitting residual and captured counts per pad."""
    pads = _captured(cloud, R, c, o, gripper, config.capture_depth)
    counts = tuple(len(qp) for _, qp, _ in pads)
    if min(counts) < config.k_min:
        return np.inf, counts
    total = 0.0
    for s, qp, nr in pads:
        d = qp[:, 0] - s * o / 2
        a = 1.0 - s * nr[:, 0]
        total += float(np.sum(d * d) + config.gamma * np.sum(a * a))
    return total / sum(counts), counts


def fit_surface(candidate: GraspCandidate, cloud: PointCloudN, gripper: GripperModel,
                iters: int = 10, config: PlanConfig = PlanConfig()) -> GraspCandidate:
    """Gauss-Newton refinement of translation along the closing axis, wrist
    roll and opening. A step is kept only if it lowers the energy (with up
    to five halvings), so the recorded energy never increases.
    """
    R, c, o = candidate.rotation.copy(), candidate.center.copy(), candidate.opening
    energy, counts = surface_energy(cloud, R, c, o, gripper, config)
    history = [energy]
    sg = np.sqrt(config.gamma)
    for _ in range(iters):
        pads = _captured(cloud, R, c, o, gripper, config.capture_depth)
        J, r = [], []
        for s, qp, nr in pads:
            m = len(qp)
            J.append(np.column_stack([-np.ones(m), qp[:, 1], np.full(m, -s / 2)]))
            r.append(qp[:, 0] - s * o / 2)
            J.append(np.column_stack([np.zeros(m), -s * sg * nr[:, 1], np.zeros(m)]))
            r.append(sg * (1.0 - s * nr[:, 0]))
        J, r = np.vstack(J), np.concatenate(r)
        if len(r) == 0 or np.linalg.matrix_rank(J) < 3:
            break
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        accepted = False
        scale = 1.0
        for _ in range(6):
            dtx, dpsi, dopen = scale * step
            cz, sz = np.cos(dpsi), np.sin(dpsi)
            R_new = R @ np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
            c_new = c + dtx * R[:, 0]
            o_new = float(np.clip(o + dopen, gripper.min_open, gripper.max_open))
            e_new, counts_new = surface_energy(cloud, R_new, c_new, o_new, gripper, config)
            if e_new < energy:
                R, c, o, energy, counts = R_new, c_new, o_new, e_new, counts_new
                accepted = True
                break
            scale *= 0.5
        history.append(energy)
        if not accepted:
            break
    return replace(candidate, rotation=R, center=c, opening=o, energy=energy,
                   contacts=counts, history=history)


def collision_check(candidate: GraspCandidate, cloud: PointCloudN, gripper: GripperModel,
                    margin: float = 0.002) -> bool:
    """True when the grasp is collision-free.

    Fingers sweep from full opening in to the grasp opening; a point
    collides if it sits deeper than ``margin`` inside that swept volume or
    inside the palm box grown by ``margin``.
    """
    if len(cloud) == 0:
        return True
    q = (cloud.points - candidate.center) @ candidate.rotation
    x, y, z = q[:, 0], q[:, 1], q[:, 2]
    g, o = gripper, candidate.opening
    z_lo, z_palm = -g.pad_height / 2, -g.pad_height / 2 + g.finger_length
    outer = g.max_open / 2 + g.finger_thickness
    in_finger_band = (np.abs(y) <= g.pad_width / 2 + margin) & (z >= z_lo - margin) & (z <= z_palm + margin)
    fingers = in_finger_band & (np.abs(x) > o / 2 + margin) & (np.abs(x) <= outer + margin)
    palm = ((np.abs(x) <= outer + margin) & (np.abs(y) <= g.palm_depth / 2 + margin)
            & (z >= z_palm - margin) & (z <= z_palm + g.palm_height + margin))
    return not bool(np.any(fingers | palm))


def plan_grasp(cloud: PointCloudN, gripper: GripperModel = GripperModel(),
               config: PlanConfig = PlanConfig()) -> GraspPlan:
    """Sample, fit, drop infeasible or colliding candidates, sort by energy
    (candidate index breaks ties). An empty ranking means no grasp."""
    if len(cloud) == 0:
        raise DomainError("cannot plan on an empty cloud")
    cands = sample_candidates(cloud, gripper, config.n, config.seed, config)
    fitted = [fit_surface(c, cloud, gripper, config.iters, config) for c in cands]
    finite = [c for c in fitted if np.isfinite(c.energy)]
    ok = [c for c in finite if collision_check(c, cloud, gripper, config.collision_margin)]
    return GraspPlan(rank_candidates(ok), len(cands), len(finite))


def rank_candidates(candidates) -> list[GraspCandidate]:
    """Ascending energy; the sampling index breaks ties."""
    return sorted(candidates, key=lambda c: (c.energy, c.index))


def contact_normals(candidate: GraspCandidate, cloud: PointCloudN, gripper: GripperModel,
                    config: PlanConfig = PlanConfig()):
    """Mean unit normals (cloud frame) of the points captured by each pad."""
    pads = _captured(cloud, candidate.rotation, candidate.center, candidate.opening, gripper,
                     config.capture_depth)
    out = []
    for _, _, nr in pads:
        m = (nr.mean(axis=0) if len(nr) else np.full(3, np.nan)) @ candidate.rotation.T
        out.append(m / np.linalg.norm(m))
    return out


def save_grasps(path, plan: GraspPlan) -> None:
    Path(path).write_text(json.dumps([g.to_dict() for g in plan.ranked], indent=2))


def cylinder_shell_cloud(radius: float = 0.03, height: float = 0.06, thickness: float = 0.003,
                         spacing: float = 0.0015, base=(0.0, 0.0, 0.0)) -> PointCloudN:
    """Oriented samples of an upright open tube standing on ``base``
    (z up): outer wall plus top rim annulus."""
    n_theta = max(8, int(round(2 * np.pi * radius / spacing)))
    n_z = max(2, int(round(height / spacing)) + 1)
    th = np.arange(n_theta) * (2 * np.pi / n_theta)
    zz = np.linspace(0.0, height, n_z)
    T, Z = np.meshgrid(th, zz)
    wall = np.column_stack([radius * np.cos(T.ravel()), radius * np.sin(T.ravel()), Z.ravel()])
    wall_n = np.column_stack([np.cos(T.ravel()), np.sin(T.ravel()), np.zeros(T.size)])
    rims = []
    for r in np.arange(radius - thickness, radius, spacing)[1:]:
        k = max(8, int(round(2 * np.pi * r / spacing)))
        a = np.arange(k) * (2 * np.pi / k)
        rims.append(np.column_stack([r * np.cos(a), r * np.sin(a), np.full(k, height)]))
    rim = np.vstack(rims) if rims else np.zeros((0, 3))
    pts = np.vstack([wall, rim]) + np.asarray(base, dtype=np.float64)
    nrm = np.vstack([wall_n, np.tile([0.0, 0.0, 1.0], (len(rim), 1))])
    return PointCloudN(pts, nrm, np.full((len(pts), 2), -1.0), np.ones(len(pts), dtype=int))
