"""Depth refinement as a sparse quadratic program, and oriented point clouds.

Unknowns are the depths of masked pixels. Depths in a thin observed ring
just outside the mask act as fixed boundary values. The energy combines

* a data term (only used when in-mask sensor depth is kept),
* smoothness ``(D_p - D_q)^2`` over 4-neighbor edges,
* normal consistency ``(n_p . (P_q - P_p))^2`` with ``P = D * ray``,

with edges touching the occlusion-boundary map down-weighted. With z-depth
the back-projected point is linear in depth, so the normal term is exactly
quadratic and a single assembly suffices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse

from .gridcore import Camera, DomainError, Grid2, ShapeError, backproject, mask_bool

REGULARIZATION = 1e-12  # relative to the mean diagonal, keeps A SPD without biasing the scale


class UnderConstrainedError(ValueError):
    """Some unknown region has nothing anchoring its absolute depth."""


class NumericError(ArithmeticError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class EnergyWeights:
    lambda_data: float = 1000.0
    lambda_smooth: float = 0.001
    lambda_normal: float = 1.0
    boundary_atten: float = 0.01

    def __post_init__(self):
        lams = (self.lambda_data, self.lambda_smooth, self.lambda_normal)
        if min(lams) < 0 or max(lams) <= 0:
            raise DomainError("weights must be >= 0 with at least one positive")
        if not 0 <= self.boundary_atten <= 1:
            raise DomainError("boundary_atten must lie in [0, 1]")

    def scaled(self, k: float) -> "EnergyWeights":
        return EnergyWeights(self.lambda_data * k, self.lambda_smooth * k,
                             self.lambda_normal * k, self.boundary_atten)


@dataclass(eq=False)
class SparseSystem:
    """Normal equations ``A x = b`` over the masked unknowns."""

    A: sparse.csr_matrix
    b: np.ndarray
    pixels: np.ndarray          # (N, 2) rows of (y, x)
    shape: tuple[int, int]
    const: float = 0.0          # energy offset so that energy(x) equals the full residual sum

    def energy(self, x: np.ndarray) -> float:
        return float(x @ (self.A @ x) - 2.0 * (self.b @ x) + self.const)

    def scatter(self, x: np.ndarray, base: np.ndarray) -> np.ndarray:
        out = np.array(base, dtype=np.float64, copy=True)
        out[self.pixels[:, 0], self.pixels[:, 1]] = x
        return out


def observed_ring(mask: np.ndarray, sensor: np.ndarray, width: int = 2) -> np.ndarray:
    grown = ndimage.binary_dilation(mask, np.ones((3, 3), dtype=bool), iterations=width)
    return grown & ~mask & np.isfinite(sensor)


def assemble_system(sensor_depth: Grid2, mask: Grid2, boundary: Grid2, normal_map: Grid2,
                    camera: Camera, weights: EnergyWeights = EnergyWeights(),
                    keep_masked_depth: bool = False, ring_width: int = 2) -> SparseSystem:
    if not (sensor_depth.shape == mask.shape == boundary.shape == normal_map.shape):
        raise ShapeError("depth, mask, boundary and normal grids must be aligned")
    if sensor_depth.shape != (camera.height, camera.width):
        raise ShapeError("grids do not match the camera resolution")
    h, w = mask.shape
    unknown = mask_bool(mask)
    bnd = mask_bool(boundary)
    depth = sensor_depth.plane(0).astype(np.float64)
    normals = normal_map.data.astype(np.float64)
    known = observed_ring(unknown, depth, ring_width)

    index = np.full((h, w), -1, dtype=np.int64)
    ys, xs = np.nonzero(unknown)
    index[ys, xs] = np.arange(len(ys))
    n_unk = len(ys)
    if n_unk == 0:
        raise DomainError("mask has no unknown pixels")
    xg, yg = camera.pixel_grid()
    rays = camera.rays(xg, yg)

    rows, cols, vals, rhs = [], [], [], []
    n_rows = 0

    def add(coef_p, coef_q, p_idx, q_idx, q_known_val, target, sel):
        """Residual rows ``coef_p D_p + coef_q D_q - target`` for selected edges."""
        nonlocal n_rows
        m = int(sel.sum())
        if m == 0:
            return
        r = np.arange(n_rows, n_rows + m)
        cp, cq = coef_p[sel], coef_q[sel]
        pi, qi = p_idx[sel], q_idx[sel]
        t = target[sel] - np.where(qi < 0, cq * np.nan_to_num(q_known_val[sel]), 0.0)
        rows.extend([r, r[qi >= 0]])
        cols.extend([pi, qi[qi >= 0]])
        vals.extend([cp, cq[qi >= 0]])
        rhs.append(t)
        n_rows += m

    if keep_masked_depth and weights.lambda_data > 0:
        obs = unknown & np.isfinite(depth)
        s = np.sqrt(weights.lambda_data)
        oy, ox = np.nonzero(obs)
        one = np.full(len(oy), s)
        add(one, np.zeros(len(oy)), index[oy, ox], np.zeros(len(oy), dtype=np.int64),
            np.zeros(len(oy)), s * depth[oy, ox], np.ones(len(oy), dtype=bool))

    anchored = np.zeros(n_unk, dtype=bool)
    if keep_masked_depth and weights.lambda_data > 0:
        anchored[index[unknown & np.isfinite(depth)]] = True
    active = unknown | known
    for dy, dx in ((0, 1), (1, 0)):
        py, px = np.nonzero(active[: h - dy, : w - dx])
        qy, qx = py + dy, px + dx
        keep = active[qy, qx] & (unknown[py, px] | unknown[qy, qx])
        py, px, qy, qx = py[keep], px[keep], qy[keep], qx[keep]
        # orient every edge so that p is an unknown
        swap = ~unknown[py, px]
        py, qy = np.where(swap, qy, py), np.where(swap, py, qy)
        px, qx = np.where(swap, qx, px), np.where(swap, px, qx)
        p_idx, q_idx = index[py, px], index[qy, qx]
        qval = np.where(q_idx < 0, depth[qy, qx], np.nan)
        wgt = np.where(bnd[py, px] | bnd[qy, qx], weights.boundary_atten, 1.0)
        anchored[p_idx[q_idx < 0]] |= wgt[q_idx < 0] > 0
        m = len(py)
        zero = np.zeros(m)
        if weights.lambda_smooth > 0:
            s = np.sqrt(weights.lambda_smooth * wgt)
            add(s, -s, p_idx, q_idx, qval, zero, s > 0)
        if weights.lambda_normal > 0:
            rp, rq = rays[py, px], rays[qy, qx]
            s = np.sqrt(weights.lambda_normal * wgt)
            for ey, ex, e_unk in ((py, px, True), (qy, qx, q_idx >= 0)):
                n_e = normals[ey, ex]
                ok = np.all(np.isfinite(n_e), axis=1) & e_unk & (s > 0)
                n_e = np.nan_to_num(n_e)
                cp = -s * np.einsum("ij,ij->i", n_e, rp)
                cq = s * np.einsum("ij,ij->i", n_e, rq)
                add(cp, cq, p_idx, q_idx, qval, zero, ok)

    _check_anchored(unknown, index, anchored)
    if n_rows == 0:
        raise UnderConstrainedError("no energy terms touch the unknowns")
    J = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n_rows, n_unk))
    c = np.concatenate(rhs)
    A = (J.T @ J).tocsr()
    A = (A + A.T) * 0.5
    reg = REGULARIZATION * float(A.diagonal().mean())
    A = (A + reg * sparse.identity(n_unk, format="csr")).tocsr()
    A.sort_indices()
    return SparseSystem(A, J.T @ c, np.stack([ys, xs], axis=1), (h, w), float(c @ c))


def _check_anchored(unknown, index, anchored):
    labels, n = ndimage.label(unknown)
    if n == 0:
        return
    hit = np.zeros(n + 1, dtype=bool)
    ys, xs = np.nonzero(unknown)
    np.logical_or.at(hit, labels[ys, xs], anchored[index[ys, xs]])
    if not hit[1:].all():
        bad = int(np.flatnonzero(~hit[1:])[0]) + 1
        raise UnderConstrainedError(
            f"mask component {bad} has no observed depth at its rim (touches the image border?)")


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)


def solve_cg(system, init=None, tol: float = 1e-8, max_iter: int = 10000) -> CGResult:
    """Jacobi-preconditioned conjugate gradient.

    Accepts a :class:`SparseSystem` or an ``(A, b)`` pair. Records the
    relative residual and the quadratic energy ``x.Ax - 2 b.x`` after every
    iteration; the energy is non-increasing for SPD ``A``.
    """
    if isinstance(system, SparseSystem):
        A, b = system.A, system.b
    else:
        A, b = system
        A = sparse.csr_matrix(A)
        b = np.asarray(b, dtype=np.float64)
    n = len(b)
    x = np.zeros(n) if init is None else np.array(init, dtype=np.float64, copy=True)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise DomainError("system is not SPD (non-positive diagonal)")
    inv_diag = 1.0 / diag
    bnorm = np.linalg.norm(b)
    bnorm = bnorm if bnorm > 0 else 1.0

    def energy(v):
        return float(v @ (A @ v) - 2.0 * (b @ v))

    r = b - A @ x
    res = [float(np.linalg.norm(r) / bnorm)]
    energies = [energy(x)]
    if res[0] <= tol:
        return CGResult(x, 0, True, res, energies)
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not np.isfinite(pAp) or pAp <= 0:
            raise NumericError("non-finite or non-positive curvature", it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite iterate", it)
        res.append(float(np.linalg.norm(r) / bnorm))
        energies.append(energy(x))
        if res[-1] <= tol:
            return CGResult(x, it, True, res, energies)
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return CGResult(x, max_iter, False, res, energies)


def refine_depth(sensor_depth: Grid2, mask: Grid2, boundary: Grid2, normal_map: Grid2,
                 camera: Camera, weights: EnergyWeights = EnergyWeights(), tol: float = 1e-8,
                 max_iter: int = 10000, **kw) -> Grid2:
    """Refined depth: solved values inside the mask, sensor depth elsewhere."""
    system = assemble_system(sensor_depth, mask, boundary, normal_map, camera, weights, **kw)
    depth = sensor_depth.plane(0).astype(np.float64)
    ring = observed_ring(mask_bool(mask), depth, kw.get("ring_width", 2))
    init = np.full(len(system.b), float(np.median(depth[ring])) if ring.any() else 1.0)
    sol = solve_cg(system, init, tol, max_iter)
    return Grid2(system.scatter(sol.x, depth))


@dataclass(eq=False)
class PointCloudN:
    points: np.ndarray    # (N, 3) camera frame, meters
    normals: np.ndarray   # (N, 3) unit
    pixels: np.ndarray    # (N, 2) source (x, y)
    labels: np.ndarray    # (N,) connected-component id, 1-based

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_components(self) -> int:
        return int(self.labels.max()) if len(self.labels) else 0

    def subset(self, keep: np.ndarray) -> "PointCloudN":
        return PointCloudN(self.points[keep], self.normals[keep], self.pixels[keep], self.labels[keep])

    def component(self, label: int) -> "PointCloudN":
        return self.subset(self.labels == label)

    def largest_component(self) -> "PointCloudN":
        counts = np.bincount(self.labels)
        return self.component(int(np.argmax(counts[1:]) + 1))

    def transformed(self, R: np.ndarray, t=np.zeros(3)) -> "PointCloudN":
        return PointCloudN(self.points @ R.T + t, self.normals @ R.T, self.pixels, self.labels)

    def save(self, path) -> None:
        table = np.column_stack([self.points, self.normals, self.labels])
        with open(path, "w") as fh:
            for row in table:
                fh.write(" ".join(repr(float(v)) for v in row[:6]) + f" {int(row[6])}\n")

    @classmethod
    def load(cls, path) -> "PointCloudN":
        text = Path(path).read_text().strip()
        table = np.loadtxt(path, ndmin=2) if text else np.zeros((0, 7))
        return cls(table[:, :3], table[:, 3:6], np.full((len(table), 2), -1), table[:, 6].astype(int))


def depth_to_pointcloud(depth: Grid2, normal_map: Grid2, mask: Grid2, camera: Camera) -> PointCloudN:
    """One oriented point per masked pixel with finite depth and normal;
    points carry the 4-connected component they belong to."""
    if not (depth.shape == normal_map.shape == mask.shape):
        raise ShapeError("depth, normal and mask grids must be aligned")
    d = depth.plane(0).astype(np.float64)
    nrm = normal_map.data.astype(np.float64)
    valid = mask_bool(mask) & np.isfinite(d) & (d > 0) & np.all(np.isfinite(nrm), axis=2)
    if not valid.any():
        raise DomainError("no masked pixel has both depth and normal")
    labels, _ = ndimage.label(valid)
    ys, xs = np.nonzero(valid)
    pix = np.stack([xs, ys], axis=1).astype(np.float64)
    pts = backproject(camera, pix, d[ys, xs])
    n = nrm[ys, xs]
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return PointCloudN(pts, n, pix, labels[ys, xs])
