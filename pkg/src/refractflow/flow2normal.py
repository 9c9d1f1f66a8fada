"""Surface normals from refractive flow under a single-interface model.

Light leaves background point A, travels inside the glass to the surface
point B seen by the pixel, and refracts there into the camera ray. Given
the flow, A is where the pixel ``p + flow`` meets the background plane; B
sits on the pixel's ray at a prior depth. The normal at B lies in the plane
spanned by the two ray directions, so only its tilt inside that plane is
unknown; it is found by bisection on the Snell residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridcore import Camera, DomainError, Grid2, ShapeError, mask_bool


@dataclass(frozen=True)
class InversionParams:
    ior: float = 1.5
    h: float = 0.5
    d0: float = 0.45
    max_iter: int = 60
    tol_rad: float = 1e-4
    bracket_deg: float = 85.0
    min_flow_px: float = 0.5

    def __post_init__(self):
        if not self.ior > 1:
            raise DomainError("ior must exceed 1")
        if not 0 < self.d0 < self.h:
            raise DomainError("need 0 < d0 < h")
        if not self.tol_rad > 0:
            raise DomainError("tol_rad must be positive")


def snell_residual(phi, alpha, ior):
    """Signed mismatch (rad) between the refraction angle Snell predicts
    for tilt ``phi`` and the one the geometry requires."""
    return np.arcsin(np.clip(ior * np.sin(phi - alpha), -1.0, 1.0)) - phi


def _invert(flow, px, py, camera: Camera, params: InversionParams, d0):
    """Vectorized core. Returns ``(normals, ok)``; normals (N, 3)."""
    flow = np.asarray(flow, dtype=np.float64).reshape(-1, 2)
    ray = camera.rays(px, py).reshape(-1, 3)
    view = ray / np.linalg.norm(ray, axis=1, keepdims=True)
    n = len(view)
    d0 = np.broadcast_to(np.asarray(d0, dtype=np.float64), (n,))
    if np.any(~(d0 > 0) | ~(d0 < params.h)):
        raise DomainError("surface depth prior must satisfy 0 < d0 < h")
    B = ray * d0[:, None]
    A = camera.rays(np.ravel(px) + flow[:, 0], np.ravel(py) + flow[:, 1]).reshape(-1, 3) * params.h
    a = -view
    d_in = B - A
    d_in /= np.linalg.norm(d_in, axis=1, keepdims=True)
    perp = d_in - np.einsum("ij,ij->i", d_in, a)[:, None] * a
    sin_a = np.linalg.norm(perp, axis=1)
    alpha = np.arctan2(sin_a, np.einsum("ij,ij->i", d_in, a))
    small = np.hypot(flow[:, 0], flow[:, 1]) < params.min_flow_px
    b = np.where((sin_a > 0)[:, None], perp / np.where(sin_a > 0, sin_a, 1.0)[:, None], 0.0)

    lo = np.zeros(n)
    hi = np.full(n, np.radians(params.bracket_deg))
    r_lo = snell_residual(lo, alpha, params.ior)
    r_hi = snell_residual(hi, alpha, params.ior)
    ok = ~small & (r_lo < 0) & (r_hi > 0)
    phi = np.full(n, np.nan)
    done = ~ok
    for _ in range(params.max_iter):
        if done.all():
            break
        mid = 0.5 * (lo + hi)
        r = snell_residual(mid, alpha, params.ior)
        conv = ~done & (np.abs(r) < params.tol_rad)
        phi[conv] = mid[conv]
        done |= conv
        up = r < 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    ok &= np.isfinite(phi)
    normals = np.full((n, 3), np.nan)
    normals[ok] = np.cos(phi[ok])[:, None] * a[ok] + np.sin(phi[ok])[:, None] * b[ok]
    normals[small] = a[small]
    return normals, ok | small


def normal_from_flow_pixel(flow, pixel, camera: Camera, params: InversionParams, d0=None):
    """Camera-facing unit normal for one pixel, or ``None`` if no root exists."""
    f = np.asarray(flow, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise DomainError("flow must be finite")
    normals, ok = _invert(f[None], [pixel[0]], [pixel[1]], camera, params,
                          params.d0 if d0 is None else d0)
    return normals[0] if ok[0] else None


def normal_map_from_flow(flow: Grid2, mask: Grid2, camera: Camera, params: InversionParams,
                         d0_map: Grid2 | None = None) -> tuple[Grid2, int]:
    """Per-pixel inversion over the mask. Returns the normal map and the
    number of masked pixels with finite flow whose inversion failed.

    ``d0_map``, when given, supplies a per-pixel surface depth prior in
    place of ``params.d0``.
    """
    if flow.shape != mask.shape or flow.channels != 2:
        raise ShapeError("flow must be a 2-channel grid aligned with the mask")
    if flow.shape != (camera.height, camera.width):
        raise ShapeError("flow resolution differs from the camera")
    h, w = flow.shape
    data = flow.data.astype(np.float64)
    want = mask_bool(mask) & np.all(np.isfinite(data), axis=2)
    out = np.full((h, w, 3), np.nan)
    ys, xs = np.nonzero(want)
    if d0_map is not None:
        d0 = d0_map.plane(0).astype(np.float64)[ys, xs]
    else:
        d0 = params.d0
    normals, ok = _invert(data[ys, xs], xs.astype(float), ys.astype(float), camera, params, d0)
    out[ys[ok], xs[ok]] = normals[ok]
    return Grid2(out), int((~ok).sum())


def d0_prior(sensor_depth: Grid2, mask: Grid2, h: float, min_gap: float = 0.03) -> Grid2:
    """Surface depth prior: sensor depth where finite, else the masked
    median, capped at ``h - min_gap``.

    Type II returns put refracted pixels at the background depth, so the
    cap is what keeps the prior in front of the background.
    """
    m = mask_bool(mask)
    d = sensor_depth.plane(0).astype(np.float64)
    vals = d[m & np.isfinite(d)]
    fallback = float(np.median(vals)) if vals.size else h - min_gap
    prior = np.where(np.isfinite(d), d, fallback)
    return Grid2(np.minimum(prior, h - min_gap))


def closed_form_normal(flow, pixel, camera: Camera, ior: float, h: float, d0: float) -> np.ndarray:
    """Vector form of Snell's law, ``n ~ ior * d_in - d_out``, for checking
    the bisection."""
    ray = camera.rays(pixel[0], pixel[1])
    B = ray * d0
    A = camera.rays(pixel[0] + flow[0], pixel[1] + flow[1]) * h
    d_in = (B - A) / np.linalg.norm(B - A)
    d_out = -B / np.linalg.norm(B)
    n = ior * d_in - d_out
    n /= np.linalg.norm(n)
    return n if n @ B < 0 else -n
