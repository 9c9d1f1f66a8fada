"""Snell refraction and Fresnel transmittance."""

from __future__ import annotations

import numpy as np

from ..gridcore import DomainError

UNIT_TOL = 1e-9


def refract_many(incident: np.ndarray, normal: np.ndarray, eta):
    """Vectorized refraction of ``(N, 3)`` unit directions.

    ``normal`` must face the incident side (``incident . normal < 0``) and
    ``eta`` is ``n1 / n2``. Returns ``(directions, tir)``; rows flagged in
    ``tir`` carry NaN directions.
    """
    cos_i = -np.einsum("ij,ij->i", incident, normal)
    eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), cos_i.shape)
    k = 1.0 - eta * eta * (1.0 - cos_i * cos_i)
    tir = k < 0.0
    root = np.sqrt(np.where(tir, 0.0, k))
    out = eta[:, None] * incident + (eta * cos_i - root)[:, None] * normal
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    out[tir] = np.nan
    return out, tir


def refract_dir(incident, normal, eta: float):
    """Refract one unit direction; returns ``None`` on total internal reflection."""
    i = np.asarray(incident, dtype=np.float64).reshape(3)
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(i) - 1.0) > UNIT_TOL or abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
        raise DomainError("refract_dir needs unit incident and normal vectors")
    if not eta > 0:
        raise DomainError("eta must be positive")
    if i @ n >= 0:
        raise DomainError("normal must face the incident ray (incident . normal < 0)")
    out, tir = refract_many(i[None], n[None], eta)
    return None if tir[0] else out[0]


def fresnel_transmittance(cos_i: np.ndarray, cos_t: np.ndarray, n1, n2) -> np.ndarray:
    """Unpolarized power transmittance across one dielectric interface."""
    rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)
    rp = (n2 * cos_i - n1 * cos_t) / (n2 * cos_i + n1 * cos_t)
    return 1.0 - 0.5 * (rs * rs + rp * rp)


def slab_lateral_shift(thickness: float, theta1: float, ior: float) -> float:
    """Closed-form perpendicular offset of a ray crossing a parallel slab."""
    theta2 = np.arcsin(np.sin(theta1) / ior)
    return thickness * np.sin(theta1 - theta2) / np.cos(theta2)
