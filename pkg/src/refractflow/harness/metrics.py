"""Normal, flow and depth error statistics over object pixels."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..gridcore import DomainError, Grid2, ShapeError, mask_bool

THRESHOLDS_DEG = (11.25, 22.5, 30.0)


@dataclass(frozen=True)
class NormalMetrics:
    mean_deg: float
    median_deg: float
    pct_11_25: float
    pct_22_5: float
    pct_30: float
    n_pixels: int

    def as_dict(self) -> dict:
        return asdict(self)


def angular_errors_deg(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Angle between direction rows, in degrees.

    Uses ``2 atan2(|a - b|, |a + b|)`` on renormalized vectors, which equals
    ``arccos(a . b)`` for unit vectors but stays exact near 0 and 180 deg.
    """
    a = pred / np.linalg.norm(pred, axis=1, keepdims=True)
    b = gt / np.linalg.norm(gt, axis=1, keepdims=True)
    return np.degrees(2.0 * np.arctan2(np.linalg.norm(a - b, axis=1), np.linalg.norm(a + b, axis=1)))


def _masked_pairs(pred: Grid2, gt: Grid2, mask: Grid2):
    if pred.shape != gt.shape or pred.shape != mask.shape or pred.channels != gt.channels:
        raise ShapeError("prediction, ground truth and mask must be aligned")
    p = pred.data.astype(np.float64)
    g = gt.data.astype(np.float64)
    sel = mask_bool(mask) & np.all(np.isfinite(p), axis=2) & np.all(np.isfinite(g), axis=2)
    if not sel.any():
        raise DomainError("no masked pixel has finite values in both inputs")
    return p[sel], g[sel]


def angular_error_stats(pred: Grid2, gt: Grid2, mask: Grid2) -> NormalMetrics:
    p, g = _masked_pairs(pred, gt, mask)
    err = angular_errors_deg(p, g)
    pct = [100.0 * float(np.mean(err < t)) for t in THRESHOLDS_DEG]
    return NormalMetrics(float(err.mean()), float(np.median(err)), *pct, n_pixels=int(err.size))


def flow_rmse(pred: Grid2, gt: Grid2, mask: Grid2) -> float:
    p, g = _masked_pairs(pred, gt, mask)
    return float(np.sqrt(np.mean(np.sum((p - g) ** 2, axis=1))))


def depth_rmse(pred: Grid2, gt: Grid2, mask: Grid2) -> float:
    p, g = _masked_pairs(pred, gt, mask)
    return float(np.sqrt(np.mean((p - g) ** 2)))
