"""Gray-code pattern stacks, per-pixel decoding, and refractive flow.

The display shows ``bits`` vertical-stripe frames (column code, MSB first),
then ``bits`` horizontal-stripe frames (row code), then an all-white and an
all-black reference frame used for per-pixel thresholding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .gridcore import DomainError, Grid2, ShapeError, mask_bool, read_grid, write_grid

MIN_CONTRAST = 0.05
AFFINE_WINDOW = 5


def gray_encode(n, bits: int = 10):
    arr = np.asarray(n)
    if np.any((arr < 0) | (arr >= 2 ** bits)):
        raise DomainError(f"gray_encode input outside [0, 2**{bits})")
    out = arr ^ (arr >> 1)
    return int(out) if np.ndim(out) == 0 else out


def gray_decode(code, bits: int = 10):
    arr = np.asarray(code)
    if np.any((arr < 0) | (arr >= 2 ** bits)):
        raise DomainError(f"gray_decode input outside [0, 2**{bits})")
    out = arr.copy()
    shift = 1
    while shift < bits:
        out = out ^ (out >> shift)
        shift <<= 1
    return int(out) if np.ndim(out) == 0 else out


@dataclass(eq=False)
class PatternStack:
    bits: int
    pattern_width: int
    pattern_height: int
    frames: list[np.ndarray]

    ORDER = "vertical-msb-first,horizontal-msb-first,white,black"

    def __len__(self) -> int:
        return len(self.frames)

    def manifest(self) -> dict:
        return {"bits": self.bits, "pattern_width": self.pattern_width,
                "pattern_height": self.pattern_height, "n_frames": len(self.frames),
                "order": self.ORDER}


def gen_patterns(bits: int = 10, pattern_width: int = 1024, pattern_height: int = 1024) -> PatternStack:
    if bits < 1:
        raise DomainError("bits must be >= 1")
    if not (1 <= pattern_width <= 2 ** bits and 1 <= pattern_height <= 2 ** bits):
        raise DomainError("pattern dimensions must lie in [1, 2**bits]")
    cols = gray_encode(np.arange(pattern_width), bits)
    rows = gray_encode(np.arange(pattern_height), bits)
    frames = []
    for k in range(bits):
        bit = ((cols >> (bits - 1 - k)) & 1).astype(np.uint8)
        frames.append(np.broadcast_to(bit[None, :], (pattern_height, pattern_width)).copy())
    for k in range(bits):
        bit = ((rows >> (bits - 1 - k)) & 1).astype(np.uint8)
        frames.append(np.broadcast_to(bit[:, None], (pattern_height, pattern_width)).copy())
    frames.append(np.ones((pattern_height, pattern_width), dtype=np.uint8))
    frames.append(np.zeros((pattern_height, pattern_width), dtype=np.uint8))
    return PatternStack(bits, pattern_width, pattern_height, frames)


def decode_stack(captured, stack: PatternStack, min_contrast: float = MIN_CONTRAST) -> Grid2:
    """Decode a captured frame stack into a 2-channel correspondence map.

    A bit is set where the frame exceeds the midpoint of that pixel's white
    and black references. Pixels whose white-black contrast is below
    ``min_contrast`` times the capture's dynamic range, or whose code falls
    outside the pattern, decode to NaN. Both rules commute with any
    positive gain and offset applied to every frame.
    """
    frames = [g.plane(0) if isinstance(g, Grid2) else np.asarray(g) for g in captured]
    if len(frames) != 2 * stack.bits + 2:
        raise ShapeError(f"expected {2 * stack.bits + 2} frames, got {len(frames)}")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ShapeError("captured frames differ in resolution")
    img = np.stack(frames).astype(np.float64)
    white, black = img[-2], img[-1]
    contrast = white - black
    finite = np.all(np.isfinite(img), axis=0)
    span = np.nanmax(np.where(finite, white, np.nan)) - np.nanmin(np.where(finite, black, np.nan)) \
        if finite.any() else 0.0
    valid = finite & (contrast > 0) & (contrast >= min_contrast * span)
    mid = 0.5 * (white + black)
    bits = (img[:-2] > mid).astype(np.int64)
    b = stack.bits
    weights = (1 << np.arange(b - 1, -1, -1, dtype=np.int64))[:, None, None]
    col = gray_decode(np.sum(bits[:b] * weights, axis=0), b)
    row = gray_decode(np.sum(bits[b:] * weights, axis=0), b)
    valid &= (col < stack.pattern_width) & (row < stack.pattern_height)
    out = np.full(shape + (2,), np.nan, dtype=np.float32)
    out[valid, 0] = col[valid]
    out[valid, 1] = row[valid]
    return Grid2(out)


def flow_from_correspondence(m_obj: Grid2, m_ref: Grid2, mask: Grid2,
                             window: int = AFFINE_WINDOW) -> Grid2:
    """Refractive flow from object and reference correspondence maps.

    For every masked pixel ``p`` the reference pixel ``q`` that would see
    the same pattern coordinate without the object is found by locating the
    nearest decoded match and inverting a least-squares affine model of the
    reference map fitted over a ``window x window`` neighborhood around it.
    The flow is ``q - p``.
    """
    if m_obj.shape != m_ref.shape or m_obj.shape != mask.shape:
        raise ShapeError("correspondence maps and mask must be aligned")
    if m_obj.channels != 2 or m_ref.channels != 2:
        raise ShapeError("correspondence maps need 2 channels")
    h, w = m_obj.shape
    obj, ref = m_obj.data.astype(np.float64), m_ref.data.astype(np.float64)
    ref_ok = np.all(np.isfinite(ref), axis=2)
    want = mask_bool(mask) & np.all(np.isfinite(obj), axis=2) & ref_ok
    flow = np.full((h, w, 2), np.nan, dtype=np.float32)
    if not want.any():
        return Grid2(flow)

    ry, rx = np.nonzero(ref_ok)
    tree = cKDTree(ref[ry, rx])
    py, px = np.nonzero(want)
    target = obj[py, px]
    _, nearest = tree.query(target)
    qx, qy = rx[nearest], ry[nearest]

    r = window // 2
    oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
    ox, oy = ox.ravel(), oy.ravel()
    nx = qx[:, None] + ox[None, :]
    ny = qy[:, None] + oy[None, :]
    inb = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    nxc, nyc = np.clip(nx, 0, w - 1), np.clip(ny, 0, h - 1)
    wgt = (inb & ref_ok[nyc, nxc]).astype(np.float64)
    vals = np.where(wgt[:, :, None] > 0, ref[nyc, nxc], 0.0)

    # affine model m(q) = A (q - q0) + c in coordinates centered on the match
    phi = np.stack([np.broadcast_to(ox, nx.shape), np.broadcast_to(oy, nx.shape),
                    np.ones(nx.shape)], axis=2).astype(np.float64)
    M = np.einsum("nk,nki,nkj->nij", wgt, phi, phi)
    rhs = np.einsum("nk,nki,nkc->nic", wgt, phi, vals)
    count = wgt.sum(axis=1)
    det = np.linalg.det(M)
    good = (count >= 3) & (np.abs(det) > 1e-9)
    coef = np.full((len(px), 3, 2), np.nan)
    coef[good] = np.linalg.solve(M[good], rhs[good])
    A = np.transpose(coef[:, :2, :], (0, 2, 1))
    c = coef[:, 2, :]
    adet = np.linalg.det(np.where(good[:, None, None], A, np.eye(2)))
    good &= np.abs(adet) > 1e-12
    delta = np.full((len(px), 2), np.nan)
    delta[good] = np.linalg.solve(A[good], (target[good] - c[good])[:, :, None])[:, :, 0]
    fx = qx + delta[:, 0] - px
    fy = qy + delta[:, 1] - py
    flow[py[good], px[good], 0] = fx[good]
    flow[py[good], px[good], 1] = fy[good]
    return Grid2(flow)


def save_stack(directory, frames, stack: PatternStack) -> None:
    """Write frames as ``frame_000.rfg`` ... plus ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        grid = frame if isinstance(frame, Grid2) else Grid2(np.asarray(frame, dtype=np.float32))
        write_grid(out / f"frame_{i:03d}.rfg", grid)
    (out / "manifest.json").write_text(json.dumps(stack.manifest(), indent=2))


def load_stack(directory) -> tuple[list[Grid2], PatternStack]:
    src = Path(directory)
    meta = json.loads((src / "manifest.json").read_text())
    frames = [read_grid(src / f"frame_{i:03d}.rfg") for i in range(meta["n_frames"])]
    stack = PatternStack(meta["bits"], meta["pattern_width"], meta["pattern_height"],
                         [f.plane(0) for f in frames])
    return frames, stack
