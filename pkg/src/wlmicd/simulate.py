"""Ground-truthed follow-up images: tumor shrink/growth and smooth deformation.

A tumor is shrunk by overwriting a layer of its boundary with healthy tissue
intensities. Each overwritten pixel ``P`` takes the 3x3-Gaussian-smoothed
intensity of its mirror ``P_m = 2E - P`` across the nearest edge pixel
``E``. Growth is the same construction run outward: a healthy ring around
the tumor receives mirrored tumor intensities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage as ndi
from scipy.interpolate import RectBivariateSpline
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .imgcore import as_image, as_mask

PIXEL_MM = 0.35
CONTROL_SPACING = 16
DEFAULT_DEFORM_SIGMA = math.sqrt(3.0)
GAUSS_3X3 = np.outer([1, 2, 1], [1, 2, 1]) / 16.0

_EIGHT = np.ones((3, 3), dtype=bool)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimSpec:
    direction: Literal["shrink", "grow"] = "shrink"
    fraction: float = 0.3
    deform_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.direction not in ("shrink", "grow"):
            raise ValueError(f"direction must be 'shrink' or 'grow', got {self.direction!r}")
        if not 0.0 <= self.fraction <= 0.9:
            raise ValueError("fraction must lie in [0, 0.9]")
        if self.deform_sigma < 0:
            raise ValueError("deform_sigma must be >= 0")


@dataclass
class SimResult:
    image: np.ndarray
    ground_truth: np.ndarray
    md_mm: float
    tumor_volume: int
    # (P, E, P_m) triples as (row, col) tuples, in write order.
    mirrors: list = field(default_factory=list)


def inner_edge(mask: np.ndarray) -> np.ndarray:
    return mask & ~ndi.binary_erosion(mask, structure=_EIGHT, border_value=0)


def outer_edge(mask: np.ndarray) -> np.ndarray:
    return ndi.binary_dilation(mask, structure=_EIGHT) & ~mask


def _layered_order(region: np.ndarray, seed_layer: np.ndarray, center) -> np.ndarray:
    """Coordinates of ``region`` ordered by layer, then angle, then radius.

    Layer 0 is ``seed_layer``; layer k+1 is the next 8-connected ring inside
    ``region``.
    """
    layer = np.full(region.shape, -1, dtype=np.int64)
    front = seed_layer & region
    k = 0
    while front.any():
        layer[front] = k
        grown = ndi.binary_dilation(front, structure=_EIGHT) & region & (layer < 0)
        front = grown
        k += 1
    rows, cols = np.nonzero(layer >= 0)
    dy = rows - center[0]
    dx = cols - center[1]
    angle = np.round(np.mod(np.arctan2(dy, dx), 2 * np.pi), 12)
    radius = np.hypot(dy, dx)
    order = np.lexsort((radius, angle, layer[rows, cols]))
    return np.stack([rows[order], cols[order]], axis=1)


def _mirror_write(img, targets, edge_coords, smoothed):
    out = img.copy()
    tree = cKDTree(edge_coords)
    _, idx = tree.query(targets)
    n, m = img.shape
    mirrors = []
    for (pi, pj), e in zip(targets, edge_coords[idx]):
        ei, ej = int(e[0]), int(e[1])
        mi = min(max(2 * ei - pi, 0), n - 1)
        mj = min(max(2 * ej - pj, 0), m - 1)
        out[pi, pj] = smoothed[mi, mj]
        mirrors.append(((int(pi), int(pj)), (ei, ej), (mi, mj)))
    return out, mirrors


def _smoothed(img: np.ndarray) -> np.ndarray:
    s = ndi.correlate(img.astype(np.float64), GAUSS_3X3, mode="nearest")
    return np.clip(np.rint(s), 0, 255).astype(np.uint8)


def _budget(mask: np.ndarray, fraction: float) -> int:
    """Number of pixels to rewrite, ``ceil(fraction * TV)``."""
    want = fraction * int(mask.sum())
    if 0 < want < 1:
        raise SimulationError("fraction too small to alter any pixel")
    return int(math.ceil(want - 1e-9))


def shrink_tumor(img, tumor_mask, spec: SimSpec) -> SimResult:
    """Shrink the tumor by ``spec.fraction`` of its area, peeling from the boundary."""
    img = as_image(img)
    mask = as_mask(tumor_mask, img.shape)
    tv = int(mask.sum())
    if tv == 0:
        raise SimulationError("tumor mask is empty")
    k = _budget(mask, spec.fraction)
    if k == 0:
        return _finish(img, img.copy(), [], tv, spec, mask)
    center = np.argwhere(mask).mean(axis=0)
    targets = _layered_order(mask, inner_edge(mask), center)[:k]
    edge = np.argwhere(outer_edge(mask))
    out, mirrors = _mirror_write(img, targets, edge, _smoothed(img))
    return _finish(img, out, mirrors, tv, spec, mask)


def grow_tumor(img, tumor_mask, spec: SimSpec) -> SimResult:
    """Grow the tumor by ``spec.fraction`` of its area into a ring of healthy tissue."""
    img = as_image(img)
    mask = as_mask(tumor_mask, img.shape)
    tv = int(mask.sum())
    if tv == 0:
        raise SimulationError("tumor mask is empty")
    if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
        raise SimulationError("tumor touches the frame border; no healthy ring available")
    k = _budget(mask, spec.fraction)
    if k == 0:
        return _finish(img, img.copy(), [], tv, spec, mask)
    center = np.argwhere(mask).mean(axis=0)
    healthy = ~mask
    targets = _layered_order(healthy, outer_edge(mask), center)[:k]
    if len(targets) < k:
        raise SimulationError("not enough healthy tissue around the tumor")
    edge = np.argwhere(inner_edge(mask))
    out, mirrors = _mirror_write(img, targets, edge, _smoothed(img))
    return _finish(img, out, mirrors, tv, spec, mask)


def _finish(original, out, mirrors, tv, spec: SimSpec, mask) -> SimResult:
    # Pixels whose mirrored value happens to equal the original are not changes.
    truth = out != original
    if spec.deform_sigma > 0:
        out = apply_deformation(out, mask | truth, spec)
    return SimResult(out, truth, max_diameter(truth), tv, mirrors)


def simulate(img, tumor_mask, spec: SimSpec) -> SimResult:
    if spec.direction == "shrink":
        return shrink_tumor(img, tumor_mask, spec)
    return grow_tumor(img, tumor_mask, spec)


def displacement_field(shape, spec: SimSpec, tumor_mask=None, spacing: int = CONTROL_SPACING,
                       protect_radius: int = 2) -> np.ndarray:
    """Smooth random displacement field of shape ``(2, N, M)`` in pixels.

    Control points every ``spacing`` pixels carry zero-mean Gaussian offsets
    with std ``spec.deform_sigma``; a bicubic spline interpolates them. The
    magnitude is clamped to ``4 * deform_sigma`` and forced to zero on the
    tumor mask dilated by ``protect_radius``.
    """
    n, m = shape
    sigma = spec.deform_sigma
    field_ = np.zeros((2, n, m))
    if sigma == 0:
        return field_
    rng = np.random.default_rng(spec.rng_seed)
    gy = np.arange(0, n + spacing, spacing, dtype=np.float64)
    gx = np.arange(0, m + spacing, spacing, dtype=np.float64)
    ky = min(3, len(gy) - 1)
    kx = min(3, len(gx) - 1)
    rows = np.arange(n, dtype=np.float64)
    cols = np.arange(m, dtype=np.float64)
    for axis in range(2):
        ctrl = rng.normal(0.0, sigma, size=(len(gy), len(gx)))
        spline = RectBivariateSpline(gy, gx, ctrl, kx=ky, ky=kx, s=0)
        field_[axis] = spline(rows, cols)
    mag = np.hypot(field_[0], field_[1])
    limit = 4.0 * sigma
    scale = np.where(mag > limit, limit / np.maximum(mag, 1e-300), 1.0)
    field_ *= scale
    if tumor_mask is not None:
        protect = as_mask(tumor_mask, shape)
        if protect_radius > 0:
            protect = ndi.binary_dilation(protect, iterations=protect_radius)
        field_[:, protect] = 0.0
    return field_


def apply_deformation(img, tumor_mask, spec: SimSpec) -> np.ndarray:
    """Warp ``img`` by a random smooth field (backward mapping, bilinear sampling)."""
    img = as_image(img)
    if spec.deform_sigma == 0:
        return img.copy()
    disp = displacement_field(img.shape, spec, tumor_mask)
    rows, cols = np.indices(img.shape, dtype=np.float64)
    coords = np.stack([rows + disp[0], cols + disp[1]])
    warped = ndi.map_coordinates(img.astype(np.float64), coords, order=1, mode="nearest")
    return np.clip(np.rint(warped), 0, 255).astype(np.uint8)


def max_diameter(mask, pixel_mm: float = PIXEL_MM) -> float:
    """Largest center-to-center distance in the mask plus one pixel width, in mm."""
    mask = as_mask(mask)
    if not mask.any():
        return 0.0
    # The farthest pair always lies on the boundary.
    pts = np.argwhere(inner_edge(mask))
    far = float(pdist(pts).max()) if len(pts) > 1 else 0.0
    return (far + 1.0) * pixel_mm


def size_band(fraction: float) -> str:
    """Change-size band label relative to tumor volume."""
    if fraction < 0.10:
        return "<10%TV"
    if fraction <= 0.30:
        return "10-30%TV"
    return ">30%TV"


# ---------------------------------------------------------------------------
# Synthetic base images
# ---------------------------------------------------------------------------

TEXTURES = ("blobs", "stripes", "patches", "gradient", "speckle")


def circle_mask(shape, center, radius) -> np.ndarray:
    rows, cols = np.indices(shape)
    return (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius ** 2


def make_phantom(texture: str = "blobs", size: int = 96, tumor_radius: int = 12,
                 seed: int = 0, tumor_level: int = 210, noise: float = 0.0):
    """Synthetic tissue image with one bright round tumor.

    Returns ``(image, tumor_mask)``. Tissue intensities stay within
    roughly 40-150 so the tumor contrasts with its surroundings. ``noise``
    adds i.i.d. Gaussian noise of that std everywhere.
    """
    rng = np.random.default_rng(seed)
    shape = (size, size)
    rows, cols = np.indices(shape, dtype=np.float64)
    if texture == "blobs":
        f = ndi.gaussian_filter(rng.normal(size=shape), 4.0)
        base = 95 + 40 * f / f.std()
    elif texture == "stripes":
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(8, 14)
        phase = rows * np.sin(theta) + cols * np.cos(theta)
        base = 95 + 35 * np.sin(2 * np.pi * phase / period)
    elif texture == "patches":
        coarse = rng.integers(0, 5, size=(size // 8 + 1, size // 8 + 1))
        base = 50 + 22.0 * np.kron(coarse, np.ones((8, 8)))[:size, :size]
    elif texture == "gradient":
        base = 50 + 90 * (rows + cols) / (2 * (size - 1))
    elif texture == "speckle":
        f = ndi.gaussian_filter(rng.normal(size=shape), 1.5)
        base = 95 + 30 * np.round(2 * f / f.std()) / 2
    else:
        raise ValueError(f"unknown texture {texture!r}")
    center = (size / 2 + rng.uniform(-4, 4), size / 2 + rng.uniform(-4, 4))
    tumor = circle_mask(shape, center, tumor_radius)
    img = np.clip(base, 40, 150)
    img[tumor] = tumor_level
    if noise > 0:
        img = img + rng.normal(0, noise, size=shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), tumor
