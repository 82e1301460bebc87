# Kernel weights and sparse affinity-matrix construction.
#
# All supported kernels are unnormalized Gaussians of spatial and/or range
# (patch) distances, so every matrix built here is symmetric with ones on the
# diagonal. Storage is CSR with sorted indices, which keeps row/column sums
# deterministic.
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .patches import GeneralizedPatch, PatchConfig, extract_all_patches, patch_offsets

VARIANTS = ("gaussian", "bilateral", "nlm", "spatially_regulated_nlm")

_USES_SPATIAL = {"gaussian", "bilateral", "spatially_regulated_nlm"}
_USES_RANGE = {"bilateral", "nlm", "spatially_regulated_nlm"}


@dataclass(frozen=True)
class KernelSpec:
    """Which kernel to evaluate and with what bandwidths.

    h_s is in pixels, h_r on the [0,1] intensity scale. window_radius bounds
    the Chebyshev distance between paired pixels (None = unbounded); weights
    below truncation_eps are dropped from the sparse matrix (the diagonal is
    always kept). Range distances are raw sums of squares over patch entries,
    never per-pixel normalized.
    """

    variant: str = "spatially_regulated_nlm"
    h_s: float = 10.0
    h_r: float = 0.1
    window_radius: int | None = None
    truncation_eps: float = 1e-8

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.uses_spatial and not self.h_s > 0:
            raise ValueError(f"h_s must be > 0 for {self.variant}, got {self.h_s}")
        if self.uses_range and not self.h_r > 0:
            raise ValueError(f"h_r must be > 0 for {self.variant}, got {self.h_r}")
        if not 0 <= self.truncation_eps < 1:
            raise ValueError(f"truncation_eps must be in [0, 1), got {self.truncation_eps}")
        if self.window_radius is not None and self.window_radius < 0:
            raise ValueError(f"window_radius must be >= 0, got {self.window_radius}")

    @property
    def uses_spatial(self) -> bool:
        return self.variant in _USES_SPATIAL

    @property
    def uses_range(self) -> bool:
        return self.variant in _USES_RANGE


def spatial_cutoff_radius(h_s: float, eps: float) -> int:
    """Smallest radius whose pure-spatial Gaussian tail falls below eps."""
    if eps <= 0:
        raise ValueError("eps must be > 0 for a finite cutoff radius")
    return int(math.ceil(h_s * math.sqrt(2.0 * math.log(1.0 / eps))))


def kernel_weight(p_i: GeneralizedPatch, p_j: GeneralizedPatch, spec: KernelSpec) -> float:
    """Unnormalized kernel weight in (0, 1]; 1.0 exactly when p_i == p_j."""
    if p_i.intensity.shape != p_j.intensity.shape:
        raise ValueError("patch dimension mismatch")
    exponent = 0.0
    if spec.uses_spatial:
        if p_i.spatial is None or p_j.spatial is None:
            raise ValueError(f"variant {spec.variant!r} needs spatial coordinates")
        dx = p_j.spatial - p_i.spatial
        exponent += float(dx @ dx) / (2.0 * spec.h_s**2)
    if spec.uses_range:
        if spec.variant == "bilateral":
            center = p_i.intensity.size // 2
            dr2 = float((p_j.intensity[center] - p_i.intensity[center]) ** 2)
        else:
            dy = p_j.intensity - p_i.intensity
            dr2 = float(dy @ dy)
        exponent += dr2 / (2.0 * spec.h_r**2)
    return math.exp(-exponent)


def _window_offsets(shape: tuple[int, int], radius: int | None):
    height, width = shape
    r_max = height - 1 if radius is None else min(radius, height - 1)
    c_max = width - 1 if radius is None else min(radius, width - 1)
    for dr in range(-r_max, r_max + 1):
        for dc in range(-c_max, c_max + 1):
            yield dr, dc


def patch_distance_field(img: np.ndarray, cfg: PatchConfig, dr: int, dc: int) -> np.ndarray:
    """Squared patch distance between pixel (r,c) and (r+dr, c+dc), full grid.

    Patches wrap periodically, matching extract_all_patches. Computed as a
    box sum of squared pixel differences via explicit rolls so the summation
    order is fixed.
    """
    a = np.asarray(img, dtype=np.float64)
    shifted = np.roll(a, (-dr, -dc), axis=(0, 1))
    e = (a - shifted) ** 2
    dist = np.zeros_like(e)
    for qr, qc in patch_offsets(cfg.side):
        dist += np.roll(e, (-qr, -qc), axis=(0, 1))
    return dist


@dataclass(frozen=True)
class DistanceField:
    """Per-offset distance images, reusable across bandwidth choices.

    offsets is a list of (dr, dc); range_d2[q] holds the squared range
    distance between pixel (r, c) and (r+dr, c+dc) over the full grid (None
    for purely spatial kernels). Building this once and reweighting is the
    fast path for h_r grid sweeps.
    """

    shape: tuple[int, int]
    side: int
    variant: str
    offsets: list[tuple[int, int]]
    range_d2: list[np.ndarray] | None


def distance_field(
    img: np.ndarray, cfg: PatchConfig, spec: KernelSpec
) -> DistanceField:
    a = np.asarray(img, dtype=np.float64)
    height, width = a.shape
    if spec.uses_range and (height < cfg.side or width < cfg.side):
        raise ValueError(f"image {height}x{width} smaller than patch side {cfg.side}")
    offsets = list(_window_offsets((height, width), spec.window_radius))
    range_d2 = None
    if spec.uses_range:
        range_d2 = []
        for dr, dc in offsets:
            if spec.variant == "bilateral":
                range_d2.append((a - np.roll(a, (-dr, -dc), axis=(0, 1))) ** 2)
            else:
                range_d2.append(patch_distance_field(a, cfg, dr, dc))
    return DistanceField(
        shape=(height, width),
        side=cfg.side,
        variant=spec.variant,
        offsets=offsets,
        range_d2=range_d2,
    )


def affinity_from_field(field: DistanceField, spec: KernelSpec) -> sparse.csr_array:
    """Turn precomputed distances into a weight matrix for one bandwidth pair."""
    if spec.variant != field.variant:
        raise ValueError(f"field built for {field.variant!r}, spec is {spec.variant!r}")
    height, width = field.shape
    n = height * width
    flat_index = np.arange(n).reshape(height, width)

    rows, cols, vals = [], [], []
    for q, (dr, dc) in enumerate(field.offsets):
        exponent = np.zeros((height, width))
        if spec.uses_spatial:
            exponent += (dr * dr + dc * dc) / (2.0 * spec.h_s**2)
        if spec.uses_range:
            exponent = exponent + field.range_d2[q] / (2.0 * spec.h_r**2)
        weight = np.exp(-exponent)

        # Valid (non-wrapped) pixel pairings for this offset.
        r0, r1 = max(0, -dr), height - max(0, dr)
        c0, c1 = max(0, -dc), width - max(0, dc)
        w_blk = weight[r0:r1, c0:c1].ravel()
        i_blk = flat_index[r0:r1, c0:c1].ravel()
        j_blk = flat_index[r0 + dr : r1 + dr, c0 + dc : c1 + dc].ravel()
        if dr == 0 and dc == 0:
            keep = slice(None)  # diagonal always kept
        else:
            keep = w_blk >= spec.truncation_eps
        rows.append(i_blk[keep])
        cols.append(j_blk[keep])
        vals.append(w_blk[keep])

    mat = sparse.coo_array(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    mat.sort_indices()
    return mat


def build_affinity(
    img: np.ndarray, cfg: PatchConfig, spec: KernelSpec
) -> sparse.csr_array:
    """Sparse n x n weight matrix over pixel pairs inside the search window.

    Pixel pairs are formed in the raw image plane (no wrap in the spatial
    coordinate), so the spatial distance for the pair (i, i+offset) is just
    the offset's length. The diagonal always holds weight 1.
    """
    return affinity_from_field(distance_field(img, cfg, spec), spec)


def dump_triplets(mat: sparse.csr_array, path) -> None:
    """Debug dump of the matrix as '<i> <j> <weight>' lines."""
    coo = mat.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
