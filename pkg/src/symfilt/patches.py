# Patch extraction/aggregation with periodic (wrap-around) boundaries.
#
# Periodic wrapping makes the overlap operator exactly d times the identity
# (every pixel is covered by exactly d windows), which the SURE analysis in
# the denoiser module relies on. It is the only boundary mode supported.
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PatchConfig:
    """Square side x side patch; side must be odd so patches are centered."""

    side: int = 5

    def __post_init__(self):
        if self.side < 1 or self.side % 2 == 0:
            raise ValueError(f"patch side must be odd and >= 1, got {self.side}")

    @property
    def d(self) -> int:
        return self.side * self.side


def patch_offsets(side: int) -> np.ndarray:
    """(d, 2) array of (row, col) offsets from the center, row-major."""
    h = side // 2
    rng = np.arange(-h, h + 1)
    rr, cc = np.meshgrid(rng, rng, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def extract_patch(img: np.ndarray, j: int, cfg: PatchConfig) -> np.ndarray:
    """side x side window centered at flat pixel index j, wrapped, flattened."""
    a = np.asarray(img, dtype=np.float64)
    height, width = a.shape
    if not 0 <= j < a.size:
        raise IndexError(f"pixel index {j} out of range for {height}x{width} image")
    r, c = divmod(int(j), width)
    offs = patch_offsets(cfg.side)
    return a[(r + offs[:, 0]) % height, (c + offs[:, 1]) % width]


def extract_all_patches(img: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """All n patches as an (n, d) matrix; row j is extract_patch(img, j)."""
    a = np.asarray(img, dtype=np.float64)
    cols = [
        np.roll(a, (-dr, -dc), axis=(0, 1)).ravel()
        for dr, dc in patch_offsets(cfg.side)
    ]
    return np.stack(cols, axis=1)


def aggregate(patches: np.ndarray, cfg: PatchConfig, shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of extraction: scatter each patch back (wrapped) and sum.

    Accumulation order is fixed (offset by offset, whole image at a time),
    so results are bit-stable.
    """
    w = np.asarray(patches, dtype=np.float64)
    n = int(shape[0]) * int(shape[1])
    if w.shape != (n, cfg.d):
        raise ValueError(f"expected {n} patches of length {cfg.d}, got shape {w.shape}")
    out = np.zeros(shape, dtype=np.float64)
    for q, (dr, dc) in enumerate(patch_offsets(cfg.side)):
        out += np.roll(w[:, q].reshape(shape), (dr, dc), axis=(0, 1))
    return out


def overlap_count(cfg: PatchConfig, shape: tuple[int, int]) -> np.ndarray:
    """Per-pixel window coverage; equals d everywhere under periodic wrap."""
    n = int(shape[0]) * int(shape[1])
    return aggregate(np.ones((n, cfg.d)), cfg, shape)


@dataclass(frozen=True)
class GeneralizedPatch:
    """Optional 2-D pixel coordinate stacked on top of a d-vector of values."""

    spatial: np.ndarray | None
    intensity: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        if self.spatial is None:
            return self.intensity
        return np.concatenate([self.spatial, self.intensity])

    @property
    def dim(self) -> int:
        return self.vector.size


def generalized_patch(
    img: np.ndarray, j: int, cfg: PatchConfig, include_spatial: bool = True
) -> GeneralizedPatch:
    a = np.asarray(img, dtype=np.float64)
    intensity = extract_patch(a, j, cfg)
    if not include_spatial:
        return GeneralizedPatch(spatial=None, intensity=intensity)
    r, c = divmod(int(j), a.shape[1])
    return GeneralizedPatch(
        spatial=np.array([r, c], dtype=np.float64), intensity=intensity
    )


def generalized_patch_matrix(
    img: np.ndarray, cfg: PatchConfig, include_spatial: bool = True
) -> np.ndarray:
    """(n, p) matrix of generalized patches, p = 2 + d with spatial part else d.

    Spatial coordinates are raw (row, col) pixel indices, not normalized.
    """
    a = np.asarray(img, dtype=np.float64)
    intens = extract_all_patches(a, cfg)
    if not include_spatial:
        return intens
    height, width = a.shape
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    return np.concatenate([coords, intens], axis=1)
