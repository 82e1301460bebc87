"""Symmetric smoothing filters for patch-based grayscale image denoising.

Implements the classic row-normalized smoothing filter, its column-then-row
balanced variant, fully balanced (doubly stochastic) filtering, and a
Gaussian-mixture smoothing filter with risk-estimate regularization and
cross-validated cluster count, plus a benchmarking CLI.
"""

from .affinity import KernelSpec, build_affinity, kernel_weight
from .balancing import BalancingReport, modified_em_step, sinkhorn, smooth_denoise
from .gmm import FitResult, GmmModel
from .gsf import DenoiseReport, GsfParams, degenerate_filter, gsf_denoise
from .image import (
    ImageFormatError,
    NoiseSpec,
    NotGrayscaleError,
    add_gaussian_noise,
    load_image,
    mse,
    psnr,
    save_image,
)
from .patches import PatchConfig, aggregate, extract_patch, generalized_patch

__all__ = [
    "BalancingReport",
    "DenoiseReport",
    "FitResult",
    "GmmModel",
    "GsfParams",
    "ImageFormatError",
    "KernelSpec",
    "NoiseSpec",
    "NotGrayscaleError",
    "PatchConfig",
    "add_gaussian_noise",
    "aggregate",
    "build_affinity",
    "degenerate_filter",
    "extract_patch",
    "generalized_patch",
    "gsf_denoise",
    "kernel_weight",
    "load_image",
    "modified_em_step",
    "mse",
    "psnr",
    "save_image",
    "sinkhorn",
    "smooth_denoise",
]

__version__ = "0.1.0"
