# EM for a Gaussian mixture with fixed diagonal covariance.
#
# The covariance is diag(h_s^2 I_2, h_r^2 I_d) (spatial block optional) and
# is never updated; EM learns only the mixture weights and the means.
# Responsibilities are computed in the log domain with max subtraction, so
# no patch can end up with an all-zero column.
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_EMPTY_CLUSTER_FRACTION = 1e-12  # of n, below which a cluster is re-seeded
_PI_FLOOR = 1e-12


@dataclass
class GmmModel:
    """Mixture weights and means; bandwidths define the fixed covariance.

    means is (k, p) with the first `spatial_dim` columns in pixel units and
    the rest on the intensity scale.
    """

    pi: np.ndarray
    means: np.ndarray
    h_s: float
    h_r: float
    spatial_dim: int = 2

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.pi.ndim != 1 or self.means.ndim != 2 or self.pi.size != self.means.shape[0]:
            raise ValueError("pi must be (k,) and means (k, p)")
        if self.spatial_dim not in (0, 2):
            raise ValueError(f"spatial_dim must be 0 or 2, got {self.spatial_dim}")
        if np.any(self.pi < 0) or not math.isclose(float(self.pi.sum()), 1.0, abs_tol=1e-9):
            raise ValueError("mixture weights must be nonnegative and sum to 1")

    @property
    def k(self) -> int:
        return self.pi.size

    @property
    def p(self) -> int:
        return self.means.shape[1]

    @property
    def mu_spatial(self) -> np.ndarray | None:
        return self.means[:, : self.spatial_dim] if self.spatial_dim else None

    @property
    def mu_range(self) -> np.ndarray:
        return self.means[:, self.spatial_dim :]

    def scale_vector(self) -> np.ndarray:
        """Per-coordinate standard deviations of the fixed covariance."""
        s = np.empty(self.p)
        s[: self.spatial_dim] = self.h_s
        s[self.spatial_dim :] = self.h_r
        return s

    def log_normal_const(self) -> float:
        """log of the Gaussian normalizing factor (same for every cluster)."""
        scale = self.scale_vector()
        return -0.5 * self.p * math.log(2.0 * math.pi) - float(np.log(scale).sum())

    def save(self, path) -> None:
        payload = {
            "format": "symfilt-gmm",
            "version": 1,
            "k": int(self.k),
            "pi": self.pi.tolist(),
            "means": self.means.tolist(),
            "h_s": self.h_s,
            "h_r": self.h_r,
            "spatial_dim": self.spatial_dim,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GmmModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != "symfilt-gmm" or payload.get("version") != 1:
            raise ValueError(f"{path}: not a version-1 symfilt GMM container")
        return cls(
            pi=np.array(payload["pi"]),
            means=np.array(payload["means"]),
            h_s=payload["h_s"],
            h_r=payload["h_r"],
            spatial_dim=payload["spatial_dim"],
        )


def init_model(
    patches: np.ndarray,
    k: int,
    seed: int = 0,
    *,
    h_s: float,
    h_r: float,
    spatial_dim: int = 2,
) -> GmmModel:
    """Uniform weights; means are k distinct patches drawn without replacement."""
    pts = np.asarray(patches, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=k, replace=False)
    return GmmModel(
        pi=np.full(k, 1.0 / k),
        means=pts[idx].copy(),
        h_s=h_s,
        h_r=h_r,
        spatial_dim=spatial_dim,
    )


def scaled_sq_dists(model: GmmModel, patches: np.ndarray, block: int = 4096) -> np.ndarray:
    """(k, n) matrix of ||p_j - mu_i||^2 in the covariance-scaled metric."""
    pts = np.asarray(patches, dtype=np.float64)
    if pts.shape[1] != model.p:
        raise ValueError(f"patch dim {pts.shape[1]} does not match model dim {model.p}")
    scale = model.scale_vector()
    a = pts / scale
    b = model.means / scale
    b_sq = (b * b).sum(axis=1)
    out = np.empty((model.k, pts.shape[0]))
    for lo in range(0, pts.shape[0], block):
        hi = min(lo + block, pts.shape[0])
        blk = a[lo:hi]
        d2 = b_sq[:, None] + (blk * blk).sum(axis=1)[None, :] - 2.0 * (b @ blk.T)
        np.maximum(d2, 0.0, out=d2)
        out[:, lo:hi] = d2
    return out


def _posterior_stats(model: GmmModel, patches: np.ndarray):
    """Responsibilities plus the per-patch log mixture density.

    Works in place on one (k, n) buffer; at k ~ 2000 clusters and n = 16384
    patches that is the dominant allocation.
    """
    with np.errstate(divide="ignore"):  # pi entries may sit at the floor
        log_pi = np.log(model.pi)
    buf = scaled_sq_dists(model, patches)
    buf *= -0.5
    buf += log_pi[:, None]
    top = buf.max(axis=0)
    buf -= top[None, :]
    np.exp(buf, out=buf)
    total = buf.sum(axis=0)
    buf /= total[None, :]
    patch_logdens = top + np.log(total) + model.log_normal_const()
    return buf, patch_logdens


def e_step(model: GmmModel, patches: np.ndarray) -> np.ndarray:
    """Posterior cluster probabilities, one column per patch (columns sum to 1)."""
    gamma, _ = _posterior_stats(model, patches)
    return gamma


def log_likelihood(model: GmmModel, patches: np.ndarray) -> float:
    _, patch_logdens = _posterior_stats(model, patches)
    return float(patch_logdens.sum())


def m_step(
    model: GmmModel,
    gamma: np.ndarray,
    patches: np.ndarray,
    patch_loglik: np.ndarray | None = None,
) -> GmmModel:
    """Update weights and means; the covariance is left untouched.

    Nearly empty clusters are re-seeded at the currently worst-explained
    patches (mixture weight floored and renormalized). That path needs the
    per-patch log density; without it an empty cluster is an error.
    """
    g = np.asarray(gamma, dtype=np.float64)
    pts = np.asarray(patches, dtype=np.float64)
    n = pts.shape[0]
    if g.shape != (model.k, n):
        raise ValueError(f"gamma shape {g.shape} does not match (k={model.k}, n={n})")
    mass = g.sum(axis=1)
    pi = mass / n
    empty = np.flatnonzero(mass < _EMPTY_CLUSTER_FRACTION * n)
    means = np.empty_like(model.means)
    occupied = mass >= _EMPTY_CLUSTER_FRACTION * n
    means[occupied] = (g[occupied] @ pts) / mass[occupied, None]
    if empty.size:
        if patch_loglik is None:
            raise ValueError(f"cluster {empty[0]} is empty and no re-seed data given")
        worst = np.argsort(patch_loglik, kind="stable")[: empty.size]
        means[empty] = pts[worst]
        pi[empty] = _PI_FLOOR
        pi = pi / pi.sum()
    return GmmModel(
        pi=pi, means=means, h_s=model.h_s, h_r=model.h_r, spatial_dim=model.spatial_dim
    )


@dataclass
class FitResult:
    model: GmmModel
    gamma: np.ndarray
    loglik_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def fit(
    patches: np.ndarray,
    k: int,
    *,
    h_s: float,
    h_r: float,
    spatial_dim: int = 2,
    tol: float = 1e-6,
    max_iter: int = 100,
    seed: int = 0,
) -> FitResult:
    """Run EM until the relative log-likelihood change drops to tol.

    The returned responsibilities are those of the returned model (a final
    E-step follows the last M-step), so downstream weighted means built from
    (gamma, means) are mutually consistent.
    """
    pts = np.asarray(patches, dtype=np.float64)
    model = init_model(pts, k, seed, h_s=h_s, h_r=h_r, spatial_dim=spatial_dim)
    trace: list[float] = []
    gamma = None
    prev = None
    iterations = 0
    converged = False
    for _ in range(max_iter):
        gamma, patch_logdens = _posterior_stats(model, pts)
        ll = float(patch_logdens.sum())
        trace.append(ll)
        if prev is not None and abs(ll - prev) <= tol * max(1.0, abs(prev)):
            converged = True
            break
        prev = ll
        model = m_step(model, gamma, pts, patch_loglik=patch_logdens)
        iterations += 1
    else:
        gamma, patch_logdens = _posterior_stats(model, pts)
        trace.append(float(patch_logdens.sum()))
    return FitResult(
        model=model,
        gamma=gamma,
        loglik_trace=trace,
        iterations=iterations,
        converged=converged,
    )


def neg_log_density(p: np.ndarray, model: GmmModel) -> float:
    """-log of the mixture density at a single generalized patch."""
    _, logdens = _posterior_stats(model, np.asarray(p, dtype=np.float64)[None, :])
    return -float(logdens[0])


def surrogate_objective(p: np.ndarray, p_prime: np.ndarray, model: GmmModel) -> float:
    """Majorizer of -log f(p) anchored at p_prime, tight when p == p_prime.

    Built from the responsibilities of the anchor point, it upper-bounds the
    negative log density everywhere and matches it exactly at the anchor,
    which is what lets the denoiser minimize a quadratic instead.
    """
    anchor = np.asarray(p_prime, dtype=np.float64)[None, :]
    gamma, logdens = _posterior_stats(model, anchor)
    d2_p = scaled_sq_dists(model, np.asarray(p, dtype=np.float64)[None, :])[:, 0]
    d2_anchor = scaled_sq_dists(model, anchor)[:, 0]
    correction = float(gamma[:, 0] @ (0.5 * d2_p - 0.5 * d2_anchor))
    return -float(logdens[0]) + correction
