import math

import numpy as np
import pytest

from symfilt.affinity import (
    KernelSpec,
    affinity_from_field,
    build_affinity,
    distance_field,
    dump_triplets,
    kernel_weight,
    spatial_cutoff_radius,
)
from symfilt.patches import PatchConfig, generalized_patch


def brute_force_dense(img, cfg, spec):
    """All-pairs kernel evaluation straight from the pairwise definition."""
    h, w = img.shape
    n = h * w
    dense = np.zeros((n, n))
    for i in range(n):
        p_i = generalized_patch(img, i, cfg)
        for j in range(n):
            p_j = generalized_patch(img, j, cfg)
            if spec.window_radius is not None:
                cheb = max(
                    abs(p_i.spatial[0] - p_j.spatial[0]),
                    abs(p_i.spatial[1] - p_j.spatial[1]),
                )
                if cheb > spec.window_radius:
                    continue
            weight = kernel_weight(p_i, p_j, spec)
            if i == j or weight >= spec.truncation_eps:
                dense[i, j] = weight
    return dense


class TestKernelSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            KernelSpec(variant="lark")
        with pytest.raises(ValueError):
            KernelSpec(variant="nlm", h_r=0.0)
        with pytest.raises(ValueError):
            KernelSpec(variant="gaussian", h_s=-1.0)
        with pytest.raises(ValueError):
            KernelSpec(truncation_eps=1.0)

    def test_cutoff_radius(self):
        r = spatial_cutoff_radius(10.0, 1e-8)
        assert math.exp(-(r**2) / 200.0) < 1e-8
        assert math.exp(-((r - 1) ** 2) / 200.0) >= 1e-8


class TestKernelWeight:
    def patches(self, seed=0, d=9):
        rng = np.random.default_rng(seed)
        from symfilt.patches import GeneralizedPatch

        mk = lambda: GeneralizedPatch(
            spatial=rng.random(2) * 10, intensity=rng.random(d)
        )
        return mk(), mk()

    def test_identical_patches_give_one(self):
        p, _ = self.patches()
        for variant in ("gaussian", "bilateral", "nlm", "spatially_regulated_nlm"):
            spec = KernelSpec(variant=variant, h_s=3.0, h_r=0.2)
            assert kernel_weight(p, p, spec) == 1.0

    def test_nlm_closed_form(self):
        from symfilt.patches import GeneralizedPatch

        h_r = 0.3
        a = GeneralizedPatch(spatial=None, intensity=np.zeros(4))
        b = GeneralizedPatch(spatial=None, intensity=np.full(4, h_r * math.sqrt(0.5)))
        # squared distance = 4 * hr^2/2 = 2 hr^2 -> weight e^-1
        spec = KernelSpec(variant="nlm", h_r=h_r)
        assert kernel_weight(a, b, spec) == pytest.approx(math.exp(-1), rel=1e-12)

    def test_spatially_regulated_factorizes(self):
        p_i, p_j = self.patches(seed=3)
        spec = KernelSpec(variant="spatially_regulated_nlm", h_s=2.5, h_r=0.4)
        combined = kernel_weight(p_i, p_j, spec)
        spatial = kernel_weight(p_i, p_j, KernelSpec(variant="gaussian", h_s=2.5))
        ranged = kernel_weight(p_i, p_j, KernelSpec(variant="nlm", h_r=0.4))
        assert combined == pytest.approx(spatial * ranged, rel=1e-12)

    def test_bilateral_uses_center_pixel(self):
        from symfilt.patches import GeneralizedPatch

        a = GeneralizedPatch(spatial=np.zeros(2), intensity=np.array([9.0, 0.5, 9.0]))
        b = GeneralizedPatch(spatial=np.zeros(2), intensity=np.array([-9.0, 0.7, -9.0]))
        spec = KernelSpec(variant="bilateral", h_s=1.0, h_r=0.2)
        # only the centers (0.5 vs 0.7) matter
        assert kernel_weight(a, b, spec) == pytest.approx(
            math.exp(-(0.2**2) / (2 * 0.2**2)), rel=1e-12
        )

    def test_missing_spatial_rejected(self):
        from symfilt.patches import GeneralizedPatch

        a = GeneralizedPatch(spatial=None, intensity=np.zeros(3))
        with pytest.raises(ValueError):
            kernel_weight(a, a, KernelSpec(variant="gaussian", h_s=1.0))

    def test_dimension_mismatch(self):
        from symfilt.patches import GeneralizedPatch

        a = GeneralizedPatch(spatial=None, intensity=np.zeros(3))
        b = GeneralizedPatch(spatial=None, intensity=np.zeros(4))
        with pytest.raises(ValueError):
            kernel_weight(a, b, KernelSpec(variant="nlm", h_r=1.0))


class TestBuildAffinity:
    def test_radius_zero_is_identity(self):
        img = np.random.default_rng(0).random((4, 5))
        spec = KernelSpec(variant="nlm", h_r=0.3, window_radius=0)
        mat = build_affinity(img, PatchConfig(3), spec)
        np.testing.assert_array_equal(mat.toarray(), np.eye(20))

    def test_constant_image_weights_are_spatial(self):
        img = np.full((5, 5), 0.6)
        spec = KernelSpec(
            variant="spatially_regulated_nlm", h_s=2.0, h_r=0.1, window_radius=2,
            truncation_eps=0.0,
        )
        mat = build_affinity(img, PatchConfig(3), spec).toarray()
        for i in range(25):
            for j in range(25):
                if mat[i, j] == 0:
                    continue
                ri, ci = divmod(i, 5)
                rj, cj = divmod(j, 5)
                d2 = (ri - rj) ** 2 + (ci - cj) ** 2
                assert mat[i, j] == pytest.approx(math.exp(-d2 / 8.0), rel=1e-12)

    @pytest.mark.parametrize("variant", ["gaussian", "bilateral", "nlm", "spatially_regulated_nlm"])
    def test_matches_brute_force_unbounded(self, variant):
        rng = np.random.default_rng(7)
        img = rng.random((8, 8))
        cfg = PatchConfig(3)
        spec = KernelSpec(variant=variant, h_s=4.0, h_r=0.35, window_radius=None,
                          truncation_eps=1e-8)
        mat = build_affinity(img, cfg, spec).toarray()
        oracle = brute_force_dense(img, cfg, spec)
        np.testing.assert_allclose(mat, oracle, rtol=0, atol=1e-12)

    def test_matches_brute_force_windowed(self):
        rng = np.random.default_rng(8)
        img = rng.random((7, 6))
        cfg = PatchConfig(3)
        spec = KernelSpec(variant="spatially_regulated_nlm", h_s=3.0, h_r=0.4,
                          window_radius=2, truncation_eps=1e-10)
        mat = build_affinity(img, cfg, spec).toarray()
        oracle = brute_force_dense(img, cfg, spec)
        np.testing.assert_allclose(mat, oracle, rtol=0, atol=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        img = rng.random((9, 8))
        spec = KernelSpec(variant="spatially_regulated_nlm", h_s=3.0, h_r=0.3,
                          window_radius=3)
        mat = build_affinity(img, PatchConfig(5), spec)
        asym = (mat - mat.T)
        assert np.abs(asym.toarray()).max() == 0.0

    def test_hr_monotonicity(self):
        rng = np.random.default_rng(10)
        img = rng.random((6, 6))
        cfg = PatchConfig(3)
        specs = [
            KernelSpec(variant="nlm", h_r=h, window_radius=2, truncation_eps=0.0)
            for h in (0.2, 0.4, 0.8)
        ]
        mats = [build_affinity(img, cfg, s, ).toarray() for s in specs]
        assert np.all(mats[1] >= mats[0] - 1e-15)
        assert np.all(mats[2] >= mats[1] - 1e-15)

    def test_support_bound(self):
        img = np.random.default_rng(11).random((10, 10))
        radius = 2
        spec = KernelSpec(variant="nlm", h_r=0.5, window_radius=radius,
                          truncation_eps=0.0)
        mat = build_affinity(img, PatchConfig(3), spec)
        assert mat.nnz <= img.size * (2 * radius + 1) ** 2
        rows, cols = mat.nonzero()
        cheb = np.maximum(
            np.abs(rows // 10 - cols // 10), np.abs(rows % 10 - cols % 10)
        )
        assert cheb.max() <= radius

    def test_diagonal_kept_under_truncation(self):
        img = np.random.default_rng(12).random((5, 5))
        spec = KernelSpec(variant="nlm", h_r=0.01, window_radius=2,
                          truncation_eps=0.5)
        mat = build_affinity(img, PatchConfig(3), spec)
        np.testing.assert_array_equal(mat.diagonal(), np.ones(25))

    def test_image_smaller_than_patch_rejected(self):
        with pytest.raises(ValueError):
            build_affinity(np.zeros((3, 3)), PatchConfig(5), KernelSpec(variant="nlm", h_r=0.1))

    def test_field_reuse_matches_direct_build(self):
        rng = np.random.default_rng(13)
        img = rng.random((6, 7))
        cfg = PatchConfig(3)
        base = KernelSpec(variant="spatially_regulated_nlm", h_s=3.0, h_r=0.2, window_radius=2)
        field = distance_field(img, cfg, base)
        for h_r in (0.1, 0.3, 0.6):
            spec = KernelSpec(variant="spatially_regulated_nlm", h_s=3.0, h_r=h_r, window_radius=2)
            a = affinity_from_field(field, spec).toarray()
            b = build_affinity(img, cfg, spec).toarray()
            np.testing.assert_array_equal(a, b)

    def test_triplet_dump(self, tmp_path):
        img = np.random.default_rng(14).random((3, 3))
        mat = build_affinity(img, PatchConfig(1), KernelSpec(variant="nlm", h_r=0.4, window_radius=1))
        path = tmp_path / "w.txt"
        dump_triplets(mat, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == mat.nnz
        i, j, v = lines[0].split()
        assert float(v) > 0
