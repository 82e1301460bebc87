import math

import numpy as np
import pytest

from symfilt import gmm
from symfilt.gmm import GmmModel, e_step, fit, init_model, log_likelihood, m_step


def naive_responsibilities(model, pts):
    """Direct per-pair evaluation of the posterior, no log-domain tricks."""
    scale = model.scale_vector()
    out = np.zeros((model.k, len(pts)))
    for j, p in enumerate(pts):
        dens = np.array(
            [
                model.pi[i] * math.exp(-0.5 * float((((p - model.means[i]) / scale) ** 2).sum()))
                for i in range(model.k)
            ]
        )
        out[:, j] = dens / dens.sum()
    return out


def naive_loglik(model, pts):
    scale = model.scale_vector()
    norm = (2 * math.pi) ** (-model.p / 2) / float(np.prod(scale))
    total = 0.0
    for p in pts:
        dens = sum(
            model.pi[i] * norm * math.exp(-0.5 * float((((p - model.means[i]) / scale) ** 2).sum()))
            for i in range(model.k)
        )
        total += math.log(dens)
    return total


@pytest.fixture
def small_instance():
    rng = np.random.default_rng(0)
    pts = np.concatenate(
        [
            rng.normal([0, 0, 0.2, 0.4], 0.2, size=(12, 4)),
            rng.normal([5, 5, 0.8, 0.1], 0.2, size=(13, 4)),
        ]
    )
    model = init_model(pts, 3, seed=1, h_s=2.0, h_r=0.5, spatial_dim=2)
    return model, pts


class TestModel:
    def test_weight_validation(self):
        with pytest.raises(ValueError):
            GmmModel(pi=np.array([0.5, 0.6]), means=np.zeros((2, 3)), h_s=1, h_r=1)
        with pytest.raises(ValueError):
            GmmModel(pi=np.array([-0.1, 1.1]), means=np.zeros((2, 3)), h_s=1, h_r=1)

    def test_mean_split(self):
        m = GmmModel(pi=np.array([1.0]), means=np.arange(5.0)[None, :], h_s=2, h_r=3)
        np.testing.assert_array_equal(m.mu_spatial, [[0.0, 1.0]])
        np.testing.assert_array_equal(m.mu_range, [[2.0, 3.0, 4.0]])
        np.testing.assert_array_equal(m.scale_vector(), [2, 2, 3, 3, 3])

    def test_no_spatial_block(self):
        m = GmmModel(pi=np.array([1.0]), means=np.zeros((1, 4)), h_s=1, h_r=2, spatial_dim=0)
        assert m.mu_spatial is None
        np.testing.assert_array_equal(m.scale_vector(), [2, 2, 2, 2])

    def test_serialization_roundtrip(self, tmp_path, small_instance):
        model, _ = small_instance
        path = tmp_path / "model.json"
        model.save(path)
        back = GmmModel.load(path)
        np.testing.assert_array_equal(back.pi, model.pi)
        np.testing.assert_array_equal(back.means, model.means)
        assert (back.h_s, back.h_r, back.spatial_dim) == (model.h_s, model.h_r, model.spatial_dim)

    def test_load_rejects_other_payload(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            GmmModel.load(path)


class TestInit:
    def test_uniform_weights_and_distinct_means(self):
        rng = np.random.default_rng(2)
        pts = rng.random((30, 4))
        model = init_model(pts, 30, seed=3, h_s=1, h_r=1)
        np.testing.assert_allclose(model.pi, np.full(30, 1 / 30))
        # k = n: means are a permutation of all patches
        assert sorted(map(tuple, model.means)) == sorted(map(tuple, pts))

    def test_seed_reproducible(self):
        pts = np.random.default_rng(4).random((20, 3))
        a = init_model(pts, 5, seed=9, h_s=1, h_r=1)
        b = init_model(pts, 5, seed=9, h_s=1, h_r=1)
        np.testing.assert_array_equal(a.means, b.means)

    def test_k_one(self):
        pts = np.random.default_rng(5).random((10, 3))
        model = init_model(pts, 1, seed=0, h_s=1, h_r=1)
        np.testing.assert_array_equal(model.pi, [1.0])
        assert any(np.array_equal(model.means[0], p) for p in pts)

    def test_bad_k(self):
        pts = np.zeros((5, 3))
        for k in (0, 6):
            with pytest.raises(ValueError):
                init_model(pts, k, h_s=1, h_r=1)


class TestEStep:
    def test_k_one_all_ones(self):
        pts = np.random.default_rng(6).random((8, 3))
        model = init_model(pts, 1, seed=0, h_s=1, h_r=1)
        np.testing.assert_array_equal(e_step(model, pts), np.ones((1, 8)))

    def test_equidistant_symmetric_split(self):
        means = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        model = GmmModel(pi=np.array([0.5, 0.5]), means=means, h_s=1, h_r=1, spatial_dim=2)
        gamma = e_step(model, np.array([[1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(gamma, [[0.5], [0.5]])

    def test_matches_naive_oracle(self, small_instance):
        model, pts = small_instance
        np.testing.assert_allclose(
            e_step(model, pts), naive_responsibilities(model, pts), atol=1e-12
        )

    def test_columns_sum_to_one(self, small_instance):
        model, pts = small_instance
        gamma = e_step(model, pts)
        np.testing.assert_allclose(gamma.sum(axis=0), np.ones(len(pts)), atol=1e-12)
        assert gamma.min() >= 0 and gamma.max() <= 1

    def test_far_patches_no_zero_columns(self):
        # log-domain evaluation: even a patch absurdly far from every mean
        # keeps a normalized column
        model = GmmModel(
            pi=np.array([0.5, 0.5]),
            means=np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]),
            h_s=0.01,
            h_r=0.01,
            spatial_dim=2,
        )
        gamma = e_step(model, np.array([[500.0, 500.0, 500.0]]))
        assert math.isclose(gamma.sum(), 1.0, abs_tol=1e-12)

    def test_translation_invariance(self, small_instance):
        model, pts = small_instance
        shift = np.array([3.0, -2.0, 0.5, 0.1])
        shifted = GmmModel(
            pi=model.pi, means=model.means + shift, h_s=model.h_s, h_r=model.h_r,
            spatial_dim=model.spatial_dim,
        )
        np.testing.assert_allclose(
            e_step(model, pts), e_step(shifted, pts + shift), atol=1e-12
        )


class TestMStep:
    def test_one_hot_assignment_means(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 4.0], [4.0, 2.0]])
        model = GmmModel(pi=np.array([0.5, 0.5]), means=np.zeros((2, 2)), h_s=1, h_r=1,
                         spatial_dim=2)
        gamma = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
        new = m_step(model, gamma, pts)
        np.testing.assert_allclose(new.means, [[0.5, 0.5], [3.0, 3.0]])
        np.testing.assert_allclose(new.pi, [0.5, 0.5])

    def test_uniform_gamma_global_mean(self):
        rng = np.random.default_rng(7)
        pts = rng.random((9, 3))
        model = init_model(pts, 3, seed=0, h_s=1, h_r=1)
        gamma = np.full((3, 9), 1 / 3)
        new = m_step(model, gamma, pts)
        for mu in new.means:
            np.testing.assert_allclose(mu, pts.mean(axis=0), atol=1e-14)
        np.testing.assert_allclose(new.pi, np.full(3, 1 / 3))

    def test_weights_sum_to_one(self, small_instance):
        model, pts = small_instance
        gamma = e_step(model, pts)
        new = m_step(model, gamma, pts)
        assert math.isclose(float(new.pi.sum()), 1.0, abs_tol=1e-12)

    def test_means_in_envelope(self, small_instance):
        model, pts = small_instance
        gamma = e_step(model, pts)
        new = m_step(model, gamma, pts)
        assert np.all(new.means >= pts.min(axis=0) - 1e-12)
        assert np.all(new.means <= pts.max(axis=0) + 1e-12)

    def test_empty_cluster_reseeded(self):
        pts = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]])
        model = GmmModel(pi=np.array([0.5, 0.5]), means=np.zeros((2, 2)), h_s=1, h_r=1,
                         spatial_dim=2)
        gamma = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
        loglik = np.array([-1.0, -2.0, -50.0])  # worst-explained patch is index 2
        new = m_step(model, gamma, pts, patch_loglik=loglik)
        np.testing.assert_array_equal(new.means[1], [5.0, 5.0])
        assert new.pi[1] >= 1e-13
        assert math.isclose(float(new.pi.sum()), 1.0, abs_tol=1e-12)

    def test_empty_cluster_without_reseed_data_raises(self):
        pts = np.zeros((3, 2))
        model = GmmModel(pi=np.array([0.5, 0.5]), means=np.zeros((2, 2)), h_s=1, h_r=1,
                         spatial_dim=2)
        gamma = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
        with pytest.raises(ValueError):
            m_step(model, gamma, pts)


class TestLogLikelihood:
    def test_single_patch_at_mean(self):
        model = GmmModel(pi=np.array([1.0]), means=np.zeros((1, 4)), h_s=2.0, h_r=0.5,
                         spatial_dim=2)
        ll = log_likelihood(model, np.zeros((1, 4)))
        expected = -0.5 * 4 * math.log(2 * math.pi) - math.log(2.0 * 2.0 * 0.5 * 0.5)
        assert ll == pytest.approx(expected, abs=1e-12)

    def test_duplication_doubles(self, small_instance):
        model, pts = small_instance
        one = log_likelihood(model, pts)
        two = log_likelihood(model, np.concatenate([pts, pts]))
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_matches_naive_oracle(self, small_instance):
        model, pts = small_instance
        assert log_likelihood(model, pts[:10]) == pytest.approx(
            naive_loglik(model, pts[:10]), abs=1e-10
        )


class TestFit:
    def test_well_separated_recovers_centers(self):
        rng = np.random.default_rng(8)
        centers = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 1.0], [0.0, 10.0, 2.0]])
        pts = np.concatenate([rng.normal(c, 0.01, size=(20, 3)) for c in centers])
        res = fit(pts, 3, h_s=0.5, h_r=0.5, spatial_dim=2, seed=4)
        recovered = sorted(map(tuple, np.round(res.model.means, 1)))
        expected = sorted(map(tuple, centers))
        for got, want in zip(recovered, expected):
            np.testing.assert_allclose(got, want, atol=0.1)

    def test_k_one_global_mean(self):
        rng = np.random.default_rng(9)
        pts = rng.random((15, 4))
        res = fit(pts, 1, h_s=1, h_r=1, spatial_dim=2, seed=0)
        np.testing.assert_allclose(res.model.means[0], pts.mean(axis=0), atol=1e-12)
        assert res.converged

    def test_loglik_nondecreasing(self):
        rng = np.random.default_rng(10)
        pts = rng.random((40, 5))
        res = fit(pts, 4, h_s=1.5, h_r=0.3, spatial_dim=2, seed=1)
        diffs = np.diff(res.loglik_trace)
        assert np.all(diffs >= -1e-9)

    def test_seed_determinism(self):
        rng = np.random.default_rng(11)
        pts = rng.random((25, 4))
        a = fit(pts, 3, h_s=1, h_r=0.4, spatial_dim=2, seed=6)
        b = fit(pts, 3, h_s=1, h_r=0.4, spatial_dim=2, seed=6)
        np.testing.assert_array_equal(a.model.means, b.model.means)
        np.testing.assert_array_equal(a.gamma, b.gamma)

    def test_gamma_consistent_with_returned_model(self):
        rng = np.random.default_rng(12)
        pts = rng.random((30, 4))
        res = fit(pts, 3, h_s=1, h_r=0.4, spatial_dim=2, seed=2, max_iter=5)
        np.testing.assert_allclose(res.gamma, e_step(res.model, pts), atol=1e-14)


class TestSurrogate:
    @pytest.fixture
    def model(self):
        rng = np.random.default_rng(13)
        pts = rng.normal(size=(40, 4))
        return fit(pts, 3, h_s=1.2, h_r=0.7, spatial_dim=2, seed=3).model

    def test_equality_at_anchor(self, model):
        rng = np.random.default_rng(14)
        for _ in range(50):
            p = rng.normal(size=4)
            h = gmm.surrogate_objective(p, p, model)
            assert h == pytest.approx(gmm.neg_log_density(p, model), abs=1e-10)

    def test_majorizes_everywhere(self, model):
        rng = np.random.default_rng(15)
        for _ in range(1000):
            p = rng.normal(size=4) * 2
            q = rng.normal(size=4) * 2
            assert gmm.surrogate_objective(p, q, model) >= gmm.neg_log_density(p, model) - 1e-10

    def test_k_one_bound_tight_everywhere(self):
        model = GmmModel(pi=np.array([1.0]), means=np.zeros((1, 4)), h_s=1.0, h_r=0.5,
                         spatial_dim=2)
        rng = np.random.default_rng(16)
        for _ in range(100):
            p, q = rng.normal(size=4), rng.normal(size=4)
            assert gmm.surrogate_objective(p, q, model) == pytest.approx(
                gmm.neg_log_density(p, model), abs=1e-10
            )
