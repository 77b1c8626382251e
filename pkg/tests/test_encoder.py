import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowtrack.encoder import (
    FeatureTransform,
    LayerEncoder,
    PoolingMap,
    encode,
    filters_as_patches,
    reconstruct,
)


def enc_from(rows, eps=0.0):
    return LayerEncoder.create(np.array(rows, dtype=float), eps_sqrt=eps)


class TestEncode:
    def test_pooled_pair_is_euclidean_norm(self):
        enc = enc_from([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(encode(enc, np.array([3.0, 4.0])), [5.0])

    def test_zero_input(self):
        enc = enc_from([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(encode(enc, np.zeros(2)), [0.0])

    def test_four_filters_two_pools(self):
        # responses (1, 2, 3, -1) -> z = (sqrt(5), sqrt(10))
        enc = enc_from([[1, 0], [0, 1], [1, 1], [1, -1]])
        z = encode(enc, np.array([1.0, 2.0]))
        np.testing.assert_allclose(z, [np.sqrt(5.0), np.sqrt(10.0)])

    def test_dimension_mismatch_reports_both_dims(self):
        enc = enc_from([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="dim 3.*expects 2"):
            encode(enc, np.zeros(3))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        enc = enc_from(rng.standard_normal((6, 4)), eps=1e-8)
        xs = rng.standard_normal((5, 4))
        batch = encode(enc, xs)
        for i, x in enumerate(xs):
            np.testing.assert_allclose(batch[i], encode(enc, x))


class TestEncodeProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_sign_invariance(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((6, 5))
        x = rng.standard_normal(5)
        flipped = w.copy()
        flipped[int(rng.integers(0, 6))] *= -1.0
        np.testing.assert_allclose(
            encode(enc_from(w), x), encode(enc_from(flipped), x), atol=1e-12
        )

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_pair_norm_identity(self, seed):
        rng = np.random.default_rng(seed)
        enc = enc_from(rng.standard_normal((8, 5)))
        x = rng.standard_normal(5)
        a = enc.transform.weights @ x
        z = encode(enc, x)
        for j in range(4):
            assert abs(z[j] - np.hypot(a[2 * j], a[2 * j + 1])) < 1e-12

    @pytest.mark.parametrize("alpha", [-2.0, 0.5, 3.0])
    def test_homogeneity(self, alpha):
        rng = np.random.default_rng(3)
        enc = enc_from(rng.standard_normal((6, 4)))
        x = rng.standard_normal(4)
        np.testing.assert_allclose(
            encode(enc, alpha * x), abs(alpha) * encode(enc, x), atol=1e-9
        )

    def test_monotone_eps(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((6, 4))
        x = rng.standard_normal(4)
        eps = 1e-6
        z0 = encode(enc_from(w, 0.0), x)
        z1 = encode(enc_from(w, eps), x)
        assert np.all(z1 > z0)
        assert np.all(z1 - z0 <= np.sqrt(eps))


class TestReconstruct:
    def test_orthonormal_complete_rows_identity(self):
        enc = enc_from(np.eye(4))
        x = np.array([1.0, -2.0, 3.0, 0.5])
        np.testing.assert_allclose(reconstruct(enc, x), x)

    def test_zero_matrix(self):
        enc = enc_from(np.zeros((4, 3)))
        np.testing.assert_array_equal(reconstruct(enc, np.ones(3)), np.zeros(3))

    def test_dimension_mismatch(self):
        enc = enc_from([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="dim 5.*expects 2"):
            reconstruct(enc, np.zeros(5))

    def test_hand_multiplied_2x2(self):
        # W = [[1,0],[1,0]], x = (1,1): W x = (1,1), W^T W x = (2, 0)
        enc = enc_from([[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(reconstruct(enc, np.array([1.0, 1.0])), [2.0, 0.0])


class TestFiltersAsPatches:
    def test_constant_row_maps_to_half(self):
        t = FeatureTransform(np.full((2, 4), 3.0))
        images = filters_as_patches(t, 2)
        np.testing.assert_array_equal(images[0], np.full((2, 2), 0.5))

    def test_count_preserved(self):
        rng = np.random.default_rng(5)
        t = FeatureTransform(rng.standard_normal((6, 9)))
        assert len(filters_as_patches(t, 3)) == 6

    def test_min_max_scaling(self):
        t = FeatureTransform(np.array([[0.0, 1.0, 2.0, 3.0], [0, 1, 0, 1.0]]))
        img = filters_as_patches(t, 2)[0]
        np.testing.assert_allclose(img, [[0.0, 1 / 3], [2 / 3, 1.0]])

    def test_side_mismatch(self):
        t = FeatureTransform(np.zeros((2, 4)) + np.eye(2, 4))
        with pytest.raises(ValueError):
            filters_as_patches(t, 3)


class TestTypes:
    def test_odd_filter_count_rejected(self):
        with pytest.raises(ValueError, match="even"):
            FeatureTransform(np.ones((3, 4)))

    def test_non_finite_rejected(self):
        w = np.ones((2, 2))
        w[0, 0] = np.inf
        with pytest.raises(ValueError, match="finite"):
            FeatureTransform(w)

    def test_pooling_map_matrix(self):
        h = PoolingMap(4).matrix()
        np.testing.assert_array_equal(h, [[1, 1, 0, 0], [0, 0, 1, 1]])

    def test_pooling_encoder_dim_match(self):
        t = FeatureTransform(np.ones((4, 2)))
        with pytest.raises(ValueError, match="pooling input dim"):
            LayerEncoder(t, PoolingMap(6))
