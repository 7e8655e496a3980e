"""Distance definitions, their invariants, and the global-SSIM oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndcb import distances
from ndcb.errors import ConfigurationError


def _rand_pair(seed, shape=(28, 28)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, shape), rng.uniform(0, 1, shape)


def ssim_oracle(a, b):
    """Loop-based re-implementation of single-formula SSIM (population stats)."""
    n = a.size
    mu_a = sum(float(v) for v in a.ravel()) / n
    mu_b = sum(float(v) for v in b.ravel()) / n
    var_a = sum((float(v) - mu_a) ** 2 for v in a.ravel()) / n
    var_b = sum((float(v) - mu_b) ** 2 for v in b.ravel()) / n
    cov = sum((float(x) - mu_a) * (float(y) - mu_b) for x, y in zip(a.ravel(), b.ravel())) / n
    e1, e2 = distances.SSIM_EPS1, distances.SSIM_EPS2
    return ((2 * mu_a * mu_b + e1) * (2 * cov + e2)) / (
        (mu_a**2 + mu_b**2 + e1) * (var_a + var_b + e2)
    )


class TestMse:
    def test_self_distance_zero(self):
        x, _ = _rand_pair(0)
        assert distances.mse(x, x) == 0.0

    def test_zeros_vs_ones(self):
        assert distances.mse(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(1.0)

    def test_zeros_vs_half(self):
        assert distances.mse(np.zeros((4, 4)), np.full((4, 4), 0.5)) == pytest.approx(0.25)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            distances.mse(np.zeros((2, 2)), np.zeros((3, 3)))


class TestHamming:
    def test_self_distance_zero(self):
        x, _ = _rand_pair(1)
        assert distances.hamming(x, x) == 0.0

    def test_zeros_vs_ones(self):
        assert distances.hamming(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(1.0)

    def test_zeros_vs_quarter(self):
        assert distances.hamming(np.zeros((4, 4)), np.full((4, 4), 0.25)) == pytest.approx(0.25)


class TestSsim:
    def test_self_similarity_one(self):
        x, _ = _rand_pair(2)
        assert distances.ssim(x, x) == pytest.approx(1.0)
        assert distances.dssim(x, x) == pytest.approx(0.0)

    def test_equal_constant_images(self):
        x = np.full((5, 5), 0.3)
        assert distances.ssim(x, x.copy()) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_independent_oracle(self, seed):
        a, b = _rand_pair(seed)
        assert distances.ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)
        assert distances.dssim(a, b) == pytest.approx((1 - ssim_oracle(a, b)) / 2, abs=1e-6)

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_dssim_in_unit_interval(self, seed):
        a, b = _rand_pair(seed, shape=(9, 9))
        d = distances.dssim(a, b)
        assert 0.0 <= d <= 1.0


class TestSobel:
    def test_constant_image_gives_zero_mask(self):
        mask = distances.sobel_mask(np.full((10, 10), 0.7))
        assert np.all(mask == 0)

    def test_vertical_edge_peaks_on_edge_column(self):
        img = np.zeros((8, 8))
        img[:, 4:] = 1.0
        mask = distances.sobel_mask(img)
        # Direct 3x3 Sobel arithmetic with edge-replicate padding: |Gx| = 4
        # exactly on the two columns flanking the step and 0 elsewhere.
        expected = np.zeros((8, 8))
        expected[:, 3:5] = 1.0
        assert np.allclose(mask, expected)

    def test_mask_values_in_unit_interval(self):
        img, _ = _rand_pair(3, (12, 12))
        mask = distances.sobel_mask(img)
        assert mask.min() >= 0 and mask.max() <= 1

    def test_mask_ignores_prediction(self):
        p, pred = _rand_pair(4)
        assert np.array_equal(distances.sobel_mask(p), distances.sobel_mask(p))
        d1 = distances.sobel_distance(pred, p)
        d2 = distances.sobel_distance(np.zeros_like(pred), p)
        # distances differ but both used the same p-derived mask
        mask = distances.sobel_mask(p)
        assert d1 == pytest.approx(distances.hamming(mask * pred, mask * p))
        assert d2 == pytest.approx(distances.hamming(mask * 0, mask * p))

    def test_identical_images_zero(self):
        p, _ = _rand_pair(5)
        assert distances.sobel_distance(p, p) == 0.0

    def test_zero_mask_zero_distance(self):
        pred, _ = _rand_pair(6)
        p = np.full_like(pred, 0.5)
        assert distances.sobel_distance(pred, p) == 0.0

    def test_all_ones_mask_equals_hamming(self):
        pred, p = _rand_pair(7)
        d = distances.sobel_distance(pred, p, mask=np.ones_like(p))
        assert d == pytest.approx(distances.hamming(pred, p))


class TestCombined:
    def test_gamma_one_is_hamming(self):
        pred, p = _rand_pair(8)
        assert distances.combined_distance(pred, p, gamma_c=1.0) == pytest.approx(
            distances.hamming(pred, p)
        )

    def test_gamma_zero_is_sobel(self):
        pred, p = _rand_pair(9)
        assert distances.combined_distance(pred, p, gamma_c=0.0) == pytest.approx(
            distances.sobel_distance(pred, p)
        )

    def test_half_mix_arithmetic(self):
        pred, p = _rand_pair(10)
        mask = np.ones_like(p)
        # with an all-ones mask both terms equal hamming: 0.5*h + 0.5*h = h
        assert distances.combined_distance(pred, p, mask, 0.5) == pytest.approx(
            distances.hamming(pred, p)
        )

    def test_gamma_out_of_range(self):
        pred, p = _rand_pair(11)
        with pytest.raises(ConfigurationError):
            distances.combined_distance(pred, p, gamma_c=1.5)


class TestEmbeddingDistance:
    def test_self_distance_zero(self):
        e = np.array([0.6, 0.8])
        assert distances.embedding_distance(e, e) == pytest.approx(0.0)

    def test_antipodal_is_four(self):
        e = np.array([1.0, 0.0, 0.0])
        assert distances.embedding_distance(e, -e) == pytest.approx(4.0)

    def test_orthogonal_is_two(self):
        assert distances.embedding_distance(
            np.array([1.0, 0.0]), np.array([0.0, 1.0])
        ) == pytest.approx(2.0)

    def test_non_unit_rejected(self):
        with pytest.raises(ConfigurationError):
            distances.embedding_distance(np.array([2.0, 0.0]), np.array([1.0, 0.0]))

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_equals_two_minus_two_dot_and_in_range(self, seed):
        rng = np.random.default_rng(seed)
        e1 = rng.normal(size=6)
        e2 = rng.normal(size=6)
        e1 /= np.linalg.norm(e1)
        e2 /= np.linalg.norm(e2)
        d = distances.embedding_distance(e1, e2)
        assert 0.0 - 1e-9 <= d <= 4.0 + 1e-9
        assert d == pytest.approx(2.0 - 2.0 * float(e1 @ e2), abs=1e-5)


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_symmetric_distances_are_symmetric(seed):
    a, b = _rand_pair(seed, (7, 7))
    for fn in (distances.mse, distances.hamming, distances.dssim):
        assert fn(a, b) == pytest.approx(fn(b, a), abs=1e-12)


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_all_distances_nonnegative_and_zero_on_self(seed):
    a, b = _rand_pair(seed, (7, 7))
    mask = distances.sobel_mask(a)
    for kind in distances.IMAGE_DISTANCES:
        assert distances.image_distance(kind, a, b, mask) >= 0.0
        assert distances.image_distance(kind, a.copy(), a, mask) == pytest.approx(0.0)
