import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfpnet.metrics import binarize, jaccard, mae, otsu_threshold, stability_experiment, tanimoto
from helpers import mae_reference, otsu_reference


def _pair(seed, shape=(9, 11), binary=False):
    rng = np.random.default_rng(seed)
    if binary:
        return rng.integers(0, 2, size=shape), rng.integers(0, 2, size=shape)
    return rng.random(shape), rng.random(shape)


class TestJaccard:
    def test_identical_nonempty_masks(self):
        a = np.array([[1, 0], [1, 1]])
        assert jaccard(a, a) == 1.0

    def test_disjoint_masks(self):
        assert jaccard(np.array([1, 1, 0, 0]), np.array([0, 0, 1, 1])) == 0.0

    def test_partial_overlap(self):
        assert jaccard(np.array([1, 1, 0, 0]), np.array([0, 1, 1, 0])) == pytest.approx(1 / 3)

    def test_both_empty_is_one(self):
        assert jaccard(np.zeros(4), np.zeros(4)) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            jaccard(np.zeros(3), np.zeros(4))

    def test_non_binary_input_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            jaccard(np.array([0.5, 1.0]), np.array([0, 1]))


class TestOtsu:
    def test_perfectly_bimodal(self):
        img = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        assert otsu_threshold(img).tolist() == [0, 0, 0, 1, 1, 1]

    def test_constant_image_maps_to_all_zeros(self):
        assert not otsu_threshold(np.full((4, 4), 0.6)).any()

    def test_matches_brute_force_on_gaussian_mixture(self):
        rng = np.random.default_rng(5)
        img = np.clip(
            np.concatenate([rng.normal(0.25, 0.05, 300), rng.normal(0.75, 0.05, 200)]), 0.0, 1.0
        ).reshape(25, 20)
        _, expected = otsu_reference(img)
        assert np.array_equal(otsu_threshold(img), expected)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force_on_random_images(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.random((12, 12)) ** rng.uniform(0.5, 3.0)
        _, expected = otsu_reference(img)
        assert np.array_equal(otsu_threshold(img), expected)

    def test_binarize_passes_binary_through(self):
        mask = np.array([[0, 1], [1, 0]])
        assert np.array_equal(binarize(mask), mask)


class TestMae:
    def test_identical_images(self):
        a = np.random.default_rng(0).random((5, 5))
        assert mae(a, a) == 0.0

    def test_full_scale_difference(self):
        assert mae(np.ones((3, 4)), np.zeros((3, 4))) == pytest.approx(255 / 256)

    def test_matches_double_loop_oracle(self):
        a, b = _pair(1, shape=(6, 7))
        assert mae(a, b) == pytest.approx(mae_reference(a, b), abs=1e-12)

    def test_symmetric(self):
        a, b = _pair(2)
        assert mae(a, b) == mae(b, a)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="outside"):
            mae(np.array([1.5]), np.array([0.5]))


class TestTanimoto:
    def test_equal_binary_images_match_jaccard(self):
        a = np.array([[1, 0], [0, 1]], dtype=float)
        assert tanimoto(a, a) == 1.0 == jaccard(a, a)

    def test_direct_arithmetic(self):
        assert tanimoto(np.array([1.0]), np.array([0.5])) == pytest.approx(0.5 / 0.75)

    def test_both_all_zero_is_one(self):
        assert tanimoto(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_self_similarity_is_one(self):
        a = np.random.default_rng(3).random((6, 6))
        assert tanimoto(a, a) == pytest.approx(1.0, abs=1e-12)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=60, deadline=None)
    def test_binary_pairs_reduce_to_jaccard(self, seed):
        a, b = _pair(seed, binary=True)
        assert tanimoto(a.astype(float), b.astype(float)) == pytest.approx(jaccard(a, b), abs=1e-12)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=60, deadline=None)
    def test_bounded_and_symmetric_on_gray_pairs(self, seed):
        a, b = _pair(seed)
        value = tanimoto(a, b)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(tanimoto(b, a), abs=1e-15)

    def test_rejects_values_outside_unit_interval(self):
        with pytest.raises(ValueError, match="outside"):
            tanimoto(np.array([1.2]), np.array([0.5]))


class TestStabilityExperiment:
    def test_zero_perturbation_scores_one_everywhere(self):
        records = stability_experiment(sizes=(32,), object_ratios=(0.2,), perturbation=0.0)
        assert {r["metric"] for r in records} == {"tanimoto", "jaccard_otsu", "one_minus_mae"}
        assert all(r["value"] == pytest.approx(1.0) for r in records)

    def test_tanimoto_spread_smaller_than_mae_spread_over_ratios(self):
        records = stability_experiment(sizes=(64,), object_ratios=(0.1, 0.2, 0.3, 0.4, 0.5), perturbation=0.1)
        by_metric = {m: [r["value"] for r in records if r["metric"] == m] for m in ("tanimoto", "one_minus_mae")}
        spread = {m: max(v) - min(v) for m, v in by_metric.items()}
        assert spread["tanimoto"] < spread["one_minus_mae"]

    def test_tanimoto_constant_across_replicated_sizes(self):
        records = stability_experiment(sizes=(32, 64, 96, 128), object_ratios=(0.3,), perturbation=0.1)
        values = [r["value"] for r in records if r["metric"] == "tanimoto"]
        assert max(values) - min(values) < 1e-3

    def test_empty_sweep_rejected(self):
        with pytest.raises(ValueError):
            stability_experiment(sizes=(), object_ratios=(0.2,))

    def test_sizes_must_be_multiples_of_smallest(self):
        with pytest.raises(ValueError, match="multiple"):
            stability_experiment(sizes=(32, 48), object_ratios=(0.2,))

    def test_infeasible_ratio_rejected(self):
        with pytest.raises(ValueError):
            stability_experiment(sizes=(32,), object_ratios=(1.5,))
