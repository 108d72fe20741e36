import math

import numpy as np
import pytest
from scipy import stats

import sepunmix as su
from sepunmix.errors import ConfigError, InvariantViolation

from _oracles import rel_err


class TestSampleSupport:
    def test_pair_construction(self):
        rng = np.random.default_rng(0)
        support = su.sample_support(1, 2, 0.3, 1.0, rng)
        flat = support.locations.ravel()
        assert flat.size == 2
        assert abs(abs(flat[1] - flat[0]) - 0.3) < 1e-12

    def test_paper_scale_packing(self):
        rng = np.random.default_rng(1)
        support = su.sample_support(5, 5, 5e-3, 1.0, rng)
        flat = support.locations.ravel()
        assert flat.size == 25
        assert np.all(np.abs(flat) <= 0.5)
        assert su.minimal_separation(support) >= 5e-3

    def test_single_spike_uniform(self):
        draws = np.array(
            [
                su.sample_support(1, 1, 1e-3, 1.0, np.random.default_rng(seed)).locations[0, 0]
                for seed in range(10_000)
            ]
        )
        stat, _ = stats.kstest(draws, stats.uniform(loc=-0.5, scale=1.0).cdf)
        assert stat < 0.02

    def test_infeasible_packing_rejected(self):
        with pytest.raises(ConfigError):
            su.sample_support(10, 10, 0.02, 1.0, np.random.default_rng(0))

    def test_separation_property(self):
        for seed in range(100):
            support = su.sample_support(2, 3, 8e-3, 1.0, np.random.default_rng(seed))
            assert su.minimal_separation(support) >= 8e-3

    def test_group_layout(self):
        support = su.sample_support(3, 4, 5e-3, 1.0, np.random.default_rng(7))
        assert support.locations.shape == (3, 4)
        assert support.groups == 3 and support.per_group == 4


class TestMinimalSeparation:
    def test_three_points(self):
        support = su.SupportDictionary(np.array([[0.0, 0.3, 0.7]]), window=2.0, delta=0.1)
        assert su.minimal_separation(support) == pytest.approx(0.3)

    def test_two_points(self):
        support = su.SupportDictionary(np.array([[-0.2, 0.2]]), window=1.0, delta=0.1)
        assert su.minimal_separation(support) == pytest.approx(0.4)

    def test_single_point_sentinel(self):
        support = su.SupportDictionary(np.array([[0.1]]), window=1.0, delta=0.1)
        assert su.minimal_separation(support) == math.inf

    def test_duplicates_rejected(self):
        with pytest.raises(InvariantViolation):
            su.SupportDictionary(np.array([[0.1, 0.1]]), window=1.0, delta=0.1)


class TestPsfModel:
    def test_single_spike_column(self, gaussian_kernel):
        grid = su.SamplingGrid.uniform(64, 1.0)
        support = su.SupportDictionary(np.array([[0.0]]), window=1.0, delta=0.1)
        model = su.build_psf_model(gaussian_kernel, support, grid)
        a = model.evaluate(np.array([0.07]))
        assert np.allclose(a[:, 0], np.exp(-grid.points**2 / 0.07**2))

    def test_partial_block_sparsity(self, small_psf_model):
        x = np.array([0.07, 0.09])
        d1 = small_psf_model.partial(x, 1, 0)
        assert np.allclose(d1[:, 2:], 0.0)
        assert not np.allclose(d1[:, :2], 0.0)
        assert np.allclose(small_psf_model.mixed_partial(x, 0, 1), 0.0)
        assert np.allclose(
            small_psf_model.mixed_partial(x, 1, 1), small_psf_model.partial(x, 2, 1)
        )

    def test_model_derivative_fd(self, small_psf_model):
        rng = np.random.default_rng(3)
        h = 1e-6
        lo, hi = small_psf_model.feasible.lower, small_psf_model.feasible.upper
        for _ in range(10):
            x = rng.uniform(lo + 2 * h, hi - 2 * h)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd = (small_psf_model.evaluate(x + e) - small_psf_model.evaluate(x - e)) / (2 * h)
                assert rel_err(fd, small_psf_model.partial(x, 1, i)) < 1e-4

    def test_window_mismatch_rejected(self, gaussian_kernel):
        grid = su.SamplingGrid.uniform(64, 2.0)
        support = su.SupportDictionary(np.array([[0.0]]), window=1.0, delta=0.1)
        with pytest.raises(ConfigError):
            su.build_psf_model(gaussian_kernel, support, grid)


class TestBlockNorms:
    def test_single_column_is_vector_norm(self, gaussian_kernel):
        grid = su.SamplingGrid.uniform(128, 1.0)
        support = su.SupportDictionary(np.array([[0.1], [-0.2]]), window=1.0, delta=0.3)
        model = su.build_psf_model(gaussian_kernel, support, grid)
        x = np.array([0.06, 0.08])
        norms = su.block_operator_norms(model, x, 0)
        for i in range(2):
            col = model.column_block(x[i], i, 0)[:, 0]
            assert norms[i] == pytest.approx(np.linalg.norm(col))

    def test_matches_dense_svd(self, small_psf_model):
        x = np.array([0.07, 0.09])
        for k in range(4):
            norms = su.block_operator_norms(small_psf_model, x, k)
            for i in range(2):
                block = small_psf_model.column_block(x[i], i, k)
                svd_top = np.linalg.svd(block, compute_uv=False)[0]
                assert norms[i] == pytest.approx(svd_top, rel=1e-12)

    def test_clustering_increases_norm(self, gaussian_kernel):
        grid = su.SamplingGrid.uniform(512, 1.0)
        tight = su.SupportDictionary(np.array([[0.0, 0.004, 0.008]]), window=1.0, delta=0.004)
        loose = su.SupportDictionary(np.array([[-0.3, 0.0, 0.3]]), window=1.0, delta=0.3)
        x = np.array([0.08])
        tight_norm = su.block_operator_norms(
            su.build_psf_model(gaussian_kernel, tight, grid), x, 0
        )[0]
        loose_norm = su.block_operator_norms(
            su.build_psf_model(gaussian_kernel, loose, grid), x, 0
        )[0]
        assert tight_norm > loose_norm


class TestSpectralConstantsPsf:
    def test_p1_no_sqrt_inflation(self, gaussian_kernel):
        grid = su.SamplingGrid.uniform(128, 1.0)
        support = su.SupportDictionary(np.array([[0.1]]), window=1.0, delta=0.1)
        model = su.build_psf_model(gaussian_kernel, support, grid)
        sig = su.spectral_constants_psf(model, 16)
        xs = np.linspace(0.05, 0.1, 16)
        direct = max(np.linalg.norm(model.column_block(float(x), 0, 0), 2) for x in xs)
        assert sig[0] == pytest.approx(direct)

    def test_dominates_generic_grid_estimate(self, gaussian_kernel):
        grid = su.SamplingGrid.uniform(256, 1.0)
        for seed in range(20):
            support = su.sample_support(2, 2, 0.02, 1.0, np.random.default_rng(seed))
            model = su.build_psf_model(gaussian_kernel, support, grid)
            blockwise = su.spectral_constants_psf(model, 24)
            generic = su.estimate_spectral_constants(model, 5, 3, rng_seed=seed)
            for k in range(4):
                assert generic[k] <= blockwise[k] * (1 + 1e-6)

    def test_serialization_roundtrip(self):
        support = su.sample_support(2, 2, 0.02, 1.0, np.random.default_rng(5))
        again = su.SupportDictionary.from_json(support.to_json())
        assert np.allclose(again.locations, support.locations)
        assert again.window == support.window and again.delta == support.delta
