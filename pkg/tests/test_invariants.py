"""Cross-module invariants that don't belong to a single operation's tests."""

import numpy as np
import pytest

import sepunmix as su
from sepunmix import geometry
from sepunmix.errors import CoverageError

from _oracles import rel_err


@pytest.fixture(scope="module")
def certified(small_problem):
    model, theta_star, signal = small_problem
    profile = su.build_coherence_profile(model.kernel, [0.01], 8, model.grid)
    sigma = su.coherence_sigma_bound(profile, 2, 0.01)
    return model, theta_star, signal, sigma


def test_model_derivatives_match_fd_200_points(small_psf_model):
    """Pure partials of the dictionary map agree with k-fold central differences."""
    model = small_psf_model
    rng = np.random.default_rng(314)
    lo, hi = model.feasible.lower, model.feasible.upper
    steps = {1: 1e-6, 2: 1e-6, 3: 1e-6}
    worst = {1: 0.0, 2: 0.0, 3: 0.0}
    for _ in range(200):
        k = int(rng.integers(1, 4))
        i = int(rng.integers(0, 2))
        h = steps[k]
        x = rng.uniform(lo + 1e-3, hi - 1e-3)
        e = np.zeros(2)
        e[i] = h
        if k == 1:
            fd = (model.evaluate(x + e) - model.evaluate(x - e)) / (2 * h)
        else:
            fd = (model.partial(x + e, k - 1, i) - model.partial(x - e, k - 1, i)) / (2 * h)
        worst[k] = max(worst[k], rel_err(fd, model.partial(x, k, i)))
    assert worst[1] < 1e-4 and worst[2] < 1e-4
    assert worst[3] < 1e-3


def test_auxiliary_metric_equivalence_constants(certified):
    """rho_1 <= c_r1 rho and rho_2 <= c_r2 rho on 1000 random pairs."""
    model, theta_star, signal, sigma = certified
    constants = su.basin_constants(sigma, theta_star.y, 0.0)
    rng = np.random.default_rng(11)
    for _ in range(1000):
        a = su.Theta(rng.standard_normal(2), rng.standard_normal(4))
        b = su.Theta(rng.standard_normal(2), rng.standard_normal(4))
        rho = su.unmixing_metric(sigma, theta_star.y, a, b)
        rho1, rho2 = su.auxiliary_metrics(sigma, theta_star.y, a, b)
        assert rho1 <= constants.c_r1 * rho * (1 + 1e-12)
        assert rho2 <= constants.c_r2 * rho * (1 + 1e-12)


def test_residual_hessian_drift_domination(certified):
    """The residual-part drift stays under c_r0 rho1 + (||w|| + rho1) rho2."""
    model, theta_star, signal, sigma = certified
    rng = np.random.default_rng(21)
    w = rng.standard_normal(signal.size)
    w *= 0.2 * np.linalg.norm(signal) / np.linalg.norm(w)
    z = signal + w
    constants = su.basin_constants(sigma, theta_star.y, float(np.linalg.norm(w)))
    h_star = su.hessian(model, z, theta_star).residual_part
    for _ in range(200):
        dx = rng.standard_normal(2)
        dx *= rng.uniform(0, 0.3) * 0.05 / np.linalg.norm(dx)
        x = np.clip(theta_star.x + dx, model.feasible.lower, model.feasible.upper)
        theta = su.Theta(x, theta_star.y + 0.3 * rng.standard_normal(4))
        rho1, rho2 = su.auxiliary_metrics(sigma, theta_star.y, theta, theta_star)
        drift = np.linalg.norm(su.hessian(model, z, theta).residual_part - h_star, 2)
        bound = su.residual_hessian_bound(constants, rho1, rho2, float(np.linalg.norm(w)))
        assert drift <= bound * (1 + 1e-9)


def test_conditioning_reduction(gaussian_kernel):
    """Projection never worsens the Jacobian condition number at the truth."""
    grid = su.SamplingGrid.uniform(512, 1.0)
    for seed in range(10):
        support = su.sample_support(2, 2, 8e-3, 1.0, np.random.default_rng(seed))
        model = su.build_psf_model(gaussian_kernel, support, grid)
        theta_star = su.Theta(np.array([0.07, 0.09]), np.ones(4))
        signal = model.evaluate(theta_star.x) @ theta_star.y
        cond_j = np.linalg.cond(su.jacobian(model, theta_star))
        cond_jvp = np.linalg.cond(su.projected_jacobian(model, signal, theta_star.x))
        assert cond_jvp <= cond_j * (1 + 1e-9)


def test_monte_carlo_coverage_error(certified):
    model, theta_star, signal, sigma = certified
    constants = su.basin_constants(sigma, theta_star.y, 0.0)
    vp = geometry.VpConstants(
        c_vp=1.0, K_exact=1.0, K_paper=1.0, k_vp=1.0,
        sigma_min_tilde=1.0, c1_vp=0.0, c2_vp=1.0, lambda_offset=1.0,
    )
    with pytest.raises(CoverageError):
        su.monte_carlo_basin(
            model, signal, theta_star, [10.0], 3,
            geometry.RadiusMetric.EUCLIDEAN_X, 3, sigma, constants, vp=vp,
        )


@pytest.mark.parametrize("u", [0.5, 1.0, 2.0, 5.0])
def test_coherence_envelope_all_kernel_families(u):
    """Block norms never exceed the coherence bound, for every kernel family."""
    grid = su.SamplingGrid.uniform(512, 1.0)
    kernel = su.unit_speed_wrap(su.ULaplaceKernel((0.05, 0.1), u), 1.0)
    delta = 8e-3
    profile = su.build_coherence_profile(kernel, [delta], 6, grid)
    bound = su.coherence_sigma_bound(profile, 2, delta)
    for seed in range(3):
        support = su.sample_support(2, 2, delta, 1.0, np.random.default_rng(seed))
        model = su.build_psf_model(kernel, support, grid)
        emp = su.spectral_constants_psf(model, 12)
        for k in range(4):
            assert emp[k] <= bound[k] * (1 + 1e-9)
