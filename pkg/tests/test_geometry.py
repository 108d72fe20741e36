import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sepunmix as su
from sepunmix import geometry
from sepunmix.errors import DomainError, ShapeError
from sepunmix.model import Provenance

from test_model import ConstantModel


def _sigma(vals):
    return su.SpectralConstants(tuple(vals), Provenance.COHERENCE_BOUND)


@pytest.fixture(scope="module")
def psf_setup(small_problem):
    model, theta_star, signal = small_problem
    profile = su.build_coherence_profile(model.kernel, [0.01], 8, model.grid)
    sigma = su.coherence_sigma_bound(profile, 2, 0.01)
    smin = su.sigma_min_tilde(model, 8)
    constants = su.basin_constants(sigma, theta_star.y, 0.0)
    vp = su.vp_constants(model, signal, theta_star, sigma, constants, smin)
    return model, theta_star, signal, sigma, smin, constants, vp


class TestBasinConstants:
    def test_direct_substitution(self):
        constants = su.basin_constants(_sigma((1, 1, 0, 0)), np.array([1.0]), 0.0)
        assert constants.c_r0 == 2.0
        assert constants.c_r1 == 1.0
        assert constants.c_r2 == 0.0
        assert constants.c1 == 6.0
        assert constants.c2 == 1.0

    def test_noise_linearity(self):
        sigma = _sigma((1.0, 0.5, 0.7, 0.3))
        y = np.array([2.0, 1.0])
        c_a = su.basin_constants(sigma, y, 1.0)
        c_b = su.basin_constants(sigma, y, 2.0)
        assert c_b.c1 - c_a.c1 == pytest.approx(c_a.c_r2)

    def test_independent_reevaluation(self, psf_setup):
        _, theta_star, _, sigma, _, constants, _ = psf_setup
        y = float(np.linalg.norm(theta_star.y))
        s0, s1, s2, s3 = sigma.sigma
        mix = s2 * y + s1
        assert constants.c_r0 == pytest.approx(s2 * y + 2 * s1)
        assert constants.c_r1 == pytest.approx(max(s0 / mix, 1 / y))
        assert constants.c_r2 == pytest.approx(max((s3 * y + 2 * s2) / mix, 2 * s2 / y))
        assert constants.c1 == pytest.approx(
            2 * s1 * y + 2 * s0 + constants.c_r0 * constants.c_r1
        )
        assert constants.c2 == pytest.approx(1 + constants.c_r1 * constants.c_r2)

    def test_zero_weights_rejected(self):
        with pytest.raises(DomainError):
            su.basin_constants(_sigma((1, 1, 1, 1)), np.zeros(3), 0.0)


class TestRadii:
    def test_zero_gap(self):
        constants = su.basin_constants(_sigma((1, 1, 0, 0)), np.array([1.0]), 0.0)
        assert su.radius_alpha_ls(constants, 1.0, 1.0) == 0.0
        assert su.radius_alpha_ls(constants, 0.5, 1.0) == 0.0

    def test_pure_quadratic(self):
        constants = geometry.BasinConstants(0, 0, 0, c1=0.0, c2=1.0, noise_norm=0.0)
        assert su.radius_alpha_ls(constants, 4.0, 0.0) == pytest.approx(2.0)

    def test_exact_arithmetic(self):
        constants = geometry.BasinConstants(0, 0, 0, c1=1.0, c2=1.0, noise_norm=0.0)
        assert su.radius_alpha_ls(constants, 2.0, 0.0) == pytest.approx(1.0)

    @settings(max_examples=300, deadline=None)
    @given(
        c1=st.floats(0.0, 50.0),
        extra=st.floats(0.0, 50.0),
        lam=st.floats(1e-6, 100.0),
        alpha_frac=st.floats(0.0, 0.999),
    )
    def test_root_identity_and_monotonicity(self, c1, extra, lam, alpha_frac):
        c2 = 1.0 + extra
        constants = geometry.BasinConstants(0, 0, 0, c1=c1, c2=c2, noise_norm=0.0)
        alpha = alpha_frac * lam
        r = su.radius_alpha_ls(constants, lam, alpha)
        assert c1 * r + c2 * r * r == pytest.approx(lam - alpha, rel=1e-9, abs=1e-12)
        # nonincreasing in alpha and in each coefficient
        assert su.radius_alpha_ls(constants, lam, alpha + 0.5 * (lam - alpha)) <= r + 1e-15
        bigger_c1 = geometry.BasinConstants(0, 0, 0, c1=c1 + 1, c2=c2, noise_norm=0.0)
        bigger_c2 = geometry.BasinConstants(0, 0, 0, c1=c1, c2=c2 + 1, noise_norm=0.0)
        assert su.radius_alpha_ls(bigger_c1, lam, alpha) <= r
        assert su.radius_alpha_ls(bigger_c2, lam, alpha) <= r

    def test_envelope_values(self):
        constants = geometry.BasinConstants(0, 0, 0, c1=6.0, c2=1.0, noise_norm=0.0)
        assert su.hessian_perturbation_bound(constants, 0.0) == 0.0
        assert su.hessian_perturbation_bound(constants, 0.5) == pytest.approx(3.25)

    def test_residual_bound_values(self):
        constants = geometry.BasinConstants(2.0, 0, 0, c1=0, c2=1, noise_norm=1.0)
        assert su.residual_hessian_bound(constants, 0.0, 0.0, 1.0) == 0.0
        assert su.residual_hessian_bound(constants, 0.1, 0.2, 1.0) == pytest.approx(0.42)


class TestWeyl:
    def test_equal_matrices(self):
        h = np.diag([1.0, 2.0])
        gap, eigs = su.weyl_probe(h, h)
        assert gap == 0.0 and np.all(eigs == 0.0)

    def test_diagonal_example(self):
        gap, eigs = su.weyl_probe(np.diag([1.0, 2.0]), np.diag([1.0, 5.0]))
        assert gap == pytest.approx(3.0)
        assert np.allclose(sorted(eigs), [0.0, 3.0])

    def test_random_certification(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            m = rng.standard_normal((n, n))
            a = 0.5 * (m + m.T)
            d = rng.standard_normal((n, n))
            b = a + 0.5 * (d + d.T)
            gap, eigs = su.weyl_probe(a, b)
            assert np.all(eigs <= gap * (1 + 1e-10) + 1e-12)

    def test_asymmetry_rejected(self):
        bad = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(ShapeError):
            su.weyl_probe(bad, bad)


class TestCouplingFactor:
    def test_zero_cross_block(self):
        a0 = np.linalg.qr(np.random.default_rng(0).standard_normal((8, 2)))[0]
        model = ConstantModel(a0, p=1)
        z = np.random.default_rng(1).standard_normal(8)
        k_exact, k_paper = su.coupling_factor(model, z, np.array([0.0]))
        assert k_exact == pytest.approx(1.0)
        assert k_paper == pytest.approx(1.0)

    def test_lemma_domination_exact_variant(self, psf_setup):
        model, theta_star, signal, *_ = psf_setup
        rng = np.random.default_rng(5)
        hvp_star = su.projected_hessian(model, signal, theta_star.x)
        point_star = su.linear_solve(model, signal, theta_star.x)
        h_star = su.hessian(model, signal, point_star.theta).full
        for _ in range(200):
            x = np.clip(
                theta_star.x + 1e-3 * rng.standard_normal(2),
                model.feasible.lower,
                model.feasible.upper,
            )
            k_exact, _ = su.coupling_factor(model, signal, x)
            hvp = su.projected_hessian(model, signal, x)
            point = su.linear_solve(model, signal, x)
            h = su.hessian(model, signal, point.theta).full
            gap_full = np.linalg.norm(h - h_star, 2)
            per_eig = np.abs(np.linalg.eigvalsh(hvp) - np.linalg.eigvalsh(hvp_star))
            assert np.all(per_eig <= k_exact * gap_full * (1 + 1e-9) + 1e-12)


class TestLiftAndVpRadii:
    def test_rho_lift_zero(self):
        assert su.rho_lift_bound(_sigma((1, 1, 1, 1)), 1.0, np.ones(2), 0.0, 0.0) == 0.0

    def test_rho_lift_substitution(self):
        val = su.rho_lift_bound(_sigma((0, 1, 0, 0)), 1.0, np.array([1.0]), 0.0, 1.0)
        assert val == pytest.approx(2.0)

    def test_rho_lift_domination(self, psf_setup):
        model, theta_star, signal, sigma, smin, *_ = psf_setup
        rng = np.random.default_rng(31)
        theta_ref = su.linear_solve(model, signal, theta_star.x).theta
        for _ in range(100):
            x = rng.uniform(model.feasible.lower, model.feasible.upper)
            lifted = su.linear_solve(model, signal, x).theta
            rho = su.unmixing_metric(sigma, theta_star.y, lifted, theta_ref)
            bound = su.rho_lift_bound(
                sigma, smin, theta_star.y, 0.0, float(np.linalg.norm(x - theta_star.x))
            )
            assert rho <= bound * (1 + 1e-9)

    def test_vp_radius_collapse(self):
        constants = geometry.BasinConstants(0, 0, 0, c1=1.0, c2=1.0, noise_norm=0.0)
        vp = geometry.VpConstants(
            c_vp=1.0,
            K_exact=1.0,
            K_paper=1.0,
            k_vp=1.0,
            sigma_min_tilde=1.0,
            c1_vp=0.0,
            c2_vp=1.0,
            lambda_offset=2.0,
        )
        assert su.radius_vp_noiseless(constants, vp, 2.0) == pytest.approx(
            su.radius_alpha_ls(constants, 2.0, 0.0)
        )

    def test_vp_radius_no_linear_term(self):
        constants = geometry.BasinConstants(0, 0, 0, c1=0.0, c2=2.0, noise_norm=0.0)
        vp = geometry.VpConstants(
            c_vp=3.0,
            K_exact=1.0,
            K_paper=1.0,
            k_vp=2.0,
            sigma_min_tilde=1.0,
            c1_vp=0.0,
            c2_vp=1.0,
            lambda_offset=1.0,
        )
        lam_vp = 8.0
        assert su.radius_vp_noiseless(constants, vp, lam_vp) == pytest.approx(
            math.sqrt(lam_vp / 2.0) / 3.0
        )

    def test_vp_noisy_zero_lambda(self):
        constants = geometry.BasinConstants(0, 0, 0, c1=1.0, c2=1.0, noise_norm=1.0)
        vp = geometry.VpConstants(
            c_vp=1.0,
            K_exact=1.0,
            K_paper=1.0,
            k_vp=1.0,
            sigma_min_tilde=1.0,
            c1_vp=1.0,
            c2_vp=1.0,
            lambda_offset=0.0,
        )
        assert su.radius_vp_noisy(constants, vp) == 0.0

    def test_vp_noisy_simple_root(self):
        constants = geometry.BasinConstants(0, 0, 0, c1=1.0, c2=1.0, noise_norm=1.0)
        vp = geometry.VpConstants(
            c_vp=1.0,
            K_exact=1.0,
            K_paper=1.0,
            k_vp=1.0,
            sigma_min_tilde=1.0,
            c1_vp=0.0,
            c2_vp=1.0,
            lambda_offset=4.0,
        )
        assert su.radius_vp_noisy(constants, vp) == pytest.approx(2.0)

    def test_vp_noisy_root_certification(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            c1_vp, c2_vp, lam, k = rng.uniform(0.1, 10.0, size=4)
            constants = geometry.BasinConstants(0, 0, 0, c1=1.0, c2=1.0, noise_norm=1.0)
            vp = geometry.VpConstants(
                c_vp=1.0,
                K_exact=1.0 + k,
                K_paper=1.0 + k,
                k_vp=1.0,
                sigma_min_tilde=1.0,
                c1_vp=c1_vp,
                c2_vp=c2_vp,
                lambda_offset=lam,
            )
            root = su.radius_vp_noisy(constants, vp)
            q = lam - (1 + k) * c1_vp * root - (1 + k) * c2_vp * root**2
            assert abs(q) <= 1e-9 * lam

    def test_comparison_equality_case(self):
        constants = geometry.BasinConstants(0, 0, 0, c1=2.0, c2=1.5, noise_norm=0.0)
        vp = geometry.VpConstants(
            c_vp=2.5,
            K_exact=1.0,
            K_paper=1.0,
            k_vp=1.0,
            sigma_min_tilde=1.0,
            c1_vp=0.0,
            c2_vp=1.0,
            lambda_offset=1.0,
        )
        r_ls = 0.7
        lower, upper, holds = su.radii_comparison(r_ls, vp, constants)
        assert lower == pytest.approx(upper) == pytest.approx(r_ls / 2.5)
        assert holds

    def test_comparison_random_chain(self):
        rng = np.random.default_rng(3)
        for _ in range(10_000):
            c1, lam = rng.uniform(0.01, 10.0, size=2)
            c2 = rng.uniform(1.0, 10.0)
            k = rng.uniform(1.0, 10.0)
            constants = geometry.BasinConstants(0, 0, 0, c1=c1, c2=c2, noise_norm=0.0)
            vp = geometry.VpConstants(
                c_vp=rng.uniform(0.1, 10.0),
                K_exact=1.0,
                K_paper=1.0,
                k_vp=k,
                sigma_min_tilde=1.0,
                c1_vp=0.0,
                c2_vp=1.0,
                lambda_offset=lam,
            )
            r_ls = su.radius_alpha_ls(constants, lam, 0.0)
            lower, upper, holds = su.radii_comparison(r_ls, vp, constants)
            assert holds and lower <= upper

    def test_comparison_end_to_end(self, psf_setup):
        model, theta_star, signal, sigma, smin, constants, vp = psf_setup
        lam = float(np.linalg.eigvalsh(su.hessian(model, signal, theta_star).full).min())
        r_ls = su.radius_alpha_ls(constants, lam, 0.0)
        lower, upper, holds = su.radii_comparison(r_ls, vp, constants)
        assert holds


class TestStabilityBounds:
    def test_zero_noise(self, psf_setup):
        model, theta_star, signal, sigma, smin, *_ = psf_setup
        j = su.jacobian(model, theta_star)
        jvp = su.projected_jacobian(model, signal, theta_star.x)
        w = np.zeros(signal.size)
        assert su.stability_bound_ls(sigma, theta_star.y, j, w, 1.0) == 0.0
        assert su.stability_bound_vp(sigma, smin, theta_star.y, jvp, w, 1.0) == 0.0

    def test_noise_scaling(self, psf_setup):
        model, theta_star, signal, sigma, smin, *_ = psf_setup
        j = su.jacobian(model, theta_star)
        jvp = su.projected_jacobian(model, signal, theta_star.x)
        w = np.random.default_rng(2).standard_normal(signal.size)
        for fn in (
            lambda v: su.stability_bound_ls(sigma, theta_star.y, j, v, 2.0),
            lambda v: su.stability_bound_vp(sigma, smin, theta_star.y, jvp, v, 2.0),
        ):
            assert fn(2 * w) == pytest.approx(2 * fn(w), rel=1e-12)

    def test_alpha_validation(self, psf_setup):
        model, theta_star, signal, sigma, smin, *_ = psf_setup
        j = su.jacobian(model, theta_star)
        with pytest.raises(DomainError):
            su.stability_bound_ls(sigma, theta_star.y, j, np.zeros(signal.size), 0.0)


class TestMonteCarloBasin:
    def test_radius_zero_reproduces_lambda_star(self, psf_setup):
        model, theta_star, signal, sigma, smin, constants, vp = psf_setup
        lam = float(np.linalg.eigvalsh(su.hessian(model, signal, theta_star).full).min())
        report = su.monte_carlo_basin(
            model,
            signal,
            theta_star,
            [0.0, 1e-6],
            5,
            geometry.RadiusMetric.UNMIXING_RHO,
            7,
            sigma,
            constants,
        )
        assert np.allclose(report.mc_min_eigs[0], lam)

    def test_exact_rho_radius_sampling(self, psf_setup):
        model, theta_star, signal, sigma, smin, constants, vp = psf_setup
        radius = 1e-3
        rng = geometry._trial_rng(3, 0, 0)
        theta, frac = geometry._sample_rho_sphere(
            rng, theta_star, radius, sigma, model.feasible
        )
        rho = su.unmixing_metric(sigma, theta_star.y, theta, theta_star)
        assert rho == pytest.approx(radius, rel=1e-9)
        assert 0.0 <= frac <= 1.0

    def test_ordering_and_analytical_radius(self, psf_setup):
        model, theta_star, signal, sigma, smin, constants, vp = psf_setup
        lam = float(np.linalg.eigvalsh(su.hessian(model, signal, theta_star).full).min())
        r0 = su.radius_alpha_ls(constants, lam, 0.0)
        radii = np.geomspace(0.3 * r0, 40 * r0, 8)
        report = su.monte_carlo_basin(
            model,
            signal,
            theta_star,
            radii,
            20,
            geometry.RadiusMetric.UNMIXING_RHO,
            99,
            sigma,
            constants,
        )
        assert report.analytical_radius <= report.empirical_radius
        for row in report.samples:
            assert row["lambda_min"] >= row["envelope"] - 1e-9
            assert row["envelope"] >= row["analytical"] - 1e-9

    def test_projected_metric_requires_vp(self, psf_setup):
        model, theta_star, signal, sigma, smin, constants, vp = psf_setup
        with pytest.raises(DomainError):
            su.monte_carlo_basin(
                model,
                signal,
                theta_star,
                [1e-4],
                3,
                geometry.RadiusMetric.EUCLIDEAN_X,
                1,
                sigma,
                constants,
            )

    def test_projected_probe_rows(self, psf_setup):
        model, theta_star, signal, sigma, smin, constants, vp = psf_setup
        report = su.monte_carlo_basin(
            model,
            signal,
            theta_star,
            [1e-4, 1e-3],
            5,
            geometry.RadiusMetric.EUCLIDEAN_X,
            5,
            sigma,
            constants,
            vp=vp,
        )
        for row in report.samples:
            assert "restricted_envelope" in row
            assert row["lambda_min"] >= row["envelope"] - 1e-9


class TestConvergenceScan:
    def test_zero_radius_success(self, psf_setup):
        model, theta_star, signal, sigma, smin, constants, vp = psf_setup
        opts = su.SolverOptions(kind=su.SolverKind.LEVENBERG_MARQUARDT, max_iters=50)
        radius = su.empirical_convergence_radius(
            model, signal, theta_star, opts, [0.0], 3, 1e-6, 11, sigma
        )
        assert radius == 0.0

    def test_convergence_contains_convexity(self, psf_setup):
        model, theta_star, signal, sigma, smin, constants, vp = psf_setup
        radii = np.geomspace(1e-4, 2e-2, 5)
        report = su.monte_carlo_basin(
            model,
            signal,
            theta_star,
            radii,
            10,
            geometry.RadiusMetric.EUCLIDEAN_X,
            2,
            sigma,
            constants,
            vp=vp,
        )
        opts = su.SolverOptions(kind=su.SolverKind.LEVENBERG_MARQUARDT, max_iters=200)
        jvp = su.projected_jacobian(model, signal, theta_star.x)
        tol = 1e-6 * np.linalg.norm(theta_star.concat())
        conv_radius = su.empirical_convergence_radius(
            model, signal, theta_star, opts, radii, 10, max(tol, 1e-8), 3, sigma
        )
        assert conv_radius >= report.empirical_radius
