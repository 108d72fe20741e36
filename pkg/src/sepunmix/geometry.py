"""Basin geometry: perturbation envelopes, convexity radii, stability bounds.

Everything here quantifies how far the loss Hessian can drift from its value
at the ground truth, in the unmixing metric for the joint problem and in the
Euclidean metric on the nonlinear parameters for the projected one, and what
that implies for convexity radii and recovery stability.  Monte Carlo probes
estimate the same quantities empirically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, DomainError, InvariantViolation, ShapeError
from .model import (
    SeparableModel,
    SpectralConstants,
    Theta,
    hessian,
    unmixing_metric,
)
from .varpro import linear_solve, projected_hessian

MAX_REJECTION_TRIES = 2000


@dataclass(frozen=True)
class BasinConstants:
    """Coefficients of the quadratic Hessian-perturbation envelope."""

    c_r0: float
    c_r1: float
    c_r2: float
    c1: float
    c2: float
    noise_norm: float

    def __post_init__(self):
        vals = (self.c_r0, self.c_r1, self.c_r2, self.c1, self.c2, self.noise_norm)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise InvariantViolation(f"basin constants must be finite and nonnegative: {vals}")
        if self.c2 < 1.0:
            raise InvariantViolation("c2 = 1 + c_r1 c_r2 cannot be below 1")


@dataclass(frozen=True)
class VpConstants:
    """Constants governing the projected problem's basin and its radius."""

    c_vp: float
    K_exact: float
    K_paper: float
    k_vp: float
    sigma_min_tilde: float
    c1_vp: float
    c2_vp: float
    lambda_offset: float

    def __post_init__(self):
        if not (self.k_vp >= 1.0 or math.isinf(self.k_vp)):
            raise InvariantViolation(f"interlacing requires k_vp >= 1, got {self.k_vp}")
        if min(self.K_exact, self.K_paper) < 1.0:
            raise InvariantViolation("coupling factors are >= 1 by construction")


class RadiusMetric(enum.Enum):
    UNMIXING_RHO = "unmixing_rho"
    EUCLIDEAN_X = "euclidean_x"


@dataclass
class BasinReport:
    """Analytical radius next to Monte Carlo eigenvalue probes along a ladder."""

    analytical_radius: float
    alpha: float
    radius_metric: RadiusMetric
    mc_radii: np.ndarray
    mc_min_eigs: list  # per radius: array of sampled minimum eigenvalues
    empirical_radius: float
    seed: int
    lambda_min_star: float = 0.0
    samples: list = field(default_factory=list)  # per-sample row dicts

    def rows(self):
        return self.samples


def basin_constants(
    sigma: SpectralConstants, y_star: np.ndarray, noise_norm: float
) -> BasinConstants:
    """Envelope coefficients from spectral constants, true weights, and noise size."""
    y_norm = float(np.linalg.norm(y_star))
    if y_norm <= 0:
        raise DomainError("the true weights must be nonzero")
    s0, s1, s2, s3 = sigma.sigma
    mix = s2 * y_norm + s1
    c_r0 = s2 * y_norm + 2.0 * s1
    if mix > 0:
        c_r1 = max(s0 / mix, 1.0 / y_norm)
        c_r2 = max((s3 * y_norm + 2.0 * s2) / mix, 2.0 * s2 / y_norm)
    else:
        # Constant dictionary: the x-part of the metric collapses.
        c_r1 = math.inf if s0 > 0 else 1.0 / y_norm
        c_r2 = 2.0 * s2 / y_norm
    c1 = 2.0 * s1 * y_norm + 2.0 * s0 + c_r0 * c_r1 + noise_norm * c_r2
    c2 = 1.0 + c_r1 * c_r2
    return BasinConstants(
        c_r0=c_r0, c_r1=c_r1, c_r2=c_r2, c1=c1, c2=c2, noise_norm=float(noise_norm)
    )


def radius_alpha_ls(constants: BasinConstants, lambda_min: float, alpha: float) -> float:
    """Largest rho with c1 rho + c2 rho^2 <= lambda_min - alpha (0 if none)."""
    gap = lambda_min - alpha
    if gap <= 0:
        return 0.0
    c1, c2 = constants.c1, constants.c2
    # stable form of (sqrt(c1^2 + 4 c2 gap) - c1) / (2 c2)
    return 2.0 * gap / (math.sqrt(c1 * c1 + 4.0 * c2 * gap) + c1)


def hessian_perturbation_bound(constants: BasinConstants, rho: float) -> float:
    """Quadratic envelope c1 rho + c2 rho^2 on the Hessian drift."""
    return constants.c1 * rho + constants.c2 * rho * rho


def residual_hessian_bound(
    constants: BasinConstants, rho1: float, rho2: float, noise_norm: float
) -> float:
    """Drift bound for the residual-weighted Hessian part alone."""
    return constants.c_r0 * rho1 + (noise_norm + rho1) * rho2


def weyl_probe(h_a: np.ndarray, h_b: np.ndarray) -> tuple[float, np.ndarray]:
    """Spectral-norm gap between two symmetric matrices and per-eigenvalue gaps."""
    h_a = np.asarray(h_a, dtype=float)
    h_b = np.asarray(h_b, dtype=float)
    if h_a.shape != h_b.shape or h_a.ndim != 2 or h_a.shape[0] != h_a.shape[1]:
        raise ShapeError("expected two square matrices of equal size")
    for m in (h_a, h_b):
        scale = max(1.0, float(np.abs(m).max()))
        if float(np.abs(m - m.T).max()) > 1e-8 * scale:
            raise ShapeError("matrix is not symmetric within tolerance")
    gap = float(np.linalg.norm(h_a - h_b, 2))
    eig_a = np.linalg.eigvalsh(0.5 * (h_a + h_a.T))
    eig_b = np.linalg.eigvalsh(0.5 * (h_b + h_b.T))
    return gap, np.abs(eig_a - eig_b)


def coupling_factor(model: SeparableModel, z: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Eigenvalue-gap amplification of the projection at the lifted point.

    Returns (exact, literal) variants: the exact one uses the computed norm
    of the inverse weight-block Hessian, the literal one divides by the
    dictionary's smallest singular value instead.
    """
    point = linear_solve(model, z, x)
    p = model.dims.n_nonlinear
    full = hessian(model, z, point.theta).full
    cross_norm = float(np.linalg.norm(full[:p, p:], 2))
    smin = float(np.linalg.svd(model.evaluate(point.x), compute_uv=False)[-1])
    k_exact = (1.0 + cross_norm / smin**2) ** 2
    k_paper = (1.0 + cross_norm / smin) ** 2
    return k_exact, k_paper


def rho_lift_bound(
    sigma: SpectralConstants,
    sigma_min_tilde: float,
    y_star: np.ndarray,
    noise_norm: float,
    dx_norm: float,
) -> float:
    """Unmixing distance the lifting map can induce from an x-perturbation."""
    if sigma_min_tilde <= 0:
        raise DomainError("sigma_min_tilde must be positive")
    y_norm = float(np.linalg.norm(y_star))
    c_vp = (sigma[2] + sigma[1] ** 2 / sigma_min_tilde) * y_norm + sigma[1]
    return c_vp * dx_norm + sigma[1] * (1.0 + 1.0 / sigma_min_tilde) * noise_norm


def radius_vp_noiseless(
    constants: BasinConstants, vp: VpConstants, lambda_min_vp: float
) -> float:
    """Noiseless projected convexity radius in the Euclidean x-metric."""
    if lambda_min_vp <= 0:
        return 0.0
    c1, c2 = constants.c1, constants.c2
    return 2.0 * lambda_min_vp / ((math.sqrt(c1 * c1 + 4.0 * c2 * lambda_min_vp) + c1) * vp.c_vp)


def radius_vp_noisy(constants: BasinConstants, vp: VpConstants) -> float:
    """First positive root of the noisy projected-basin polynomial (0 if consumed)."""
    lam = vp.lambda_offset
    if lam <= 0:
        return 0.0
    k = vp.K_paper
    a = k * vp.c2_vp
    b = k * vp.c1_vp
    disc = b * b + 4.0 * a * lam
    if disc < 0:
        raise InvariantViolation("discriminant cannot be negative for positive lambda")
    root = 2.0 * lam / (math.sqrt(disc) + b)
    check = lam - b * root - a * root * root
    if abs(check) > 1e-9 * max(lam, 1.0):
        raise InvariantViolation(f"root certification failed: q(root)={check}")
    return root


def radii_comparison(
    r_ls: float, vp: VpConstants, constants: BasinConstants
) -> tuple[float, float, bool]:
    """Bracket for the projected radius implied by the joint radius.

    The joint radius pins lambda_min through its defining quadratic; the
    projected radius then must land between sqrt(k_vp) and k_vp times the
    joint radius rescaled by the lift constant.
    """
    lam = constants.c1 * r_ls + constants.c2 * r_ls * r_ls
    eps_vp = radius_vp_noiseless(constants, vp, vp.k_vp * lam)
    lower = math.sqrt(vp.k_vp) * r_ls / vp.c_vp
    upper = vp.k_vp * r_ls / vp.c_vp
    tol = 1e-9 * max(upper, 1e-300)
    holds = (lower - tol) <= eps_vp <= (upper + tol)
    return lower, upper, holds


def stability_bound_ls(
    sigma: SpectralConstants,
    y_star: np.ndarray,
    j_star: np.ndarray,
    w: np.ndarray,
    alpha: float,
) -> float:
    """Recovery-error bound for the joint estimator in the unmixing metric."""
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    y_norm = float(np.linalg.norm(y_star))
    return (sigma[2] * y_norm + sigma[1]) * float(np.linalg.norm(j_star.T @ w)) / alpha


def stability_bound_vp(
    sigma: SpectralConstants,
    sigma_min_tilde: float,
    y_star: np.ndarray,
    j_vp_star: np.ndarray,
    w: np.ndarray,
    alpha_vp: float,
) -> float:
    """Recovery-error bound for the projected estimator in the unmixing metric."""
    if alpha_vp <= 0:
        raise DomainError("alpha_vp must be positive")
    y_norm = float(np.linalg.norm(y_star))
    gw = float(np.linalg.norm(j_vp_star.T @ w))
    wn = float(np.linalg.norm(w))
    return (
        (sigma[2] * y_norm + sigma[1]) * gw / alpha_vp
        + sigma[1] / sigma_min_tilde * wn
        + sigma[1] ** 2 / sigma_min_tilde * (gw / alpha_vp) * y_norm
    )


def vp_constants(
    model: SeparableModel,
    z: np.ndarray,
    theta_star: Theta,
    sigma: SpectralConstants,
    constants: BasinConstants,
    sigma_min_tilde_val: float,
) -> VpConstants:
    """Assemble the projected-problem constants at the ground truth."""
    lam_min = float(np.linalg.eigvalsh(hessian(model, z, theta_star).full).min())
    lam_vp = float(np.linalg.eigvalsh(projected_hessian(model, z, theta_star.x)).min())
    # Eigenvalue interlacing with the Schur complement needs a positive
    # semidefinite full Hessian at the lifted point; heavy noise can make it
    # indefinite, where only the inertia (not the magnitudes) is preserved.
    lam_lifted = float(
        np.linalg.eigvalsh(hessian(model, z, linear_solve(model, z, theta_star.x).theta).full).min()
    )
    if lam_lifted > 0 and lam_vp < lam_lifted * (1.0 - 1e-9):
        raise InvariantViolation(
            f"interlacing violated: lambda_vp={lam_vp} below lifted lambda_min={lam_lifted}"
        )
    # the ratio form of the interlacing constant only makes sense when the
    # full Hessian is positive definite at the ground truth
    k_vp = max(lam_vp / lam_min, 1.0) if lam_min > 0 and lam_vp > 0 else math.inf
    k_exact, k_paper = coupling_factor(model, z, theta_star.x)
    y_norm = float(np.linalg.norm(theta_star.y))
    w_norm = constants.noise_norm
    inv = 1.0 / sigma_min_tilde_val
    c_vp = (sigma[2] + sigma[1] ** 2 * inv) * y_norm + sigma[1]
    c1_vp = c_vp * (constants.c1 + 2.0 * constants.c2) * (1.0 + inv) * w_norm
    c2_vp = constants.c2 * c_vp**2
    lambda_offset = lam_vp - constants.c1 * (1.0 + inv) * w_norm - (1.0 + inv) ** 2 * w_norm**2
    return VpConstants(
        c_vp=c_vp,
        K_exact=k_exact,
        K_paper=k_paper,
        k_vp=k_vp,
        sigma_min_tilde=sigma_min_tilde_val,
        c1_vp=c1_vp,
        c2_vp=c2_vp,
        lambda_offset=lambda_offset,
    )


def _trial_rng(seed: int, radius_idx: int, trial_idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, radius_idx, trial_idx]))


def _unit_sphere(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    n = np.linalg.norm(v)
    while n == 0.0:
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
    return v / n


def _sample_rho_sphere(
    rng: np.random.Generator,
    theta_star: Theta,
    radius: float,
    sigma: SpectralConstants,
    box,
) -> tuple[Theta, float] | None:
    """One joint perturbation at exact unmixing distance, or None if rejected."""
    y_norm = float(np.linalg.norm(theta_star.y))
    cx = sigma[2] * y_norm + sigma[1]
    cy = sigma[1]
    for _ in range(MAX_REJECTION_TRIES):
        frac = rng.uniform()
        dx_norm = frac * radius / cx if cx > 0 else 0.0
        dy_norm = (1.0 - frac) * radius / cy if cy > 0 else 0.0
        x = theta_star.x + dx_norm * _unit_sphere(rng, theta_star.p)
        y = theta_star.y + dy_norm * _unit_sphere(rng, theta_star.d)
        if box.contains(x):
            return Theta(x, y), frac
    return None


def _sample_x_sphere(
    rng: np.random.Generator, x_star: np.ndarray, radius: float, box
) -> np.ndarray | None:
    for _ in range(MAX_REJECTION_TRIES):
        x = x_star + radius * _unit_sphere(rng, x_star.size)
        if box.contains(x):
            return x
    return None


def monte_carlo_basin(
    model: SeparableModel,
    z: np.ndarray,
    theta_star: Theta,
    radii,
    samples_per_radius: int,
    metric: RadiusMetric,
    rng_seed: int,
    sigma: SpectralConstants,
    constants: BasinConstants,
    vp: VpConstants | None = None,
    alpha: float = 0.0,
) -> BasinReport:
    """Probe minimum Hessian eigenvalues on spheres of growing radius.

    Joint probes perturb (x, y) at exact unmixing distance, splitting the
    budget between the two parts by a uniform random fraction; projected
    probes perturb x alone at exact Euclidean distance and evaluate the
    projected Hessian at lifted points.  Proposals leaving the feasible box
    are rejected and redrawn, preserving the exact-radius property.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise InvariantViolation("radii ladder must be strictly increasing")
    if metric is RadiusMetric.EUCLIDEAN_X and vp is None:
        raise DomainError("projected probes need the projected-problem constants")

    if metric is RadiusMetric.UNMIXING_RHO:
        h_star = hessian(model, z, theta_star).full
        lam_star = float(np.linalg.eigvalsh(h_star).min())
        analytical_radius = radius_alpha_ls(constants, lam_star, alpha)
    else:
        h_star = hessian(model, z, linear_solve(model, z, theta_star.x).theta).full
        hvp_star = projected_hessian(model, z, theta_star.x)
        lam_star = float(np.linalg.eigvalsh(hvp_star).min())
        if constants.noise_norm == 0:
            analytical_radius = radius_vp_noiseless(constants, vp, vp.lambda_offset)
        else:
            analytical_radius = radius_vp_noisy(constants, vp)

    samples = []
    mc_min_eigs = []
    for r_idx, radius in enumerate(radii):
        eigs = []
        accepted = 0
        for t_idx in range(samples_per_radius):
            rng = _trial_rng(rng_seed, r_idx, t_idx)
            row = {"radius": float(radius), "trial": t_idx}
            if metric is RadiusMetric.UNMIXING_RHO:
                if radius == 0.0:
                    theta, frac = theta_star, 0.0
                else:
                    drawn = _sample_rho_sphere(rng, theta_star, radius, sigma, model.feasible)
                    if drawn is None:
                        continue
                    theta, frac = drawn
                h = hessian(model, z, theta).full
                lam = float(np.linalg.eigvalsh(h).min())
                gap = float(np.linalg.norm(h - h_star, 2))
                row.update(
                    split_fraction=frac,
                    lambda_min=lam,
                    envelope=lam_star - gap,
                    analytical=lam_star - hessian_perturbation_bound(constants, radius),
                )
            else:
                if radius == 0.0:
                    x = theta_star.x
                else:
                    x = _sample_x_sphere(rng, theta_star.x, radius, model.feasible)
                    if x is None:
                        continue
                point = linear_solve(model, z, x)
                h_full = hessian(model, z, point.theta).full
                hvp = projected_hessian(model, z, x)
                lam = float(np.linalg.eigvalsh(hvp).min())
                gap_vp = float(np.linalg.norm(hvp - hvp_star, 2))
                gap_full = float(np.linalg.norm(h_full - h_star, 2))
                rho_bar = rho_lift_bound(
                    sigma, vp.sigma_min_tilde, theta_star.y, constants.noise_norm, radius
                )
                row.update(
                    split_fraction=1.0,
                    lambda_min=lam,
                    envelope=lam_star - gap_vp,
                    restricted_envelope=lam_star - vp.K_paper * gap_full,
                    analytical=lam_star - vp.K_paper * hessian_perturbation_bound(constants, rho_bar),
                )
            samples.append(row)
            eigs.append(row["lambda_min"])
            accepted += 1
        if accepted == 0:
            raise CoverageError(f"every proposal at radius {radius} left the feasible box")
        mc_min_eigs.append(np.asarray(eigs))

    empirical = 0.0
    for radius, eigs in zip(radii, mc_min_eigs):
        if np.all(eigs > 0):
            empirical = float(radius)
    return BasinReport(
        analytical_radius=float(analytical_radius),
        alpha=alpha,
        radius_metric=metric,
        mc_radii=radii,
        mc_min_eigs=mc_min_eigs,
        empirical_radius=empirical,
        seed=rng_seed,
        lambda_min_star=lam_star,
        samples=samples,
    )


@dataclass
class ConvergenceScan:
    """Success-rate table of solver runs started at increasing distances."""

    radii: np.ndarray
    success_rates: np.ndarray
    success_std: np.ndarray
    rows: list

    @property
    def radius(self) -> float:
        ok = self.success_rates >= 1.0
        return float(self.radii[ok].max()) if np.any(ok) else 0.0


def convergence_scan(
    model: SeparableModel,
    z: np.ndarray,
    theta_star: Theta,
    solver_opts,
    radii,
    trials: int,
    success_tolerance: float,
    rng_seed: int,
    sigma: SpectralConstants,
) -> ConvergenceScan:
    """Run the projected solver from x-sphere initializations at each radius."""
    from .solvers import recovery_success, solve, varpro_objective

    radii = np.asarray(radii, dtype=float)
    objective = varpro_objective(model, z)
    rows = []
    rates, stds = [], []
    for r_idx, radius in enumerate(radii):
        outcomes = []
        for t_idx in range(trials):
            rng = _trial_rng(rng_seed, r_idx, t_idx)
            if radius == 0.0:
                x0 = theta_star.x.copy()
            else:
                x0 = _sample_x_sphere(rng, theta_star.x, radius, model.feasible)
                if x0 is None:
                    continue
            try:
                x_final, _, _ = solve(objective, x0, solver_opts)
                theta_hat = linear_solve(model, z, x_final).theta
                ok = recovery_success(theta_hat, theta_star, sigma, success_tolerance)
                rho_err = unmixing_metric(sigma, theta_star.y, theta_hat, theta_star)
            except FloatingPointError:
                ok, rho_err = False, math.inf
            outcomes.append(1.0 if ok else 0.0)
            rows.append(
                {
                    "radius": float(radius),
                    "trial": t_idx,
                    "success": int(ok),
                    "rho_error": rho_err,
                }
            )
        if not outcomes:
            raise CoverageError(f"every initialization at radius {radius} left the feasible box")
        rates.append(float(np.mean(outcomes)))
        stds.append(float(np.std(outcomes)))
    return ConvergenceScan(
        radii=radii,
        success_rates=np.asarray(rates),
        success_std=np.asarray(stds),
        rows=rows,
    )


def empirical_convergence_radius(
    model: SeparableModel,
    z: np.ndarray,
    theta_star: Theta,
    solver_opts,
    radii,
    trials: int,
    success_tolerance: float,
    rng_seed: int,
    sigma: SpectralConstants,
) -> float:
    """Largest probe distance from which every solver run still recovers."""
    scan = convergence_scan(
        model, z, theta_star, solver_opts, radii, trials, success_tolerance, rng_seed, sigma
    )
    return scan.radius
