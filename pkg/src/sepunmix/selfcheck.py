"""Registered invariant suite behind the self-check experiment.

Each invariant is a named callable returning (passed, checked_count, detail).
They run at deliberately small scale so a fresh checkout can gate itself in
seconds; failures are report content, not exceptions.
"""

from __future__ import annotations

import numpy as np

from . import geometry
from .coherence import build_coherence_profile, coherence_sigma_bound
from .kernels import GaussianKernel, ULaplaceKernel
from .model import Theta, auxiliary_metrics, hessian, loss, unmixing_metric
from .psf import SamplingGrid, build_psf_model, sample_support, spectral_constants_psf
from .solvers import SolverKind, SolverOptions, solve, varpro_objective
from .varpro import projected_hessian, projected_loss


def _small_problem(config, seed_tag=0):
    kernel = GaussianKernel((config.x_min, config.x_max))
    grid = SamplingGrid.uniform(min(config.n_samples, 512), config.window)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 100 + seed_tag]))
    support = sample_support(2, 1, config.delta, config.window, rng)
    model = build_psf_model(kernel, support, grid)
    lo, hi = kernel.shape_domain
    theta_star = Theta(np.full(2, 0.5 * (lo + hi)), np.ones(2))
    signal = model.evaluate(theta_star.x) @ theta_star.y
    return kernel, grid, model, theta_star, signal, rng


def check_kernel_derivatives(config):
    kernel = GaussianKernel((config.x_min, config.x_max))
    heavy = ULaplaceKernel((config.x_min, config.x_max), u=0.5)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 101]))
    steps = {1: 1e-6, 2: 1e-6, 3: 1e-6}
    tols = {1: 1e-5, 2: 1e-5, 3: 1e-4}
    checked, worst = 0, 0.0
    for k in (1, 2, 3):
        h = steps[k]
        for ker in (kernel, heavy):
            for _ in range(30):
                x = rng.uniform(config.x_min + 2 * h, config.x_max - 2 * h)
                t = rng.uniform(-config.window / 2, config.window / 2, size=8)
                if k == 1:
                    fd = (ker.value(x + h, t) - ker.value(x - h, t)) / (2 * h)
                else:
                    fd = (ker.dx(x + h, t, k - 1) - ker.dx(x - h, t, k - 1)) / (2 * h)
                an = ker.dx(x, t, k)
                scale = max(np.max(np.abs(an)), 1e-8)
                worst = max(worst, float(np.max(np.abs(fd - an)) / scale))
                checked += 1
        if worst > tols[k]:
            return False, checked, f"order {k} rel err {worst:.2e}"
    return True, checked, f"worst rel err {worst:.2e}"


def check_model_derivatives(config):
    _, _, model, theta_star, _, rng = _small_problem(config, 1)
    h = 1e-6
    checked, worst = 0, 0.0
    for _ in range(20):
        x = rng.uniform(model.feasible.lower + 2 * h, model.feasible.upper - 2 * h)
        for i in range(model.dims.n_nonlinear):
            e = np.zeros_like(x)
            e[i] = h
            fd = (model.evaluate(x + e) - model.evaluate(x - e)) / (2 * h)
            an = model.partial(x, 1, i)
            scale = max(float(np.max(np.abs(an))), 1e-8)
            worst = max(worst, float(np.max(np.abs(fd - an)) / scale))
            checked += 1
    return worst < 1e-4, checked, f"worst rel err {worst:.2e}"


def check_loss_hessian_fd(config):
    _, _, model, theta_star, signal, rng = _small_problem(config, 2)
    w = rng.standard_normal(signal.size)
    z = signal + 0.1 * w * np.linalg.norm(signal) / np.linalg.norm(w)
    h = 1e-5
    split = hessian(model, z, theta_star)
    dim = theta_star.p + theta_star.d
    v0 = theta_star.concat()
    fd = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(dim):
            vpp, vpm, vmp, vmm = (v0.copy() for _ in range(4))
            vpp[i] += h; vpp[j] += h
            vpm[i] += h; vpm[j] -= h
            vmp[i] -= h; vmp[j] += h
            vmm[i] -= h; vmm[j] -= h
            fd[i, j] = (
                loss(model, z, Theta.split(vpp, theta_star.p))
                - loss(model, z, Theta.split(vpm, theta_star.p))
                - loss(model, z, Theta.split(vmp, theta_star.p))
                + loss(model, z, Theta.split(vmm, theta_star.p))
            ) / (4 * h * h)
    scale = np.linalg.norm(split.full, 2)
    err = np.linalg.norm(fd - split.full, 2) / scale
    sym = np.max(np.abs(split.full - split.full.T))
    add = np.max(np.abs(split.full - split.curvature - split.residual_part))
    ok = err < 1e-4 and sym <= 1e-12 * scale and add <= 1e-12 * scale
    return ok, dim * dim, f"fd rel err {err:.2e}"


def check_projected_hessian_fd(config):
    _, _, model, theta_star, signal, rng = _small_problem(config, 3)
    w = rng.standard_normal(signal.size)
    z = signal + 0.2 * w * np.linalg.norm(signal) / np.linalg.norm(w)
    h = 1e-5
    x0 = theta_star.x
    hvp = projected_hessian(model, z, x0)
    p = x0.size
    fd = np.zeros((p, p))
    for i in range(p):
        for j in range(p):
            xpp, xpm, xmp, xmm = (x0.copy() for _ in range(4))
            xpp[i] += h; xpp[j] += h
            xpm[i] += h; xpm[j] -= h
            xmp[i] -= h; xmp[j] += h
            xmm[i] -= h; xmm[j] -= h
            fd[i, j] = (
                projected_loss(model, z, xpp)
                - projected_loss(model, z, xpm)
                - projected_loss(model, z, xmp)
                + projected_loss(model, z, xmm)
            ) / (4 * h * h)
    err = np.linalg.norm(fd - hvp, 2) / np.linalg.norm(hvp, 2)
    return err < 1e-4, p * p, f"fd rel err {err:.2e}"


def check_metric_axioms(config):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 104]))
    from .model import Provenance, SpectralConstants

    sigma = SpectralConstants(tuple(rng.uniform(0.1, 2.0, size=4)), Provenance.GRID_ESTIMATE)
    y_star = rng.standard_normal(3)
    checked = 0
    for _ in range(200):
        pts = [Theta(rng.standard_normal(2), rng.standard_normal(3)) for _ in range(3)]
        a, b, c = pts
        for metric in (
            lambda s, t: unmixing_metric(sigma, y_star, s, t),
            lambda s, t: auxiliary_metrics(sigma, y_star, s, t)[0],
            lambda s, t: auxiliary_metrics(sigma, y_star, s, t)[1],
        ):
            if metric(a, a) > 1e-12:
                return False, checked, "identity failed"
            if abs(metric(a, b) - metric(b, a)) > 1e-12:
                return False, checked, "symmetry failed"
            if metric(a, b) > metric(a, c) + metric(c, b) + 1e-9:
                return False, checked, "triangle inequality failed"
            checked += 1
    return True, checked, "identity/symmetry/triangle hold"


def check_weyl(config):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 105]))
    checked = 0
    for _ in range(200):
        n = rng.integers(2, 8)
        m = rng.standard_normal((n, n))
        a = 0.5 * (m + m.T)
        d = rng.standard_normal((n, n))
        b = a + 0.5 * (d + d.T)
        gap, per_eig = geometry.weyl_probe(a, b)
        if np.any(per_eig > gap * (1 + 1e-10) + 1e-12):
            return False, checked, "per-eigenvalue gap exceeded operator gap"
        checked += 1
    return True, checked, "per-eigenvalue gaps within operator gap"


def check_envelope_domination(config):
    kernel, grid, model, theta_star, signal, rng = _small_problem(config, 6)
    profile = build_coherence_profile(kernel, [config.delta], 8, grid)
    sigma = coherence_sigma_bound(profile, 2, config.delta)
    constants = geometry.basin_constants(sigma, theta_star.y, 0.0)
    h_star = hessian(model, signal, theta_star).full
    checked = 0
    for _ in range(100):
        dx = rng.standard_normal(2)
        dx *= rng.uniform(0, 0.2) * (config.x_max - config.x_min) / np.linalg.norm(dx)
        x = np.clip(theta_star.x + dx, model.feasible.lower, model.feasible.upper)
        dy = rng.standard_normal(2) * rng.uniform(0, 0.5)
        theta = Theta(x, theta_star.y + dy)
        rho = unmixing_metric(sigma, theta_star.y, theta, theta_star)
        gap = np.linalg.norm(hessian(model, signal, theta).full - h_star, 2)
        if gap > geometry.hessian_perturbation_bound(constants, rho) * (1 + 1e-9):
            return False, checked, f"drift {gap:.3e} beat envelope at rho={rho:.3e}"
        checked += 1
    return True, checked, "quadratic envelope dominates Hessian drift"


def check_coherence_envelope(config):
    kernel = GaussianKernel((config.x_min, config.x_max))
    grid = SamplingGrid.uniform(min(config.n_samples, 512), config.window)
    profile = build_coherence_profile(kernel, [config.delta], 8, grid)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 107]))
    checked = 0
    for _ in range(10):
        support = sample_support(2, 2, config.delta, config.window, rng)
        model = build_psf_model(kernel, support, grid)
        emp = spectral_constants_psf(model, 16)
        bound = coherence_sigma_bound(profile, 2, config.delta)
        for k in range(4):
            if emp.sigma[k] > bound.sigma[k] * (1 + 1e-9):
                return False, checked, f"order {k} block norm beat the coherence bound"
            checked += 1
    return True, checked, "coherence bounds dominate sampled dictionaries"


def check_root_identities(config):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 108]))
    checked = 0
    for _ in range(500):
        c1, c2, lam = rng.uniform(0.01, 10.0, size=3)
        c2 += 1.0
        from .geometry import BasinConstants

        constants = BasinConstants(c_r0=0.0, c_r1=0.0, c_r2=0.0, c1=c1, c2=c2, noise_norm=0.0)
        r = geometry.radius_alpha_ls(constants, lam, 0.0)
        if abs(c1 * r + c2 * r * r - lam) > 1e-9 * max(lam, 1.0):
            return False, checked, "quadratic root identity failed"
        checked += 1
    return True, checked, "root identities certified"


def check_ratio_chain(config):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 109]))
    checked = 0
    for _ in range(1000):
        c1, c2, lam = rng.uniform(0.01, 10.0, size=3)
        k = 1.0 + rng.uniform(0.0, 9.0)
        num = np.sqrt(c1 * c1 + 4 * c2 * k * lam) - c1
        den = np.sqrt(c1 * c1 + 4 * c2 * lam) - c1
        ratio = num / den
        if not (np.sqrt(k) - 1e-9 <= ratio <= k + 1e-9):
            return False, checked, f"ratio {ratio} escaped [sqrt(k), k]"
        checked += 1
    return True, checked, "radius ratio chain in [sqrt(k), k]"


def check_solver_monotonicity(config):
    _, _, model, theta_star, signal, rng = _small_problem(config, 10)
    w = rng.standard_normal(signal.size)
    z = signal + 0.3 * w * np.linalg.norm(signal) / np.linalg.norm(w)
    x0 = theta_star.x + 0.02 * rng.standard_normal(2)
    x0 = np.clip(x0, model.feasible.lower, model.feasible.upper)
    checked = 0
    for kind in SolverKind:
        opts = SolverOptions(kind=kind, max_iters=300, grad_tol_rel=1e-8)
        _, trace, _ = solve(varpro_objective(model, z), x0, opts)
        diffs = np.diff(np.asarray(trace.loss))
        if np.any(diffs > 1e-12):
            return False, checked, f"{kind.value} increased the loss"
        checked += len(trace.loss)
    return True, checked, "accepted steps are loss-monotone"


def check_interlacing(config):
    _, _, model, theta_star, signal, _ = _small_problem(config, 11)
    lam = float(np.linalg.eigvalsh(hessian(model, signal, theta_star).full).min())
    lam_vp = float(np.linalg.eigvalsh(projected_hessian(model, signal, theta_star.x)).min())
    ok = lam_vp >= lam * (1 - 1e-9) and lam_vp / lam >= 1 - 1e-9
    return ok, 1, f"k_vp = {lam_vp / lam:.3f}"


INVARIANTS = [
    ("kernel_derivative_consistency", check_kernel_derivatives),
    ("model_derivative_consistency", check_model_derivatives),
    ("loss_hessian_consistency", check_loss_hessian_fd),
    ("projected_hessian_consistency", check_projected_hessian_fd),
    ("metric_axioms", check_metric_axioms),
    ("weyl_certification", check_weyl),
    ("envelope_domination", check_envelope_domination),
    ("coherence_envelope", check_coherence_envelope),
    ("quadratic_root_identities", check_root_identities),
    ("radius_ratio_chain", check_ratio_chain),
    ("solver_monotonicity", check_solver_monotonicity),
    ("projected_interlacing", check_interlacing),
]


def run_all(config):
    """Run every registered invariant; returns (name, passed, count, detail) rows."""
    report = []
    for name, fn in INVARIANTS:
        try:
            passed, count, detail = fn(config)
        except Exception as exc:  # a crashed invariant is a failed invariant
            passed, count, detail = False, 0, f"raised {type(exc).__name__}: {exc}"
        report.append((name, bool(passed), int(count), str(detail)))
    return report
