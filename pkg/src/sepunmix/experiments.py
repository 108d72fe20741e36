"""Experiment drivers: seeded, CSV-emitting reproductions of the study protocols.

Each runner builds a seeded problem instance, sweeps its ladder (separation,
radius, or SNR), and writes one long-format ``data.csv`` plus a JSON manifest
holding the configuration, seed, and derived constants.  Identical config and
seed always reproduce byte-identical outputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .coherence import build_coherence_profile, coherence_sigma_bound
from .errors import ConfigError, DomainError
from .kernels import GaussianKernel, Kernel, ULaplaceKernel, unit_speed_wrap
from .model import (
    SpectralConstants,
    Theta,
    hessian,
    jacobian,
    loss,
    unmixing_metric,
)
from .psf import PsfModel, SamplingGrid, build_psf_model, sample_support, spectral_constants_psf
from .solvers import (
    SolverKind,
    SolverOptions,
    joint_objective,
    solve,
    varpro_objective,
)
from .varpro import linear_solve, projected_jacobian, sigma_min_tilde

ARTIFACT_VERSION = "0.1.0"

EXPERIMENT_NAMES = (
    "coherence",
    "tail-decay",
    "basin-ls",
    "basin-vp",
    "stability",
    "convergence-region",
    "traces",
    "self-check",
)


@dataclass
class ExperimentConfig:
    """Knobs shared by all experiment drivers; JSON-serializable."""

    experiment: str = "self-check"
    p: int = 2
    q: int = 1
    n_samples: int = 2000
    window: float = 1.0
    delta: float = 5e-3
    x_min: float = 0.05
    x_max: float = 0.1
    kernel: str = "gaussian"  # "gaussian" or "ulaplace"
    u: float = 2.0
    unit_speed: bool = True
    u_list: tuple = (0.5, 5.0)
    snr_db: object = None  # scalar, list, or None for noiseless
    realizations: int = 20
    samples_per_radius: int = 100
    n_radii: int = 16
    n_deltas: int = 8
    trials: int = 30
    coherence_x_grid: int = 16
    sigma_grid_resolution: int = 8
    block_norm_grid: int = 32
    solver: str = "levenberg_marquardt"
    max_iters: int = 10_000
    grad_tol_rel: float = 1e-10
    seed: int = 0
    out_dir: str = "out"
    scale: str = "desk"

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_NAMES:
            raise ConfigError(f"unknown experiment {self.experiment!r}; pick one of {EXPERIMENT_NAMES}")
        if min(self.p, self.q, self.n_samples, self.realizations) < 1:
            raise ConfigError("counts must be positive")
        if not (0 < self.x_min < self.x_max):
            raise ConfigError("need 0 < x_min < x_max")
        if self.delta <= 0 or self.delta * self.p * self.q >= self.window:
            raise ConfigError("need delta > 0 and p*q*delta < window")
        if self.scale not in ("desk", "paper"):
            raise ConfigError("scale must be 'desk' or 'paper'")
        if self.kernel not in ("gaussian", "ulaplace"):
            raise ConfigError("kernel must be 'gaussian' or 'ulaplace'")

    @staticmethod
    def from_json(path) -> "ExperimentConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "u_list" in payload:
            payload["u_list"] = tuple(payload["u_list"])
        return ExperimentConfig(**payload)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["u_list"] = list(self.u_list)
        return out

    def at_scale(self) -> "ExperimentConfig":
        """Paper scale bumps the sample count and realization budget."""
        if self.scale != "paper":
            return self
        return dataclasses.replace(
            self, n_samples=10_000, realizations=100, samples_per_radius=100, trials=100
        )


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def _unit_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _spawn_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def generate_noise(signal: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-direction noise rescaled to hit the requested SNR exactly."""
    signal = np.asarray(signal, dtype=float)
    s_norm = float(np.linalg.norm(signal))
    if s_norm == 0:
        raise DomainError("signal must be nonzero to set an SNR")
    w = rng.standard_normal(signal.size)
    return w * (s_norm * 10.0 ** (-snr_db / 20.0) / float(np.linalg.norm(w)))


def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, fieldnames: list, rows: list) -> None:
    lines = [",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(name, "")) for name in fieldnames))
    path.write_text("\n".join(lines) + "\n")


def _config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path: Path, config: ExperimentConfig, constants: dict) -> None:
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "config": config.to_dict(),
        "config_hash": _config_hash(config),
        "constants": constants,
        "seed": config.seed,
    }
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


_KERNEL_CACHE: dict = {}
_PROFILE_CACHE: dict = {}


def make_kernel(config: ExperimentConfig, u: float | None = None) -> Kernel:
    domain = (config.x_min, config.x_max)
    tail = config.u if u is None else u
    key = (config.kernel, tail, domain, config.unit_speed, config.window)
    hit = _KERNEL_CACHE.get(key)
    if hit is not None:
        return hit
    if config.kernel == "gaussian" and (u is None or u == 2.0):
        base: Kernel = GaussianKernel(domain)
    else:
        base = ULaplaceKernel(domain, u=tail)
    kernel = unit_speed_wrap(base, config.window) if config.unit_speed else base
    _KERNEL_CACHE[key] = kernel
    return kernel


def _cached_profile(
    kernel: Kernel, deltas: tuple, x_grid: int, grid: SamplingGrid, orders: tuple = (0, 1, 2, 3)
):
    key = (id(kernel), deltas, x_grid, grid.n, float(grid.points[0]), float(grid.points[-1]), orders)
    hit = _PROFILE_CACHE.get(key)
    if hit is None:
        hit = build_coherence_profile(kernel, list(deltas), x_grid, grid, orders=orders)
        _PROFILE_CACHE[key] = hit
    return hit


@dataclass
class ProblemSetup:
    """One fully instantiated PSF problem with its derived constants."""

    config: ExperimentConfig
    kernel: Kernel
    model: PsfModel
    theta_star: Theta
    signal: np.ndarray
    sigma: SpectralConstants
    sigma_min: float

    @property
    def grid(self) -> SamplingGrid:
        return self.model.grid


def build_setup(config: ExperimentConfig, u: float | None = None, support=None) -> ProblemSetup:
    kernel = make_kernel(config, u)
    grid = SamplingGrid.uniform(config.n_samples, config.window)
    if support is None:
        support = sample_support(
            config.p, config.q, config.delta, config.window, _rng(config.seed, 0)
        )
    model = build_psf_model(kernel, support, grid)
    lo, hi = kernel.shape_domain
    x_star = np.full(config.p, 0.5 * (lo + hi))
    theta_star = Theta(x_star, np.ones(config.p * config.q))
    signal = model.evaluate(x_star) @ theta_star.y
    profile = _cached_profile(kernel, (config.delta,), config.coherence_x_grid, grid)
    sigma = coherence_sigma_bound(profile, config.p, config.delta)
    sigma_min = sigma_min_tilde(model, config.sigma_grid_resolution)
    return ProblemSetup(
        config=config,
        kernel=kernel,
        model=model,
        theta_star=theta_star,
        signal=signal,
        sigma=sigma,
        sigma_min=sigma_min,
    )


def _solver_options(config: ExperimentConfig, kind: SolverKind | None = None) -> SolverOptions:
    return SolverOptions(
        kind=kind or SolverKind(config.solver),
        max_iters=config.max_iters,
        grad_tol_rel=config.grad_tol_rel,
    )


def _sigma_constants_dict(setup: ProblemSetup, extra: dict | None = None) -> dict:
    out = {
        "sigma": list(setup.sigma.sigma),
        "sigma_provenance": setup.sigma.provenance.value,
        "sigma_min_tilde": setup.sigma_min,
    }
    if extra:
        out.update(extra)
    return out


def delta_ladder(config: ExperimentConfig) -> np.ndarray:
    """Geometric separation ladder spanning one decade around the configured delta."""
    lo = config.delta / math.sqrt(10.0)
    hi = config.delta * math.sqrt(10.0)
    return np.geomspace(lo, hi, config.n_deltas)


# ---------------------------------------------------------------------------
# Coherence experiments
# ---------------------------------------------------------------------------


def _coherence_rows(config, kernel, u_tag, orders, ladder, grid):
    # the sigma bound needs all four derivative orders even when only a
    # subset of rows is emitted
    profile = _cached_profile(
        kernel, tuple(float(d) for d in ladder), config.coherence_x_grid, grid
    )
    rows = []
    for j, delta in enumerate(ladder):
        bound = coherence_sigma_bound(profile, config.p, float(delta))
        per_k = {k: [] for k in orders}
        for trial in range(config.realizations):
            support = sample_support(
                config.p, config.q, float(delta), config.window, _rng(config.seed, 1, j, trial)
            )
            model = build_psf_model(kernel, support, grid)
            emp = spectral_constants_psf(model, config.block_norm_grid)
            for k in orders:
                per_k[k].append(emp.sigma[k])
        for k in orders:
            vals = np.asarray(per_k[k])
            mean, std = float(vals.mean()), float(vals.std())
            for trial, v in enumerate(vals):
                rows.append(
                    {
                        "u": u_tag,
                        "delta": float(delta),
                        "k": k,
                        "trial": trial,
                        "sigma_emp": float(v),
                        "sigma_mean": mean,
                        "sigma_std": std,
                        "sigma_lo": mean - std,
                        "sigma_hi": mean + std,
                        "envelope": bound.sigma[k],
                        "mu": float(profile.mu[k][j]),
                    }
                )
    return rows


def run_coherence(config: ExperimentConfig) -> dict:
    """Empirical spectral constants against their coherence envelope."""
    config = config.at_scale()
    grid = SamplingGrid.uniform(config.n_samples, config.window)
    kernel = make_kernel(config)
    ladder = delta_ladder(config)
    rows = _coherence_rows(config, kernel, config.u, (0, 1, 2, 3), ladder, grid)
    profile = _cached_profile(
        kernel, tuple(float(d) for d in ladder), config.coherence_x_grid, grid, (0, 1, 2, 3)
    )
    fields = [
        "u", "delta", "k", "trial", "sigma_emp", "sigma_mean", "sigma_std",
        "sigma_lo", "sigma_hi", "envelope", "mu",
    ]
    return {
        "rows": rows,
        "fields": fields,
        "constants": {
            "delta_ladder": [float(d) for d in ladder],
            "mu": {str(k): [float(v) for v in profile.mu[k]] for k in sorted(profile.mu)},
        },
    }


def run_tail_decay(config: ExperimentConfig) -> dict:
    """Coherence decay comparison across kernel tail exponents (orders 0 and 1)."""
    config = config.at_scale()
    grid = SamplingGrid.uniform(config.n_samples, config.window)
    ladder = delta_ladder(config)
    rows = []
    for u in (2.0, 5.0):
        kernel = make_kernel(dataclasses.replace(config, kernel="ulaplace"), u)
        rows.extend(_coherence_rows(config, kernel, u, (0, 1), ladder, grid))
    fields = [
        "u", "delta", "k", "trial", "sigma_emp", "sigma_mean", "sigma_std",
        "sigma_lo", "sigma_hi", "envelope", "mu",
    ]
    return {
        "rows": rows,
        "fields": fields,
        "constants": {"delta_ladder": [float(d) for d in ladder]},
    }


# ---------------------------------------------------------------------------
# Basin experiments
# ---------------------------------------------------------------------------


def _radius_ladder(anchor: float, n_points: int, low: float, high: float, cap: float | None):
    lo = anchor * low
    hi = anchor * high
    if cap is not None:
        hi = min(hi, cap)
        lo = min(lo, hi / 1e3)
    return np.geomspace(lo, hi, n_points)


def _box_radius_cap(setup: ProblemSetup) -> float:
    half = 0.5 * (setup.model.feasible.upper - setup.model.feasible.lower)
    return 0.9 * float(np.linalg.norm(half))


def _aggregate_basin_rows(samples, radii, realization):
    """Attach per-(realization, radius) curve values to each sample row."""
    by_radius = {}
    for row in samples:
        by_radius.setdefault(row["radius"], []).append(row)
    out = []
    for radius in radii:
        cell = by_radius.get(float(radius), [])
        if not cell:
            continue
        lam = min(r["lambda_min"] for r in cell)
        env = min(r["envelope"] for r in cell)
        restricted = (
            min(r["restricted_envelope"] for r in cell)
            if "restricted_envelope" in cell[0]
            else None
        )
        for r in cell:
            r = dict(r)
            r["realization"] = realization
            r["lambda_curve"] = lam
            r["envelope_curve"] = env
            if restricted is not None:
                r["restricted_curve"] = restricted
            out.append(r)
    return out


def run_basin(config: ExperimentConfig, projected: bool) -> dict:
    """Monte Carlo basin probes with envelope and analytical curves attached."""
    config = config.at_scale()
    setup = build_setup(config)
    model, theta_star, signal = setup.model, setup.theta_star, setup.signal
    metric = geometry.RadiusMetric.EUCLIDEAN_X if projected else geometry.RadiusMetric.UNMIXING_RHO

    constants0 = geometry.basin_constants(setup.sigma, theta_star.y, 0.0)
    vp0 = geometry.vp_constants(model, signal, theta_star, setup.sigma, constants0, setup.sigma_min)
    lam0 = float(np.linalg.eigvalsh(hessian(model, signal, theta_star).full).min())
    if projected:
        anchor = geometry.radius_vp_noiseless(constants0, vp0, vp0.lambda_offset)
        cap = _box_radius_cap(setup)
    else:
        anchor = geometry.radius_alpha_ls(constants0, lam0, 0.0)
        cap = None
    radii = _radius_ladder(anchor, config.n_radii, 0.2, 50.0, cap)

    def one_run(z, constants, vp, seed):
        return geometry.monte_carlo_basin(
            model,
            z,
            theta_star,
            radii,
            config.samples_per_radius,
            metric,
            seed,
            setup.sigma,
            constants,
            vp=vp,
        )

    baseline = one_run(signal, constants0, vp0, _spawn_seed(config.seed, 2, 0))
    baseline_rows = _aggregate_basin_rows(baseline.samples, radii, -1)
    baseline_curves = {
        row["radius"]: row for row in baseline_rows
    }

    all_rows = list(baseline_rows)
    reports = [baseline]
    snrs = config.snr_db
    if snrs is not None:
        snr = float(snrs if np.isscalar(snrs) else snrs[0])
        for real in range(config.realizations):
            w = generate_noise(signal, snr, _rng(config.seed, 3, real))
            z = signal + w
            constants = geometry.basin_constants(setup.sigma, theta_star.y, float(np.linalg.norm(w)))
            vp = geometry.vp_constants(model, z, theta_star, setup.sigma, constants, setup.sigma_min)
            report = one_run(z, constants, vp, _spawn_seed(config.seed, 2, real + 1))
            all_rows.extend(_aggregate_basin_rows(report.samples, radii, real))
            reports.append(report)

    # Cross-realization aggregates per radius (noisy runs only; zero spread otherwise).
    noisy_rows = [r for r in all_rows if r["realization"] >= 0]
    pool = noisy_rows if noisy_rows else all_rows
    per_radius = {}
    for row in pool:
        per_radius.setdefault(row["radius"], {}).setdefault(row["realization"], row)
    for row in all_rows:
        curves = per_radius.get(row["radius"], {})
        for key in ("lambda_curve", "envelope_curve", "restricted_curve"):
            if key not in row:
                continue
            vals = np.asarray([c[key] for c in curves.values()])
            stem = key.replace("_curve", "")
            row[f"{stem}_mean"] = float(vals.mean())
            row[f"{stem}_lo"] = float(vals.mean() - vals.std())
            row[f"{stem}_hi"] = float(vals.mean() + vals.std())
        base = baseline_curves[row["radius"]]
        row["baseline_lambda"] = base["lambda_curve"]
        row["baseline_envelope"] = base["envelope_curve"]
        if "restricted_curve" in base:
            row["baseline_restricted"] = base["restricted_curve"]

    fields = [
        "radius",
        "realization",
        "trial",
        "split_fraction",
        "lambda_min",
        "envelope",
        "analytical",
        "lambda_curve",
        "envelope_curve",
        "lambda_mean",
        "lambda_lo",
        "lambda_hi",
        "envelope_mean",
        "envelope_lo",
        "envelope_hi",
        "baseline_lambda",
        "baseline_envelope",
    ]
    if projected:
        fields[6:6] = ["restricted_envelope"]
        fields.extend(
            [
                "restricted_curve",
                "restricted_mean",
                "restricted_lo",
                "restricted_hi",
                "baseline_restricted",
            ]
        )
    constants_out = _sigma_constants_dict(
        setup,
        {
            "c1": constants0.c1,
            "c2": constants0.c2,
            "c_vp": vp0.c_vp,
            "K_exact": vp0.K_exact,
            "K_paper": vp0.K_paper,
            "k_vp": vp0.k_vp,
            "lambda_min_star": lam0,
            "analytical_radius": baseline.analytical_radius,
            "empirical_radius": baseline.empirical_radius,
            "radii": [float(r) for r in radii],
        },
    )
    return {"rows": all_rows, "fields": fields, "constants": constants_out}


def run_basin_ls(config: ExperimentConfig) -> dict:
    return run_basin(config, projected=False)


def run_basin_vp(config: ExperimentConfig) -> dict:
    return run_basin(config, projected=True)


# ---------------------------------------------------------------------------
# Stability sweep
# ---------------------------------------------------------------------------


def run_stability(config: ExperimentConfig) -> dict:
    """Recovery error of both estimators against their analytical bounds."""
    config = config.at_scale()
    setup = build_setup(config)
    model, theta_star, signal = setup.model, setup.theta_star, setup.signal
    sigma = setup.sigma
    snrs = config.snr_db
    if snrs is None:
        snrs = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]
    elif np.isscalar(snrs):
        snrs = [float(snrs)]

    j_star = jacobian(model, theta_star)
    j_vp_star = projected_jacobian(model, signal, theta_star.x)
    cond_j = float(np.linalg.cond(j_star))
    cond_jvp = float(np.linalg.cond(j_vp_star))
    alpha_ls = float(np.linalg.eigvalsh(j_star.T @ j_star).min())
    alpha_vp = float(np.linalg.eigvalsh(j_vp_star.T @ j_vp_star).min())
    opts = _solver_options(config, SolverKind.LEVENBERG_MARQUARDT)

    rows = []
    for s_idx, snr in enumerate(snrs):
        cell = []
        for real in range(config.realizations):
            w = generate_noise(signal, float(snr), _rng(config.seed, 4, s_idx, real))
            z = signal + w
            w_norm = float(np.linalg.norm(w))
            constants = geometry.basin_constants(sigma, theta_star.y, w_norm)
            lam = float(np.linalg.eigvalsh(hessian(model, z, theta_star).full).min())
            r_ls = geometry.radius_alpha_ls(constants, lam, 0.0)
            vp = geometry.vp_constants(model, z, theta_star, sigma, constants, setup.sigma_min)
            r_vp = geometry.radius_vp_noisy(constants, vp)

            init_rng = _rng(config.seed, 5, s_idx, real)
            drawn = geometry._sample_rho_sphere(
                init_rng, theta_star, 0.5 * r_ls, sigma, model.feasible
            )
            theta0 = drawn[0] if drawn is not None else theta_star
            x0 = geometry._sample_x_sphere(
                init_rng, theta_star.x, 0.5 * r_vp, model.feasible
            )
            if x0 is None:
                x0 = theta_star.x

            censored = 0
            try:
                v_joint, _, _ = solve(joint_objective(model, z), theta0.concat(), opts)
                x_vp, _, _ = solve(varpro_objective(model, z), x0, opts)
                theta_joint = Theta.split(v_joint, config.p)
                theta_vp = linear_solve(model, z, x_vp).theta
                err_joint = unmixing_metric(sigma, theta_star.y, theta_joint, theta_star)
                err_vp = unmixing_metric(sigma, theta_star.y, theta_vp, theta_star)
                if not (np.isfinite(err_joint) and np.isfinite(err_vp)):
                    censored = 1
            except FloatingPointError:
                censored, err_joint, err_vp = 1, math.nan, math.nan

            bound_ls = geometry.stability_bound_ls(sigma, theta_star.y, j_star, w, alpha_ls)
            bound_vp = geometry.stability_bound_vp(
                sigma, setup.sigma_min, theta_star.y, j_vp_star, w, alpha_vp
            )
            row = {
                "snr_db": float(snr),
                "realization": real,
                "censored": censored,
                "rho_error_joint": err_joint,
                "rho_error_vp": err_vp,
                "bound_ls": bound_ls,
                "bound_vp": bound_vp,
                "init_radius_ls": 0.5 * r_ls,
                "init_radius_vp": 0.5 * r_vp,
            }
            cell.append(row)
        ok = [r for r in cell if not r["censored"]]
        for r in cell:
            r["joint_mean"] = float(np.mean([c["rho_error_joint"] for c in ok]))
            r["vp_mean"] = float(np.mean([c["rho_error_vp"] for c in ok]))
            r["bound_ls_mean"] = float(np.mean([c["bound_ls"] for c in ok]))
            r["bound_vp_mean"] = float(np.mean([c["bound_vp"] for c in ok]))
            r["cond_j"] = cond_j
            r["cond_jvp"] = cond_jvp
        rows.extend(cell)

    fields = [
        "snr_db",
        "realization",
        "censored",
        "rho_error_joint",
        "rho_error_vp",
        "bound_ls",
        "bound_vp",
        "joint_mean",
        "vp_mean",
        "bound_ls_mean",
        "bound_vp_mean",
        "cond_j",
        "cond_jvp",
        "init_radius_ls",
        "init_radius_vp",
    ]
    constants_out = _sigma_constants_dict(
        setup,
        {
            "cond_j": cond_j,
            "cond_jvp": cond_jvp,
            "alpha_ls": alpha_ls,
            "alpha_vp": alpha_vp,
            "snr_ladder": [float(s) for s in snrs],
        },
    )
    return {"rows": rows, "fields": fields, "constants": constants_out}


# ---------------------------------------------------------------------------
# Convergence regions
# ---------------------------------------------------------------------------


def run_convergence_region(config: ExperimentConfig) -> dict:
    """Analytical radius bracket against empirical convexity/convergence radii."""
    config = config.at_scale()
    snr = float(config.snr_db) if config.snr_db is not None else 10.0
    rows = []
    per_u = {}
    for u_idx, u in enumerate(config.u_list):
        setup = build_setup(dataclasses.replace(config, kernel="ulaplace"), u)
        model, theta_star, signal = setup.model, setup.theta_star, setup.signal
        sigma = setup.sigma

        constants0 = geometry.basin_constants(sigma, theta_star.y, 0.0)
        vp0 = geometry.vp_constants(model, signal, theta_star, sigma, constants0, setup.sigma_min)
        lam0 = float(np.linalg.eigvalsh(hessian(model, signal, theta_star).full).min())
        r_ls0 = geometry.radius_alpha_ls(constants0, lam0, 0.0)
        lower, upper, _ = geometry.radii_comparison(r_ls0, vp0, constants0)

        w = generate_noise(signal, snr, _rng(config.seed, 6, u_idx))
        z = signal + w
        w_norm = float(np.linalg.norm(w))
        constants = geometry.basin_constants(sigma, theta_star.y, w_norm)
        vp = geometry.vp_constants(model, z, theta_star, sigma, constants, setup.sigma_min)

        j_vp_star = projected_jacobian(model, signal, theta_star.x)
        alpha_vp = float(np.linalg.eigvalsh(j_vp_star.T @ j_vp_star).min())
        tolerance = geometry.stability_bound_vp(
            sigma, setup.sigma_min, theta_star.y, j_vp_star, w, alpha_vp
        )

        cap = _box_radius_cap(setup)
        radii = np.geomspace(max(lower * 0.05, cap * 1e-4), cap, config.n_radii)
        basin = geometry.monte_carlo_basin(
            model,
            z,
            theta_star,
            radii,
            config.samples_per_radius,
            geometry.RadiusMetric.EUCLIDEAN_X,
            _spawn_seed(config.seed, 7, u_idx),
            sigma,
            constants,
            vp=vp,
        )
        scan = geometry.convergence_scan(
            model,
            z,
            theta_star,
            _solver_options(config, SolverKind.LEVENBERG_MARQUARDT),
            radii,
            config.trials,
            tolerance,
            _spawn_seed(config.seed, 8, u_idx),
            sigma,
        )
        per_u[u] = {
            "radius_convexity": basin.empirical_radius,
            "radius_convergence": scan.radius,
            "radius_lower": lower,
            "radius_upper": upper,
            "tolerance": tolerance,
            "sigma": list(sigma.sigma),
            "sigma_provenance": sigma.provenance.value,
            "sigma_min_tilde": setup.sigma_min,
            "c1": constants0.c1,
            "c2": constants0.c2,
            "c_vp": vp0.c_vp,
            "K_exact": vp0.K_exact,
            "K_paper": vp0.K_paper,
            "k_vp": vp0.k_vp,
        }
        rate_by_radius = dict(zip(scan.radii.tolist(), zip(scan.success_rates, scan.success_std)))
        for row in scan.rows:
            rate, std = rate_by_radius[row["radius"]]
            rows.append(
                {
                    "u": u,
                    **row,
                    "success_rate": float(rate),
                    "success_std": float(std),
                    "success_lo": float(max(rate - std, 0.0)),
                    "success_hi": float(min(rate + std, 1.0)),
                    "radius_convexity": basin.empirical_radius,
                    "radius_convergence": scan.radius,
                    "radius_lower": lower,
                    "radius_upper": upper,
                }
            )

    fields = [
        "u",
        "radius",
        "trial",
        "success",
        "rho_error",
        "success_rate",
        "success_std",
        "success_lo",
        "success_hi",
        "radius_convexity",
        "radius_convergence",
        "radius_lower",
        "radius_upper",
    ]
    constants_out = {"snr_db": snr, "per_u": {str(u): v for u, v in per_u.items()}}
    return {"rows": rows, "fields": fields, "constants": constants_out}


# ---------------------------------------------------------------------------
# Solver traces
# ---------------------------------------------------------------------------


def run_traces(config: ExperimentConfig) -> dict:
    """Per-iteration gradient norms for each solver on both formulations.

    Runs across tail exponents share the initialization offset (a fixed
    fraction of the shape interval along a seeded direction) and one absolute
    gradient tolerance per formulation, anchored at the first-listed exponent,
    so iteration counts are directly comparable.
    """
    config = config.at_scale()
    snr = float(config.snr_db) if config.snr_db is not None else 10.0
    rows = []
    summary = {}
    cases = {}
    for u_idx, u in enumerate(config.u_list):
        setup = build_setup(dataclasses.replace(config, kernel="ulaplace"), u)
        model, theta_star, signal = setup.model, setup.theta_star, setup.signal
        w = generate_noise(signal, snr, _rng(config.seed, 9, u_idx))
        z = signal + w
        lo, hi = model.feasible.lower, model.feasible.upper
        direction = _unit_direction(_rng(config.seed, 10), config.p)
        offset = 0.05 * float(np.min(hi - lo))
        x0 = np.clip(theta_star.x + offset * direction, lo, hi)
        theta0 = Theta(x0, theta_star.y)
        cases[u] = {
            "joint": (joint_objective(model, z), theta0.concat()),
            "vp": (varpro_objective(model, z), x0),
        }

    anchor_u = config.u_list[0]
    for formulation in ("joint", "vp"):
        objective0, v0 = cases[anchor_u][formulation]
        res0 = objective0.residual_at(np.asarray(v0, dtype=float))
        g0 = float(np.linalg.norm(objective0.jacobian_at(np.asarray(v0, dtype=float)).T @ res0))
        grad_tol = max(config.grad_tol_rel * g0, 1e-14)
        for u in config.u_list:
            objective, v_init = cases[u][formulation]
            for kind in SolverKind:
                opts = SolverOptions(
                    kind=kind, max_iters=config.max_iters, grad_tol=grad_tol
                )
                _, trace, status = solve(objective, v_init, opts)
                key = (u, formulation, kind.value)
                summary[key] = {
                    "iterations": trace.iterations_to(grad_tol),
                    "status": status.value,
                    "grad_tol": grad_tol,
                }
                for it, (lv, gv, sv, dv) in enumerate(
                    zip(trace.loss, trace.grad_norm, trace.step_norm, trace.damping)
                ):
                    rows.append(
                        {
                            "u": u,
                            "formulation": formulation,
                            "solver": kind.value,
                            "iteration": it,
                            "loss": lv,
                            "grad_norm": gv,
                            "step_norm": sv,
                            "damping": dv,
                            "status": status.value,
                        }
                    )

    fields = [
        "u",
        "formulation",
        "solver",
        "iteration",
        "loss",
        "grad_norm",
        "step_norm",
        "damping",
        "status",
    ]
    constants_out = {
        "snr_db": snr,
        "init_offset_fraction": 0.05,
        "runs": {f"{u}/{form}/{solver}": v for (u, form, solver), v in summary.items()},
    }
    return {"rows": rows, "fields": fields, "constants": constants_out}


# ---------------------------------------------------------------------------
# Self check
# ---------------------------------------------------------------------------


def self_check(config: ExperimentConfig) -> dict:
    """Run the registered invariant suite at small scale; failures are content."""
    from . import selfcheck

    report = selfcheck.run_all(config)
    rows = [
        {
            "invariant": name,
            "passed": int(passed),
            "checked": count,
            "detail": detail.replace(",", ";"),
        }
        for name, passed, count, detail in report
    ]
    fields = ["invariant", "passed", "checked", "detail"]
    return {
        "rows": rows,
        "fields": fields,
        "constants": {"n_invariants": len(rows)},
        "failed": [r["invariant"] for r in rows if not r["passed"]],
    }


RUNNERS = {
    "coherence": run_coherence,
    "tail-decay": run_tail_decay,
    "basin-ls": run_basin_ls,
    "basin-vp": run_basin_vp,
    "stability": run_stability,
    "convergence-region": run_convergence_region,
    "traces": run_traces,
    "self-check": self_check,
}


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> Path:
    """Run one experiment and write data.csv + manifest.json; returns the directory."""
    runner = RUNNERS[config.experiment]
    result = runner(config)
    base = Path(out_dir if out_dir is not None else config.out_dir)
    exp_dir = base / config.experiment
    exp_dir.mkdir(parents=True, exist_ok=True)
    write_csv(exp_dir / "data.csv", result["fields"], result["rows"])
    write_manifest(exp_dir / "manifest.json", config, result["constants"])
    if result.get("failed"):
        raise SelfCheckFailure(result["failed"])
    return exp_dir


class SelfCheckFailure(RuntimeError):
    def __init__(self, failed):
        super().__init__(f"invariants failed: {failed}")
        self.failed = failed
