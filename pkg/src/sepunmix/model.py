"""Separable forward models and the geometry-aware metrics built on them.

A separable model maps nonlinear parameters ``x`` to a dictionary matrix
``A(x)``; observations are ``z = A(x) y + w`` with linear weights ``y``.
This module holds the model contract, residual/loss/Jacobian/Hessian
evaluation with the curvature/residual split, the unmixing metric, and a
generic grid-plus-sampling estimator for the spectral constants of the
dictionary map and its derivatives.
"""

from __future__ import annotations

import abc
import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, DegeneracyError, InvariantViolation, ShapeError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class ModelDims:
    """Problem sizes: samples N, nonlinear parameters p, linear weights d."""

    n_samples: int
    n_nonlinear: int
    n_linear: int

    def __post_init__(self):
        if min(self.n_samples, self.n_nonlinear, self.n_linear) < 1:
            raise InvariantViolation("all dimensions must be >= 1")
        if self.n_samples < self.n_linear:
            raise InvariantViolation(
                f"need n_samples >= n_linear for full column rank, "
                f"got N={self.n_samples} < d={self.n_linear}"
            )


@dataclass(frozen=True)
class Theta:
    """Concatenated parameter (x, y): nonlinear shape part and linear weights."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))

    @property
    def p(self) -> int:
        return self.x.size

    @property
    def d(self) -> int:
        return self.y.size

    def concat(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @staticmethod
    def split(v: np.ndarray, p: int) -> "Theta":
        v = np.asarray(v, dtype=float)
        return Theta(v[:p], v[p:])


@dataclass(frozen=True)
class FeasibleBox:
    """Axis-aligned box for the nonlinear parameters."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, dtype=float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, dtype=float)))
        if self.lower.shape != self.upper.shape:
            raise ShapeError("box bounds must have equal length")
        if not np.all(self.lower < self.upper):
            raise InvariantViolation("box must have nonempty interior (lower < upper)")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def axis_grid(self, points_per_axis: int) -> np.ndarray:
        """All combinations of a uniform per-axis grid, shape (n_points, p)."""
        axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


class Provenance(enum.Enum):
    """How a set of spectral constants was obtained."""

    GRID_ESTIMATE = "grid_estimate"
    COHERENCE_BOUND = "coherence_bound"


@dataclass(frozen=True)
class SpectralConstants:
    """Operator-norm constants (sigma_0..sigma_3) of the dictionary map.

    ``sigma[k]`` bounds (or estimates, depending on provenance) the largest
    operator norm of the k-th derivative of x -> A(x) over the feasible box.
    Grid estimates are certified lower estimates used as plug-ins for the
    true suprema; coherence bounds are true upper bounds.
    """

    sigma: tuple[float, float, float, float]
    provenance: Provenance

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigma)
        if len(sig) != 4:
            raise ShapeError("expected exactly four spectral constants")
        if not all(np.isfinite(s) and s >= 0 for s in sig):
            raise InvariantViolation(f"spectral constants must be finite and >= 0, got {sig}")
        object.__setattr__(self, "sigma", sig)

    def __getitem__(self, k: int) -> float:
        return self.sigma[k]


@dataclass(frozen=True)
class HessianSplit:
    """Loss Hessian decomposed into Gauss-Newton curvature and residual parts."""

    full: np.ndarray
    curvature: np.ndarray
    residual_part: np.ndarray


class SeparableModel(abc.ABC):
    """Contract for a dictionary map x -> A(x) with derivatives to order 3.

    Implementations must be immutable after construction; all methods are
    pure functions of their arguments and safe to call concurrently.
    """

    dims: ModelDims
    feasible: FeasibleBox

    #: set True when all second-order cross partials of A vanish, which lets
    #: Hessian assembly skip the off-diagonal x-blocks of the residual term.
    diagonal_second_derivatives: bool = False

    @abc.abstractmethod
    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Dictionary A(x), shape (N, d)."""

    @abc.abstractmethod
    def partial(self, x: np.ndarray, k: int, i: int) -> np.ndarray:
        """k-th partial derivative of A with respect to x_i, shape (N, d)."""

    @abc.abstractmethod
    def mixed_partial(self, x: np.ndarray, i: int, j: int) -> np.ndarray:
        """Second partial of A in (x_i, x_j); equals partial(x, 2, i) when i == j."""

    def check_in_box(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size != self.dims.n_nonlinear:
            raise ShapeError(f"expected x of length {self.dims.n_nonlinear}, got {x.size}")
        if not self.feasible.contains(x):
            raise DomainError(f"x={x!r} outside the feasible box")
        return x


def assemble_dictionary(model: SeparableModel, x: np.ndarray) -> np.ndarray:
    """Evaluate A(x), raising if x is infeasible or A loses column rank."""
    x = model.check_in_box(x)
    a = model.evaluate(x)
    svals = np.linalg.svd(a, compute_uv=False)
    if svals[-1] < RANK_TOL * svals[0]:
        raise DegeneracyError(f"dictionary is rank deficient at x={x!r}")
    return a


def residual(model: SeparableModel, z: np.ndarray, theta: Theta) -> np.ndarray:
    """r(theta) = z - A(x) y.  Equals the noise vector at the ground truth."""
    z = np.asarray(z, dtype=float)
    if z.size != model.dims.n_samples:
        raise ShapeError(f"expected z of length {model.dims.n_samples}, got {z.size}")
    if theta.p != model.dims.n_nonlinear or theta.d != model.dims.n_linear:
        raise ShapeError("theta dimensions do not match the model")
    return z - model.evaluate(theta.x) @ theta.y


def loss(model: SeparableModel, z: np.ndarray, theta: Theta) -> float:
    """Half squared residual norm."""
    r = residual(model, z, theta)
    return 0.5 * float(r @ r)


def jacobian(model: SeparableModel, theta: Theta) -> np.ndarray:
    """Jacobian of theta -> A(x) y, shape (N, p + d).

    Columns 0..p-1 hold (dA/dx_i) y, the trailing d columns hold A(x).  The
    residual Jacobian is the negation; norms and Gram products coincide.
    """
    x = model.check_in_box(theta.x)
    n, p, d = model.dims.n_samples, model.dims.n_nonlinear, model.dims.n_linear
    jac = np.empty((n, p + d))
    for i in range(p):
        jac[:, i] = model.partial(x, 1, i) @ theta.y
    jac[:, p:] = model.evaluate(x)
    return jac


def hessian(model: SeparableModel, z: np.ndarray, theta: Theta) -> HessianSplit:
    """Loss Hessian split into J^T J and the residual-weighted second-order term."""
    x = model.check_in_box(theta.x)
    p, d = model.dims.n_nonlinear, model.dims.n_linear
    r = residual(model, z, theta)
    jac = jacobian(model, theta)
    curvature = jac.T @ jac

    res_part = np.zeros((p + d, p + d))
    firsts = [model.partial(x, 1, i) for i in range(p)]
    for i in range(p):
        res_part[i, i] = -float(r @ (model.mixed_partial(x, i, i) @ theta.y))
        if not model.diagonal_second_derivatives:
            for j in range(i + 1, p):
                v = -float(r @ (model.mixed_partial(x, i, j) @ theta.y))
                res_part[i, j] = v
                res_part[j, i] = v
        cross = -(firsts[i].T @ r)
        res_part[i, p:] = cross
        res_part[p:, i] = cross
    full = curvature + res_part
    return HessianSplit(full=full, curvature=curvature, residual_part=res_part)


def _delta_norms(a: Theta, b: Theta) -> tuple[float, float]:
    dx = float(np.linalg.norm(a.x - b.x))
    dy = float(np.linalg.norm(a.y - b.y))
    return dx, dy


def unmixing_metric(sigma: SpectralConstants, y_star: np.ndarray, a: Theta, b: Theta) -> float:
    """Distance calibrated so that parameter motion bounds Jacobian motion.

    rho(a, b) = (sigma_2 ||y*|| + sigma_1) ||x_a - x_b|| + sigma_1 ||y_a - y_b||.
    """
    dx, dy = _delta_norms(a, b)
    y_norm = float(np.linalg.norm(y_star))
    return (sigma[2] * y_norm + sigma[1]) * dx + sigma[1] * dy


def auxiliary_metrics(
    sigma: SpectralConstants, y_star: np.ndarray, a: Theta, b: Theta
) -> tuple[float, float]:
    """The two companion distances entering the residual-Hessian bound."""
    dx, dy = _delta_norms(a, b)
    y_norm = float(np.linalg.norm(y_star))
    rho1 = sigma[1] * y_norm * dx + sigma[0] * dy
    rho2 = (sigma[3] * y_norm + sigma[2]) * dx + 2.0 * sigma[2] * dy
    return rho1, rho2


def _spectral_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _directional_derivative(model: SeparableModel, x: np.ndarray, u: np.ndarray, k: int) -> np.ndarray:
    """k-th derivative of A along direction u (same direction in every slot)."""
    p = model.dims.n_nonlinear
    if k == 1:
        out = u[0] * model.partial(x, 1, 0)
        for i in range(1, p):
            out += u[i] * model.partial(x, 1, i)
        return out
    if k == 2:
        out = np.zeros((model.dims.n_samples, model.dims.n_linear))
        for i in range(p):
            for j in range(p):
                if model.diagonal_second_derivatives and i != j:
                    continue
                out += u[i] * u[j] * model.mixed_partial(x, i, j)
        return out
    if k == 3:
        # Third directional derivative via a centered difference of the second.
        # The base point is nudged inward so both stencil points stay in the box.
        h = 1e-3
        lo, hi = model.feasible.lower, model.feasible.upper
        x = np.clip(x, lo + h * np.abs(u), hi - h * np.abs(u))
        plus = _directional_derivative(model, x + h * u, u, 2)
        minus = _directional_derivative(model, x - h * u, u, 2)
        return (plus - minus) / (2.0 * h)
    raise ValueError(f"derivative order {k} not supported")


def estimate_spectral_constants(
    model: SeparableModel,
    grid_per_axis: int,
    directions_per_point: int,
    rng_seed: int,
) -> SpectralConstants:
    """Grid-and-sampling lower estimate of the spectral constants.

    sigma_0 maximizes the dictionary's largest singular value over an
    axis-uniform grid; sigma_1..sigma_3 lower-bound the multilinear operator
    norms by probing random unit directions (plus the coordinate axes) at
    every grid point and refining the best direction by random local ascent.
    The result is a certified lower estimate used as a plug-in for the true
    supremum; guarantees that need upper bounds must use coherence-based
    constants instead.
    """
    if grid_per_axis < 2:
        raise InvariantViolation("grid_per_axis must be >= 2")
    rng = np.random.default_rng(rng_seed)
    p = model.dims.n_nonlinear
    grid = model.feasible.axis_grid(grid_per_axis)

    sigma0 = max(_spectral_norm(model.evaluate(x)) for x in grid)

    sigmas = [sigma0]
    axes = np.eye(p)
    for k in (1, 2, 3):
        best = 0.0
        for x in grid:
            dirs = [axes[i] for i in range(p)]
            dirs += [_unit(rng.standard_normal(p)) for _ in range(directions_per_point)]
            local_best, local_dir = 0.0, dirs[0]
            for u in dirs:
                val = _spectral_norm(_directional_derivative(model, x, u, k))
                if val > local_best:
                    local_best, local_dir = val, u
            # local ascent: accept random perturbations of the best direction
            step = 0.3
            for _ in range(12):
                cand = _unit(local_dir + step * rng.standard_normal(p))
                val = _spectral_norm(_directional_derivative(model, x, cand, k))
                if val > local_best:
                    local_best, local_dir = val, cand
                else:
                    step *= 0.7
            best = max(best, local_best)
        sigmas.append(best)

    return SpectralConstants(tuple(sigmas), Provenance.GRID_ESTIMATE)
