"""Variable projection: closed-form weight solve and the projected calculus.

Eliminating the linear weights through the pseudo-inverse restricts the
problem to the nonlinear parameters.  The lifting map x -> (x, y_hat(x))
embeds the reduced problem back into the full space; the projected loss,
gradient, Jacobian, and Hessian all arise by composing the full-problem
calculus with the lifting derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DegeneracyError
from .model import RANK_TOL, SeparableModel, Theta, hessian, jacobian, residual


@dataclass(frozen=True)
class LiftedPoint:
    """Nonlinear parameters with their optimal linear weights attached."""

    x: np.ndarray
    y_hat: np.ndarray

    @property
    def theta(self) -> Theta:
        return Theta(self.x, self.y_hat)


@dataclass(frozen=True)
class LiftingDerivative:
    """(p + d) x p derivative of the lifting map; the top block is I_p."""

    matrix: np.ndarray


def linear_solve(model: SeparableModel, z: np.ndarray, x: np.ndarray) -> LiftedPoint:
    """Optimal weights y_hat(x) by pivoted QR; raises on rank deficiency."""
    x = model.check_in_box(x)
    a = model.evaluate(x)
    q, r, perm = linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[-1] < RANK_TOL * diag[0]:
        raise DegeneracyError(f"dictionary is rank deficient at x={x!r}")
    y_perm = linalg.solve_triangular(r, q.T @ np.asarray(z, dtype=float))
    y = np.empty_like(y_perm)
    y[perm] = y_perm
    return LiftedPoint(x=x, y_hat=y)


def projected_loss(model: SeparableModel, z: np.ndarray, x: np.ndarray) -> float:
    """Loss after optimal elimination of the weights: half the squared misfit."""
    point = linear_solve(model, z, x)
    r = residual(model, z, point.theta)
    return 0.5 * float(r @ r)


def lifting_derivative(model: SeparableModel, z: np.ndarray, x: np.ndarray) -> LiftingDerivative:
    """Derivative of x -> (x, y_hat(x)) via the weight-block normal equations."""
    point = linear_solve(model, z, x)
    p, d = model.dims.n_nonlinear, model.dims.n_linear
    a = model.evaluate(point.x)
    r = residual(model, z, point.theta)
    gram = a.T @ a
    cho = linalg.cho_factor(gram)
    rhs = np.empty((d, p))
    for i in range(p):
        da = model.partial(point.x, 1, i)
        rhs[:, i] = a.T @ (da @ point.y_hat) - da.T @ r
    bottom = -linalg.cho_solve(cho, rhs)
    return LiftingDerivative(matrix=np.vstack([np.eye(p), bottom]))


def projected_gradient(model: SeparableModel, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of the projected loss: the lifting pullback of the full gradient."""
    point = linear_solve(model, z, x)
    r = residual(model, z, point.theta)
    full_grad = -(jacobian(model, point.theta).T @ r)
    lift = lifting_derivative(model, z, x)
    return lift.matrix.T @ full_grad


def projected_jacobian(model: SeparableModel, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(N, p) Jacobian of x -> A(x) y_hat(x): the full Jacobian composed with the lift."""
    point = linear_solve(model, z, x)
    lift = lifting_derivative(model, z, x)
    return jacobian(model, point.theta) @ lift.matrix


def projected_hessian(model: SeparableModel, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Hessian of the projected loss: the full Hessian restricted to the lift."""
    point = linear_solve(model, z, x)
    lift = lifting_derivative(model, z, x)
    full = hessian(model, z, point.theta).full
    out = lift.matrix.T @ full @ lift.matrix
    return 0.5 * (out + out.T)


def sigma_min_tilde(model: SeparableModel, grid_resolution: int) -> float:
    """Minimum over a feasible-box grid of the dictionary's smallest singular value."""
    best = np.inf
    for x in model.feasible.axis_grid(grid_resolution):
        svals = np.linalg.svd(model.evaluate(x), compute_uv=False)
        best = min(best, float(svals[-1]))
    if best <= 0:
        raise DegeneracyError("dictionary loses rank somewhere on the grid")
    return best
