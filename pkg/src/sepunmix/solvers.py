"""Box-constrained residual solvers: gradient descent, Gauss-Newton, LM.

All three minimize half the squared residual norm of a generic residual
objective.  Steps are clipped componentwise into the box before evaluation,
accepted steps never increase the loss, and every run yields a full trace.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InvariantViolation
from .model import SeparableModel, Theta, jacobian as model_jacobian, residual as model_residual
from .varpro import linear_solve, projected_jacobian


class ResidualObjective:
    """Residual-and-Jacobian contract consumed by the solvers."""

    dimension: int
    lower: np.ndarray  # -inf where unconstrained
    upper: np.ndarray

    def residual_at(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian_at(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def clip(self, v: np.ndarray) -> np.ndarray:
        return np.clip(v, self.lower, self.upper)


class SolverKind(enum.Enum):
    GRADIENT_DESCENT = "gradient_descent"
    GAUSS_NEWTON = "gauss_newton"
    LEVENBERG_MARQUARDT = "levenberg_marquardt"


class SolveStatus(enum.Enum):
    GRAD_TOLERANCE_MET = "grad_tolerance_met"
    MAX_ITERS = "max_iters"
    STALLED = "stalled"


@dataclass(frozen=True)
class SolverOptions:
    kind: SolverKind = SolverKind.LEVENBERG_MARQUARDT
    max_iters: int = 10_000
    grad_tol: float | None = None  # None: 1e-10 * initial gradient norm
    grad_tol_rel: float = 1e-10
    lm_lambda0: float | None = None  # None: 1e-3 * mean diagonal of J^T J
    lm_up: float = 10.0
    lm_down: float = 0.5
    gd_armijo: float = 1e-4
    gd_shrink: float = 0.5
    record_trace: bool = True

    def __post_init__(self):
        if self.max_iters < 1 or (self.grad_tol is not None and self.grad_tol <= 0):
            raise InvariantViolation("tolerances and iteration caps must be positive")
        if not (self.lm_up > 1.0 > self.lm_down > 0.0):
            raise InvariantViolation("need lm_up > 1 > lm_down > 0")


@dataclass
class Trace:
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    iterates: list = field(default_factory=list)

    def record(self, loss, grad_norm, step_norm, damping, iterate=None):
        self.loss.append(float(loss))
        self.grad_norm.append(float(grad_norm))
        self.step_norm.append(float(step_norm))
        self.damping.append(float(damping))
        if iterate is not None:
            self.iterates.append(np.array(iterate))

    def iterations_to(self, tol: float) -> int:
        """First iteration index with gradient norm <= tol (len if never)."""
        for i, g in enumerate(self.grad_norm):
            if g <= tol:
                return i
        return len(self.grad_norm)


def _projected_grad_norm(v, grad, lower, upper) -> float:
    """Gradient norm with components pointing out of an active face zeroed."""
    g = grad.copy()
    at_lower = v <= lower + 1e-14
    at_upper = v >= upper - 1e-14
    g[at_lower & (g > 0)] = 0.0
    g[at_upper & (g < 0)] = 0.0
    return float(np.linalg.norm(g))


def _lm_step(jac: np.ndarray, res: np.ndarray, damping: float) -> np.ndarray:
    """Damped least-squares step via the stacked orthogonal factorization."""
    n = jac.shape[1]
    aug = np.vstack([jac, np.sqrt(damping) * np.eye(n)])
    rhs = np.concatenate([-res, np.zeros(n)])
    step, *_ = linalg.lstsq(aug, rhs, lapack_driver="gelsd")
    return step


def solve(objective: ResidualObjective, v0: np.ndarray, opts: SolverOptions):
    """Minimize half the squared residual norm from v0; returns (v, trace, status)."""
    v = objective.clip(np.asarray(v0, dtype=float).copy())
    res = objective.residual_at(v)
    if not np.all(np.isfinite(res)):
        raise ValueError("residual is not finite at the initial point")
    trace = Trace()
    f = 0.5 * float(res @ res)

    jac = objective.jacobian_at(v)
    grad = jac.T @ res
    if opts.grad_tol is not None:
        tol = opts.grad_tol
    else:
        g0 = float(np.linalg.norm(grad))
        tol = opts.grad_tol_rel * g0 + 1e-12 * (1.0 + g0)

    damping = opts.lm_lambda0
    if damping is None:
        diag = np.einsum("ij,ij->j", jac, jac)
        damping = 1e-3 * float(np.mean(diag)) if np.mean(diag) > 0 else 1e-3

    status = SolveStatus.MAX_ITERS
    gd_step = 1.0 / max(1.0, float(np.linalg.norm(grad)))
    for _ in range(opts.max_iters):
        gnorm = _projected_grad_norm(v, grad, objective.lower, objective.upper)
        if opts.record_trace:
            trace.record(f, gnorm, 0.0, damping)
        if gnorm <= tol:
            status = SolveStatus.GRAD_TOLERANCE_MET
            break

        accepted = False
        if opts.kind is SolverKind.GRADIENT_DESCENT:
            t = 2.0 * gd_step  # warm start from the last accepted step size
            for _ in range(80):
                cand = objective.clip(v - t * grad)
                res_c = objective.residual_at(cand)
                f_c = 0.5 * float(res_c @ res_c)
                decrease = opts.gd_armijo * float(grad @ (v - cand))
                if np.isfinite(f_c) and f_c <= f - decrease and f_c <= f:
                    accepted = True
                    gd_step = t
                    break
                t *= opts.gd_shrink
        else:
            if opts.kind is SolverKind.GAUSS_NEWTON:
                step, *_ = linalg.lstsq(jac, -res, lapack_driver="gelsd")
                if not np.all(np.isfinite(step)):
                    step = _lm_step(jac, res, damping)  # singular fallback
                t = 1.0
                for _ in range(60):
                    cand = objective.clip(v + t * step)
                    res_c = objective.residual_at(cand)
                    f_c = 0.5 * float(res_c @ res_c)
                    if np.isfinite(f_c) and f_c < f:
                        accepted = True
                        break
                    t *= 0.5
            else:  # Levenberg-Marquardt
                step = _lm_step(jac, res, damping)
                cand = objective.clip(v + step)
                res_c = objective.residual_at(cand)
                f_c = 0.5 * float(res_c @ res_c)
                if np.isfinite(f_c) and f_c < f:
                    accepted = True
                    damping *= opts.lm_down
                else:
                    damping *= opts.lm_up
                    if damping > 1e16:
                        status = SolveStatus.STALLED
                        break
                    continue  # rejected trial counts as an iteration

        if not accepted:
            status = SolveStatus.STALLED
            break
        if opts.record_trace and trace.step_norm:
            trace.step_norm[-1] = float(np.linalg.norm(cand - v))
        v, res, f = cand, res_c, f_c
        jac = objective.jacobian_at(v)
        grad = jac.T @ res
        if not np.all(np.isfinite(grad)):
            status = SolveStatus.STALLED
            break
    else:
        status = SolveStatus.MAX_ITERS

    return v, trace, status


class _JointObjective(ResidualObjective):
    def __init__(self, model: SeparableModel, z: np.ndarray):
        p, d = model.dims.n_nonlinear, model.dims.n_linear
        self.model = model
        self.z = np.asarray(z, dtype=float)
        self.dimension = p + d
        self.lower = np.concatenate([model.feasible.lower, np.full(d, -np.inf)])
        self.upper = np.concatenate([model.feasible.upper, np.full(d, np.inf)])
        self._p = p

    def residual_at(self, v: np.ndarray) -> np.ndarray:
        return model_residual(self.model, self.z, Theta.split(v, self._p))

    def jacobian_at(self, v: np.ndarray) -> np.ndarray:
        return -model_jacobian(self.model, Theta.split(v, self._p))


class _VarproObjective(ResidualObjective):
    def __init__(self, model: SeparableModel, z: np.ndarray):
        self.model = model
        self.z = np.asarray(z, dtype=float)
        self.dimension = model.dims.n_nonlinear
        self.lower = model.feasible.lower
        self.upper = model.feasible.upper

    def residual_at(self, v: np.ndarray) -> np.ndarray:
        point = linear_solve(self.model, self.z, v)
        return model_residual(self.model, self.z, point.theta)

    def jacobian_at(self, v: np.ndarray) -> np.ndarray:
        return -projected_jacobian(self.model, self.z, v)


def joint_objective(model: SeparableModel, z: np.ndarray) -> ResidualObjective:
    """Residual objective over the concatenated (x, y) parameter."""
    return _JointObjective(model, z)


def varpro_objective(model: SeparableModel, z: np.ndarray) -> ResidualObjective:
    """Residual objective over x alone, with weights eliminated optimally."""
    return _VarproObjective(model, z)


def recovery_success(theta_hat: Theta, theta_star: Theta, sigma, tolerance: float) -> bool:
    """Whether the recovered parameter sits within unmixing distance `tolerance`."""
    from .model import unmixing_metric

    return unmixing_metric(sigma, theta_star.y, theta_hat, theta_star) <= tolerance
