"""Parametric PSF kernel families and the unit-speed reparametrization.

Kernels are functions g(x, t) of a scalar shape parameter x and a lag t,
smooth in x to order three.  The unit-speed wrapper rescales the shape
parameter by inverse arc length so that unit parameter motion induces unit
L2 motion of the kernel over the sampling window.
"""

from __future__ import annotations

import abc
import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate

from .errors import DomainError, InvariantViolation

_GL_NODES = 256  # per half-window nodes for fixed L2 quadrature in t


class Kernel(abc.ABC):
    """Shape-parameterized kernel with x-derivatives to order three."""

    shape_domain: tuple[float, float]

    @abc.abstractmethod
    def value(self, x: float, t: np.ndarray) -> np.ndarray:
        """g(x, t), vectorized over t."""

    @abc.abstractmethod
    def dx(self, x: float, t: np.ndarray, k: int) -> np.ndarray:
        """k-th partial derivative of g in x, k in {1, 2, 3}, vectorized over t."""


class ULaplaceKernel(Kernel):
    """g(x, t) = exp(-|t|^u / x^u) with tail exponent u > 0.

    For u <= 1 the map t -> g(x, t) is not smooth at t = 0, but all
    x-derivatives carry the factor |t|^u and vanish identically there; the
    t = 0 samples are set explicitly to avoid relying on 0 * inf semantics.
    """

    def __init__(self, shape_domain: tuple[float, float], u: float):
        if u <= 0:
            raise InvariantViolation("tail exponent u must be positive")
        lo, hi = float(shape_domain[0]), float(shape_domain[1])
        if not 0 < lo < hi:
            raise InvariantViolation("shape domain must satisfy 0 < x_min < x_max")
        self.shape_domain = (lo, hi)
        self.u = float(u)

    def _exponent_chain(self, x: float, t: np.ndarray):
        """(e, e1, e2, e3): the exponent -|t|^u x^-u and its x-derivatives."""
        u = self.u
        tu = np.abs(t) ** u
        e = -tu * x ** (-u)
        e1 = u * tu * x ** (-u - 1.0)
        e2 = -u * (u + 1.0) * tu * x ** (-u - 2.0)
        e3 = u * (u + 1.0) * (u + 2.0) * tu * x ** (-u - 3.0)
        return e, e1, e2, e3

    def value(self, x: float, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.exp(-(np.abs(t) ** self.u) * x ** (-self.u))
        return np.where(t == 0.0, 1.0, out)

    def dx(self, x: float, t: np.ndarray, k: int) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        e, e1, e2, e3 = self._exponent_chain(x, t)
        g = np.exp(e)
        if k == 1:
            out = e1 * g
        elif k == 2:
            out = (e2 + e1**2) * g
        elif k == 3:
            out = (e3 + 3.0 * e1 * e2 + e1**3) * g
        else:
            raise ValueError(f"derivative order {k} not supported")
        return np.where(t == 0.0, 0.0, out)


class GaussianKernel(ULaplaceKernel):
    """g(x, t) = exp(-t^2 / x^2); the u = 2 member of the u-Laplace family."""

    def __init__(self, shape_domain: tuple[float, float]):
        super().__init__(shape_domain, u=2.0)


@functools.lru_cache(maxsize=64)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _gl_nodes(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = _leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (nodes + 1.0), half * weights


@functools.lru_cache(maxsize=256)
def _window_nodes(window: float, n_half: int = _GL_NODES):
    """Gauss-Legendre nodes over [-T/2, T/2], split at 0 where kernels may kink."""
    tn, twn = _gl_nodes(0.0, window / 2.0, n_half)
    tp, twp = _gl_nodes(-window / 2.0, 0.0, n_half)
    nodes = np.concatenate([tp, tn])
    weights = np.concatenate([twp, twn])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def kernel_l2_norm(kernel: Kernel, x: float, window: float, k: int = 1) -> float:
    """L2(window) norm of the k-th x-derivative of the kernel (k = 0: the kernel)."""
    t, wts = _window_nodes(window)
    v = kernel.value(x, t) if k == 0 else kernel.dx(x, t, k)
    return float(np.sqrt(np.sum(wts * v * v)))


def _l2_weight_many(kernel: Kernel, xs: np.ndarray, window: float) -> np.ndarray:
    """Vectorized ||d/dx g(x, .)||_L2(window) over an array of x values."""
    t, wts = _window_nodes(window)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    vals = np.empty(xs.size)
    for i, x in enumerate(xs):
        v = kernel.dx(float(x), t, 1)
        vals[i] = np.sqrt(np.sum(wts * v * v))
    return vals


def arc_length(kernel: Kernel, x: float, window: float) -> float:
    """Arc length s(x) of the kernel curve from x_min, in L2(window) speed."""
    lo, hi = kernel.shape_domain
    if not lo <= x <= hi:
        raise DomainError(f"x={x} outside the shape domain [{lo}, {hi}]")
    if x == lo:
        return 0.0
    val, _ = integrate.quad(
        lambda nu: kernel_l2_norm(kernel, nu, window), lo, x, epsabs=1e-8, epsrel=1e-8, limit=200
    )
    return float(val)


def inverse_arc_length(kernel: Kernel, s: float, window: float) -> float:
    """Shape parameter x with arc_length(kernel, x) = s, by monotone bisection."""
    lo, hi = kernel.shape_domain
    total = arc_length(kernel, hi, window)
    if not 0.0 <= s <= total * (1.0 + 1e-12):
        raise DomainError(f"s={s} outside [0, {total}]")
    a, b = lo, hi
    while b - a > 1e-10:
        mid = 0.5 * (a + b)
        if arc_length(kernel, mid, window) < s:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


class _ArcMap:
    """Tabulated, refinable arc-length map s(x) and its inverse for one kernel."""

    def __init__(self, kernel: Kernel, window: float, table_points: int = 513):
        lo, hi = kernel.shape_domain
        self.kernel = kernel
        self.window = window
        self.x_nodes = np.linspace(lo, hi, table_points)
        # Per-panel 16-point Gauss-Legendre, all panels evaluated in one batch.
        gl_nodes, gl_weights = np.polynomial.legendre.leggauss(16)
        a = self.x_nodes[:-1]
        h = np.diff(self.x_nodes)
        pts = a[:, None] + 0.5 * h[:, None] * (gl_nodes[None, :] + 1.0)
        wts = 0.5 * h[:, None] * gl_weights[None, :]
        speeds = _l2_weight_many(kernel, pts.ravel(), window).reshape(pts.shape)
        panel = np.sum(wts * speeds, axis=1)
        self.s_nodes = np.concatenate([[0.0], np.cumsum(panel)])
        if not np.all(np.diff(self.s_nodes) > 0):
            raise InvariantViolation("arc length table is not strictly increasing")
        self.total = float(self.s_nodes[-1])
        self._gl16 = (gl_nodes, gl_weights)
        self._inverse_guess = interpolate.PchipInterpolator(self.s_nodes, self.x_nodes)

    def s_of_x(self, x: float) -> float:
        x = min(max(x, self.x_nodes[0]), self.x_nodes[-1])
        j = int(np.searchsorted(self.x_nodes, x, side="right") - 1)
        j = min(j, self.x_nodes.size - 2)
        a = self.x_nodes[j]
        if x == a:
            return float(self.s_nodes[j])
        nodes, weights = self._gl16
        pts = a + 0.5 * (x - a) * (nodes + 1.0)
        speeds = _l2_weight_many(self.kernel, pts, self.window)
        return float(self.s_nodes[j] + 0.5 * (x - a) * np.sum(weights * speeds))

    def x_of_s(self, s: float) -> float:
        s = min(max(s, 0.0), self.total)
        x = float(self._inverse_guess(s))
        lo, hi = self.x_nodes[0], self.x_nodes[-1]
        for _ in range(4):
            resid = self.s_of_x(x) - s
            speed = _l2_weight_many(self.kernel, np.array([x]), self.window)[0]
            x = min(max(x - resid / speed, lo), hi)
        return x


@dataclass
class UnitSpeedKernel(Kernel):
    """Kernel reparametrized by arc length so unit x-motion is unit L2 motion.

    The shape domain becomes [0, s(x_max)].  Derivatives to order three come
    from chaining the base-kernel derivatives with the inverse-map derivatives,
    which in turn follow from the L2 speed and its first two x-derivatives
    (all computed by fixed-node quadrature over the window).
    """

    base: Kernel
    window: float
    arc_table: _ArcMap = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.arc_table = _ArcMap(self.base, self.window)
        self.shape_domain = (0.0, self.arc_table.total)
        self._chain_cache: dict[float, tuple[float, float, float, float]] = {}

    def _speed_chain(self, x: float) -> tuple[float, float, float]:
        """(w, w', w'') of w(x) = ||d/dx g(x, .)||_L2(window)."""
        t, wts = _window_nodes(self.window)
        g1 = self.base.dx(x, t, 1)
        g2 = self.base.dx(x, t, 2)
        g3 = self.base.dx(x, t, 3)
        big_w = float(np.sum(wts * g1 * g1))
        big_wp = 2.0 * float(np.sum(wts * g1 * g2))
        big_wpp = 2.0 * float(np.sum(wts * (g2 * g2 + g1 * g3)))
        w = np.sqrt(big_w)
        wp = big_wp / (2.0 * w)
        wpp = big_wpp / (2.0 * w) - big_wp**2 / (4.0 * big_w**1.5)
        return w, wp, wpp

    def _chain(self, s: float) -> tuple[float, float, float, float]:
        """(x, x', x'', x''') of the inverse map x(s), cached per s."""
        hit = self._chain_cache.get(s)
        if hit is not None:
            return hit
        x = self.arc_table.x_of_s(s)
        w, wp, wpp = self._speed_chain(x)
        x1 = 1.0 / w
        x2 = -wp / w**3
        x3 = -wpp / w**4 + 3.0 * wp**2 / w**5
        out = (x, x1, x2, x3)
        if len(self._chain_cache) < 65536:
            self._chain_cache[s] = out
        return out

    def value(self, x: float, t: np.ndarray) -> np.ndarray:
        base_x, _, _, _ = self._chain(float(x))
        return self.base.value(base_x, t)

    def dx(self, x: float, t: np.ndarray, k: int) -> np.ndarray:
        base_x, x1, x2, x3 = self._chain(float(x))
        g1 = self.base.dx(base_x, t, 1)
        if k == 1:
            return g1 * x1
        g2 = self.base.dx(base_x, t, 2)
        if k == 2:
            return g2 * x1**2 + g1 * x2
        g3 = self.base.dx(base_x, t, 3)
        if k == 3:
            return g3 * x1**3 + 3.0 * g2 * x1 * x2 + g1 * x3
        raise ValueError(f"derivative order {k} not supported")


def unit_speed_wrap(kernel: Kernel, window: float) -> UnitSpeedKernel:
    """Reparametrize a kernel to unit L2(window) speed in its shape parameter."""
    return UnitSpeedKernel(base=kernel, window=window)
