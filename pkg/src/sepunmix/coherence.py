"""Parametric coherence: shift correlations of kernel derivatives.

The coherence of a kernel family at separation delta sums the worst-case
correlations between a kernel derivative and its shifts at all multiples of
delta.  It upper-bounds the spectral constants of any PSF dictionary whose
spikes keep that separation, uniformly over the dictionary realization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .kernels import Kernel
from .model import Provenance, SpectralConstants
from .psf import SamplingGrid


def _derivative_on(kernel: Kernel, x: float, t: np.ndarray, k: int) -> np.ndarray:
    return kernel.value(x, t) if k == 0 else kernel.dx(x, t, k)


def _shift_correlations(
    kernel: Kernel, x: float, k: int, shifts: np.ndarray, grid: SamplingGrid
) -> np.ndarray:
    """|<d_k g(x, t), d_k g(x, t - shift)>| over the grid, for each shift."""
    t = grid.points
    v0 = _derivative_on(kernel, x, t, k)
    shifted = _derivative_on(kernel, x, t[None, :] - shifts[:, None], k)
    return np.abs(shifted @ v0)


def delta_correlation(
    kernel: Kernel, x: float, k: int, delta: float, grid: SamplingGrid
) -> float:
    """Worst correlation of the k-th kernel derivative over shifts >= delta.

    Shifts run from delta to the window length at the grid spacing; the
    inner product is the plain dot product over the sampling grid.
    """
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    window = float(grid.points[-1] - grid.points[0])
    if delta > window:
        return 0.0
    count = int(np.floor((window - delta) / grid.spacing)) + 1
    shifts = delta + grid.spacing * np.arange(count)
    return float(np.max(_shift_correlations(kernel, x, k, shifts, grid)))


def _as_x_grid(kernel: Kernel, x_grid) -> np.ndarray:
    if np.isscalar(x_grid):
        lo, hi = kernel.shape_domain
        return np.linspace(lo, hi, int(x_grid))
    return np.asarray(x_grid, dtype=float)


def _suffix_max_scan(kernel: Kernel, x: float, k: int, grid: SamplingGrid):
    """Correlations on the full shift ladder plus their suffix maxima.

    suffix[j] equals the worst correlation over any shift >= j * spacing,
    so one scan per (x, k) serves every separation queried afterwards.
    """
    window = float(grid.points[-1] - grid.points[0])
    count = int(np.floor(window / grid.spacing)) + 1
    shifts = grid.spacing * np.arange(count)
    corr = _shift_correlations(kernel, x, k, shifts, grid)
    suffix = np.maximum.accumulate(corr[::-1])[::-1]
    return shifts, suffix


def _coherence_from_suffix(
    shifts: np.ndarray, suffix: np.ndarray, delta: float, window: float, truncation_tol: float
) -> float:
    """Sum suffix-max correlations over shift multiples 0, +-delta, +-2 delta, ..."""
    total = float(suffix[0])
    m = 1
    while m * delta <= window:
        idx = int(np.searchsorted(shifts, m * delta - 1e-15))
        if idx >= suffix.size:
            break
        term = float(suffix[idx])
        if term < truncation_tol:
            break
        total += 2.0 * term
        m += 1
    return total


def coherence(
    kernel: Kernel,
    k: int,
    delta: float,
    x_grid,
    grid: SamplingGrid,
    truncation_tol: float = 1e-12,
) -> float:
    """Summed worst-case shift correlations, maximized over the shape grid."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    window = float(grid.points[-1] - grid.points[0])
    xs = _as_x_grid(kernel, x_grid)
    best = 0.0
    for x in xs:
        shifts, suffix = _suffix_max_scan(kernel, float(x), k, grid)
        best = max(best, _coherence_from_suffix(shifts, suffix, delta, window, truncation_tol))
    return best


@dataclass(frozen=True)
class CoherenceProfile:
    """Coherence values of derivative orders 0..3 along a separation ladder."""

    deltas: np.ndarray
    mu: dict  # k -> array of coherence values aligned with deltas
    x_grid_resolution: int
    truncation_tol: float

    def __post_init__(self):
        object.__setattr__(self, "deltas", np.asarray(self.deltas, dtype=float))
        object.__setattr__(self, "mu", {int(k): np.asarray(v, dtype=float) for k, v in self.mu.items()})

    def value(self, k: int, delta: float) -> float:
        idx = np.argmin(np.abs(self.deltas - delta))
        if abs(self.deltas[idx] - delta) > 1e-9 * max(1.0, abs(delta)):
            raise DomainError(f"delta={delta} is not on the profile ladder")
        return float(self.mu[k][idx])

    def to_json(self) -> str:
        return json.dumps(
            {
                "deltas": self.deltas.tolist(),
                "mu": {str(k): v.tolist() for k, v in self.mu.items()},
                "x_grid_resolution": self.x_grid_resolution,
                "truncation_tol": self.truncation_tol,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "CoherenceProfile":
        obj = json.loads(text)
        return CoherenceProfile(
            deltas=np.asarray(obj["deltas"], dtype=float),
            mu={int(k): np.asarray(v, dtype=float) for k, v in obj["mu"].items()},
            x_grid_resolution=int(obj["x_grid_resolution"]),
            truncation_tol=float(obj["truncation_tol"]),
        )


def build_coherence_profile(
    kernel: Kernel,
    deltas,
    x_grid,
    grid: SamplingGrid,
    orders=(0, 1, 2, 3),
    truncation_tol: float = 1e-12,
) -> CoherenceProfile:
    """Coherence over a whole separation ladder, one shift scan per (x, k)."""
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0):
        raise DomainError("all ladder separations must be positive")
    window = float(grid.points[-1] - grid.points[0])
    xs = _as_x_grid(kernel, x_grid)
    mu = {k: np.zeros(deltas.size) for k in orders}
    for x in xs:
        for k in orders:
            shifts, suffix = _suffix_max_scan(kernel, float(x), k, grid)
            for j, delta in enumerate(deltas):
                val = _coherence_from_suffix(shifts, suffix, float(delta), window, truncation_tol)
                mu[k][j] = max(mu[k][j], val)
    return CoherenceProfile(
        deltas=deltas,
        mu=mu,
        x_grid_resolution=int(xs.size),
        truncation_tol=truncation_tol,
    )


def coherence_sigma_bound(profile: CoherenceProfile, p: int, delta: float) -> SpectralConstants:
    """Spectral-constant upper bounds implied by the coherence at one separation."""
    sig0 = float(np.sqrt(p * profile.value(0, delta)))
    rest = [float(np.sqrt(profile.value(k, delta))) for k in (1, 2, 3)]
    return SpectralConstants((sig0, *rest), Provenance.COHERENCE_BOUND)
