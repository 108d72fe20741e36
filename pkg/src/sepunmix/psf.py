"""PSF unmixing models: spike dictionaries, sampling grids, and block norms.

A PSF model's dictionary has one column per spike: column (i, k) samples
kernel(x_i, t - t_{i,k}) on the grid.  Spikes come in p groups of q; each
group shares one shape parameter, so all cross derivatives between groups
vanish and every derivative of the dictionary is block-sparse.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvariantViolation, PackingInfeasibleError
from .kernels import Kernel
from .model import FeasibleBox, ModelDims, SeparableModel

RETRY_CAP = 100_000


@dataclass(frozen=True)
class SupportDictionary:
    """Spike locations, p groups of q, inside [-window/2, window/2]."""

    locations: np.ndarray  # shape (p, q)
    window: float
    delta: float  # declared minimal separation

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        if loc.ndim != 2:
            raise InvariantViolation("locations must be a (groups, per_group) matrix")
        object.__setattr__(self, "locations", loc)
        half = self.window / 2.0
        if np.any(np.abs(loc) > half + 1e-12):
            raise InvariantViolation("spike locations must lie inside the window")
        flat = np.sort(loc.ravel())
        if flat.size > 1 and np.min(np.diff(flat)) <= 0:
            raise InvariantViolation("spike locations must be pairwise distinct")

    @property
    def groups(self) -> int:
        return self.locations.shape[0]

    @property
    def per_group(self) -> int:
        return self.locations.shape[1]

    def to_json(self) -> str:
        return json.dumps(
            {
                "locations": self.locations.tolist(),
                "p": self.groups,
                "q": self.per_group,
                "delta": self.delta,
                "window": self.window,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "SupportDictionary":
        obj = json.loads(text)
        return SupportDictionary(
            locations=np.asarray(obj["locations"], dtype=float),
            window=float(obj["window"]),
            delta=float(obj["delta"]),
        )


@dataclass(frozen=True)
class SamplingGrid:
    """Uniform sampling grid over the window."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2 or np.any(np.diff(pts) <= 0):
            raise InvariantViolation("grid must be a strictly increasing vector")
        object.__setattr__(self, "points", pts)

    @staticmethod
    def uniform(n: int, window: float) -> "SamplingGrid":
        return SamplingGrid(np.linspace(-window / 2.0, window / 2.0, n))

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0])


def sample_support(
    p: int, q: int, delta: float, window: float, rng: np.random.Generator
) -> SupportDictionary:
    """Rejection-sample p*q spike locations with minimal separation delta.

    The first spike is uniform on the window, the second sits at +/- delta
    from it (sign uniform, redrawn until inside the window), and every later
    spike is uniform with rejection of candidates closer than delta to any
    accepted location.  Spikes fill groups in sampling order, q at a time.
    """
    if delta <= 0 or p * q * delta >= window:
        raise ConfigError(f"infeasible packing: p*q*delta={p * q * delta} must be < window={window}")
    half = window / 2.0
    locations = [rng.uniform(-half, half)]
    total = p * q
    if total >= 2:
        for attempt in range(RETRY_CAP + 1):
            if attempt == RETRY_CAP:
                raise PackingInfeasibleError("could not place the paired spike", placed=1)
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            candidate = locations[0] + sign * delta
            if -half <= candidate <= half:
                locations.append(candidate)
                break
    while len(locations) < total:
        placed = False
        for _ in range(RETRY_CAP):
            candidate = rng.uniform(-half, half)
            if min(abs(candidate - t) for t in locations) >= delta:
                locations.append(candidate)
                placed = True
                break
        if not placed:
            raise PackingInfeasibleError(
                f"rejection sampling stalled after {RETRY_CAP} tries", placed=len(locations)
            )
    return SupportDictionary(
        locations=np.asarray(locations).reshape(p, q), window=window, delta=delta
    )


def minimal_separation(support: SupportDictionary) -> float:
    """Smallest pairwise gap between spike locations; +inf for a single spike."""
    flat = np.sort(support.locations.ravel())
    if flat.size < 2:
        return math.inf
    return float(np.min(np.diff(flat)))


class PsfModel(SeparableModel):
    """Separable model assembled from a kernel, a spike support, and a grid."""

    diagonal_second_derivatives = True

    def __init__(self, kernel: Kernel, support: SupportDictionary, grid: SamplingGrid):
        lo, hi = kernel.shape_domain
        if not lo < hi:
            raise ConfigError("kernel shape domain is empty")
        half = support.window / 2.0
        if abs(grid.points[0]) > half + 1e-9 or abs(grid.points[-1]) > half + 1e-9:
            raise ConfigError("grid and support must share the window")
        p, q = support.groups, support.per_group
        self.kernel = kernel
        self.support = support
        self.grid = grid
        self.dims = ModelDims(n_samples=grid.n, n_nonlinear=p, n_linear=p * q)
        self.feasible = FeasibleBox(np.full(p, lo), np.full(p, hi))

    def _lags(self, i: int) -> np.ndarray:
        """(q, N) matrix of grid lags for group i."""
        return self.grid.points[None, :] - self.support.locations[i][:, None]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        p, q = self.support.groups, self.support.per_group
        a = np.empty((self.dims.n_samples, p * q))
        for i in range(p):
            lags = self._lags(i)
            for k in range(q):
                a[:, i * q + k] = self.kernel.value(float(x[i]), lags[k])
        return a

    def partial(self, x: np.ndarray, k: int, i: int) -> np.ndarray:
        p, q = self.support.groups, self.support.per_group
        out = np.zeros((self.dims.n_samples, p * q))
        lags = self._lags(i)
        for j in range(q):
            out[:, i * q + j] = self.kernel.dx(float(x[i]), lags[j], k)
        return out

    def mixed_partial(self, x: np.ndarray, i: int, j: int) -> np.ndarray:
        if i != j:
            return np.zeros((self.dims.n_samples, self.dims.n_linear))
        return self.partial(x, 2, i)

    def column_block(self, x_i: float, i: int, k: int = 0) -> np.ndarray:
        """(N, q) block of the k-th derivative of group i at shape value x_i."""
        lags = self._lags(i)
        cols = [
            self.kernel.value(x_i, lags[j]) if k == 0 else self.kernel.dx(x_i, lags[j], k)
            for j in range(self.support.per_group)
        ]
        return np.stack(cols, axis=1)


def build_psf_model(kernel: Kernel, support: SupportDictionary, grid: SamplingGrid) -> PsfModel:
    """Assemble the separable PSF model for a kernel/support/grid triple."""
    return PsfModel(kernel, support, grid)


def block_operator_norms(model: PsfModel, x: np.ndarray, k: int) -> np.ndarray:
    """Largest singular value of each group's (N, q) derivative block."""
    p = model.support.groups
    return np.array(
        [np.linalg.norm(model.column_block(float(x[i]), i, k), 2) for i in range(p)]
    )


def spectral_constants_psf(model: PsfModel, x_grid_resolution: int = 64):
    """Spectral constants from per-block norms maximized over a shape grid.

    The block structure decouples the operator norms: sigma_k is bounded by
    the largest per-group block norm over the shape interval, inflated by
    sqrt(p) for k = 0 only.  Returned with grid-estimate provenance since the
    supremum is taken over a finite grid.
    """
    from .model import Provenance, SpectralConstants

    lo, hi = model.kernel.shape_domain
    xs = np.linspace(lo, hi, x_grid_resolution)
    p = model.support.groups
    sigma = []
    for k in range(4):
        best = 0.0
        for x_val in xs:
            for i in range(p):
                best = max(best, float(np.linalg.norm(model.column_block(float(x_val), i, k), 2)))
        if k == 0:
            best *= math.sqrt(p)
        sigma.append(best)
    return SpectralConstants(tuple(sigma), Provenance.GRID_ESTIMATE)
