"""
Particle representation of the distribution function.

A :class:`ParticleEnsemble` carries positions (for spatially inhomogeneous
runs), velocities, the log-density of ``f`` at every particle and the common
particle weight ``w = m / N``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch
from numpy.typing import NDArray
from scipy.integrate import quad
from scipy.special import logsumexp
from torch import Tensor

from .config import (
    DomainConfig,
    HalfSpaceLaw,
    InitialCondition,
    MaxwellianLaw,
    MixtureLaw,
    PiecewiseProfile,
    Profile,
    VelocityLaw,
    default_dtype,
)
from .errors import DomainError, EmptyCellError
from .kernels import log_maxwellian

__all__ = [
    "ParticleEnsemble",
    "MacroMoments",
    "CellPartition",
    "BinnedCells",
    "sample_initial",
    "moments",
    "bin_particles",
]

_log = logging.getLogger(__name__)

# resolution of the tabulated position CDF
_CDF_POINTS = 2**14


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """
    Particles representing ``f``.  Ensembles are immutable; operations return
    new ensembles sharing unchanged tensors.
    """

    velocities: Tensor
    "Velocities, ``(N, d_v)``."
    logf: Tensor
    "``log f`` at each particle, ``(N,)``."
    weight: float
    "Common particle weight (total mass over particle count)."
    positions: Tensor | None = None
    "Positions ``(N,)`` in one spatial dimension, or ``None`` for homogeneous runs."

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"particle weight must be positive, got {self.weight}")
        if self.velocities.ndim != 2 or self.velocities.shape[0] < 1:
            raise ValueError("velocities must be a non-empty (N, d_v) array")
        if self.logf.shape != self.velocities.shape[:1]:
            raise ValueError("logf and velocities have different lengths")
        if not bool(torch.isfinite(self.logf).all()):
            raise ValueError("logf values must be finite")
        if self.positions is not None and self.positions.shape != self.logf.shape:
            raise ValueError("positions and velocities have different lengths")

    @property
    def n(self) -> int:
        return self.velocities.shape[0]

    @property
    def d_v(self) -> int:
        return self.velocities.shape[1]

    @property
    def d_x(self) -> int:
        return 0 if self.positions is None else 1

    @property
    def mass(self) -> float:
        return self.weight * self.n

    def replace(self, **changes: Any) -> ParticleEnsemble:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, slots=True)
class MacroMoments:
    """
    Macroscopic moments of a particle set.
    """

    rho: float
    "Mass density."
    u: tuple[float, ...]
    "Mean velocity."
    T: float
    "Temperature."
    E: float
    "Energy, half the weighted sum of squared speeds."
    H: float
    "Entropy, the weighted sum of log-densities."

    def log_maxwellian(self, v: Tensor) -> Tensor:
        return log_maxwellian(self.rho, torch.tensor(self.u, dtype=v.dtype), self.T, v)

    def maxwellian(self, v: Tensor) -> Tensor:
        return torch.exp(self.log_maxwellian(v))


def moments(velocities: Tensor, weight: float, logf: Tensor) -> MacroMoments:
    """
    Compute the moments of one particle set with particle weight ``weight``.

    Raises:
        EmptyCellError: if the set is empty.
    """
    n = velocities.shape[0]
    if n == 0:
        raise EmptyCellError("moments of an empty particle set")
    v = velocities.detach().to(torch.float64)
    u = v.mean(0)
    T = float(((v - u) ** 2).sum(-1).mean()) / v.shape[1]
    E = 0.5 * weight * float((v * v).sum())
    H = weight * float(logf.detach().to(torch.float64).sum())
    return MacroMoments(weight * n, tuple(float(c) for c in u), T, E, H)


@dataclass(frozen=True, eq=False)
class CellPartition:
    """
    A partition of ``[boundaries[0], boundaries[-1]]`` into cells.  Cells are
    half-open ``[b_l, b_{l+1})`` except the last, which is closed.
    """

    boundaries: NDArray[np.float64]

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or len(b) < 2:
            raise ValueError("a partition needs at least two boundaries")
        if np.any(np.diff(b) <= 0):
            raise ValueError("partition boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def uniform(cls, lower: float, upper: float, cells: int) -> CellPartition:
        return cls(np.linspace(lower, upper, cells + 1))

    @classmethod
    def from_domain(cls, domain: DomainConfig) -> CellPartition:
        return cls.uniform(domain.lower, domain.upper, domain.cells)

    @property
    def n_cells(self) -> int:
        return len(self.boundaries) - 1

    @property
    def lower(self) -> float:
        return float(self.boundaries[0])

    @property
    def upper(self) -> float:
        return float(self.boundaries[-1])

    @property
    def widths(self) -> NDArray[np.float64]:
        return np.diff(self.boundaries)

    @property
    def centers(self) -> NDArray[np.float64]:
        return 0.5 * (self.boundaries[1:] + self.boundaries[:-1])


@dataclass(frozen=True, eq=False)
class BinnedCells:
    "Assignment of particles to cells, with the per-cell reweighted weights."

    indices: list[Tensor]
    "Particle indices of each cell, ascending."
    weights: NDArray[np.float64]
    "Per-cell weight ``w / |cell|``."

    @property
    def counts(self) -> NDArray[np.int64]:
        return np.array([len(ix) for ix in self.indices], dtype=np.int64)


def bin_particles(ensemble: ParticleEnsemble, partition: CellPartition) -> BinnedCells:
    """
    Assign each particle to the cell containing its position.

    Raises:
        DomainError: if a particle lies outside the partitioned domain.
    """
    if ensemble.positions is None:
        raise ValueError("cannot bin a homogeneous ensemble")
    x = ensemble.positions.detach().cpu().numpy().astype(np.float64)
    if np.any(x < partition.lower) or np.any(x > partition.upper):
        bad = x[(x < partition.lower) | (x > partition.upper)]
        raise DomainError(f"{len(bad)} particles outside the domain (e.g. x={bad[0]})")

    cell = np.searchsorted(partition.boundaries, x, side="right") - 1
    cell[cell == partition.n_cells] = partition.n_cells - 1

    order = np.argsort(cell, kind="stable")
    counts = np.bincount(cell, minlength=partition.n_cells)
    pieces = np.split(order, np.cumsum(counts)[:-1])
    return BinnedCells(
        indices=[torch.from_numpy(p) for p in pieces],
        weights=ensemble.weight / partition.widths,
    )


def sample_initial(
    initial: InitialCondition,
    seed: int,
    domain: DomainConfig | None = None,
    *,
    dtype: torch.dtype | None = None,
) -> ParticleEnsemble:
    """
    Sample particles from ``f0(x, v) = density(x) * law(v; x)``.

    Positions are stratified: the density's CDF is inverted at one uniformly
    jittered point per equal-mass stratum.  Velocities are drawn exactly from
    the velocity law and ``logf`` is the analytic ``log f0`` at each particle.

    Args:
        initial: the initial condition.
        seed: the random seed; equal seeds give bitwise-equal ensembles.
        domain: the spatial domain, or ``None`` for homogeneous data.
        dtype: the tensor dtype (defaults to :func:`~apjko.config.default_dtype`).

    Raises:
        DomainError: if the density cannot be normalized.
    """
    rng = np.random.default_rng(seed)
    n = initial.particles
    law = initial.velocity

    if domain is None:
        rho0 = float(initial.density(np.zeros(1))[0])
        if not (math.isfinite(rho0) and rho0 > 0):
            raise DomainError(f"homogeneous density must be positive, got {rho0}")
        x = None
        log_rho = np.full(n, math.log(rho0))
        spatial_mass = rho0
    else:
        x, spatial_mass = _stratified_positions(initial.density, domain, n, rng)
        log_rho = np.log(initial.density(x))

    v, log_law = _sample_velocities(law, x, n, rng)
    mass = spatial_mass * law.mass
    _log.debug("sampled %d particles of total mass %.6g", n, mass)

    dtype = dtype or default_dtype()
    return ParticleEnsemble(
        velocities=torch.from_numpy(v).to(dtype),
        logf=torch.from_numpy(log_rho + log_law).to(dtype),
        weight=mass / n,
        positions=None if x is None else torch.from_numpy(x).to(dtype),
    )


def _stratified_positions(
    density: Profile, domain: DomainConfig, n: int, rng: np.random.Generator
) -> tuple[NDArray[np.float64], float]:
    grid = np.linspace(domain.lower, domain.upper, _CDF_POINTS + 1)
    mid = 0.5 * (grid[1:] + grid[:-1])
    dens = density(mid)
    if not np.all(np.isfinite(dens)) or np.any(dens < 0):
        raise DomainError("spatial density must be finite and nonnegative")
    cdf = np.concatenate([[0.0], np.cumsum(dens * np.diff(grid))])
    if not cdf[-1] > 0:
        raise DomainError("spatial density has no mass on the domain")

    breaks = None
    if isinstance(density, PiecewiseProfile):
        breaks = [b for b in density.breakpoints if domain.lower < b < domain.upper] or None
    mass, _err = quad(
        lambda t: float(density(np.asarray(t))),
        domain.lower,
        domain.upper,
        points=breaks,
        limit=200,
    )

    strata = (np.arange(n) + rng.random(n)) / n
    x = np.interp(strata * cdf[-1], cdf, grid)
    return np.clip(x, domain.lower, domain.upper), float(mass)


def _sample_velocities(
    law: VelocityLaw, x: NDArray[np.float64] | None, n: int, rng: np.random.Generator
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    match law:
        case MixtureLaw():
            weights = np.array([c.weight for c in law.components])
            means = np.array([c.mean for c in law.components], dtype=np.float64)
            variances = np.array([c.variances() for c in law.components])
            comp = rng.choice(len(weights), size=n, p=weights / weights.sum())
            v = means[comp] + np.sqrt(variances[comp]) * rng.standard_normal((n, law.dims))
            dev = (v[:, None, :] - means[None, :, :]) ** 2 / variances[None, :, :]
            log_comp = -0.5 * (dev + np.log(2 * np.pi * variances)[None, :, :]).sum(-1)
            return v, logsumexp(log_comp + np.log(weights)[None, :], axis=1)

        case MaxwellianLaw():
            T = law.temperature(np.zeros(n) if x is None else x)
            if np.any(T <= 0):
                raise DomainError("local temperature must be positive")
            mean = np.asarray(law.mean, dtype=np.float64)
            v = mean + np.sqrt(T)[:, None] * rng.standard_normal((n, law.dims))
            dev = ((v - mean) ** 2).sum(-1)
            return v, -0.5 * law.dims * np.log(2 * np.pi * T) - dev / (2 * T)

        case HalfSpaceLaw():
            p_left = law.left_density / (law.left_density + law.right_density)
            left = rng.random(n) < p_left
            T = np.where(left, law.left_temperature, law.right_temperature)
            v = np.sqrt(T)[:, None] * rng.standard_normal((n, law.dims))
            v[:, 0] = np.where(left, -np.abs(v[:, 0]), np.abs(v[:, 0]))
            rho = np.where(left, law.left_density, law.right_density)
            dev = (v**2).sum(-1)
            return v, np.log(rho) - 0.5 * law.dims * np.log(2 * np.pi * T) - dev / (2 * T)

        case _:
            raise TypeError(f"unknown velocity law {law!r}")
