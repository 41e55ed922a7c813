"""
The outer time loop: free transport, boundary handling, binning, per-cell
implicit collisions and global diagnostics.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Callable
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Literal, TypeAlias

import numpy as np
import torch
from numpy.typing import NDArray

from .config import Profile
from .ensemble import CellPartition, ParticleEnsemble, bin_particles, moments
from .errors import CellFailure, OvershootError
from .jko import CollisionResult, CollisionSolver, TrainingRecord
from .kernels import l1_to_maxwellian

__all__ = [
    "Boundary",
    "RunState",
    "StepDiagnostics",
    "transport",
    "check_cfl",
    "apply_bc",
    "step",
    "diagnostics",
]

_log = logging.getLogger(__name__)

Boundary: TypeAlias = Literal["periodic", "reflecting"]


@dataclass(frozen=True)
class StepDiagnostics:
    """
    Global conserved and dissipated quantities after a step, with per-cell
    profiles for inhomogeneous runs.
    """

    step: int
    time: float
    rho_tot: float
    "Total mass, ``w N``."
    momentum: tuple[float, ...]
    "Total momentum, ``w sum v``."
    E_tot: float
    "Total energy, ``w sum |v|^2 / 2``."
    H_tot: float
    "Total entropy, ``w sum log f``."
    l1_equilibrium: float | None = None
    "Mean distance of particle densities from their Maxwellian (homogeneous runs)."
    centers: NDArray[np.float64] | None = None
    rho: NDArray[np.float64] | None = None
    "Cell densities (zero in empty cells)."
    u: NDArray[np.float64] | None = None
    "Cell mean velocities (NaN in empty cells)."
    T: NDArray[np.float64] | None = None
    "Cell temperatures (NaN in empty cells)."

    def row(self) -> dict[str, float]:
        "The global quantities as one CSV row."
        row: dict[str, float] = {"step": self.step, "time": self.time, "rho_tot": self.rho_tot}
        for axis, m in zip("xyz", self.momentum):
            row[f"u{axis}_tot"] = m
        row["E_tot"] = self.E_tot
        row["H_tot"] = self.H_tot
        if self.l1_equilibrium is not None:
            row["l1_equilibrium"] = self.l1_equilibrium
        return row


@dataclass
class RunState:
    "State of a run between outer steps."

    ensemble: ParticleEnsemble
    dt: float
    partition: CellPartition | None = None
    boundary: Boundary = "periodic"
    step: int = 0
    records: list[StepDiagnostics] = field(default_factory=list)
    training: list[tuple[int, int, TrainingRecord]] = field(default_factory=list)
    "``(step, cell, record)`` for every optimizer iteration, when tracked."

    @property
    def time(self) -> float:
        return self.step * self.dt


def transport(ensemble: ParticleEnsemble, dt: float) -> ParticleEnsemble:
    "Free streaming ``x <- x + dt v_x``; velocities and log-densities are untouched."
    if ensemble.positions is None:
        raise ValueError("cannot transport a homogeneous ensemble")
    return ensemble.replace(positions=ensemble.positions + dt * ensemble.velocities[:, 0])


def check_cfl(ensemble: ParticleEnsemble, dt: float, lower: float, upper: float):
    """
    Raises:
        OvershootError: if a particle would cross a full domain length in one step.
    """
    vmax = float(ensemble.velocities[:, 0].abs().max())
    if dt * vmax >= upper - lower:
        raise OvershootError(
            f"dt * max|v_x| = {dt * vmax:.4g} exceeds the domain length {upper - lower:.4g}"
        )


def apply_bc(
    ensemble: ParticleEnsemble, kind: Boundary, lower: float, upper: float
) -> ParticleEnsemble:
    """
    Return particles that left ``[lower, upper]`` to the domain.

    Periodic boundaries wrap by the domain length.  Reflecting boundaries
    mirror the position about the crossed wall and negate the velocity.

    Raises:
        OvershootError: if a particle is more than one domain length outside.
    """
    x = ensemble.positions
    if x is None:
        raise ValueError("boundary conditions need positions")
    length = upper - lower
    below = x < lower
    above = x > upper
    if bool(((x < lower - length) | (x > upper + length)).any()):
        raise OvershootError("particles travelled more than one domain length")
    if not bool((below | above).any()):
        return ensemble

    if kind == "periodic":
        x = torch.where(below, x + length, torch.where(above, x - length, x))
        return ensemble.replace(positions=x)

    x = torch.where(below, 2 * lower - x, torch.where(above, 2 * upper - x, x))
    flip = (below | above).unsqueeze(-1)
    v = torch.where(flip, -ensemble.velocities, ensemble.velocities)
    return ensemble.replace(positions=x, velocities=v)


def step(
    state: RunState,
    solver: CollisionSolver,
    *,
    knudsen: Profile | None = None,
    executor: Executor | None = None,
) -> RunState:
    """
    Advance the run by one outer step: transport, boundary handling, binning
    and one collision step in every non-empty cell.

    Args:
        state: the current state; it is updated in place and returned.
        solver: the per-cell collision solver.
        knudsen: a spatially varying Knudsen number, evaluated at cell centres.
        executor: a pool for solving cells concurrently; cells run serially
            in index order when omitted.

    Raises:
        CellFailure: if a cell's collision solve fails.
    """
    ens = state.ensemble
    n = state.step

    if ens.positions is None:
        try:
            res = solver.solve(0, n, ens.velocities, ens.logf, ens.weight)
        except Exception as e:
            raise CellFailure(0, n, e) from e
        _record_training(state, [(0, res)])
        state.ensemble = ens.replace(velocities=res.velocities, logf=res.logf)
    else:
        part = state.partition
        if part is None:
            raise ValueError("inhomogeneous runs need a cell partition")
        check_cfl(ens, state.dt, part.lower, part.upper)
        ens = apply_bc(transport(ens, state.dt), state.boundary, part.lower, part.upper)
        bins = bin_particles(ens, part)
        eps = knudsen(part.centers) if knudsen is not None else None
        cells = [c for c, ix in enumerate(bins.indices) if len(ix) > 0]

        def solve_cell(c: int) -> CollisionResult:
            ix = bins.indices[c]
            try:
                return solver.solve(
                    c,
                    n,
                    ens.velocities[ix],
                    ens.logf[ix],
                    float(bins.weights[c]),
                    None if eps is None else float(eps[c]),
                )
            except Exception as e:
                raise CellFailure(c, n, e) from e

        mapper: Callable[..., object] = executor.map if executor is not None else map
        results: list[CollisionResult] = list(mapper(solve_cell, cells))  # type: ignore

        velocities = ens.velocities.clone()
        logf = ens.logf.clone()
        for c, res in zip(cells, results):
            ix = bins.indices[c]
            velocities[ix] = res.velocities
            logf[ix] = res.logf
        _record_training(state, list(zip(cells, results)))
        state.ensemble = ens.replace(velocities=velocities, logf=logf)

    state.step += 1
    record = diagnostics(state)
    state.records.append(record)
    _log.debug(
        "step %d (t=%.4g): E=%.10g H=%.10g", state.step, state.time, record.E_tot, record.H_tot
    )
    return state


def _record_training(state: RunState, results: list[tuple[int, CollisionResult]]):
    for cell, res in results:
        state.training.extend((state.step, cell, rec) for rec in res.history)


def diagnostics(state: RunState) -> StepDiagnostics:
    """
    Compute global totals and per-cell profiles of the current state.
    """
    ens = state.ensemble
    w = ens.weight
    v = ens.velocities.detach().to(torch.float64)
    logf = ens.logf.detach().to(torch.float64)
    record = StepDiagnostics(
        step=state.step,
        time=state.time,
        rho_tot=w * ens.n,
        momentum=tuple(float(m) for m in w * v.sum(0)),
        E_tot=0.5 * w * float((v * v).sum()),
        H_tot=w * float(logf.sum()),
    )
    if state.partition is None or ens.positions is None:
        return dataclasses.replace(record, l1_equilibrium=l1_to_maxwellian(v, logf, w))

    part = state.partition
    bins = bin_particles(ens, part)
    rho = np.zeros(part.n_cells)
    u = np.full((part.n_cells, ens.d_v), np.nan)
    T = np.full(part.n_cells, np.nan)
    for c, ix in enumerate(bins.indices):
        if len(ix) == 0:
            continue
        m = moments(v[ix], float(bins.weights[c]), logf[ix])
        rho[c] = m.rho
        u[c] = m.u
        T[c] = m.T
    return StepDiagnostics(
        record.step,
        record.time,
        record.rho_tot,
        record.momentum,
        record.E_tot,
        record.H_tot,
        centers=part.centers,
        rho=rho,
        u=u,
        T=T,
    )
