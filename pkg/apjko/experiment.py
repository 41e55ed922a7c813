"""
Run a configured experiment end to end and write its outputs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import RunConfig, configure
from .ensemble import CellPartition, sample_initial
from .field import save_checkpoint
from .heatlab import run_heatlab
from .jko import CollisionSolver
from .output import (
    conservation_frame,
    diagnostics_frame,
    heatlab_frame,
    histogram_frame,
    profile_frame,
    riemann_errors_frame,
    riemann_profile_frame,
    training_frame,
    write_csv,
)
from .riemann import EulerState, ProfileError, gamma_gas, profile_error, riemann_profile
from .run import current_run
from .splitting import RunState, diagnostics, step

__all__ = ["run_experiment", "simulate", "snapshot_due"]

_log = logging.getLogger(__name__)


def _written(path: Path) -> Path:
    if run := current_run():
        run.output(path)
    return path


def run_experiment(config: RunConfig):
    """
    Run the experiment described by ``config``, writing every output under
    ``config.output.directory``.

    Raises:
        SolverError: on numerical failure.
    """
    configure(config.precision, 1 if config.threads > 1 else None)
    out = config.output.directory
    out.mkdir(parents=True, exist_ok=True)

    match config.kind:
        case "homogeneous" | "inhomogeneous":
            simulate(config)
        case "heatlab":
            assert config.heatlab is not None
            rows = run_heatlab(config.heatlab, config.seed)
            _written(write_csv(heatlab_frame(rows), out / "heatlab.csv"))
        case "riemann":
            rc = config.riemann
            assert rc is not None
            x = np.linspace(rc.lower, rc.upper, rc.points)
            prof = riemann_profile(
                EulerState.from_config(rc.left),
                EulerState.from_config(rc.right),
                x,
                rc.time,
                gamma_gas(rc.dims),
                rc.membrane,
            )
            _written(write_csv(riemann_profile_frame(prof), out / "riemann_profile.csv"))


def snapshot_due(time: float, target: float, dt: float) -> bool:
    "Whether a run at ``time`` has reached the snapshot time ``target``."
    return time >= target - 1e-9 * dt


def simulate(config: RunConfig) -> RunState:
    """
    Run a collision experiment (homogeneous or inhomogeneous) for
    ``config.steps`` outer steps.
    """
    assert config.initial is not None
    out = config.output.directory
    domain = config.domain
    ens = sample_initial(config.initial, config.seed, domain)
    partition = CellPartition.from_domain(domain) if domain is not None else None
    dt = config.collision.dt
    state = RunState(
        ens, dt, partition, domain.boundary if domain is not None else "periodic"
    )
    state.records.append(diagnostics(state))
    solver = CollisionSolver(config.collision, config.seed, track_full_loss=config.diagnostics)
    pending = sorted(config.snapshots)
    errors: list[tuple[float, ProfileError]] = []
    _log.info(
        "%s run: %d particles, %s, %d steps of %g",
        config.kind,
        ens.n,
        f"{partition.n_cells} cells" if partition else "no cells",
        config.steps,
        dt,
    )

    def take_snapshots():
        while pending and snapshot_due(state.time, pending[0], dt):
            _snapshot(config, state, solver, pending.pop(0), errors)

    take_snapshots()
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 and partition else None
    try:
        with pool or nullcontext():
            for _n in range(config.steps):
                step(state, solver, knudsen=config.knudsen, executor=pool)
                if run := current_run():
                    run.step(state.step, state.time)
                take_snapshots()
    finally:
        # keep what was computed when a later step fails
        _written(write_csv(diagnostics_frame(state.records), out / "diagnostics.csv"))
        _written(write_csv(conservation_frame(state.records), out / "conservation.csv"))
        if config.diagnostics:
            _written(write_csv(training_frame(state.training), out / "training.csv"))
        if errors:
            _written(write_csv(riemann_errors_frame(errors), out / "riemann_errors.csv"))

    if pending:
        _log.warning("snapshot times %s lie beyond the end of the run", pending)
    return state


def _snapshot(
    config: RunConfig,
    state: RunState,
    solver: CollisionSolver,
    target: float,
    errors: list[tuple[float, ProfileError]],
):
    out = config.output.directory / f"t{target:.4f}"
    ens = state.ensemble
    record = state.records[-1]
    _log.info("writing snapshot at t=%.4g to %s", state.time, out)

    hist = histogram_frame(ens.velocities, ens.weight, config.output.histogram_bins)
    _written(write_csv(hist, out / "histograms.csv"))
    if record.centers is not None:
        _written(write_csv(profile_frame(record), out / "profiles.csv"))
        if config.riemann is not None and state.time > 0:
            assert record.rho is not None and record.u is not None and record.T is not None
            err = profile_error(
                record.centers, record.rho, record.u, record.T, state.time, config.riemann
            )
            _log.info("Euler profile errors at t=%.4g: %s", state.time, err)
            errors.append((state.time, err))

    if config.output.checkpoints:
        for cell, field in sorted(solver.fields.items()):
            path = out / "checkpoints" / f"cell{cell:04d}.zst"
            path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(field, path)
            _written(path)
