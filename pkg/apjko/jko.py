"""
Variational collision steps: loss assembly, training of the velocity field and
the per-cell collision driver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from threading import Lock

import numpy as np
import torch
from torch import Tensor
from torch.optim import AdamW
from torch.optim.lr_scheduler import CosineAnnealingWarmRestarts

from .config import CollisionConfig, ScheduleConfig
from .ensemble import MacroMoments, moments
from .errors import TrainingError
from .field import VelocityField, init_field
from .innertime import InnerTrajectory, integrate_trajectory
from .kernels import KernelParams

__all__ = [
    "TrainingRecord",
    "TrainResult",
    "CollisionResult",
    "CollisionSolver",
    "kernel_params",
    "landau_loss",
    "dougherty_loss",
    "dougherty_wgf_loss",
    "relative_entropy_estimate",
    "collision_loss",
    "make_optimizer",
    "train_collision",
    "collision_step",
    "cell_seed",
]

_log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class TrainingRecord:
    "One optimizer iteration."

    iteration: int
    epoch: int
    batch_loss: float
    lr: float
    full_loss: float | None = None
    "Loss over all particles, recorded at the end of each epoch when requested."


@dataclass
class TrainResult:
    field: VelocityField
    trajectory: InnerTrajectory
    "Trajectory of all particles under the trained field."
    history: list[TrainingRecord]


@dataclass
class CollisionResult:
    velocities: Tensor
    logf: Tensor
    field: VelocityField | None
    trajectory: InnerTrajectory | None
    history: list[TrainingRecord]


def kernel_params(config: CollisionConfig, d_v: int) -> KernelParams:
    return KernelParams(gamma=config.gamma, d_v=d_v, r_cut=config.r_cut)


def landau_loss(traj: InnerTrajectory, w_tilde: float, config: CollisionConfig) -> Tensor:
    "Kinetic action of the Landau flow plus ``2 dt`` times the terminal entropy."
    assert traj.kinetic is not None and traj.logdet is not None
    return (
        config.epsilon * w_tilde**2 * traj.kinetic
        - 2 * config.dt * w_tilde * traj.logdet.sum()
    )


def dougherty_loss(
    traj: InnerTrajectory, w_tilde: float, T_star: float, config: CollisionConfig
) -> Tensor:
    "Projected gradient-flow loss; ``traj`` must come from the projected field."
    assert traj.kinetic is not None and traj.logdet is not None
    return (
        w_tilde * config.epsilon * traj.kinetic
        - 2 * config.dt * T_star * w_tilde * traj.logdet.sum()
    )


def relative_entropy_estimate(
    traj: InnerTrajectory, logf: Tensor, w_tilde: float, moments_in: MacroMoments
) -> Tensor:
    """
    Particle estimate of the entropy of the transported density relative to
    the Maxwellian of the input moments.
    """
    assert traj.logdet is not None
    log_m = moments_in.log_maxwellian(traj.final)
    return w_tilde * (logf - traj.logdet - log_m).sum()


def dougherty_wgf_loss(
    traj: InnerTrajectory,
    w_tilde: float,
    T_star: float,
    moments_in: MacroMoments,
    logf: Tensor,
    config: CollisionConfig,
) -> Tensor:
    "Unprojected Dougherty gradient-flow loss with the relative entropy as energy."
    assert traj.kinetic is not None
    h_rel = relative_entropy_estimate(traj, logf, w_tilde, moments_in)
    return config.epsilon * w_tilde * traj.kinetic + 2 * config.dt * T_star * h_rel


def collision_loss(
    traj: InnerTrajectory,
    w_tilde: float,
    config: CollisionConfig,
    *,
    logf: Tensor,
    moments_in: MacroMoments,
) -> Tensor:
    "The loss of the configured operator."
    match config.operator:
        case "landau":
            return landau_loss(traj, w_tilde, config)
        case "dougherty":
            return dougherty_loss(traj, w_tilde, moments_in.T, config)
        case "dougherty_wgf":
            return dougherty_wgf_loss(traj, w_tilde, moments_in.T, moments_in, logf, config)


def make_optimizer(
    field: VelocityField, sched: ScheduleConfig, weight_decay: float = 0.0
) -> tuple[AdamW, CosineAnnealingWarmRestarts]:
    """
    AdamW with ``betas=(0.9, 0.999)``, ``eps=1e-8`` and cosine annealing
    restarting every ``restart_period`` iterations (no period growth).
    """
    opt = AdamW(
        field.parameters(),
        lr=sched.lr_max,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=weight_decay,
    )
    return opt, CosineAnnealingWarmRestarts(
        opt, T_0=sched.restart_period, T_mult=1, eta_min=sched.lr_min
    )


def _trajectory(
    z: Tensor, field: VelocityField, w: float, config: CollisionConfig, kernel: KernelParams
) -> InnerTrajectory:
    return integrate_trajectory(
        z,
        field,
        w,
        operator=config.operator,
        quadrature=config.quadrature,
        solver=config.solver,
        kernel=kernel,
        broyden=config.broyden,
    )


def train_collision(
    velocities: Tensor,
    logf: Tensor,
    field: VelocityField,
    config: CollisionConfig,
    w_tilde: float,
    *,
    generator: torch.Generator,
    track_full_loss: bool = False,
) -> TrainResult:
    """
    Train the velocity field of one cell's collision step.

    Landau cells train on random mini-batches (a fresh random partition into
    ``N // B`` batches each epoch), rescaling the weight to ``w~ N / B`` so
    the restricted pairwise sums estimate the full ones.  Dougherty cells
    train on the full set.  After ``schedule.iterations`` optimizer steps the
    trajectory of all particles is recomputed without gradients.

    Raises:
        TrainingError: if a loss is not finite.
        ImplicitSolverError: if an implicit midpoint solve fails.
    """
    n, d_v = velocities.shape
    velocities = velocities.detach()
    logf = logf.detach()
    kernel = kernel_params(config, d_v)
    cell = moments(velocities, w_tilde, logf)

    batch = min(config.batch_size, n) if config.operator == "landau" else n
    per_epoch = n // batch
    w_batch = w_tilde * n / batch

    opt, sched = make_optimizer(field, config.schedule, config.weight_decay)
    history: list[TrainingRecord] = []
    iterations = config.schedule.iterations
    it = 0
    epoch = 0
    while it < iterations:
        order = torch.randperm(n, generator=generator) if batch < n else None
        for b in range(per_epoch):
            if order is None:
                z, lf = velocities, logf
            else:
                idx = order[b * batch : (b + 1) * batch]
                z, lf = velocities[idx], logf[idx]

            traj = _trajectory(z, field, w_batch, config, kernel)
            loss = collision_loss(traj, w_batch, config, logf=lf, moments_in=cell)
            if not bool(torch.isfinite(loss)):
                raise TrainingError(f"non-finite loss at iteration {it} (epoch {epoch})")

            opt.zero_grad(set_to_none=True)
            loss.backward()  # type: ignore
            lr = opt.param_groups[0]["lr"]
            opt.step()
            sched.step()
            history.append(TrainingRecord(it, epoch, loss.item(), lr))

            it += 1
            if it >= iterations:
                break

        if track_full_loss:
            with torch.no_grad():
                traj = _trajectory(velocities, field, w_tilde, config, kernel)
                full = float(collision_loss(traj, w_tilde, config, logf=logf, moments_in=cell))
            last = history[-1]
            history[-1] = TrainingRecord(
                last.iteration, last.epoch, last.batch_loss, last.lr, full
            )
        epoch += 1

    with torch.no_grad():
        traj = _trajectory(velocities, field, w_tilde, config, kernel)
    return TrainResult(field, traj, history)


def collision_step(
    velocities: Tensor,
    logf: Tensor,
    w_tilde: float,
    config: CollisionConfig,
    *,
    field: VelocityField | None = None,
    seed: int = 0,
    track_full_loss: bool = False,
) -> CollisionResult:
    """
    One implicit collision step for the particles of a cell.

    Velocities move to the end of the trained trajectory and log-densities
    drop by the accumulated log-determinants.  Cells with fewer than two
    particles are returned unchanged.
    """
    n, d_v = velocities.shape
    if n < 2:
        return CollisionResult(velocities, logf, field, None, [])

    if field is None:
        field = init_field(d_v, config.layers, config.width, seed, dtype=velocities.dtype)
    gen = torch.Generator().manual_seed(seed)
    result = train_collision(
        velocities,
        logf,
        field,
        config,
        w_tilde,
        generator=gen,
        track_full_loss=track_full_loss,
    )
    traj = result.trajectory
    assert traj.logdet is not None
    return CollisionResult(
        traj.final.detach(),
        (logf - traj.logdet).detach(),
        result.field,
        traj,
        result.history,
    )


def cell_seed(seed: int, cell: int, step: int) -> int:
    "Seed for one cell at one outer step, independent of processing order."
    state = np.random.SeedSequence([seed, cell, step]).generate_state(1, dtype=np.uint64)
    return int(state[0])


class CollisionSolver:
    """
    Solves collision steps cell by cell, keeping the latest trained field of
    each cell (for checkpoints, and to warm-start its next step).

    Distinct cells may be solved concurrently.

    Args:
        config: the collision configuration.
        seed: the run seed; cell seeds derive from it.
        track_full_loss: record full-set losses at the end of every epoch.
    """

    config: CollisionConfig
    seed: int
    track_full_loss: bool
    fields: dict[int, VelocityField]

    def __init__(self, config: CollisionConfig, seed: int, *, track_full_loss: bool = False):
        self.config = config
        self.seed = seed
        self.track_full_loss = track_full_loss
        self.fields = {}
        self._lock = Lock()

    def solve(
        self,
        cell: int,
        step: int,
        velocities: Tensor,
        logf: Tensor,
        w_tilde: float,
        epsilon: float | None = None,
    ) -> CollisionResult:
        config = self.config
        if epsilon is not None and epsilon != config.epsilon:
            config = config.model_copy(update={"epsilon": epsilon})

        seed = cell_seed(self.seed, cell, step)
        with self._lock:
            field = self.fields.get(cell) if config.warm_start else None

        result = collision_step(
            velocities,
            logf,
            w_tilde,
            config,
            field=field,
            seed=seed,
            track_full_loss=self.track_full_loss,
        )
        if result.field is not None:
            with self._lock:
                self.fields[cell] = result.field
        _log.debug("cell %d step %d: %d particles", cell, step, velocities.shape[0])
        return result
