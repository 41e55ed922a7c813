"""
Heat-equation laboratory comparing three ways of taking one implicit step of
``df/dt = (1/eps) lap f`` with particles and a trained field: explicit score
matching, the one-step implicit objective, and the multi-step dynamic JKO
step.  Gaussian data make every answer available in closed form.

Throughout, ``alpha = dt / eps`` is the stiffness ratio and losses are
divided by ``eps``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal, TypeAlias

import numpy as np
import torch
from scipy.optimize import brentq
from scipy.special import ndtri
from torch import Tensor

from .config import HeatLabConfig, ScheduleConfig, default_dtype
from .errors import DomainError, ImplicitSolverError, SolverError, TrainingError
from .field import VelocityField, init_field
from .innertime import integrate_trajectory
from .jko import TrainingRecord, cell_seed, make_optimizer

__all__ = [
    "Method",
    "GaussianState",
    "HeatStepResult",
    "IsmIterate",
    "OptimalityResiduals",
    "HeatLabRow",
    "gaussian_jko_std_oracle",
    "exact_heat_std",
    "esm_linear_slope",
    "ism_linear_slope",
    "jko_linear_slope",
    "score_refit_linear",
    "heat_field",
    "solve_transport",
    "esm_step",
    "ism_step",
    "ism_fixed_point_step",
    "heat_jko_step",
    "optimality_residuals",
    "run_heatlab",
]

_log = logging.getLogger(__name__)

Method: TypeAlias = Literal["esm", "ism", "jko"]


@dataclass(frozen=True)
class GaussianState:
    """
    A Gaussian velocity distribution with independent axes, together with the
    stiffness ratio of the step to be taken from it.
    """

    mean: tuple[float, ...]
    std: tuple[float, ...]
    alpha: float

    def __post_init__(self):
        if len(self.mean) != len(self.std) or not self.mean:
            raise ValueError("mean and std must have the same, nonzero length")
        if any(not s > 0 for s in self.std):
            raise DomainError("standard deviations must be positive")
        if not self.alpha > 0:
            raise DomainError("the stiffness ratio must be positive")

    @classmethod
    def isotropic(cls, sigma0: float, alpha: float, d_v: int = 1) -> GaussianState:
        return cls((0.0,) * d_v, (sigma0,) * d_v, alpha)

    @property
    def d_v(self) -> int:
        return len(self.mean)

    def sample(
        self, n: int, seed: int, *, dtype: torch.dtype | None = None
    ) -> tuple[Tensor, Tensor]:
        """
        Draw ``n`` stratified samples (one per equal-probability stratum on
        every axis, axes independently shuffled) with their log-densities.
        """
        rng = np.random.default_rng(seed)
        cols = []
        for mu, sd in zip(self.mean, self.std):
            u = (np.arange(n) + rng.random(n)) / n
            cols.append(mu + sd * ndtri(u)[rng.permutation(n)])
        v = torch.from_numpy(np.stack(cols, axis=1)).to(dtype or default_dtype())
        return v, self.log_density(v)

    def log_density(self, v: Tensor) -> Tensor:
        mu = torch.tensor(self.mean, dtype=v.dtype)
        var = torch.tensor(self.std, dtype=v.dtype) ** 2
        return -0.5 * (((v - mu) ** 2) / var + torch.log(2 * math.pi * var)).sum(-1)


def gaussian_jko_std_oracle(sigma0: float, alpha: float) -> float:
    """
    Standard deviation after one exact JKO step of the heat equation from a
    Gaussian of standard deviation ``sigma0``: the positive root of
    ``s (s - sigma0) = alpha``.
    """
    if not sigma0 > 0 or alpha < 0:
        raise DomainError("need sigma0 > 0 and alpha >= 0")
    return 0.5 * (sigma0 + math.sqrt(sigma0**2 + 4 * alpha))


def exact_heat_std(sigma0: float, alpha: float) -> float:
    "Standard deviation of the exact heat solution after the step."
    return math.sqrt(sigma0**2 + 2 * alpha)


def esm_linear_slope(ratio: float) -> float:
    "Map slope ``1 + r`` of explicit score matching at ``r = alpha / sigma0^2``."
    return 1.0 + ratio


def jko_linear_slope(ratio: float) -> float:
    "Positive root of ``l (l - 1) = r``."
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * ratio))


def ism_linear_slope(ratio: float) -> float:
    "Root of ``l^2 (l - 1) = r`` minimizing the one-step implicit objective."
    if ratio < 0:
        raise DomainError("the stiffness ratio must be nonnegative")
    if ratio == 0:
        return 1.0
    root = brentq(lambda lam: lam * lam * (lam - 1.0) - ratio, 1.0, 1.0 + ratio, xtol=1e-14)
    return float(root)


def score_refit_linear(
    ratio: float, iterations: int = 50, *, damping: float = 0.0, start: float | None = None
) -> np.ndarray:
    """
    Iterate the alternating score refit under a linear map ``T(v) = l v``.

    Each iteration fits the score of the pushed-forward Gaussian (spread
    ``l sigma0``) and solves ``T = v + s(T)`` for the new slope,
    ``l <- l^2 / (l^2 - r)``.  The fixed point is the JKO slope; without
    damping the iteration oscillates once the stiffness ratio is large.

    Args:
        ratio: ``alpha / sigma0^2``.
        iterations: number of refits.
        damping: weight kept on the previous slope.
        start: initial slope (defaults to the explicit score matching slope).

    Returns:
        The slopes, starting with ``start``.

    Raises:
        DomainError: if a refit makes the transport equation unsolvable.
    """
    lam = esm_linear_slope(ratio) if start is None else start
    out = [lam]
    for _ in range(iterations):
        denom = lam * lam - ratio
        if not denom > 0:
            raise DomainError(f"refit slope {lam:.6g} leaves no solvable transport map")
        lam = (1 - damping) * (lam * lam / denom) + damping * lam
        out.append(lam)
    return np.asarray(out)


def heat_field(
    d_v: int, layers: int, width: int, seed: int, *, dtype: torch.dtype | None = None
) -> VelocityField:
    "A velocity field that starts out as zero (the identity map)."
    f = init_field(d_v, layers, width, seed, dtype=dtype)
    with torch.no_grad():
        f.layers[-1].weight.zero_()
    return f


@dataclass
class IsmIterate:
    "One outer iteration of the one-step implicit fixed point."

    iteration: int
    loss: float
    field_change: float
    "Relative change of the field on the transported particles."
    transport_iterations: int


@dataclass
class HeatStepResult:
    field: VelocityField
    velocities: Tensor
    logf: Tensor
    history: list[TrainingRecord]
    logdet: Tensor | None = None
    "Accumulated log-determinants (dynamic JKO only)."
    iterates: list[IsmIterate] = dataclasses.field(default_factory=list)


def _fit(
    field: VelocityField,
    loss_fn: Callable[[int], Tensor],
    schedule: ScheduleConfig,
    iterations: int | None = None,
    optim: tuple[torch.optim.Optimizer, torch.optim.lr_scheduler.LRScheduler] | None = None,
    history: list[TrainingRecord] | None = None,
    weight_decay: float = 0.0,
) -> list[TrainingRecord]:
    opt, sched = optim or make_optimizer(field, schedule, weight_decay)
    history = [] if history is None else history
    for _ in range(schedule.iterations if iterations is None else iterations):
        it = len(history)
        loss = loss_fn(it)
        if not bool(torch.isfinite(loss)):
            raise TrainingError(f"non-finite heat-lab loss at iteration {it}")
        opt.zero_grad(set_to_none=True)
        loss.backward()  # type: ignore
        lr = opt.param_groups[0]["lr"]
        opt.step()
        sched.step()
        history.append(TrainingRecord(it, 0, loss.item(), lr))
    return history


def _logabsdet(m: Tensor) -> Tensor:
    return torch.linalg.slogdet(m).logabsdet


def esm_step(
    velocities: Tensor,
    logf: Tensor,
    field: VelocityField,
    alpha: float,
    schedule: ScheduleConfig,
    *,
    weight_decay: float = 0.0,
) -> HeatStepResult:
    """
    Explicit score matching: fit ``s`` minimizing ``|s|^2 - 2 alpha div s``
    over the current particles, then move them by ``v <- v + s(v)``.
    """
    v = velocities.detach()

    def loss(_it: int) -> Tensor:
        s, jac = field.value_and_jacobian(0.0, v)
        div = jac.diagonal(dim1=-2, dim2=-1).sum(-1)
        return ((s * s).sum(-1) - 2 * alpha * div).mean()

    history = _fit(field, loss, schedule, weight_decay=weight_decay)
    with torch.no_grad():
        s, jac = field.value_and_jacobian(0.0, v)
        eye = torch.eye(v.shape[1], dtype=v.dtype)
        new_logf = logf - _logabsdet(eye + jac)
    return HeatStepResult(field, v + s, new_logf, history)


def solve_transport(
    field: VelocityField,
    velocities: Tensor,
    start: Tensor | None = None,
    *,
    damping: float = 0.5,
    max_iters: int = 200,
) -> tuple[Tensor, int]:
    """
    Solve ``T = v + s(T)`` by damped Picard iteration, without gradients.

    Raises:
        ImplicitSolverError: if the iteration diverges or hits ``max_iters``.
    """
    v = velocities.detach()
    tol = max(1e-8, 100 * torch.finfo(v.dtype).eps) * (1.0 + float(v.abs().max()))
    err = math.inf
    with torch.no_grad():
        t = v.clone() if start is None else start.detach().clone()
        for it in range(max_iters):
            res = v + field(0.0, t) - t
            err = float(res.abs().max())
            if not math.isfinite(err):
                break
            if err <= tol:
                return t, it
            t = t + damping * res
    raise ImplicitSolverError(err, max_iters)


def _implicit_transport(field: VelocityField, v: Tensor, t_bar: Tensor) -> Tensor:
    # one Newton correction at the converged point: equal to t_bar in value,
    # with the implicit-function derivative with respect to the parameters
    s, jac = field.value_and_jacobian(0.0, t_bar)
    eye = torch.eye(v.shape[1], dtype=v.dtype)
    rhs = (v + s - t_bar).unsqueeze(-1)
    return t_bar + torch.linalg.solve(eye - jac.detach(), rhs).squeeze(-1)


def _ism_loss(field: VelocityField, v: Tensor, t_bar: Tensor, alpha: float) -> Tensor:
    t = _implicit_transport(field, v, t_bar)
    div = field.divergence(0.0, t)
    return (((t - v) ** 2).sum(-1) - 2 * alpha * div).mean()


def _ism_finish(
    field: VelocityField, v: Tensor, logf: Tensor, t_bar: Tensor
) -> tuple[Tensor, Tensor]:
    t, _its = solve_transport(field, v, t_bar)
    with torch.no_grad():
        _s, jac = field.value_and_jacobian(0.0, t)
        eye = torch.eye(v.shape[1], dtype=v.dtype)
        return t, logf + _logabsdet(eye - jac)


def ism_step(
    velocities: Tensor,
    logf: Tensor,
    field: VelocityField,
    alpha: float,
    schedule: ScheduleConfig,
    *,
    weight_decay: float = 0.0,
) -> HeatStepResult:
    """
    Minimize the one-step implicit objective
    ``|s(T)|^2 - 2 alpha div s(T)`` subject to ``T = v + s(T)``, re-solving the
    transport at every iteration.

    Raises:
        ImplicitSolverError: if a transport solve diverges.
    """
    v = velocities.detach()
    t_bar = v.clone()

    def loss(_it: int) -> Tensor:
        nonlocal t_bar
        t_bar, _its = solve_transport(field, v, t_bar)
        return _ism_loss(field, v, t_bar, alpha)

    history = _fit(field, loss, schedule, weight_decay=weight_decay)
    t, new_logf = _ism_finish(field, v, logf, t_bar)
    return HeatStepResult(field, t, new_logf, history)


def ism_fixed_point_step(
    velocities: Tensor,
    logf: Tensor,
    field: VelocityField,
    alpha: float,
    config: HeatLabConfig,
) -> HeatStepResult:
    """
    The one-step implicit scheme as a fixed point: alternately solve the
    transport ``T = v + s(T)`` for the current field and refit the field on
    the transported particles, until the field settles (relative change
    below ``config.field_tol``) or ``config.outer_iterations`` are done.

    Raises:
        ImplicitSolverError: if a transport solve diverges.
    """
    v = velocities.detach()
    schedule = config.schedule
    per_outer = max(1, math.ceil(schedule.iterations / config.outer_iterations))
    optim = make_optimizer(field, schedule, config.weight_decay)
    history: list[TrainingRecord] = []
    iterates: list[IsmIterate] = []
    t_bar, its = solve_transport(field, v)

    def loss(_it: int) -> Tensor:
        nonlocal t_bar
        t_bar, _its = solve_transport(field, v, t_bar)
        return _ism_loss(field, v, t_bar, alpha)

    for m in range(config.outer_iterations):
        with torch.no_grad():
            before = field(0.0, t_bar)
        anchor = t_bar
        _fit(field, loss, schedule, per_outer, optim, history)
        t_bar, its = solve_transport(field, v, t_bar)
        with torch.no_grad():
            after = field(0.0, anchor)
            change = float((after - before).norm() / max(float(after.norm()), 1e-300))
        iterates.append(IsmIterate(m, history[-1].batch_loss, change, its))
        _log.debug("ism outer iteration %d: field change %.3e", m, change)
        if change < config.field_tol:
            break

    t, new_logf = _ism_finish(field, v, logf, t_bar)
    return HeatStepResult(field, t, new_logf, history, iterates=iterates)


def heat_jko_step(
    velocities: Tensor,
    logf: Tensor,
    field: VelocityField,
    alpha: float,
    quadrature: int,
    schedule: ScheduleConfig,
    *,
    weight_decay: float = 0.0,
) -> HeatStepResult:
    """
    The dynamic JKO step: train ``s(tau, v)`` on the quadrature loss
    ``sum_k q_k mean(|s|^2 - 2 alpha div s)`` along the RK4 trajectory, then
    move particles to the end of it and lower ``log f`` by the
    log-determinants.
    """
    v = velocities.detach()
    n = v.shape[0]

    def loss(_it: int) -> Tensor:
        traj = integrate_trajectory(v, field, 1.0, operator="heat", quadrature=quadrature)
        assert traj.kinetic is not None and traj.logdet is not None
        return traj.kinetic / n - 2 * alpha * traj.logdet.mean()

    history = _fit(field, loss, schedule, weight_decay=weight_decay)
    with torch.no_grad():
        traj = integrate_trajectory(v, field, 1.0, operator="heat", quadrature=quadrature)
    assert traj.logdet is not None
    return HeatStepResult(field, traj.final, logf - traj.logdet, history, traj.logdet)


@dataclass(frozen=True)
class OptimalityResiduals:
    det: float
    "Mean distance from the implicit-score condition ``T - v = -alpha grad log f1(T)``."
    tr: float
    "Mean distance from the stationarity condition of the one-step implicit objective."


def optimality_residuals(before: Tensor, after: Tensor, alpha: float) -> OptimalityResiduals:
    """
    Evaluate both optimality conditions for a particle map on Gaussian data.

    The post-step density is the Gaussian with the moments of ``after`` and the
    map's Jacobian is its per-axis spread ratio, so both conditions are in
    closed form.
    """
    before = before.detach().to(torch.float64)
    after = after.detach().to(torch.float64)
    var1 = after.var(0, correction=0)
    score = -(after - after.mean(0)) / var1
    slope = torch.sqrt(var1 / before.var(0, correction=0))
    disp = after - before
    det = (disp + alpha * score).norm(dim=-1).mean()
    tr = (disp + alpha * score / slope).norm(dim=-1).mean()
    return OptimalityResiduals(float(det), float(tr))


@dataclass(frozen=True)
class HeatLabRow:
    "One line of the heat-lab comparison table."

    method: str
    alpha: float
    sigma0: float
    post_std: float
    oracle_std: float
    "Exact JKO answer."
    exact_std: float
    "Exact heat-equation answer."
    linear_std: float
    "Closed-form answer of the method under a linear map."
    opt_det: float
    opt_tr: float


_LINEAR_SLOPES: dict[Method, Callable[[float], float]] = {
    "esm": esm_linear_slope,
    "ism": ism_linear_slope,
    "jko": jko_linear_slope,
}


def run_heatlab(
    config: HeatLabConfig, seed: int, *, dtype: torch.dtype | None = None
) -> list[HeatLabRow]:
    """
    Run every configured method at every stiffness ratio from one-dimensional
    Gaussian data, each from the same particles.  A method that fails is
    reported with NaN results.
    """
    rows: list[HeatLabRow] = []
    sigma0 = config.sigma0
    wd = config.weight_decay
    for i, alpha in enumerate(config.alphas):
        state = GaussianState.isotropic(sigma0, alpha)
        v, logf = state.sample(config.particles, cell_seed(seed, i, 0), dtype=dtype)
        for j, method in enumerate(config.methods):
            field = heat_field(
                1, config.layers, config.width, cell_seed(seed, i, j + 1), dtype=v.dtype
            )
            post = math.nan
            res = OptimalityResiduals(math.nan, math.nan)
            try:
                match method:
                    case "esm":
                        out = esm_step(v, logf, field, alpha, config.schedule, weight_decay=wd)
                    case "ism" if config.ism_solver == "direct":
                        out = ism_step(v, logf, field, alpha, config.schedule, weight_decay=wd)
                    case "ism":
                        out = ism_fixed_point_step(v, logf, field, alpha, config)
                    case "jko":
                        out = heat_jko_step(
                            v,
                            logf,
                            field,
                            alpha,
                            config.quadrature,
                            config.schedule,
                            weight_decay=wd,
                        )
                post = float(out.velocities.std(correction=0))
                res = optimality_residuals(v, out.velocities, alpha)
            except SolverError as e:
                _log.warning("heat lab %s at alpha=%g failed: %s", method, alpha, e)

            rows.append(
                HeatLabRow(
                    method=method,
                    alpha=alpha,
                    sigma0=sigma0,
                    post_std=post,
                    oracle_std=gaussian_jko_std_oracle(sigma0, alpha),
                    exact_std=exact_heat_std(sigma0, alpha),
                    linear_std=_LINEAR_SLOPES[method](alpha / sigma0**2) * sigma0,
                    opt_det=res.det,
                    opt_tr=res.tr,
                )
            )
            _log.info(
                "heat lab %s alpha=%g: std %.5g (JKO %.5g)",
                method,
                alpha,
                post,
                rows[-1].oracle_std,
            )
    return rows
