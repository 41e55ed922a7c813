"""
Inner-time (``tau`` in ``[0, 1]``) integration of particle trajectories.

A collision step advances particles along ``dz/dtau = rhs(tau, z)`` over the
Gauss-Legendre grid augmented with both endpoints, taking one integrator step
per subinterval.  Field values, divergences and log-determinant rates are
evaluated once at each interior node and accumulated by quadrature.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal, TypeAlias

import numpy as np
import torch
from torch import Tensor

from .config import BroydenConfig
from .errors import ImplicitSolverError
from .field import (
    VelocityField,
    dougherty_logdet_integrand,
    landau_drift,
    landau_pair_sums,
    project_or_center,
)
from .kernels import KernelParams

__all__ = [
    "Operator",
    "Solver",
    "Drift",
    "QuadratureRule",
    "InnerTrajectory",
    "gauss_legendre",
    "rk4_advance",
    "broyden_solve",
    "implicit_midpoint_step",
    "implicit_midpoint_jfb",
    "make_drift",
    "integrate_trajectory",
]

_log = logging.getLogger(__name__)

Operator: TypeAlias = Literal["landau", "dougherty", "dougherty_wgf", "heat"]
"""
The flow a velocity field generates: the Landau pairwise drift, the projected
Dougherty field, or the field itself (Dougherty gradient flow and heat lab).
"""
Solver: TypeAlias = Literal["rk4", "midpoint"]
Drift: TypeAlias = Callable[[float, Tensor], Tensor]


@dataclass(frozen=True)
class QuadratureRule:
    "Gauss-Legendre rule on ``[0, 1]``."

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)

    @property
    def grid(self) -> np.ndarray:
        "The nodes with ``0`` and ``1`` added."
        return np.concatenate([[0.0], self.nodes, [1.0]])


def gauss_legendre(K: int) -> QuadratureRule:
    """
    The ``K``-point Gauss-Legendre rule mapped to ``[0, 1]``.

    Raises:
        ValueError: if ``K`` is outside ``1..10``.
    """
    if not 1 <= K <= 10:
        raise ValueError(f"unsupported quadrature order {K} (must be 1-10)")
    x, w = np.polynomial.legendre.leggauss(K)
    return QuadratureRule(nodes=(x + 1) / 2, weights=w / 2)


def rk4_advance(z: Tensor, rhs: Drift, tau_a: float, tau_b: float) -> Tensor:
    "One classical Runge-Kutta step from ``tau_a`` to ``tau_b``."
    h = tau_b - tau_a
    k1 = rhs(tau_a, z)
    k2 = rhs(tau_a + h / 2, z + (h / 2) * k1)
    k3 = rhs(tau_a + h / 2, z + (h / 2) * k2)
    k4 = rhs(tau_b, z + h * k3)
    return z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


class _InverseJacobian:
    """
    Broyden approximation of an inverse Jacobian, starting from the identity.
    Small systems keep a dense matrix; larger ones keep the rank-one updates.
    """

    def __init__(self, size: int, dense: bool, like: Tensor):
        self.size = size
        self.dense = dense
        self.like = like
        self.reset()

    def reset(self):
        self.fresh = True
        self.matrix: Tensor | None = None
        if self.dense:
            self.matrix = torch.eye(self.size, dtype=self.like.dtype, device=self.like.device)
        self.us: list[Tensor] = []
        self.vs: list[Tensor] = []

    def apply(self, x: Tensor) -> Tensor:
        if self.matrix is not None:
            return self.matrix @ x
        out = x.clone()
        for u, v in zip(self.us, self.vs):
            out += u * (v @ x)
        return out

    def apply_t(self, x: Tensor) -> Tensor:
        if self.matrix is not None:
            return self.matrix.T @ x
        out = x.clone()
        for u, v in zip(self.us, self.vs):
            out += v * (u @ x)
        return out

    def update(self, dx: Tensor, dr: Tensor):
        h_dr = self.apply(dr)
        denom = dx @ h_dr
        if abs(float(denom)) <= torch.finfo(dx.dtype).tiny:
            return
        u = (dx - h_dr) / denom
        v = self.apply_t(dx)
        if self.matrix is not None:
            self.matrix += torch.outer(u, v)
        else:
            self.us.append(u)
            self.vs.append(v)
        self.fresh = False


def broyden_solve(
    residual: Callable[[Tensor], Tensor], x0: Tensor, cfg: BroydenConfig
) -> tuple[Tensor, int]:
    """
    Solve ``residual(x) = 0`` for a flat vector ``x`` by Broyden's method with
    Armijo backtracking on ``phi = |residual|^2``.

    Returns:
        The solution and the number of Broyden iterations taken.

    Raises:
        ImplicitSolverError: if the residual norm is still above ``cfg.tol``
            after ``cfg.max_iters`` iterations, or if the line search fails
            with a freshly reset inverse Jacobian.
    """
    x = x0
    r = residual(x)
    phi = float(r @ r)
    hinv = _InverseJacobian(x.numel(), x.numel() <= cfg.dense_limit, x)

    it = 0
    while phi > cfg.tol**2:
        if it >= cfg.max_iters:
            raise ImplicitSolverError(phi**0.5, it)
        it += 1

        step = -hinv.apply(r)
        eta = 1.0
        accepted = False
        x_new, r_new, phi_new = x, r, phi
        for _ in range(cfg.max_backtracks):
            x_new = x + eta * step
            r_new = residual(x_new)
            phi_new = float(r_new @ r_new)
            if phi_new <= (1 - 2 * cfg.c * eta) * phi:
                accepted = True
                break
            eta *= cfg.beta

        if not accepted:
            if hinv.fresh:
                # no descent along -R from the identity either
                raise ImplicitSolverError(phi**0.5, it)
            _log.debug("line search failed at iteration %d, restarting Broyden", it)
            hinv.reset()
            continue

        hinv.update(x_new - x, r_new - r)
        x, r, phi = x_new, r_new, phi_new

    return x, it


def implicit_midpoint_step(
    z_k: Tensor, rhs: Drift, tau_a: float, tau_b: float, cfg: BroydenConfig
) -> tuple[Tensor, int]:
    """
    One implicit midpoint step, solving ``z = G(z)`` with
    ``G(z) = z_k + h rhs(tau_mid, (z_k + z) / 2)`` from an RK4 predictor.

    The solve is not differentiated.

    Returns:
        The converged end state and the Broyden iteration count.
    """
    h = tau_b - tau_a
    tau_mid = tau_a + h / 2
    shape = z_k.shape

    with torch.no_grad():
        base = z_k.detach()

        def residual(flat: Tensor) -> Tensor:
            z = flat.reshape(shape)
            return (z - base - h * rhs(tau_mid, (base + z) / 2)).reshape(-1)

        guess = rk4_advance(base, rhs, tau_a, tau_b).reshape(-1)
        z, iters = broyden_solve(residual, guess, cfg)
    return z.reshape(shape), iters


def implicit_midpoint_jfb(
    z_k: Tensor, rhs: Drift, tau_a: float, tau_b: float, cfg: BroydenConfig
) -> tuple[Tensor, int]:
    """
    Implicit midpoint step with Jacobian-free backpropagation: the converged
    state is held constant and one application of ``G`` carries the
    dependence on ``z_k`` and on the field parameters.
    """
    z_star, iters = implicit_midpoint_step(z_k, rhs, tau_a, tau_b, cfg)
    h = tau_b - tau_a
    return z_k + h * rhs(tau_a + h / 2, (z_k + z_star) / 2), iters


def make_drift(
    operator: Operator,
    field: Callable[[float, Tensor], Tensor],
    w_tilde: float,
    kernel: KernelParams | None = None,
) -> Drift:
    "Particle velocity closure for an operator at fixed parameters."
    match operator:
        case "landau":
            if kernel is None:
                raise ValueError("the Landau drift needs kernel parameters")
            params = kernel
            return lambda tau, z: landau_drift(z, field(tau, z), w_tilde, params)
        case "dougherty":
            return lambda tau, z: project_or_center(field(tau, z), z).values
        case "dougherty_wgf" | "heat":
            return field


@dataclass
class InnerTrajectory:
    """
    Particle states along one collision step and the quantities accumulated at
    the interior quadrature nodes.
    """

    states: list[Tensor]
    "States at every augmented grid node; ``states[0]`` is the input."
    values: list[Tensor] = dataclasses.field(default_factory=list)
    "Field values (projected for Dougherty) at the interior nodes."
    divergence: list[Tensor] = dataclasses.field(default_factory=list)
    "Field divergences at the interior nodes."
    energy_coeffs: list[Tensor] = dataclasses.field(default_factory=list)
    "Dilation coefficients removed by the Dougherty projection."
    logdet: Tensor | None = None
    "Accumulated log-determinant per particle."
    kinetic: Tensor | None = None
    "Quadrature of the kinetic cost (without ``epsilon`` or weights)."
    iterations: list[int] = dataclasses.field(default_factory=list)
    "Broyden iterations per subinterval (implicit midpoint only)."

    @property
    def final(self) -> Tensor:
        return self.states[-1]


def integrate_trajectory(
    velocities: Tensor,
    field: VelocityField,
    w_tilde: float,
    *,
    operator: Operator,
    quadrature: int = 5,
    solver: Solver = "rk4",
    kernel: KernelParams | None = None,
    broyden: BroydenConfig | None = None,
) -> InnerTrajectory:
    """
    Advance particles through one collision step and accumulate the kinetic
    cost and the log-determinants.

    The kinetic cost per node is ``1/2 sum_{i,j} ds^T A ds`` for Landau,
    ``sum |s_perp|^2`` for projected Dougherty and ``sum |s|^2`` otherwise.
    Log-determinant rates for Landau carry the ``w~`` factor.

    Raises:
        ImplicitSolverError: if an implicit midpoint solve fails.
    """
    rule = gauss_legendre(quadrature)
    grid = rule.grid
    d_v = velocities.shape[1]
    if operator == "landau" and kernel is None:
        kernel = KernelParams(d_v=d_v)
    broyden = broyden or BroydenConfig()
    rhs = make_drift(operator, field, w_tilde, kernel)

    traj = InnerTrajectory(states=[velocities])
    logdet = velocities.new_zeros(velocities.shape[0])
    kinetic = velocities.new_zeros(())
    z = velocities
    for k in range(rule.order + 1):
        ta, tb = float(grid[k]), float(grid[k + 1])
        if solver == "rk4":
            z = rk4_advance(z, rhs, ta, tb)
        else:
            z, iters = implicit_midpoint_jfb(z, rhs, ta, tb, broyden)
            traj.iterations.append(iters)
        traj.states.append(z)
        if k == rule.order:
            break

        tau = float(rule.nodes[k])
        q = float(rule.weights[k])
        s, jac = field.value_and_jacobian(tau, z)
        div = jac.diagonal(dim1=-2, dim2=-1).sum(-1)
        match operator:
            case "landau":
                assert kernel is not None
                sums = landau_pair_sums(z, s, kernel, jac)
                assert sums.logdet is not None
                rate = w_tilde * sums.logdet
                cost = 0.5 * sums.quadratic
                values = s
            case "dougherty":
                proj = project_or_center(s, z)
                rate = dougherty_logdet_integrand(div, proj.energy_coeff, d_v)
                cost = (proj.values**2).sum()
                values = proj.values
                traj.energy_coeffs.append(proj.energy_coeff)
            case "dougherty_wgf" | "heat":
                rate = div
                cost = (s**2).sum()
                values = s

        traj.values.append(values)
        traj.divergence.append(div)
        logdet = logdet + q * rate
        kinetic = kinetic + q * cost

    traj.logdet = logdet
    traj.kinetic = kinetic
    return traj
