"""
Closed-form collision ingredients: the Landau matrix kernel, its row
divergence, Maxwellians and the distance of a particle set to its Maxwellian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import DomainError

__all__ = [
    "KernelParams",
    "landau_A",
    "landau_A_div",
    "log_maxwellian",
    "maxwellian",
    "l1_to_maxwellian",
]


@dataclass(frozen=True, slots=True)
class KernelParams:
    """
    Parameters of the Landau kernel ``A(z) = |z|^(gamma+2) (I - z z^T / |z|^2)``.
    """

    gamma: float = -3.0
    "Interaction exponent (-3 is Coulomb)."
    d_v: int = 2
    r_cut: float = 1e-8
    "Separations at or below this radius contribute nothing."

    def __post_init__(self):
        if self.r_cut <= 0:
            raise ValueError("r_cut must be positive")
        if self.d_v not in (2, 3):
            raise ValueError(f"unsupported velocity dimension {self.d_v}")


def _radial(z: Tensor, params: KernelParams) -> tuple[Tensor, Tensor, Tensor]:
    # squared norm, masked squared norm (1 inside the cutoff) and the mask
    r2 = (z * z).sum(-1)
    mask = r2 > params.r_cut**2
    r2s = torch.where(mask, r2, torch.ones_like(r2))
    return r2, r2s, mask


def landau_A(z: Tensor, params: KernelParams) -> Tensor:
    """
    Evaluate the Landau kernel at separations ``z`` of shape ``(..., d_v)``.

    Returns:
        Matrices of shape ``(..., d_v, d_v)``; zero where ``|z| <= r_cut``.
    """
    _r2, r2s, mask = _radial(z, params)
    scale = torch.where(mask, r2s ** ((params.gamma + 2) / 2), torch.zeros_like(r2s))
    eye = torch.eye(z.shape[-1], dtype=z.dtype, device=z.device)
    proj = eye - z.unsqueeze(-1) * z.unsqueeze(-2) / r2s[..., None, None]
    return scale[..., None, None] * proj


def landau_A_div(z: Tensor, params: KernelParams) -> Tensor:
    """
    Row-wise divergence of :func:`landau_A`, ``-(d_v - 1) |z|^gamma z``.
    """
    _r2, r2s, mask = _radial(z, params)
    scale = torch.where(mask, r2s ** (params.gamma / 2), torch.zeros_like(r2s))
    return -(z.shape[-1] - 1) * scale.unsqueeze(-1) * z


def log_maxwellian(rho: float, u: Tensor, T: float, v: Tensor) -> Tensor:
    """
    Log of the Maxwellian ``rho (2 pi T)^(-d/2) exp(-|v - u|^2 / 2T)``.

    Raises:
        DomainError: if ``T`` or ``rho`` is not positive.
    """
    if not T > 0:
        raise DomainError(f"Maxwellian needs a positive temperature, got {T}")
    if not rho > 0:
        raise DomainError(f"Maxwellian needs a positive density, got {rho}")
    d = v.shape[-1]
    u = torch.as_tensor(u, dtype=v.dtype, device=v.device)
    dev = ((v - u) ** 2).sum(-1)
    return math.log(rho) - 0.5 * d * math.log(2 * math.pi * T) - dev / (2 * T)


def maxwellian(rho: float, u: Tensor, T: float, v: Tensor) -> Tensor:
    "Evaluate the Maxwellian with density ``rho``, mean ``u`` and temperature ``T``."
    return torch.exp(log_maxwellian(rho, u, T, v))


def l1_to_maxwellian(velocities: Tensor, logf: Tensor, weight: float) -> float:
    """
    Mean absolute difference between the particle densities and the
    Maxwellian sharing the set's own moments.

    Args:
        velocities: particle velocities of one cell.
        logf: the particles' log-densities.
        weight: the cell particle weight (mass per particle per unit volume).
    """
    n = velocities.shape[0]
    if n == 0:
        raise DomainError("distance to equilibrium of an empty cell")
    u = velocities.mean(0)
    T = float(((velocities - u) ** 2).sum(-1).mean()) / velocities.shape[1]
    m = maxwellian(weight * n, u, T, velocities)
    return float((torch.exp(logf) - m).abs().mean())
