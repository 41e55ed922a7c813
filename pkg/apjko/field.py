"""
The trainable velocity field ``s(tau, v)`` and the particle interaction terms
built from it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from itertools import pairwise
from os import PathLike
from pathlib import Path
from typing import NamedTuple

import torch
import zstandard
from torch import Tensor, nn

from .config import default_dtype
from .errors import DegenerateSpreadError
from .kernels import KernelParams

__all__ = [
    "VelocityField",
    "FieldGradient",
    "init_field",
    "field_gradient",
    "ProjectedField",
    "dougherty_project",
    "project_or_center",
    "dougherty_logdet_integrand",
    "LandauPairSums",
    "landau_pair_sums",
    "landau_drift",
    "landau_logdet_integrand",
    "save_checkpoint",
    "load_checkpoint",
]

_log = logging.getLogger(__name__)

# upper bound on pair-tensor entries materialized at once
_PAIR_BUDGET = 2**22


class VelocityField(nn.Module):
    """
    Multilayer perceptron ``s(tau, v)`` with SiLU activations.  The input is
    the concatenation ``(tau, v)``; the output has the dimension of ``v``.

    Args:
        d_v: the velocity dimension.
        layers: the number of affine layers.
        width: the hidden width.
    """

    d_v: int
    depth: int
    width: int
    layers: nn.ModuleList

    def __init__(
        self, d_v: int, layers: int = 5, width: int = 32, *, dtype: torch.dtype | None = None
    ):
        super().__init__()
        if layers < 2 or width < 1:
            raise ValueError("a velocity field needs at least two layers and one hidden unit")
        self.d_v = d_v
        self.depth = layers
        self.width = width
        dims = [d_v + 1] + [width] * (layers - 1) + [d_v]
        dtype = dtype or default_dtype()
        self.layers = nn.ModuleList(nn.Linear(i, o, dtype=dtype) for i, o in pairwise(dims))

    def _input(self, tau: float | Tensor, v: Tensor) -> Tensor:
        t = torch.as_tensor(tau, dtype=v.dtype, device=v.device)
        t = t.expand(v.shape[:-1]).unsqueeze(-1)
        return torch.cat([t, v], dim=-1)

    def forward(self, tau: float | Tensor, v: Tensor) -> Tensor:
        h = self._input(tau, v)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < last:
                h = nn.functional.silu(h)
        return h

    def value_and_jacobian(self, tau: float | Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
        """
        Evaluate the field and its velocity Jacobian at a batch of velocities.

        The Jacobian is propagated forward through the layers along the
        ``d_v`` velocity directions, so it stays differentiable with respect
        to the parameters.

        Returns:
            ``s`` with shape ``(N, d_v)`` and ``J`` with shape ``(N, d_v, d_v)``,
            ``J[i, a, b] = ds_a / dv_b``.
        """
        h = self._input(tau, v)
        n, d = v.shape
        eye = torch.eye(d, dtype=v.dtype, device=v.device)
        tangent = torch.cat([torch.zeros(d, 1, dtype=v.dtype, device=v.device), eye], dim=1)
        dh = tangent.expand(n, d, d + 1)

        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            dh = dh @ layer.weight.T
            if i < last:
                sig = torch.sigmoid(h)
                dh = dh * (sig * (1 + h * (1 - sig))).unsqueeze(1)
                h = h * sig

        return h, dh.transpose(1, 2)

    def divergence(self, tau: float | Tensor, v: Tensor) -> Tensor:
        _s, jac = self.value_and_jacobian(tau, v)
        return jac.diagonal(dim1=-2, dim2=-1).sum(-1)

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def flatten(self) -> Tensor:
        "Parameters as one vector, ordered ``W_1, b_1, ..., W_L, b_L`` (row-major)."
        parts: list[Tensor] = []
        for layer in self.layers:
            parts.append(layer.weight.detach().reshape(-1))
            parts.append(layer.bias.detach().reshape(-1))
        return torch.cat(parts)

    @torch.no_grad()
    def load_flat(self, flat: Tensor):
        "Load parameters from a vector produced by :meth:`flatten`."
        if flat.numel() != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.numel()}")
        pos = 0
        for layer in self.layers:
            for p in (layer.weight, layer.bias):
                k = p.numel()
                p.copy_(flat[pos : pos + k].reshape(p.shape))
                pos += k


def init_field(
    d_v: int,
    layers: int = 5,
    width: int = 32,
    seed: int = 0,
    *,
    dtype: torch.dtype | None = None,
) -> VelocityField:
    """
    Create a velocity field with zero biases and weights drawn from a normal
    distribution of variance ``1/fan_in`` truncated at two standard deviations.
    """
    field = VelocityField(d_v, layers, width, dtype=dtype)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in field.layers:
            std = layer.in_features**-0.5
            nn.init.trunc_normal_(layer.weight, std=std, a=-2 * std, b=2 * std, generator=gen)
            nn.init.zeros_(layer.bias)
    return field


@dataclass(frozen=True)
class FieldGradient:
    "Gradient of a scalar with respect to each field parameter."

    tensors: list[Tensor]

    def flatten(self) -> Tensor:
        return torch.cat([t.reshape(-1) for t in self.tensors])


def field_gradient(field: VelocityField, loss: Tensor) -> FieldGradient:
    """
    Differentiate a scalar loss with respect to the field parameters.
    """
    params = list(field.parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return FieldGradient(
        [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    )


class ProjectedField(NamedTuple):
    "A field projected onto momentum- and energy-preserving directions."

    values: Tensor
    mean_shift: Tensor
    energy_coeff: Tensor


def dougherty_project(s: Tensor, z: Tensor) -> ProjectedField:
    """
    Remove the mean and the dilation component of particle field values.

    ``s_perp = s - mean(s) - c (z - mean(z))`` with ``c`` the least-squares
    dilation coefficient, so that ``sum(s_perp) = 0`` and
    ``sum(s_perp . (z - mean(z))) = 0``.

    Raises:
        DegenerateSpreadError: if fewer than two particles or all velocities coincide.
    """
    if z.shape[0] < 2:
        raise DegenerateSpreadError("energy projection needs at least two particles")
    dz = z - z.mean(0)
    spread = (dz * dz).sum()
    if not float(spread) > 0:
        raise DegenerateSpreadError("particles have zero velocity spread")
    shift = s.mean(0)
    c = (s * dz).sum() / spread
    return ProjectedField(s - shift - c * dz, shift, c)


def project_or_center(s: Tensor, z: Tensor) -> ProjectedField:
    """
    :func:`dougherty_project`, falling back to mean removal alone when the
    spread is degenerate.
    """
    try:
        return dougherty_project(s, z)
    except DegenerateSpreadError as e:
        _log.warning("%s; projecting out the mean only", e)
        shift = s.mean(0)
        return ProjectedField(s - shift, shift, torch.zeros((), dtype=s.dtype))


def dougherty_logdet_integrand(divergence: Tensor, energy_coeff: Tensor, d_v: int) -> Tensor:
    "Log-determinant rate of the projected flow, ``div s - d_v c``."
    return divergence - d_v * energy_coeff


@dataclass(frozen=True)
class LandauPairSums:
    """
    Pairwise Landau sums over a particle batch, without the ``w~`` factors.
    """

    drift: Tensor
    "``sum_j A(z_i - z_j)(s_i - s_j)`` per particle."
    quadratic: Tensor
    "``sum_{i,j} (s_i - s_j)^T A(z_i - z_j) (s_i - s_j)`` (ordered pairs)."
    logdet: Tensor | None
    "``sum_j tr(A J_i) + div A . (s_i - s_j)`` per particle, when Jacobians were given."


def landau_pair_sums(
    z: Tensor, s: Tensor, params: KernelParams, jac: Tensor | None = None
) -> LandauPairSums:
    """
    Accumulate the Landau interaction sums over all ordered pairs of a batch.

    Coincident pairs (including ``i == j``) fall inside the kernel cutoff and
    contribute nothing.  Rows are processed in fixed-size chunks to bound
    memory; the chunking does not depend on thread count.
    """
    n, d = z.shape
    chunk = max(1, _PAIR_BUDGET // max(1, n * d))
    gamma = params.gamma

    drifts: list[Tensor] = []
    logdets: list[Tensor] = []
    quad = z.new_zeros(())
    for start in range(0, n, chunk):
        rows = slice(start, min(n, start + chunk))
        dz = z[rows, None, :] - z[None, :, :]
        ds = s[rows, None, :] - s[None, :, :]
        r2 = (dz * dz).sum(-1)
        mask = r2 > params.r_cut**2
        r2s = torch.where(mask, r2, torch.ones_like(r2))
        a = torch.where(mask, r2s ** ((gamma + 2) / 2), torch.zeros_like(r2s))
        zs = (dz * ds).sum(-1)

        a_ds = a.unsqueeze(-1) * (ds - dz * (zs / r2s).unsqueeze(-1))
        drifts.append(a_ds.sum(1))
        quad = quad + (ds * a_ds).sum()

        if jac is not None:
            jr = jac[rows]
            tr = jr.diagonal(dim1=-2, dim2=-1).sum(-1)
            zjz = (dz * torch.einsum("ikl,ijl->ijk", jr, dz)).sum(-1)
            tr_aj = a * (tr.unsqueeze(1) - zjz / r2s)
            div_ds = -(d - 1) * a * zs / r2s
            logdets.append((tr_aj + div_ds).sum(1))

    return LandauPairSums(
        drift=torch.cat(drifts),
        quadratic=quad,
        logdet=torch.cat(logdets) if jac is not None else None,
    )


def landau_drift(z: Tensor, s: Tensor, w_tilde: float, params: KernelParams) -> Tensor:
    "Particle velocities ``w~ sum_j A(z_i - z_j)(s_i - s_j)`` of the Landau flow."
    return w_tilde * landau_pair_sums(z, s, params).drift


def landau_logdet_integrand(
    z: Tensor, s: Tensor, jac: Tensor, w_tilde: float, params: KernelParams
) -> Tensor:
    "Log-determinant rate of the Landau flow at each particle."
    logdet = landau_pair_sums(z, s, params, jac).logdet
    assert logdet is not None
    return w_tilde * logdet


def save_checkpoint(field: VelocityField, path: PathLike[str] | str):
    """
    Write field parameters as a zstandard frame: a one-line JSON header with
    the architecture, then the float64 parameter vector.
    """
    header = {"d_v": field.d_v, "layers": field.depth, "width": field.width, "dtype": "float64"}
    flat = field.flatten().to(torch.float64).cpu().numpy()
    payload = json.dumps(header).encode() + b"\n" + flat.tobytes()
    Path(path).write_bytes(zstandard.ZstdCompressor(level=10).compress(payload))


def load_checkpoint(
    path: PathLike[str] | str, *, dtype: torch.dtype | None = None
) -> VelocityField:
    "Read a field written by :func:`save_checkpoint`."
    payload = zstandard.ZstdDecompressor().decompress(Path(path).read_bytes())
    head, _sep, body = payload.partition(b"\n")
    header = json.loads(head)
    field = VelocityField(header["d_v"], header["layers"], header["width"], dtype=dtype)
    flat = torch.frombuffer(bytearray(body), dtype=torch.float64)
    field.load_flat(flat.to(field.layers[0].weight.dtype))
    return field
