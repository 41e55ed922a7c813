"""
Run configuration: process-wide numeric settings and the run file schema.

Run files are TOML (dotted keys or one level of tables) or JSON; they are
validated into a :class:`RunConfig` before anything is computed.
"""

from __future__ import annotations

import json
import logging
import tomllib
from os import PathLike
from pathlib import Path
from typing import Annotated, Any, Literal, Self, TypeAlias

import numpy as np
import torch
from numpy.typing import NDArray
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from .errors import ConfigError

__all__ = [
    "configure",
    "default_dtype",
    "Precision",
    "ConstantProfile",
    "HarmonicProfile",
    "PiecewiseProfile",
    "LayerProfile",
    "Profile",
    "GaussianComponent",
    "MixtureLaw",
    "MaxwellianLaw",
    "HalfSpaceLaw",
    "VelocityLaw",
    "InitialCondition",
    "DomainConfig",
    "BroydenConfig",
    "ScheduleConfig",
    "CollisionConfig",
    "HeatLabConfig",
    "EulerStateConfig",
    "RiemannConfig",
    "OutputConfig",
    "RunConfig",
    "load_config",
]

_log = logging.getLogger(__name__)

Precision: TypeAlias = Literal["f32", "f64"]
"Floating-point precision of particle and field tensors."

_DTYPES: dict[Precision, torch.dtype] = {"f32": torch.float32, "f64": torch.float64}
_dtype: torch.dtype = torch.float64


def configure(precision: Precision | None = None, threads: int | None = None):
    """
    Configure process-wide numeric settings.

    Args:
        precision:
            The precision of every tensor the solver creates.
        threads:
            The number of intra-op torch threads.  Runs that solve cells on
            a worker pool pin this to 1 so results do not depend on the pool
            size.
    """
    global _dtype

    if precision is not None:
        _dtype = _DTYPES[precision]
        _log.debug("using %s tensors", _dtype)
    if threads is not None:
        torch.set_num_threads(threads)


def default_dtype() -> torch.dtype:
    """
    Get the configured tensor dtype.
    """
    return _dtype


class ConfigModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ConstantProfile(ConfigModel):
    "A spatially constant value."

    kind: Literal["constant"] = "constant"
    value: float = 1.0

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.full(np.shape(x), self.value, dtype=np.float64)


class HarmonicProfile(ConfigModel):
    "``offset + amplitude * sin(wavenumber * pi * x)`` (or ``cos``)."

    kind: Literal["harmonic"] = "harmonic"
    offset: float
    amplitude: float
    wavenumber: float = 1.0
    shape: Literal["sin", "cos"] = "sin"

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        fn = np.sin if self.shape == "sin" else np.cos
        return self.offset + self.amplitude * fn(self.wavenumber * np.pi * np.asarray(x))


class PiecewiseProfile(ConfigModel):
    """
    Piecewise-constant values.  ``values[k]`` applies between
    ``breakpoints[k-1]`` (exclusive) and ``breakpoints[k]`` (inclusive).
    """

    kind: Literal["piecewise"] = "piecewise"
    breakpoints: list[float]
    values: list[float]

    @model_validator(mode="after")
    def _check_shape(self) -> Self:
        if len(self.values) != len(self.breakpoints) + 1:
            raise ValueError("piecewise profile needs one more value than breakpoints")
        if any(b >= a for a, b in zip(self.breakpoints[1:], self.breakpoints)):
            raise ValueError("breakpoints must be strictly increasing")
        return self

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        idx = np.searchsorted(np.asarray(self.breakpoints), np.asarray(x), side="left")
        return np.asarray(self.values, dtype=np.float64)[idx]


class LayerProfile(ConfigModel):
    """
    Smooth transition layer used for the mixing-regime Knudsen number:
    ``base + (tanh(5 - 10x) + tanh(5 + 10x)) / 2`` up to ``cutoff`` and
    ``base`` beyond it.
    """

    kind: Literal["layer"] = "layer"
    base: PositiveFloat = 1e-3
    cutoff: float = 0.3

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=np.float64)
        bump = 0.5 * (np.tanh(5 - 10 * x) + np.tanh(5 + 10 * x))
        return np.where(x <= self.cutoff, self.base + bump, self.base)


Profile: TypeAlias = Annotated[
    ConstantProfile | HarmonicProfile | PiecewiseProfile | LayerProfile,
    Field(discriminator="kind"),
]
"A scalar function of the spatial coordinate."


class GaussianComponent(ConfigModel):
    weight: PositiveFloat
    mean: list[float]
    variance: PositiveFloat | list[PositiveFloat] = 1.0
    "Isotropic variance, or one variance per axis."

    def variances(self) -> NDArray[np.float64]:
        if isinstance(self.variance, list):
            return np.asarray(self.variance, dtype=np.float64)
        return np.full(len(self.mean), self.variance, dtype=np.float64)


class MixtureLaw(ConfigModel):
    "Gaussian mixture velocity law, identical at every position."

    kind: Literal["mixture"] = "mixture"
    components: list[GaussianComponent] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_components(self) -> Self:
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {total}, not 1")
        dims = {len(c.mean) for c in self.components}
        if len(dims) != 1:
            raise ValueError("mixture components have different dimensions")
        for c in self.components:
            if isinstance(c.variance, list) and len(c.variance) != len(c.mean):
                raise ValueError("per-axis variance does not match the mean dimension")
        return self

    @property
    def dims(self) -> int:
        return len(self.components[0].mean)

    @property
    def mass(self) -> float:
        return 1.0


class MaxwellianLaw(ConfigModel):
    "Local Maxwellian velocity law whose temperature may depend on position."

    kind: Literal["maxwellian"] = "maxwellian"
    mean: list[float] = Field(min_length=1)
    temperature: Profile = ConstantProfile()

    @property
    def dims(self) -> int:
        return len(self.mean)

    @property
    def mass(self) -> float:
        return 1.0


class HalfSpaceLaw(ConfigModel):
    """
    Two half-Maxwellians centred at zero: ``left_density * M(left_temperature)``
    for ``v_x <= 0`` and ``right_density * M(right_temperature)`` for ``v_x > 0``.
    """

    kind: Literal["half_space"] = "half_space"
    dims: PositiveInt = 3
    left_density: PositiveFloat = 16 / 9
    left_temperature: PositiveFloat = 1.0
    right_density: PositiveFloat = 2 / 9
    right_temperature: PositiveFloat = 0.25

    @property
    def mass(self) -> float:
        return 0.5 * (self.left_density + self.right_density)


VelocityLaw: TypeAlias = Annotated[
    MixtureLaw | MaxwellianLaw | HalfSpaceLaw, Field(discriminator="kind")
]
"The velocity distribution at each position."


class InitialCondition(ConfigModel):
    """
    Initial datum ``f0(x, v) = density(x) * law(v; x)``.  Homogeneous runs
    evaluate a constant density.
    """

    particles: PositiveInt = 2000
    density: Profile = ConstantProfile()
    velocity: VelocityLaw

    @property
    def dims(self) -> int:
        return self.velocity.dims


class DomainConfig(ConfigModel):
    lower: float = -1.0
    upper: float = 1.0
    cells: PositiveInt = 50
    boundary: Literal["periodic", "reflecting"] = "periodic"

    @model_validator(mode="after")
    def _check_bounds(self) -> Self:
        if self.upper <= self.lower:
            raise ValueError("domain upper bound must exceed the lower bound")
        return self

    @property
    def length(self) -> float:
        return self.upper - self.lower


class BroydenConfig(ConfigModel):
    "Settings for the implicit midpoint fixed-point solve."

    beta: float = Field(default=0.5, gt=0, lt=1)
    "Backtracking factor for the Armijo line search."
    c: float = Field(default=1e-4, gt=0, lt=1)
    "Armijo sufficient-decrease constant."
    tol: PositiveFloat = 1e-6
    "Convergence tolerance on the fixed-point residual norm."
    max_iters: PositiveInt = 50
    max_backtracks: PositiveInt = 30
    dense_limit: int = Field(default=4096, ge=0)
    "Largest system size that keeps a dense inverse Jacobian."


class ScheduleConfig(ConfigModel):
    "Cosine annealing with warm restarts."

    lr_max: PositiveFloat = 1e-2
    lr_min: NonNegativeFloat = 1e-3
    restart_period: PositiveInt = 20
    iterations: PositiveInt = 100

    @model_validator(mode="after")
    def _check_rates(self) -> Self:
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min exceeds lr_max")
        return self


class CollisionConfig(ConfigModel):
    "One implicit collision step and the training of its velocity field."

    operator: Literal["landau", "dougherty", "dougherty_wgf"] = "landau"
    gamma: float = -3.0
    r_cut: PositiveFloat = 1e-8
    epsilon: PositiveFloat = 1.0
    "Knudsen number."
    dt: PositiveFloat = 0.01
    quadrature: int = Field(default=5, ge=1, le=10)
    "Number of interior Gauss-Legendre nodes."
    solver: Literal["rk4", "midpoint"] = "rk4"
    batch_size: int = Field(default=1280, ge=2)
    layers: int = Field(default=5, ge=2)
    width: PositiveInt = 32
    schedule: ScheduleConfig = ScheduleConfig()
    weight_decay: NonNegativeFloat = 1e-2
    broyden: BroydenConfig = BroydenConfig()
    warm_start: bool = True


class HeatLabConfig(ConfigModel):
    "Heat-equation comparison of explicit, one-step implicit and dynamic JKO steps."

    sigma0: PositiveFloat = 1.0
    alphas: list[PositiveFloat] = Field(default_factory=lambda: [0.01, 1.0, 100.0])
    particles: PositiveInt = 4000
    methods: list[Literal["esm", "ism", "jko"]] = Field(
        default_factory=lambda: ["esm", "ism", "jko"]
    )
    quadrature: int = Field(default=5, ge=1, le=10)
    layers: int = Field(default=3, ge=2)
    width: PositiveInt = 32
    schedule: ScheduleConfig = ScheduleConfig(
        lr_max=1e-2, lr_min=1e-4, restart_period=1000, iterations=1000
    )
    weight_decay: NonNegativeFloat = 0.0
    "AdamW weight decay for every heat-lab fit."
    ism_solver: Literal["fixed_point", "direct"] = "fixed_point"
    """
    How the one-step implicit method trains: alternating transport solves and
    refits until the field settles, or one direct minimization through the
    re-solved transport.
    """
    outer_iterations: PositiveInt = 8
    "Outer iterations of the one-step implicit fixed point."
    field_tol: PositiveFloat = 1e-3


class EulerStateConfig(ConfigModel):
    density: PositiveFloat
    velocity: float = 0.0
    temperature: PositiveFloat


class RiemannConfig(ConfigModel):
    "Exact Euler reference for a shock-tube run."

    left: EulerStateConfig = EulerStateConfig(density=1.0, temperature=1.0)
    right: EulerStateConfig = EulerStateConfig(density=0.125, temperature=0.25)
    membrane: float = 0.5
    dims: int = Field(default=3, ge=1)
    "Velocity dimension; fixes the gas exponent."
    time: PositiveFloat = 0.1
    lower: float = 0.0
    upper: float = 1.0
    points: PositiveInt = 200


class OutputConfig(ConfigModel):
    directory: Path = Path("runs/out")
    histogram_bins: PositiveInt = 64
    checkpoints: bool = True


class RunConfig(ConfigModel):
    """
    A complete, resolved experiment description.
    """

    kind: Literal["homogeneous", "inhomogeneous", "heatlab", "riemann"]
    seed: int = Field(default=0, ge=0, lt=2**64)
    threads: PositiveInt = 1
    "Size of the per-cell worker pool."
    precision: Precision = "f64"
    steps: int = Field(default=1, ge=0)
    snapshots: list[NonNegativeFloat] = Field(default_factory=list)
    "Times at which profiles, histograms and checkpoints are written."
    diagnostics: bool = False
    "Record training curves."
    initial: InitialCondition | None = None
    collision: CollisionConfig = CollisionConfig()
    domain: DomainConfig | None = None
    knudsen: Profile | None = None
    "Spatially varying Knudsen number, evaluated at cell centres."
    heatlab: HeatLabConfig | None = None
    riemann: RiemannConfig | None = None
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _check_kind(self) -> Self:
        if self.kind in ("homogeneous", "inhomogeneous"):
            if self.initial is None:
                raise ValueError(f"{self.kind} runs need an initial condition")
            if self.initial.dims not in (2, 3):
                raise ValueError("collision runs need 2 or 3 velocity dimensions")
        if self.kind == "inhomogeneous" and self.domain is None:
            raise ValueError("inhomogeneous runs need a domain")
        if self.kind == "homogeneous" and self.domain is not None:
            raise ValueError("homogeneous runs take no domain")
        if self.kind == "heatlab" and self.heatlab is None:
            raise ValueError("heatlab runs need a heatlab section")
        if self.kind == "riemann" and self.riemann is None:
            raise ValueError("riemann runs need a riemann section")
        return self


def load_config(path: PathLike[str] | str, **overrides: Any) -> RunConfig:
    """
    Load and validate a run configuration.

    Args:
        path:
            A TOML or JSON run file.  A ``run_metadata.json`` written by an
            earlier run is also accepted; its resolved configuration is reused.
        overrides:
            Top-level fields to replace (``None`` values are ignored).

    Raises:
        ConfigError: if the file is unreadable or fails validation.
    """
    path = Path(path)
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text())
        else:
            with path.open("rb") as f:
                data = tomllib.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError([("", f"cannot read {path}: {e}")]) from e

    if isinstance(data, dict) and "run_id" in data and "config" in data:
        _log.info("re-using the configuration recorded in %s", path)
        data = data["config"]

    return validate_config(data, **overrides)


def validate_config(data: Any, **overrides: Any) -> RunConfig:
    """
    Validate a configuration mapping, applying top-level overrides.
    """
    if isinstance(data, dict):
        data = dict(data)
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "output":
                data["output"] = dict(data.get("output", {}), directory=str(value))
            else:
                data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(
            [(".".join(str(p) for p in err["loc"]), err["msg"]) for err in e.errors()]
        ) from e
