"""
Desk-scale configurations of the standard test problems.
"""

from __future__ import annotations

from collections.abc import Callable

from .config import (
    CollisionConfig,
    ConstantProfile,
    DomainConfig,
    GaussianComponent,
    HalfSpaceLaw,
    HarmonicProfile,
    HeatLabConfig,
    InitialCondition,
    LayerProfile,
    MaxwellianLaw,
    MixtureLaw,
    PiecewiseProfile,
    RiemannConfig,
    RunConfig,
    ScheduleConfig,
)

__all__ = ["PRESETS", "preset"]

_LANDAU_SCHEDULE = ScheduleConfig(lr_max=1e-2, lr_min=1e-3, restart_period=20, iterations=100)
_DOUGHERTY_SCHEDULE = ScheduleConfig(lr_max=1e-2, lr_min=1e-4, restart_period=50, iterations=200)


def _bimaxwellian_2d(particles: int) -> InitialCondition:
    # two unit-mass Gaussians of variance 1/2 centred at v_x = +-1
    return InitialCondition(
        particles=particles,
        velocity=MixtureLaw(
            components=[
                GaussianComponent(weight=0.5, mean=[1.0, 0.0], variance=0.5),
                GaussianComponent(weight=0.5, mean=[-1.0, 0.0], variance=0.5),
            ]
        ),
    )


def landau_bimaxwellian() -> RunConfig:
    return RunConfig(
        kind="homogeneous",
        steps=10,
        snapshots=[0.0, 0.01, 0.1],
        initial=_bimaxwellian_2d(2000),
        collision=CollisionConfig(
            operator="landau", epsilon=1.0, dt=0.01, batch_size=500, schedule=_LANDAU_SCHEDULE
        ),
    )


def dougherty_bimaxwellian() -> RunConfig:
    return RunConfig(
        kind="homogeneous",
        steps=10,
        snapshots=[0.0, 0.01, 0.1],
        initial=_bimaxwellian_2d(2000),
        collision=CollisionConfig(
            operator="dougherty", epsilon=1.0, dt=0.01, schedule=_DOUGHERTY_SCHEDULE
        ),
    )


def landau_discontinuous() -> RunConfig:
    return RunConfig(
        kind="homogeneous",
        steps=10,
        snapshots=[0.0, 0.01, 0.1],
        initial=InitialCondition(particles=2000, velocity=HalfSpaceLaw()),
        collision=CollisionConfig(
            operator="landau", epsilon=1.0, dt=0.01, batch_size=500, schedule=_LANDAU_SCHEDULE
        ),
    )


def inhomogeneous_periodic() -> RunConfig:
    return RunConfig(
        kind="inhomogeneous",
        steps=10,
        threads=4,
        snapshots=[0.0, 0.5, 1.0],
        initial=InitialCondition(
            particles=100_000,
            density=HarmonicProfile(offset=2 / 3, amplitude=1 / 3),
            velocity=MixtureLaw(
                components=[
                    GaussianComponent(weight=0.5, mean=[1.0, 0.0]),
                    GaussianComponent(weight=0.5, mean=[-1.0, 0.0]),
                ]
            ),
        ),
        domain=DomainConfig(lower=-1.0, upper=1.0, cells=50, boundary="periodic"),
        collision=CollisionConfig(
            operator="landau",
            epsilon=1.0,
            dt=0.1,
            batch_size=1500,
            schedule=ScheduleConfig(lr_max=0.02, lr_min=0.01, restart_period=10, iterations=40),
        ),
    )


def mixing_regime() -> RunConfig:
    return RunConfig(
        kind="inhomogeneous",
        steps=40,
        threads=4,
        snapshots=[0.0, 0.2, 0.4],
        initial=InitialCondition(
            particles=100_000,
            density=HarmonicProfile(offset=2 / 3, amplitude=1 / 3),
            velocity=MaxwellianLaw(
                mean=[0.2, 0.0],
                temperature=HarmonicProfile(offset=0.75, amplitude=0.25, shape="cos"),
            ),
        ),
        domain=DomainConfig(lower=-1.0, upper=1.0, cells=50, boundary="periodic"),
        knudsen=LayerProfile(base=1e-3, cutoff=0.3),
        collision=CollisionConfig(
            operator="landau",
            dt=0.01,
            batch_size=1500,
            schedule=ScheduleConfig(lr_max=1e-2, lr_min=1e-3, restart_period=10, iterations=40),
        ),
    )


def sod() -> RunConfig:
    return RunConfig(
        kind="inhomogeneous",
        steps=20,
        threads=4,
        snapshots=[0.0, 0.05, 0.1],
        initial=InitialCondition(
            particles=100_000,
            density=PiecewiseProfile(breakpoints=[0.5], values=[1.0, 0.125]),
            velocity=MaxwellianLaw(
                mean=[0.0, 0.0, 0.0],
                temperature=PiecewiseProfile(breakpoints=[0.5], values=[1.0, 0.25]),
            ),
        ),
        domain=DomainConfig(lower=0.0, upper=1.0, cells=100, boundary="reflecting"),
        collision=CollisionConfig(
            operator="landau",
            epsilon=1e-6,
            dt=0.005,
            batch_size=1500,
            schedule=ScheduleConfig(lr_max=0.01, lr_min=0.005, restart_period=10, iterations=40),
        ),
        riemann=RiemannConfig(),
    )


def heatlab() -> RunConfig:
    return RunConfig(kind="heatlab", heatlab=HeatLabConfig())


def riemann_sod() -> RunConfig:
    return RunConfig(kind="riemann", riemann=RiemannConfig())


def equilibrium() -> RunConfig:
    "A global Maxwellian; every diagnostic should stay constant."
    return RunConfig(
        kind="inhomogeneous",
        steps=5,
        initial=InitialCondition(
            particles=20_000,
            density=ConstantProfile(value=1.0),
            velocity=MaxwellianLaw(mean=[0.0, 0.0]),
        ),
        domain=DomainConfig(cells=10),
        collision=CollisionConfig(dt=0.1, batch_size=500, schedule=_LANDAU_SCHEDULE),
    )


PRESETS: dict[str, Callable[[], RunConfig]] = {
    "landau-bimaxwellian": landau_bimaxwellian,
    "dougherty-bimaxwellian": dougherty_bimaxwellian,
    "landau-discontinuous": landau_discontinuous,
    "inhomogeneous-periodic": inhomogeneous_periodic,
    "mixing-regime": mixing_regime,
    "sod": sod,
    "heatlab": heatlab,
    "riemann": riemann_sod,
    "equilibrium": equilibrium,
}


def preset(name: str) -> RunConfig:
    """
    Get a named preset configuration.

    Raises:
        KeyError: if there is no such preset.
    """
    return PRESETS[name]()
