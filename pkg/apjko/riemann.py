"""
Exact solution of the Riemann problem for the one-dimensional compressible
Euler equations, the fluid limit the kinetic solver is checked against.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import bisect

from .config import EulerStateConfig, RiemannConfig
from .errors import DomainError, VacuumError

__all__ = [
    "EulerState",
    "StarState",
    "WaveSpeeds",
    "RiemannProfile",
    "ProfileError",
    "gamma_gas",
    "pressure_function",
    "star_state",
    "bisection_star_pressure",
    "wave_speeds",
    "exact_riemann",
    "riemann_profile",
    "profile_error",
]

_log = logging.getLogger(__name__)


def gamma_gas(d_v: int) -> float:
    "Gas exponent ``(d_v + 2) / d_v`` of a monatomic gas with ``d_v`` velocity dimensions."
    if d_v < 1:
        raise ValueError("velocity dimension must be positive")
    return (d_v + 2) / d_v


@dataclass(frozen=True, slots=True)
class EulerState:
    "A constant fluid state in primitive variables."

    rho: float
    u: float
    p: float

    def __post_init__(self):
        if not (self.rho > 0 and self.p > 0):
            raise DomainError(f"fluid state needs positive density and pressure: {self}")

    @classmethod
    def from_temperature(cls, rho: float, u: float, T: float) -> EulerState:
        return cls(rho, u, rho * T)

    @classmethod
    def from_config(cls, cfg: EulerStateConfig) -> EulerState:
        return cls.from_temperature(cfg.density, cfg.velocity, cfg.temperature)

    @property
    def T(self) -> float:
        return self.p / self.rho

    def sound_speed(self, gamma: float) -> float:
        return math.sqrt(gamma * self.p / self.rho)


@dataclass(frozen=True, slots=True)
class StarState:
    "Pressure and velocity between the two nonlinear waves."

    p: float
    u: float
    iterations: int


class WaveSpeeds(NamedTuple):
    """
    Characteristic speeds bounding each wave.  A shock has equal head and tail.
    """

    left_head: float
    left_tail: float
    contact: float
    right_tail: float
    right_head: float


def _wave_function(p: float, state: EulerState, gamma: float) -> tuple[float, float]:
    # pressure-jump function of one wave and its derivative
    if p > state.p:
        a = 2 / ((gamma + 1) * state.rho)
        b = (gamma - 1) / (gamma + 1) * state.p
        root = math.sqrt(a / (p + b))
        return (p - state.p) * root, root * (1 - (p - state.p) / (2 * (b + p)))
    c = state.sound_speed(gamma)
    ratio = p / state.p
    f = 2 * c / (gamma - 1) * (ratio ** ((gamma - 1) / (2 * gamma)) - 1)
    df = ratio ** (-(gamma + 1) / (2 * gamma)) / (state.rho * c)
    return f, df


def pressure_function(p: float, left: EulerState, right: EulerState, gamma: float) -> float:
    "The star-pressure equation; its root is the star pressure."
    return _wave_function(p, left, gamma)[0] + _wave_function(p, right, gamma)[0] + right.u - left.u


def _check_vacuum(left: EulerState, right: EulerState, gamma: float):
    gap = 2 / (gamma - 1) * (left.sound_speed(gamma) + right.sound_speed(gamma))
    if gap <= right.u - left.u:
        raise VacuumError(
            f"states separate too fast (du = {right.u - left.u:.4g} >= {gap:.4g}); vacuum forms"
        )


def star_state(
    left: EulerState, right: EulerState, gamma: float, *, tol: float = 1e-12, max_iters: int = 100
) -> StarState:
    """
    Solve for the star-region pressure by Newton's method from the
    two-rarefaction estimate, falling back to bisection if Newton stalls.

    Raises:
        VacuumError: if the data generate a vacuum.
    """
    _check_vacuum(left, right, gamma)
    cl = left.sound_speed(gamma)
    cr = right.sound_speed(gamma)
    z = (gamma - 1) / (2 * gamma)
    num = cl + cr - 0.5 * (gamma - 1) * (right.u - left.u)
    p = (num / (cl / left.p**z + cr / right.p**z)) ** (1 / z)

    for it in range(1, max_iters + 1):
        fl, dfl = _wave_function(p, left, gamma)
        fr, dfr = _wave_function(p, right, gamma)
        p_new = p - (fl + fr + right.u - left.u) / (dfl + dfr)
        if p_new <= 0:
            p_new = tol * p
        change = 2 * abs(p_new - p) / (p_new + p)
        p = p_new
        if change < tol:
            break
    else:
        _log.warning("Newton did not converge for the star pressure; bisecting")
        p = bisection_star_pressure(left, right, gamma)
        it = max_iters

    fl = _wave_function(p, left, gamma)[0]
    fr = _wave_function(p, right, gamma)[0]
    return StarState(p, 0.5 * (left.u + right.u) + 0.5 * (fr - fl), it)


def bisection_star_pressure(
    left: EulerState, right: EulerState, gamma: float, *, xtol: float = 1e-14
) -> float:
    "Star pressure by bisection on the pressure function."
    _check_vacuum(left, right, gamma)
    lo = 1e-14 * min(left.p, right.p)
    hi = max(left.p, right.p)
    while pressure_function(hi, left, right, gamma) < 0:
        hi *= 2
    return float(
        bisect(pressure_function, lo, hi, args=(left, right, gamma), xtol=xtol, rtol=1e-15)
    )


def wave_speeds(
    left: EulerState, right: EulerState, star: StarState, gamma: float
) -> WaveSpeeds:
    cl = left.sound_speed(gamma)
    cr = right.sound_speed(gamma)
    z = (gamma - 1) / (2 * gamma)
    if star.p > left.p:
        s = left.u - cl * math.sqrt((gamma + 1) / (2 * gamma) * star.p / left.p + z)
        lh = lt = s
    else:
        lh = left.u - cl
        lt = star.u - cl * (star.p / left.p) ** z
    if star.p > right.p:
        s = right.u + cr * math.sqrt((gamma + 1) / (2 * gamma) * star.p / right.p + z)
        rh = rt = s
    else:
        rh = right.u + cr
        rt = star.u + cr * (star.p / right.p) ** z
    return WaveSpeeds(lh, lt, star.u, rt, rh)


def _star_density(side: EulerState, p_star: float, gamma: float) -> float:
    ratio = p_star / side.p
    if p_star > side.p:
        g = (gamma - 1) / (gamma + 1)
        return side.rho * (ratio + g) / (g * ratio + 1)
    return side.rho * ratio ** (1 / gamma)


def _sample(
    left: EulerState,
    right: EulerState,
    star: StarState,
    speeds: WaveSpeeds,
    xi: float,
    gamma: float,
) -> EulerState:
    if xi <= speeds.contact:
        if xi <= speeds.left_head:
            return left
        if xi >= speeds.left_tail:
            return EulerState(_star_density(left, star.p, gamma), star.u, star.p)
        c = left.sound_speed(gamma)
        base = 2 / (gamma + 1) + (gamma - 1) / ((gamma + 1) * c) * (left.u - xi)
        return EulerState(
            left.rho * base ** (2 / (gamma - 1)),
            2 / (gamma + 1) * (c + 0.5 * (gamma - 1) * left.u + xi),
            left.p * base ** (2 * gamma / (gamma - 1)),
        )

    if xi >= speeds.right_head:
        return right
    if xi <= speeds.right_tail:
        return EulerState(_star_density(right, star.p, gamma), star.u, star.p)
    c = right.sound_speed(gamma)
    base = 2 / (gamma + 1) - (gamma - 1) / ((gamma + 1) * c) * (right.u - xi)
    return EulerState(
        right.rho * base ** (2 / (gamma - 1)),
        2 / (gamma + 1) * (-c + 0.5 * (gamma - 1) * right.u + xi),
        right.p * base ** (2 * gamma / (gamma - 1)),
    )


def exact_riemann(left: EulerState, right: EulerState, xi: float, gamma: float) -> EulerState:
    """
    Sample the self-similar solution at ``xi = x / t``.

    Raises:
        VacuumError: if the data generate a vacuum.
    """
    star = star_state(left, right, gamma)
    return _sample(left, right, star, wave_speeds(left, right, star, gamma), xi, gamma)


class RiemannProfile(NamedTuple):
    x: NDArray[np.float64]
    rho: NDArray[np.float64]
    u: NDArray[np.float64]
    p: NDArray[np.float64]

    @property
    def T(self) -> NDArray[np.float64]:
        return self.p / self.rho


def riemann_profile(
    left: EulerState,
    right: EulerState,
    x: NDArray[np.float64],
    t: float,
    gamma: float,
    membrane: float = 0.0,
) -> RiemannProfile:
    """
    Evaluate the exact solution at positions ``x`` and time ``t`` for an
    initial discontinuity at ``membrane``.
    """
    if not t > 0:
        raise DomainError("the exact profile needs a positive time")
    x = np.asarray(x, dtype=np.float64)
    star = star_state(left, right, gamma)
    speeds = wave_speeds(left, right, star, gamma)
    states = [_sample(left, right, star, speeds, (xv - membrane) / t, gamma) for xv in x]
    return RiemannProfile(
        x,
        np.array([s.rho for s in states]),
        np.array([s.u for s in states]),
        np.array([s.p for s in states]),
    )


class ProfileError(NamedTuple):
    "Mean absolute cell errors."

    rho: float
    u: float
    T: float


def profile_error(
    centers: NDArray[np.float64],
    rho: NDArray[np.float64],
    u: NDArray[np.float64],
    T: NDArray[np.float64],
    t: float,
    config: RiemannConfig,
) -> ProfileError:
    """
    Compare cell profiles of a shock-tube run with the exact solution.

    ``u`` is the bulk velocity along the tube (or the full cell mean
    velocities, whose first column is used).  Empty cells (NaN) are skipped.

    Raises:
        DomainError: if ``t`` is not positive.
    """
    if not t > 0:
        raise DomainError("profile errors are undefined at t = 0")
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 2:
        u = u[:, 0]
    gamma = gamma_gas(config.dims)
    exact = riemann_profile(
        EulerState.from_config(config.left),
        EulerState.from_config(config.right),
        centers,
        t,
        gamma,
        config.membrane,
    )
    return ProfileError(
        float(np.nanmean(np.abs(np.asarray(rho) - exact.rho))),
        float(np.nanmean(np.abs(u - exact.u))),
        float(np.nanmean(np.abs(np.asarray(T) - exact.T))),
    )
