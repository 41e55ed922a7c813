import numpy as np

import hypothesis.strategies as st
from hypothesis import given
from pytest import approx, mark, raises

from apjko.config import RiemannConfig
from apjko.errors import DomainError, VacuumError
from apjko.riemann import (
    EulerState,
    bisection_star_pressure,
    exact_riemann,
    gamma_gas,
    pressure_function,
    profile_error,
    riemann_profile,
    star_state,
    wave_speeds,
)

GAMMA = gamma_gas(3)
SOD_LEFT = EulerState.from_temperature(1.0, 0.0, 1.0)
SOD_RIGHT = EulerState.from_temperature(0.125, 0.0, 0.25)

positive = st.floats(0.05, 10)
states = st.builds(EulerState, positive, st.floats(-1, 1), positive)


def _energy(s: EulerState, gamma: float) -> float:
    return s.p / (gamma - 1) + 0.5 * s.rho * s.u**2


def test_gamma_gas():
    assert gamma_gas(3) == approx(5 / 3)
    assert gamma_gas(2) == 2.0
    assert gamma_gas(1) == 3.0
    with raises(ValueError):
        gamma_gas(0)


def test_state_checks():
    with raises(DomainError):
        EulerState(0.0, 0.0, 1.0)
    with raises(DomainError):
        EulerState(1.0, 0.0, -1.0)
    assert SOD_RIGHT.p == approx(0.03125)
    assert SOD_RIGHT.T == approx(0.25)


@given(states, states)
def test_newton_matches_bisection(left, right):
    try:
        star = star_state(left, right, GAMMA)
    except VacuumError:
        return
    ref = bisection_star_pressure(left, right, GAMMA)
    assert star.p == approx(ref, rel=1e-10, abs=1e-12)
    assert pressure_function(star.p, left, right, GAMMA) == approx(0.0, abs=1e-9)


def test_sod_structure():
    star = star_state(SOD_LEFT, SOD_RIGHT, GAMMA)
    assert SOD_RIGHT.p < star.p < SOD_LEFT.p
    assert star.u > 0
    speeds = wave_speeds(SOD_LEFT, SOD_RIGHT, star, GAMMA)
    # left rarefaction, contact, right shock
    assert speeds.left_head < speeds.left_tail < speeds.contact < speeds.right_head
    assert speeds.right_tail == speeds.right_head


def test_rankine_hugoniot_across_shock():
    star = star_state(SOD_LEFT, SOD_RIGHT, GAMMA)
    speeds = wave_speeds(SOD_LEFT, SOD_RIGHT, star, GAMMA)
    shock = speeds.right_head
    behind = exact_riemann(SOD_LEFT, SOD_RIGHT, shock - 1e-9, GAMMA)
    ahead = exact_riemann(SOD_LEFT, SOD_RIGHT, shock + 1e-9, GAMMA)
    assert ahead == SOD_RIGHT

    for a, b in [
        (behind.rho * (behind.u - shock), ahead.rho * (ahead.u - shock)),
        (
            behind.rho * behind.u * (behind.u - shock) + behind.p,
            ahead.rho * ahead.u * (ahead.u - shock) + ahead.p,
        ),
        (
            (_energy(behind, GAMMA) + behind.p) * behind.u - shock * _energy(behind, GAMMA),
            (_energy(ahead, GAMMA) + ahead.p) * ahead.u - shock * _energy(ahead, GAMMA),
        ),
    ]:
        assert a == approx(b, rel=1e-8, abs=1e-12)


@mark.parametrize("frac", [0.1, 0.5, 0.9])
def test_rarefaction_invariants(frac):
    star = star_state(SOD_LEFT, SOD_RIGHT, GAMMA)
    speeds = wave_speeds(SOD_LEFT, SOD_RIGHT, star, GAMMA)
    xi = speeds.left_head + frac * (speeds.left_tail - speeds.left_head)
    s = exact_riemann(SOD_LEFT, SOD_RIGHT, xi, GAMMA)
    c0 = SOD_LEFT.sound_speed(GAMMA)
    riemann_inv = s.u + 2 * s.sound_speed(GAMMA) / (GAMMA - 1)
    assert riemann_inv == approx(SOD_LEFT.u + 2 * c0 / (GAMMA - 1), rel=1e-12)
    assert s.p / s.rho**GAMMA == approx(SOD_LEFT.p / SOD_LEFT.rho**GAMMA, rel=1e-12)
    # the fan is a characteristic: u - c = xi
    assert s.u - s.sound_speed(GAMMA) == approx(xi, abs=1e-12)


def test_identical_states():
    state = EulerState(0.7, 0.3, 1.2)
    star = star_state(state, state, GAMMA)
    assert star.p == approx(1.2, rel=1e-12)
    assert star.u == approx(0.3, abs=1e-12)
    for xi in (-3.0, 0.0, 0.3, 2.0):
        s = exact_riemann(state, state, xi, GAMMA)
        assert s.rho == approx(0.7) and s.u == approx(0.3) and s.p == approx(1.2)


def test_symmetric_collision():
    left = EulerState(1.0, 1.0, 1.0)
    right = EulerState(1.0, -1.0, 1.0)
    star = star_state(left, right, GAMMA)
    assert star.u == approx(0.0, abs=1e-12)
    assert star.p > 1.0
    speeds = wave_speeds(left, right, star, GAMMA)
    assert speeds.left_head == approx(-speeds.right_head)


def test_vacuum():
    left = EulerState(1.0, -10.0, 1.0)
    right = EulerState(1.0, 10.0, 1.0)
    with raises(VacuumError):
        star_state(left, right, GAMMA)
    with raises(VacuumError):
        bisection_star_pressure(left, right, GAMMA)


def test_profile_layout():
    x = np.linspace(0, 1, 101)
    prof = riemann_profile(SOD_LEFT, SOD_RIGHT, x, 0.1, GAMMA, membrane=0.5)
    assert prof.rho[0] == SOD_LEFT.rho
    assert prof.rho[-1] == SOD_RIGHT.rho
    assert np.all(np.diff(prof.p) <= 1e-12)
    assert np.allclose(prof.T, prof.p / prof.rho)
    with raises(DomainError):
        riemann_profile(SOD_LEFT, SOD_RIGHT, x, 0.0, GAMMA)


def test_profile_error_of_exact_profile():
    config = RiemannConfig()
    centers = np.linspace(0.005, 0.995, 100)
    exact = riemann_profile(SOD_LEFT, SOD_RIGHT, centers, 0.1, GAMMA, membrane=0.5)
    rho = exact.rho.copy()
    u = np.stack([exact.u, np.zeros_like(exact.u)], axis=1)
    T = exact.T.copy()
    rho[3] = T[3] = np.nan
    u[3] = np.nan
    err = profile_error(centers, rho, u, T, 0.1, config)
    assert err == approx((0.0, 0.0, 0.0), abs=1e-14)

    shifted = profile_error(centers, exact.rho + 0.1, exact.u, exact.T, 0.1, config)
    assert shifted.rho == approx(0.1)
    with raises(DomainError):
        profile_error(centers, rho, u, T, 0.0, config)
