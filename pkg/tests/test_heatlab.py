import math
import warnings

import numpy as np
import torch
from scipy.stats import norm

import hypothesis.strategies as st
from hypothesis import given
from pytest import approx, mark, raises

from apjko import heatlab
from apjko.config import HeatLabConfig, ScheduleConfig
from apjko.errors import DomainError, ImplicitSolverError
from apjko.heatlab import (
    GaussianState,
    esm_linear_slope,
    esm_step,
    exact_heat_std,
    gaussian_jko_std_oracle,
    heat_field,
    heat_jko_step,
    ism_fixed_point_step,
    ism_linear_slope,
    ism_step,
    jko_linear_slope,
    optimality_residuals,
    run_heatlab,
    score_refit_linear,
    solve_transport,
)

GOLDEN = (1 + math.sqrt(5)) / 2


@mark.parametrize(
    "sigma0,alpha,expected",
    [(1.0, 1.0, GOLDEN), (2.0, 2.0, 1 + math.sqrt(3)), (1.0, 100.0, 10.512), (1.5, 0.0, 1.5)],
)
def test_jko_oracle(sigma0, alpha, expected):
    assert gaussian_jko_std_oracle(sigma0, alpha) == approx(expected, abs=5e-4)


@given(st.floats(0.1, 10), st.floats(0, 100))
def test_jko_oracle_root(sigma0, alpha):
    s = gaussian_jko_std_oracle(sigma0, alpha)
    assert s * (s - sigma0) == approx(alpha, rel=1e-9, abs=1e-12)
    assert s >= sigma0
    assert gaussian_jko_std_oracle(sigma0, alpha + 1) > s


def test_jko_oracle_domain():
    with raises(DomainError):
        gaussian_jko_std_oracle(0.0, 1.0)
    with raises(DomainError):
        gaussian_jko_std_oracle(1.0, -1.0)


def test_exact_heat_std():
    assert exact_heat_std(1.0, 2.0) == approx(math.sqrt(5))


def test_linear_slopes_at_unit_ratio():
    assert jko_linear_slope(1.0) == approx(GOLDEN)
    lam = ism_linear_slope(1.0)
    assert lam == approx(1.4656, abs=1e-4)
    assert lam * lam * (lam - 1) == approx(1.0, abs=1e-8)
    assert (GOLDEN - lam) / GOLDEN >= 0.09
    assert esm_linear_slope(1.0) == 2.0


def test_esm_overshoots_exact_variance():
    alpha = 2.0
    ratio = esm_linear_slope(alpha) ** 2 / exact_heat_std(1.0, alpha) ** 2
    assert ratio == approx((1 + alpha) ** 2 / (1 + 2 * alpha))


@given(st.floats(1e-6, 1e-3))
def test_slopes_agree_to_first_order(ratio):
    assert abs(ism_linear_slope(ratio) - jko_linear_slope(ratio)) <= 2 * ratio**2
    assert abs(esm_linear_slope(ratio) - jko_linear_slope(ratio)) <= 2 * ratio**2


def test_ism_slope_edges():
    assert ism_linear_slope(0.0) == 1.0
    with raises(DomainError):
        ism_linear_slope(-1.0)


def test_score_refit_damped_converges():
    slopes = score_refit_linear(1.0, 60, damping=0.5)
    assert slopes[0] == 2.0
    assert slopes[-1] == approx(GOLDEN, abs=1e-10)


def test_score_refit_small_ratio_converges():
    slopes = score_refit_linear(0.1, 50)
    assert slopes[-1] == approx(jko_linear_slope(0.1), abs=1e-10)


def test_score_refit_undamped_breaks_down():
    # successive refits alternate between slopes near one and huge slopes
    with raises(DomainError):
        score_refit_linear(1.0, 50)


def test_gaussian_sampling():
    state = GaussianState((0.5, -1.0), (2.0, 0.5), alpha=1.0)
    v, logf = state.sample(4000, 3)
    assert v.shape == (4000, 2)
    assert np.allclose(v.mean(0).numpy(), [0.5, -1.0], atol=1e-2)
    assert np.allclose(v.std(0).numpy(), [2.0, 0.5], rtol=1e-2)
    ref = norm.logpdf(v[:, 0].numpy(), 0.5, 2.0) + norm.logpdf(v[:, 1].numpy(), -1.0, 0.5)
    assert np.allclose(logf.numpy(), ref)
    again, _ = state.sample(4000, 3)
    assert torch.equal(v, again)


def test_gaussian_state_checks():
    with raises(DomainError):
        GaussianState.isotropic(0.0, 1.0)
    with raises(DomainError):
        GaussianState.isotropic(1.0, 0.0)
    with raises(ValueError):
        GaussianState((0.0,), (1.0, 1.0), 1.0)


def test_heat_field_starts_at_zero():
    field = heat_field(1, 3, 8, 0)
    v = torch.linspace(-2, 2, 9, dtype=torch.float64)[:, None]
    assert torch.all(field(0.3, v) == 0)


def test_solve_transport_linear(linear_field):
    v = torch.linspace(-1, 1, 11, dtype=torch.float64)[:, None]
    t, iters = solve_transport(linear_field(0.3, 1), v)
    assert torch.allclose(t, v / 0.7, atol=1e-7)
    assert iters > 0


def test_solve_transport_diverges(linear_field):
    v = torch.ones(3, 1, dtype=torch.float64)
    with raises(ImplicitSolverError):
        solve_transport(linear_field(3.0, 1), v)


def _centered(n=2000, seed=0):
    v, _ = GaussianState.isotropic(1.0, 1.0).sample(n, seed)
    return v - v.mean(0)


def test_residuals_separate_the_two_conditions():
    v = _centered()
    alpha = float(v.var(correction=0))
    jko = optimality_residuals(v, jko_linear_slope(1.0) * v, alpha)
    ism = optimality_residuals(v, ism_linear_slope(1.0) * v, alpha)
    assert jko.det == approx(0.0, abs=1e-12)
    assert ism.tr == approx(0.0, abs=1e-12)
    assert jko.tr > 0.05
    assert ism.det > 0.05


@mark.slow
def test_esm_matches_linear_slope():
    v, logf = GaussianState.isotropic(1.0, 0.05).sample(1000, 0)
    sched = ScheduleConfig(lr_max=1e-2, lr_min=1e-4, restart_period=500, iterations=500)
    out = esm_step(v, logf, heat_field(1, 3, 32, 0), 0.05, sched)
    grid = torch.linspace(-2, 2, 21, dtype=torch.float64)[:, None]
    with torch.no_grad():
        s = out.field(0.0, grid)
    assert torch.allclose(s, 0.05 * grid, atol=0.01)
    assert out.logf.shape == logf.shape


@mark.slow
def test_jko_step_hits_oracle():
    v, logf = GaussianState.isotropic(1.0, 1.0).sample(2000, 1)
    sched = ScheduleConfig(lr_max=1e-2, lr_min=1e-4, restart_period=1000, iterations=1000)
    out = heat_jko_step(v, logf, heat_field(1, 3, 32, 1), 1.0, 5, sched)
    post = float(out.velocities.std(correction=0))
    assert post == approx(GOLDEN, rel=2e-2)
    assert out.logdet is not None
    assert float(out.logdet.mean()) > 0


@mark.slow
def test_one_step_implicit_misses_jko_condition():
    v, logf = GaussianState.isotropic(1.0, 1.0).sample(1000, 2)
    alpha = 1.0
    cfg = HeatLabConfig(
        particles=1000,
        width=16,
        schedule=ScheduleConfig(lr_max=1e-2, lr_min=1e-4, restart_period=800, iterations=800),
    )
    out = ism_fixed_point_step(v, logf, heat_field(1, 3, 16, 2), alpha, cfg)
    assert out.iterates
    post = float(out.velocities.std(correction=0))
    assert post < 0.97 * GOLDEN

    jko_map = jko_linear_slope(1.0) * (v - v.mean())
    ism_res = optimality_residuals(v, out.velocities, alpha)
    jko_res = optimality_residuals(v - v.mean(), jko_map, alpha)
    assert ism_res.det > 3 * max(jko_res.det, 1e-3)


@mark.slow
def test_run_heatlab_rows():
    cfg = HeatLabConfig(
        alphas=[1.0],
        methods=["esm", "jko"],
        particles=500,
        width=16,
        schedule=ScheduleConfig(lr_max=1e-2, lr_min=1e-4, restart_period=300, iterations=300),
    )
    rows = run_heatlab(cfg, 0)
    assert [r.method for r in rows] == ["esm", "jko"]
    esm, jko = rows
    assert esm.linear_std == approx(2.0)
    assert esm.post_std == approx(2.0, rel=5e-2)
    assert jko.oracle_std == approx(GOLDEN)
    assert jko.exact_std == approx(math.sqrt(3))


def test_run_heatlab_states_its_optimizer(monkeypatch):
    decays = []
    real = heatlab.make_optimizer

    def recording(field, schedule, weight_decay=0.0):
        decays.append(weight_decay)
        return real(field, schedule, weight_decay)

    def unexpected(*args, **kwargs):
        raise AssertionError("the direct one-step implicit solve was requested")

    monkeypatch.setattr(heatlab, "make_optimizer", recording)
    monkeypatch.setattr(heatlab, "ism_fixed_point_step", unexpected)
    cfg = HeatLabConfig(
        alphas=[0.5],
        particles=20,
        layers=2,
        width=4,
        quadrature=1,
        weight_decay=0.05,
        ism_solver="direct",
        schedule=ScheduleConfig(lr_max=1e-3, lr_min=1e-4, restart_period=1, iterations=1),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rows = run_heatlab(cfg, 0)
    assert [r.method for r in rows] == ["esm", "ism", "jko"]
    assert decays == [0.05, 0.05, 0.05]
    assert all(math.isfinite(r.post_std) for r in rows)


@mark.slow
def test_direct_one_step_implicit_reaches_its_linear_slope():
    v, logf = GaussianState.isotropic(1.0, 1.0).sample(1000, 3)
    sched = ScheduleConfig(lr_max=1e-2, lr_min=1e-4, restart_period=800, iterations=800)
    out = ism_step(v, logf, heat_field(1, 3, 16, 3), 1.0, sched)
    post = float(out.velocities.std(correction=0))
    assert post == approx(ism_linear_slope(1.0), rel=3e-2)
    assert post < 0.97 * GOLDEN
    assert out.logf.shape == logf.shape
    assert len(out.history) == 800
