import math
import warnings

import torch

from pytest import approx, fixture, mark, raises

from apjko.config import BroydenConfig, CollisionConfig, ScheduleConfig
from apjko.ensemble import moments
from apjko.errors import TrainingError
from apjko.field import init_field
from apjko.innertime import integrate_trajectory
from apjko.jko import (
    CollisionSolver,
    cell_seed,
    collision_step,
    dougherty_loss,
    dougherty_wgf_loss,
    kernel_params,
    landau_loss,
    make_optimizer,
    relative_entropy_estimate,
)
from apjko.kernels import l1_to_maxwellian


def _bimaxwellian(n, d=2, seed=0):
    gen = torch.Generator().manual_seed(seed)
    v = torch.randn(n, d, generator=gen, dtype=torch.float64) * 0.5**0.5
    v[: n // 2, 0] += 1.0
    v[n // 2 :, 0] -= 1.0
    logf = torch.full((n,), -1.0, dtype=torch.float64)
    return v, logf


def _exact_bimaxwellian(n, seed=0):
    "Bi-Maxwellian samples of unit mass with their exact log-density."
    v, _logf = _bimaxwellian(n, seed=seed)
    ex = torch.tensor([1.0, 0.0], dtype=torch.float64)
    lobes = torch.stack([-((v - ex) ** 2).sum(-1), -((v + ex) ** 2).sum(-1)])
    return v, torch.logsumexp(lobes, 0) - math.log(2 * math.pi)


def _constant_field(d, value):
    field = init_field(d, 2, 4, seed=0)
    with torch.no_grad():
        field.layers[-1].weight.zero_()
        field.layers[-1].bias.fill_(value)
    return field


@fixture
def particles():
    return _bimaxwellian(64)


def test_cell_seed():
    assert cell_seed(1, 2, 3) == cell_seed(1, 2, 3)
    seeds = {cell_seed(1, c, s) for c in range(4) for s in range(4)}
    assert len(seeds) == 16
    assert cell_seed(1, 0, 0) != cell_seed(2, 0, 0)


def test_schedule_restarts():
    field = init_field(2, 2, 4)
    sched_cfg = ScheduleConfig(lr_max=0.1, lr_min=0.01, restart_period=5, iterations=20)
    opt, sched = make_optimizer(field, sched_cfg, 0.01)
    assert opt.param_groups[0]["weight_decay"] == 0.01
    lrs = []
    for _ in range(11):
        lrs.append(opt.param_groups[0]["lr"])
        opt.step()
        sched.step()
    assert lrs[0] == approx(0.1)
    assert lrs[4] < lrs[1] < lrs[0]
    assert lrs[5] == approx(0.1)
    assert lrs[10] == approx(0.1)


def test_single_particle_unchanged(quick_collision):
    v = torch.tensor([[0.5, 1.0]], dtype=torch.float64)
    logf = torch.zeros(1, dtype=torch.float64)
    res = collision_step(v, logf, 1.0, quick_collision)
    assert res.velocities is v and res.logf is logf
    assert res.history == []


def _relative_energy_change(before, after):
    e0 = float((before**2).sum())
    return abs(float((after**2).sum()) - e0) / e0


@mark.parametrize("operator", ["landau", "dougherty"])
def test_collision_conserves(operator, quick_collision, particles):
    v, logf = particles
    config = quick_collision.model_copy(update={"operator": operator, "quadrature": 5})
    res = collision_step(v, logf, 1 / 64, config, seed=3)
    assert res.velocities.shape == v.shape
    assert torch.allclose(res.velocities.sum(0), v.sum(0), atol=1e-11)
    assert _relative_energy_change(v, res.velocities) <= 1e-4
    assert len(res.history) == 3
    assert res.trajectory is not None and res.trajectory.logdet is not None
    assert torch.allclose(res.logf, logf - res.trajectory.logdet)


def test_midpoint_energy(quick_collision, particles):
    v, logf = particles
    config = quick_collision.model_copy(
        update={"solver": "midpoint", "broyden": BroydenConfig(tol=1e-9)}
    )
    res = collision_step(v, logf, 1 / 64, config, seed=3)
    assert _relative_energy_change(v, res.velocities) <= 1e-7
    assert res.trajectory is not None
    assert len(res.trajectory.iterations) == config.quadrature + 1


def test_training_is_warning_free(quick_collision, particles):
    v, logf = particles
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = collision_step(v, logf, 1 / 64, quick_collision, seed=1)
    assert all(math.isfinite(r.batch_loss) for r in res.history)


def test_nonfinite_loss(quick_collision, particles):
    v, logf = particles
    logf = logf.clone()
    logf[0] = float("inf")
    config = quick_collision.model_copy(update={"operator": "dougherty_wgf"})
    with raises(TrainingError):
        collision_step(v, logf, 1 / 64, config)


def test_full_loss_tracking(quick_collision, particles):
    v, logf = particles
    res = collision_step(v, logf, 1 / 64, quick_collision, track_full_loss=True)
    # two batches of 32 per epoch
    assert [r.epoch for r in res.history] == [0, 0, 1]
    assert res.history[0].full_loss is None
    assert res.history[1].full_loss is not None
    assert res.history[2].full_loss is not None


def test_solver_independent_of_cell_order(quick_collision):
    cells = {c: _bimaxwellian(40, seed=c) for c in range(2)}
    forward = CollisionSolver(quick_collision, 9)
    backward = CollisionSolver(quick_collision, 9)
    a = {c: forward.solve(c, 0, *cells[c], 0.05) for c in (0, 1)}
    b = {c: backward.solve(c, 0, *cells[c], 0.05) for c in (1, 0)}
    for c in cells:
        assert torch.equal(a[c].velocities, b[c].velocities)
        assert torch.equal(a[c].logf, b[c].logf)
    assert sorted(forward.fields) == [0, 1]


def test_solver_warm_start(quick_collision):
    v, logf = _bimaxwellian(40)
    solver = CollisionSolver(quick_collision, 0)
    solver.solve(0, 0, v, logf, 0.05)
    first = solver.fields[0]
    solver.solve(0, 1, v, logf, 0.05)
    assert solver.fields[0] is first

    cold = CollisionSolver(quick_collision.model_copy(update={"warm_start": False}), 0)
    cold.solve(0, 0, v, logf, 0.05)
    kept = cold.fields[0]
    cold.solve(0, 1, v, logf, 0.05)
    assert cold.fields[0] is not kept


@mark.slow
def test_landau_step_dissipates_entropy():
    v, logf = _bimaxwellian(200, seed=4)
    w = 1 / 200
    config = CollisionConfig(
        operator="landau",
        dt=0.1,
        batch_size=100,
        layers=3,
        width=16,
        schedule=ScheduleConfig(lr_max=1e-2, lr_min=1e-3, restart_period=20, iterations=100),
    )
    res = collision_step(v, logf, w, config, seed=0)
    before = moments(v, w, logf)
    after = moments(res.velocities, w, res.logf)
    assert after.H < before.H
    assert after.T == approx(before.T, rel=1e-4)


@mark.parametrize("value", [0.0, 0.7])
@mark.parametrize("operator", ["landau", "dougherty"])
def test_still_field_costs_nothing(operator, value, quick_collision, particles):
    v, logf = particles
    w = 1 / 64
    config = quick_collision.model_copy(update={"operator": operator})
    traj = integrate_trajectory(
        v,
        _constant_field(2, value),
        w,
        operator=operator,
        quadrature=3,
        kernel=kernel_params(config, 2),
    )
    assert torch.allclose(traj.final, v, atol=1e-14)
    if operator == "landau":
        loss = landau_loss(traj, w, config)
    else:
        loss = dougherty_loss(traj, w, moments(v, w, logf).T, config)
    assert float(loss) == approx(0.0, abs=1e-12)


def test_wgf_zero_field_loss_at_equilibrium(quick_collision):
    gen = torch.Generator().manual_seed(2)
    v = torch.randn(500, 2, generator=gen, dtype=torch.float64)
    w = 1 / 500
    logf = moments(v, w, torch.zeros(500, dtype=torch.float64)).log_maxwellian(v)
    cell = moments(v, w, logf)
    config = quick_collision.model_copy(update={"operator": "dougherty_wgf"})
    traj = integrate_trajectory(v, _constant_field(2, 0.0), w, operator="dougherty_wgf")
    loss = dougherty_wgf_loss(traj, w, cell.T, cell, logf, config)
    assert float(loss) == approx(0.0, abs=1e-10)


def test_wgf_zero_field_loss_is_relative_entropy(quick_collision):
    v, logf = _exact_bimaxwellian(4000, seed=1)
    w = 1 / 4000
    cell = moments(v, w, logf)
    config = quick_collision.model_copy(update={"operator": "dougherty_wgf"})
    traj = integrate_trajectory(v, _constant_field(2, 0.0), w, operator="dougherty_wgf")
    h_rel = float(relative_entropy_estimate(traj, logf, w, cell))
    # the bi-Maxwellian lies about 0.09 above its Maxwellian
    assert h_rel > 0.03
    loss = dougherty_wgf_loss(traj, w, cell.T, cell, logf, config)
    assert float(loss) == approx(2 * config.dt * cell.T * h_rel, rel=1e-12)


@mark.slow
def test_wgf_step_lowers_relative_entropy():
    v, logf = _exact_bimaxwellian(200, seed=3)
    w = 1 / 200
    config = CollisionConfig(
        operator="dougherty_wgf",
        dt=0.1,
        layers=3,
        width=16,
        schedule=ScheduleConfig(lr_max=1e-2, lr_min=1e-4, restart_period=50, iterations=200),
    )
    cell = moments(v, w, logf)
    res = collision_step(v, logf, w, config, seed=0)
    before = w * float((logf - cell.log_maxwellian(v)).sum())
    after = w * float((res.logf - cell.log_maxwellian(res.velocities)).sum())
    assert after < before
    assert float((w * (res.velocities - v).sum(0)).abs().max()) <= 1e-3


def _dougherty_config(epsilon):
    return CollisionConfig(
        operator="dougherty",
        epsilon=epsilon,
        dt=0.01,
        layers=3,
        width=16,
        schedule=ScheduleConfig(lr_max=1e-2, lr_min=1e-4, restart_period=50, iterations=200),
    )


@mark.slow
def test_smaller_epsilon_dissipates_more():
    v, logf = _exact_bimaxwellian(200, seed=4)
    w = 1 / 200
    h0 = moments(v, w, logf).H
    drops = {}
    for eps in (1.0, 1e-2):
        res = collision_step(v, logf, w, _dougherty_config(eps), seed=0)
        drops[eps] = h0 - moments(res.velocities, w, res.logf).H
    assert drops[1e-2] > drops[1.0]
    assert drops[1e-2] > 0


@mark.slow
@mark.parametrize("eps", [1.0, 1e-2])
def test_entropy_non_increasing_over_steps(eps):
    v, logf = _exact_bimaxwellian(200, seed=5)
    w = 1 / 200
    solver = CollisionSolver(_dougherty_config(eps), 0)
    h = moments(v, w, logf).H
    for n in range(5):
        res = solver.solve(0, n, v, logf, w)
        v, logf = res.velocities, res.logf
        h_next = moments(v, w, logf).H
        assert h_next <= h + 1e-3 * abs(h)
        h = h_next


@mark.slow
def test_dougherty_relaxes_faster_than_landau():
    w = 1 / 200
    schedules = {
        "landau": ScheduleConfig(lr_max=1e-2, lr_min=1e-3, restart_period=20, iterations=100),
        "dougherty": ScheduleConfig(lr_max=1e-2, lr_min=1e-4, restart_period=50, iterations=200),
    }
    distance = {}
    for operator, schedule in schedules.items():
        config = CollisionConfig(
            operator=operator,
            epsilon=1e-2,
            dt=1e-3,
            batch_size=100,
            layers=3,
            width=16,
            schedule=schedule,
        )
        solver = CollisionSolver(config, 0)
        v, logf = _exact_bimaxwellian(200, seed=6)
        for n in range(10):
            res = solver.solve(0, n, v, logf, w)
            v, logf = res.velocities, res.logf
        distance[operator] = l1_to_maxwellian(v, logf, w)
    assert distance["dougherty"] < distance["landau"]
