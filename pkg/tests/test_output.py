import numpy as np
import torch

from pytest import approx

from apjko.ensemble import CellPartition, ParticleEnsemble
from apjko.heatlab import HeatLabRow
from apjko.jko import TrainingRecord
from apjko.output import (
    conservation_frame,
    diagnostics_frame,
    heatlab_frame,
    histogram_frame,
    profile_frame,
    training_frame,
    write_csv,
)
from apjko.splitting import RunState, diagnostics


def _state(n=400):
    gen = torch.Generator().manual_seed(0)
    v = torch.randn(n, 2, generator=gen, dtype=torch.float64)
    x = torch.rand(n, generator=gen, dtype=torch.float64)
    ens = ParticleEnsemble(v, torch.zeros(n, dtype=torch.float64), 1 / n, x)
    return RunState(ens, 0.1, CellPartition.uniform(0.0, 1.0, 4))


def test_histogram_mass():
    state = _state()
    ens = state.ensemble
    hist = histogram_frame(ens.velocities, ens.weight, bins=32)
    assert list(hist["axis"].unique()) == ["x", "y"]
    for _axis, part in hist.groupby("axis"):
        assert len(part) == 32
        width = part["right"] - part["left"]
        assert (part["density"] * width).sum() == approx(ens.mass)


def test_histogram_of_identical_velocities():
    v = torch.zeros(10, 3, dtype=torch.float64)
    hist = histogram_frame(v, 0.1, bins=4)
    assert len(hist) == 12
    assert np.isfinite(hist["density"]).all()


def test_conservation_of_constant_records():
    state = _state()
    records = [diagnostics(state)]
    state.step = 1
    records.append(diagnostics(state))
    cons = conservation_frame(records)
    assert list(cons.columns) == [
        "step",
        "time",
        "mass_error",
        "momentum_error",
        "energy_error",
        "entropy_change",
    ]
    errors = cons[["mass_error", "momentum_error", "energy_error", "entropy_change"]]
    assert (errors == 0).all().all()
    assert list(diagnostics_frame(records)["time"]) == [0.0, approx(0.1)]


def test_profile_frame():
    record = diagnostics(_state())
    prof = profile_frame(record)
    assert list(prof.columns) == ["cell_center", "rho", "ux", "uy", "T"]
    assert prof["rho"].sum() * 0.25 == approx(1.0)


def test_training_and_heatlab_frames(tmp_path):
    frame = training_frame([(0, 2, TrainingRecord(0, 0, 1.5, 0.01))])
    assert frame.loc[0, "cell"] == 2
    assert frame["full_loss"].isna().all()
    assert list(training_frame([]).columns) == [
        "step",
        "cell",
        "iteration",
        "epoch",
        "batch_loss",
        "lr",
        "full_loss",
    ]

    row = HeatLabRow("jko", 1.0, 1.0, 1.61, 1.618, 1.732, 1.618, 0.01, 0.2)
    heat = heatlab_frame([row])
    assert heat.loc[0, "method"] == "jko"
    path = write_csv(heat, tmp_path / "nested" / "heatlab.csv")
    assert path.read_text().startswith("method,alpha,sigma0,post_std")
