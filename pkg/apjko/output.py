"""
Tabular outputs of solver runs, written as CSV with pandas.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd
from torch import Tensor

from .heatlab import HeatLabRow
from .jko import TrainingRecord
from .riemann import ProfileError, RiemannProfile
from .splitting import StepDiagnostics

__all__ = [
    "diagnostics_frame",
    "conservation_frame",
    "profile_frame",
    "histogram_frame",
    "training_frame",
    "heatlab_frame",
    "riemann_profile_frame",
    "riemann_errors_frame",
    "write_csv",
]

_log = logging.getLogger(__name__)

# histogram range, in standard deviations about the mean
_HIST_SPREAD = 5.0


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    _log.debug("wrote %d rows to %s", len(frame), path)
    return path


def diagnostics_frame(records: Sequence[StepDiagnostics]) -> pd.DataFrame:
    "Global totals, one row per recorded step."
    return pd.DataFrame.from_records([r.row() for r in records])


def conservation_frame(records: Sequence[StepDiagnostics]) -> pd.DataFrame:
    """
    Conservation errors relative to the initial record: absolute momentum
    drift, relative energy drift, and the per-step entropy change.
    """
    diag = diagnostics_frame(records)
    first = diag.iloc[0]
    mom = [c for c in diag.columns if c.endswith("_tot") and c.startswith("u")]
    drift = diag[mom] - first[mom]
    out = pd.DataFrame(
        {
            "step": diag["step"],
            "time": diag["time"],
            "mass_error": (diag["rho_tot"] - first["rho_tot"]).abs(),
            "momentum_error": np.sqrt((drift**2).sum(axis=1)),
            "energy_error": (diag["E_tot"] - first["E_tot"]).abs() / abs(first["E_tot"]),
            "entropy_change": diag["H_tot"].diff().fillna(0.0),
        }
    )
    return out


def profile_frame(record: StepDiagnostics) -> pd.DataFrame:
    "Per-cell macroscopic profile of an inhomogeneous record."
    if record.centers is None or record.u is None:
        raise ValueError("record has no cell profiles")
    cols: dict[str, object] = {"cell_center": record.centers, "rho": record.rho}
    for axis, k in zip("xyz", range(record.u.shape[1])):
        cols[f"u{axis}"] = record.u[:, k]
    cols["T"] = record.T
    return pd.DataFrame(cols)


def histogram_frame(velocities: Tensor, weight: float, bins: int = 64) -> pd.DataFrame:
    """
    Marginal velocity densities per axis on ``bins`` uniform bins spanning
    five standard deviations either side of the mean.
    """
    v = velocities.detach().cpu().numpy().astype(np.float64)
    parts: list[pd.DataFrame] = []
    for k, axis in zip(range(v.shape[1]), "xyz"):
        col = v[:, k]
        mu = col.mean()
        sd = col.std()
        if not sd > 0:
            sd = 1.0
        counts, edges = np.histogram(
            col, bins=bins, range=(mu - _HIST_SPREAD * sd, mu + _HIST_SPREAD * sd)
        )
        parts.append(
            pd.DataFrame(
                {
                    "axis": axis,
                    "left": edges[:-1],
                    "right": edges[1:],
                    "center": 0.5 * (edges[:-1] + edges[1:]),
                    "density": counts * weight / np.diff(edges),
                }
            )
        )
    return pd.concat(parts, ignore_index=True)


def training_frame(training: Sequence[tuple[int, int, TrainingRecord]]) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        [{"step": s, "cell": c} | dataclasses.asdict(rec) for s, c, rec in training],
        columns=["step", "cell", "iteration", "epoch", "batch_loss", "lr", "full_loss"],
    )


def heatlab_frame(rows: Sequence[HeatLabRow]) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        [dataclasses.asdict(r) for r in rows],
        columns=[f.name for f in dataclasses.fields(HeatLabRow)],
    )


def riemann_profile_frame(profile: RiemannProfile) -> pd.DataFrame:
    return pd.DataFrame(
        {"x": profile.x, "rho": profile.rho, "u": profile.u, "p": profile.p, "T": profile.T}
    )


def riemann_errors_frame(errors: Sequence[tuple[float, ProfileError]]) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        [{"time": t, "rho": e.rho, "u": e.u, "T": e.T} for t, e in errors],
        columns=["time", "rho", "u", "T"],
    )
