import logging
from pathlib import Path

import click
import numpy as np

from ..errors import SolverError
from ..output import riemann_profile_frame, write_csv
from ..riemann import EulerState, gamma_gas, riemann_profile, star_state
from . import apjko

_log = logging.getLogger(__name__)


@apjko.command()
@click.option(
    "--left",
    type=(float, float, float),
    default=(1.0, 0.0, 1.0),
    show_default=True,
    help="Left density, velocity and temperature.",
)
@click.option(
    "--right",
    type=(float, float, float),
    default=(0.125, 0.0, 0.25),
    show_default=True,
    help="Right density, velocity and temperature.",
)
@click.option("--membrane", type=float, default=0.5, show_default=True)
@click.option("--dims", type=click.IntRange(1), default=3, show_default=True)
@click.option("--time", "t", type=float, default=0.1, show_default=True)
@click.option("--lower", type=float, default=0.0, show_default=True)
@click.option("--upper", type=float, default=1.0, show_default=True)
@click.option("--points", type=click.IntRange(2), default=200, show_default=True)
@click.option(
    "-o",
    "--out",
    type=click.Path(dir_okay=False, path_type=Path),
    default=Path("riemann_profile.csv"),
    show_default=True,
)
def riemann(
    left: tuple[float, float, float],
    right: tuple[float, float, float],
    membrane: float,
    dims: int,
    t: float,
    lower: float,
    upper: float,
    points: int,
    out: Path,
):
    "Write the exact Euler solution of a shock-tube problem as CSV."
    gamma = gamma_gas(dims)
    try:
        ls = EulerState.from_temperature(*left)
        rs = EulerState.from_temperature(*right)
        star = star_state(ls, rs, gamma)
        prof = riemann_profile(ls, rs, np.linspace(lower, upper, points), t, gamma, membrane)
    except SolverError as e:
        _log.error("%s", e)
        raise click.exceptions.Exit(1) from e

    _log.info("star state: p=%.12g, u=%.12g (gamma=%.6g)", star.p, star.u, gamma)
    write_csv(riemann_profile_frame(prof), out)
