import logging
from pathlib import Path

import click

from ..config import load_config
from ..errors import ConfigError, SolverError
from ..experiment import run_experiment
from ..run import Run
from . import apjko

_log = logging.getLogger(__name__)


@apjko.command()
@click.argument(
    "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Override the run seed.")
@click.option("--threads", type=click.IntRange(1), help="Number of cell workers.")
@click.option("--precision", type=click.Choice(["f32", "f64"]), help="Tensor precision.")
@click.option(
    "-o",
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory.",
)
def run(
    config_file: Path,
    seed: int | None,
    threads: int | None,
    precision: str | None,
    out: Path | None,
):
    """
    Run the experiment described by CONFIG_FILE.

    CONFIG_FILE is a TOML or JSON run file, or the run_metadata.json of an
    earlier run.
    """
    try:
        config = load_config(
            config_file, seed=seed, threads=threads, precision=precision, output=out
        )
    except ConfigError as e:
        raise click.UsageError(str(e)) from e

    _log.info("writing outputs to %s", config.output.directory)
    try:
        with Run(config) as rec:
            run_experiment(config)
    except SolverError as e:
        _log.error("run failed: %s", e)
        raise click.exceptions.Exit(1) from e

    _log.info("run %s completed", rec.id)
