import logging
from pathlib import Path

import click

from ..presets import PRESETS, preset
from . import apjko

_log = logging.getLogger(__name__)


@apjko.command()
@click.argument("name", type=click.Choice(sorted(PRESETS)))
@click.argument("path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("-f", "--force", is_flag=True, help="Overwrite an existing file.")
def init(name: str, path: Path, force: bool):
    "Write the preset configuration NAME to PATH (JSON)."

    if path.exists() and not force:
        raise click.UsageError(f"{path} already exists (use --force to overwrite)")

    config = preset(name)
    if path.suffix != ".json":
        _log.warning("%s does not end in .json; it is written as JSON regardless", path)

    path.parent.mkdir(parents=True, exist_ok=True)
    _log.info("writing %s preset to %s", name, path)
    path.write_text(config.model_dump_json(indent=2) + "\n")
