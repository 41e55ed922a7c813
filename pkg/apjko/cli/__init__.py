import logging
import sys

import click

_log = logging.getLogger(__name__)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log debug messages.")
def apjko(verbose: bool):
    "Particle JKO solver for Landau and Dougherty collisions."
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level, stream=sys.stderr, format="[%(levelname)7s] %(name)s %(message)s"
    )
    _log.debug("starting apjko cli")


# import the subpackages to record their commands
from . import init, riemann, run  # type: ignore # noqa: E402, F401
