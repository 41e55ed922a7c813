"""
Asymptotic-preserving particle solver for kinetic equations with Landau and
Dougherty collisions, built on variational (JKO) collision steps with
trained velocity fields.
"""

from .config import RunConfig, configure, load_config
from .ensemble import ParticleEnsemble, moments, sample_initial
from .errors import SolverError
from .experiment import run_experiment
from .jko import CollisionSolver, collision_step
from .run import Run, current_run
from .splitting import RunState, step

__all__ = [
    "configure",
    "load_config",
    "RunConfig",
    "ParticleEnsemble",
    "sample_initial",
    "moments",
    "collision_step",
    "CollisionSolver",
    "RunState",
    "step",
    "run_experiment",
    "Run",
    "current_run",
    "SolverError",
]

try:
    from ._version import version

    __version__ = version
except ImportError:
    __version__ = "UNKNOWN"
