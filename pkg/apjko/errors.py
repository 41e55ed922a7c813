"""
Exceptions raised by the solver.
"""

from __future__ import annotations

__all__ = [
    "SolverError",
    "ConfigError",
    "EmptyCellError",
    "DomainError",
    "OvershootError",
    "DegenerateSpreadError",
    "ImplicitSolverError",
    "TrainingError",
    "VacuumError",
    "CellFailure",
]


class SolverError(Exception):
    "Base class for errors raised by the solver."


class ConfigError(SolverError, ValueError):
    """
    A run configuration failed validation.

    Args:
        problems:
            ``(key path, message)`` pairs, one per failing entry.
    """

    problems: list[tuple[str, str]]

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        lines = [f"{path}: {msg}" if path else msg for path, msg in problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class EmptyCellError(SolverError, ValueError):
    "Moments were requested for an empty particle set."


class DomainError(SolverError, ValueError):
    "A value lies outside the domain where it is defined."


class OvershootError(DomainError):
    "Particles travelled more than one domain length in a single transport step."


class DegenerateSpreadError(SolverError, ArithmeticError):
    "All particles of a cell share one velocity, so the energy projection is undefined."


class ImplicitSolverError(SolverError, RuntimeError):
    "The implicit midpoint fixed-point solve did not converge."

    residual: float
    iterations: int

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"implicit midpoint solve failed after {iterations} iterations "
            f"(residual {residual:.3e})"
        )


class TrainingError(SolverError, RuntimeError):
    "Training a velocity field produced a non-finite loss."


class VacuumError(SolverError, ValueError):
    "The Riemann data generate a vacuum region."


class CellFailure(SolverError, RuntimeError):
    "A per-cell collision solve failed."

    cell: int
    step: int

    def __init__(self, cell: int, step: int, cause: BaseException):
        self.cell = cell
        self.step = step
        super().__init__(f"collision failed in cell {cell} at step {step}: {cause}")
