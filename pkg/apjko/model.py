"""
Run records written to ``run_metadata.json``.
"""

from __future__ import annotations

from datetime import datetime
from typing import Literal, TypeAlias
from uuid import UUID

from pydantic import BaseModel, Field, JsonValue

from .config import Precision

__all__ = [
    "RunRecord",
    "RunStatus",
    "FailureRecord",
    "StepRecord",
    "MachineRecord",
    "TimeRecord",
    "CPURecord",
    "MemoryRecord",
]

RunStatus: TypeAlias = Literal["completed", "failed", "aborted", "unfinished"]
"""
A run's completion status.
"""


class RunRecord(BaseModel):
    """
    Record for a single solver run.  Together with the package versions, the
    resolved configuration suffices to re-execute the run.
    """

    run_id: UUID
    "The unique identifier for this run."
    kind: str
    "The experiment kind."
    config: dict[str, JsonValue]
    "The fully-resolved run configuration."
    seed: int
    threads: int
    precision: Precision
    versions: dict[str, str] = Field(default_factory=dict)
    "Versions of Python, this package and its numerical dependencies."

    start_time: datetime = Field(default_factory=datetime.now)
    "The wall-clock time when this run started."
    end_time: datetime | None = None
    "The wall-clock time when this run concluded."
    status: RunStatus | None = None
    """
    The run's completion status, or ``None`` while the run is in progress.
    """
    failure: FailureRecord | None = None
    "What stopped a failed run."

    steps: list[StepRecord] = Field(default_factory=list)
    "Timing of each outer step."
    outputs: list[str] = Field(default_factory=list)
    "Files written by the run, relative to its output directory."

    machine: MachineRecord | None = None
    "The machine on which this run was run."

    time: TimeRecord = Field(default_factory=lambda: TimeRecord())
    "Wall and CPU time consumption."
    cpu: CPURecord | None = None
    "Approximate CPU consumption."
    memory: MemoryRecord | None = None
    "Estimated memory use."


class FailureRecord(BaseModel):
    """
    The error that ended a failed run.
    """

    error: str
    "The exception class name."
    message: str
    cell: int | None = None
    "The failing cell, for collision failures."
    step: int | None = None
    "The failing outer step, for collision failures."


class StepRecord(BaseModel):
    step: int
    time: float
    "Simulated time after the step."
    wall: float
    "Wall-clock seconds since the run began."


class MachineRecord(BaseModel):
    """
    Information about the machine on which a run is running, mostly from the
    Python :mod:`platform` module.
    """

    name: str
    "A friendly or logical name for the machine (``APJKO_MACHINE_NAME``)."
    hostname: str
    os: str
    "The operating system name (as reported by :func:`platform.system`)."
    os_version: str
    arch: str
    "The machine architecture (as reported by :func:`platform.machine`)."

    distro_id: str | None = None
    distro_version: str | None = None


class TimeRecord(BaseModel):
    """
    Time consumed by a run, in seconds.
    """

    wall: float = 0
    "Wall-clock elapsed time (monotonic clock)."
    self_cpu: float | None = None
    self_cpu_usr: float | None = None
    self_cpu_sys: float | None = None


class CPURecord(BaseModel):
    """
    CPU availability and utilization.
    """

    physical_cores: int | None = None
    logical_cores: int | None = None
    process_cpus: int | None = None
    "CPUs available to this process."
    torch_threads: int | None = None
    "Intra-op threads torch was using."

    avg_process_util: float | None = None
    """
    Average CPU utilization by this process, sampled at each outer step
    (100% = full use of 1 CPU).

    .. seealso:: :meth:`psutil.Process.cpu_percent`
    """
    avg_system_util: float | None = None


class MemoryRecord(BaseModel):
    """
    Memory used by the run (approximate).
    """

    peak_rss: float | None = None
    "Peak resident memory observed at step boundaries."
    max_rss: float | None = None
    "Maximum resident memory reported by the operating system."
