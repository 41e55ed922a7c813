"""
Classes and functions for recording solver runs.
"""

from __future__ import annotations

import logging
import os
import platform
import socket
from datetime import datetime
from pathlib import Path
from threading import RLock
from typing import Any, Self
from uuid import UUID, uuid4

import humanize
import numpy as np
import pandas as pd
import scipy
import torch

from .config import RunConfig
from .errors import CellFailure
from .model import FailureRecord, MachineRecord, RunRecord, RunStatus
from .recorders.compute import ComputeRecorder, measure_compute
from .recorders.time import TimeRecorder

__all__ = ["Run", "current_run", "package_versions", "METADATA_FILE"]

_log = logging.getLogger(__name__)

METADATA_FILE = "run_metadata.json"

_lock = RLock()
_active: list[Run] = []


def current_run() -> Run | None:
    """
    Get the currently-active run, if any.
    """
    with _lock:
        return _active[-1] if _active else None


def package_versions() -> dict[str, str]:
    from . import __version__

    return {
        "apjko": __version__,
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


class Run:
    """
    A current or completed solver run, recording its configuration, progress
    and resource use into ``run_metadata.json`` in the output directory.

    Runs should usually be used as context managers::

        with Run(config) as run:
            ...

    The record is saved when the run begins (with no status) and again when
    it ends, so an interrupted process still leaves its configuration behind.

    Args:
        config:
            The resolved run configuration.
    """

    id: UUID
    "The run identifier."
    record: RunRecord
    "The recorded run information."
    directory: Path
    "The run's output directory."

    time_recorder: TimeRecorder
    compute_recorder: ComputeRecorder

    def __init__(self, config: RunConfig):
        self.id = uuid4()
        self.directory = config.output.directory
        self.record = RunRecord(
            run_id=self.id,
            kind=config.kind,
            config=config.model_dump(mode="json"),
            seed=config.seed,
            threads=config.threads,
            precision=config.precision,
            versions=package_versions(),
        )
        self.time_recorder = TimeRecorder(self.record.time, self.record.steps)
        self.compute_recorder = ComputeRecorder(self.record)

    @property
    def metadata_path(self) -> Path:
        return self.directory / METADATA_FILE

    def begin(self):
        """
        Begin the run.  You should usually use the run as a context manager
        instead of calling this method directly.
        """
        _log.debug("beginning run %s", self.id)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.record.start_time = datetime.now()
        with _lock:
            _active.append(self)

        self.time_recorder.start()
        self.compute_recorder.start()
        self._record_machine()
        self.save()

    def step(self, step: int, sim_time: float):
        "Record the completion of an outer step."
        lap = self.time_recorder.lap(step, sim_time)
        self.compute_recorder.update(measure_compute())
        _log.info(
            "step %d done (t=%.4g, %s elapsed)",
            step,
            sim_time,
            humanize.naturaldelta(lap.wall),
        )

    def output(self, path: Path):
        "Note a file written by the run."
        try:
            rel = path.relative_to(self.directory)
        except ValueError:
            rel = path
        self.record.outputs.append(rel.as_posix())

    def end(self, status: RunStatus = "completed", error: BaseException | None = None):
        """
        Finish the run.  You should usually use the run as a context manager
        instead of calling this method directly.
        """
        _log.debug("ending run %s (state=%s)", self.id, status)
        with _lock:
            if not _active or _active[-1] is not self:
                raise RuntimeError("cannot end a run that is not current")
            del _active[-1]

        self.time_recorder.update()
        self.compute_recorder.finish()

        self.record.status = status
        self.record.end_time = datetime.now()
        if error is not None:
            self.record.failure = FailureRecord(
                error=type(error).__name__,
                message=str(error),
                cell=error.cell if isinstance(error, CellFailure) else None,
                step=error.step if isinstance(error, CellFailure) else None,
            )

        self.save()
        mem = self.record.memory.peak_rss if self.record.memory else None
        _log.info(
            "run %s %s in %s (peak memory %s)",
            self.id,
            status,
            humanize.precisedelta(self.record.time.wall),
            humanize.naturalsize(mem, binary=True) if mem else "unknown",
        )

    def save(self):
        "Save this run's record."
        path = self.metadata_path
        _log.debug("saving run record to %s", path)

        # write to temp file first, so we don't leave corrupted JSON lying around
        tmpfile = path.with_suffix(".json.tmp")
        tmpfile.write_text(self.record.model_dump_json(indent=2))
        tmpfile.replace(path)

    def _record_machine(self):
        hostname = socket.gethostname()
        name = os.environ.get("APJKO_MACHINE_NAME", hostname)

        self.record.machine = MachineRecord(
            name=name,
            hostname=hostname,
            os=platform.system(),
            os_version=platform.release(),
            arch=platform.machine(),
        )
        try:
            rel = platform.freedesktop_os_release()
            self.record.machine.distro_id = rel["ID"]
            self.record.machine.distro_version = rel["VERSION_ID"]
        except Exception as e:
            _log.debug("could not load freedesktop info: %s", e)

    def __enter__(self) -> Self:
        self.begin()
        return self

    def __exit__(
        self, exc_type: type[BaseException] | None, exc_value: BaseException | None, _tb: Any
    ):
        if isinstance(exc_value, KeyboardInterrupt):
            self.end("aborted")
        elif exc_value is not None:
            self.end("failed", exc_value)
        else:
            self.end()
