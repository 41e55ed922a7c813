"""
Record local compute resources (CPU and memory) at step boundaries.
"""

import os
from dataclasses import dataclass
from time import perf_counter

import torch
from psutil import Process, cpu_count, cpu_percent

from ..model import CPURecord, MemoryRecord, RunRecord


@dataclass(frozen=True, slots=True)
class ComputeMeasurements:
    time: float
    sys_pct: float
    proc_pct: float
    rss: int


class ComputeRecorder:
    record: RunRecord

    _peak_rss: float = 0
    _last_time: float | None = None
    _tot_time: float = 0.0
    _tot_proc_pct: float = 0.0
    _tot_sys_pct: float = 0.0

    def __init__(self, record: RunRecord):
        self.record = record

    def start(self):
        if hasattr(os, "process_cpu_count"):
            process_cpus = os.process_cpu_count()  # type: ignore
        elif hasattr(os, "sched_getaffinity"):
            process_cpus = len(os.sched_getaffinity(0))  # type: ignore
        else:
            process_cpus = None

        self.record.cpu = CPURecord(
            physical_cores=cpu_count(False),
            logical_cores=cpu_count(True),
            process_cpus=process_cpus,  # type: ignore
            torch_threads=torch.get_num_threads(),
        )
        self.record.memory = MemoryRecord()
        # prime psutil's utilization counters
        self.update(measure_compute())

    def finish(self):
        try:
            import resource

            m = resource.getrusage(resource.RUSAGE_SELF)
            if self.record.memory is not None:
                self.record.memory.max_rss = m.ru_maxrss
        except ImportError:
            return

    def update(self, metrics: ComputeMeasurements):
        if self.record.memory is not None and metrics.rss > self._peak_rss:
            self._peak_rss = metrics.rss
            self.record.memory.peak_rss = metrics.rss

        if self._last_time is None:
            self._last_time = metrics.time
            return

        diff = metrics.time - self._last_time
        self._last_time = metrics.time
        if diff <= 0:
            return
        self._tot_time += diff
        self._tot_proc_pct += diff * metrics.proc_pct
        self._tot_sys_pct += diff * metrics.sys_pct

        if self.record.cpu is not None:
            self.record.cpu.avg_process_util = self._tot_proc_pct / self._tot_time
            self.record.cpu.avg_system_util = self._tot_sys_pct / self._tot_time


_process: Process | None = None


def measure_compute() -> ComputeMeasurements:
    global _process
    if _process is None:
        _process = Process()
    now = perf_counter()
    sys_cpu = cpu_percent()
    with _process.oneshot():
        proc_cpu = _process.cpu_percent()
        mem = _process.memory_info()

    return ComputeMeasurements(now, sys_cpu, proc_cpu, mem.rss)
