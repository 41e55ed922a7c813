"""
Record wall and CPU time, overall and per outer step.
"""

import os
import time

from ..model import StepRecord, TimeRecord


class TimeRecorder:
    record: TimeRecord
    steps: list[StepRecord]
    _t0: float
    _os0: os.times_result

    def __init__(self, record: TimeRecord, steps: list[StepRecord]):
        self.record = record
        self.steps = steps

    def start(self):
        self._t0 = time.perf_counter()
        self._os0 = os.times()

    def lap(self, step: int, sim_time: float) -> StepRecord:
        "Note the end of an outer step."
        rec = StepRecord(step=step, time=sim_time, wall=time.perf_counter() - self._t0)
        self.steps.append(rec)
        self.update()
        return rec

    def update(self):
        usage = os.times()
        self.record.wall = time.perf_counter() - self._t0
        self.record.self_cpu_usr = usage.user - self._os0.user
        self.record.self_cpu_sys = usage.system - self._os0.system
        self.record.self_cpu = self.record.self_cpu_usr + self.record.self_cpu_sys
