"""Time-synchronous cyclic executive driving the four-stage ring pipeline.

Each cycle: a preparation window just before the cycle start drains queued
reconfiguration requests, then stages 1-3 run synchronously in barrier order,
then asynchronous stage-4 tasks run on leftover capacity. Two clock modes:
deterministic-logical (bit-reproducible, used by tests and scenario runs) and
wall-clock (paced against the monotonic clock, overrun accounting live).

Worker model: the pool is sized at four by default, honoring a four-core
device. In this in-process simulation the synchronous P1 stages execute on
the pacing thread and P2/asynchronous work shares a single background worker,
which structurally caps P2 at one worker.
"""

import csv
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from cyclab.control import Priority
from cyclab.ring import (
    ASYNC_STAGE,
    CONTROL_STAGE,
    INPUT_STAGE,
    OUTPUT_STAGE,
    ConfigurationError,
    GraphDelta,
)


class ClockMode(Enum):
    DETERMINISTIC = "deterministic"
    WALL = "wall"


@dataclass
class CycleSchedule:
    period_us: float = 1000.0
    prep_offset_us: float = 100.0
    clock_mode: ClockMode = ClockMode.DETERMINISTIC

    def __post_init__(self):
        if not 0 < self.prep_offset_us < self.period_us:
            raise ConfigurationError(
                f"require 0 < prep offset ({self.prep_offset_us}) "
                f"< period ({self.period_us})"
            )


@dataclass
class TaskEntry:
    id: str
    stage: int
    fn: object
    priority: Priority = Priority.P1
    mode: str = "synchronous"
    budget_us: float = 0.0
    cost_us: object = 1.0  # modeled duration (float or callable(cycle) -> us)

    def __post_init__(self):
        sync_ok = self.mode == "synchronous" and self.stage in (1, 2, 3)
        async_ok = self.mode == "asynchronous" and self.stage == 4
        if not (sync_ok or async_ok):
            raise ConfigurationError(
                f"task {self.id!r}: stage {self.stage} invalid for {self.mode} mode"
            )

    def modeled_cost_ns(self, cycle):
        cost = self.cost_us(cycle) if callable(self.cost_us) else self.cost_us
        return int(cost * 1000)


@dataclass
class CycleMetrics:
    cycle: int
    start_jitter_ns: int = 0
    stage_ns: dict = field(default_factory=dict)
    task_ns: dict = field(default_factory=dict)  # stage-2 per-task durations
    overrun: bool = False
    deadline_met: bool = True


class PrepRejected(Exception):
    """Raised by a prep request handler to reject the request."""


class BackpressureError(Exception):
    """Prep request queue full; pushed back to management, never to operation."""


class Ticket:
    PENDING, APPLIED, REJECTED = "pending", "applied", "rejected"

    def __init__(self, label=""):
        self.label = label
        self.status = self.PENDING
        self.applied_cycle = None
        self.reason = None
        self._done = threading.Event()

    def _resolve(self, status, cycle=None, reason=None):
        self.status = status
        self.applied_cycle = cycle
        self.reason = reason
        self._done.set()

    def wait(self, timeout=None):
        self._done.wait(timeout)
        return self.status


class RunReport:
    def __init__(self, schedule):
        self.schedule = schedule
        self.metrics = []
        self.aborted = None

    @property
    def cycles(self):
        return len(self.metrics)

    @property
    def overruns(self):
        return sum(1 for m in self.metrics if m.overrun)

    def deadline_ratio(self):
        if not self.metrics:
            return 1.0
        return sum(1 for m in self.metrics if m.deadline_met) / len(self.metrics)

    def jitter_percentile(self, q):
        jitters = sorted(abs(m.start_jitter_ns) for m in self.metrics)
        if not jitters:
            return 0
        idx = min(len(jitters) - 1, int(q / 100.0 * len(jitters)))
        return jitters[idx]

    def export_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["cycle", "start_jitter_ns", "stage1_ns", "stage2_ns",
                        "stage3_ns", "overrun", "deadline_met"])
            for m in self.metrics:
                w.writerow([
                    m.cycle, m.start_jitter_ns,
                    m.stage_ns.get(1, 0), m.stage_ns.get(2, 0), m.stage_ns.get(3, 0),
                    int(m.overrun), int(m.deadline_met),
                ])


class CyclicExecutor:
    def __init__(self, schedule, pipeline, workers=4, prep_queue_depth=64):
        self.schedule = schedule
        self.pipeline = pipeline
        self.workers = workers
        self.tasks = {}  # id -> TaskEntry
        self.stage2_epilogue = None  # gate evaluation + frame seal
        self.current_cycle = 0
        self.last_metrics = None
        self.in_operation_path = False  # management-call detector hook
        self._in_prep = False
        self._prep_queue = deque()
        self._prep_depth = prep_queue_depth
        self._prep_lock = threading.Lock()
        self._async_queue = deque()
        self._async_thread = None
        self._async_stop = threading.Event()

    # -- task registry (prep-window only) ----------------------------------

    def register_task(self, entry):
        if not self._in_prep:
            raise ConfigurationError("register_task outside preparation window")
        if entry.id in self.tasks:
            raise ConfigurationError(f"duplicate task id {entry.id!r}")
        self.pipeline.reconfigure(GraphDelta(add=[(entry.stage, entry.id)]))
        self.tasks[entry.id] = entry

    def deregister_task(self, task_id):
        if not self._in_prep:
            raise ConfigurationError("deregister_task outside preparation window")
        if task_id not in self.tasks:
            raise ConfigurationError(f"unknown task id {task_id!r}")
        self.pipeline.reconfigure(GraphDelta(remove=[task_id]))
        del self.tasks[task_id]

    def stage_tasks(self, stage):
        return [t for t in self.tasks.values() if t.stage == stage]

    # -- prep requests (management -> operation handoff) -------------------

    def submit_prep_request(self, fn, label=""):
        ticket = Ticket(label)
        with self._prep_lock:
            if len(self._prep_queue) >= self._prep_depth:
                raise BackpressureError(
                    f"prep queue full (depth {self._prep_depth})"
                )
            self._prep_queue.append((fn, ticket))
        return ticket

    def _drain_prep(self, next_cycle):
        self._in_prep = True
        try:
            # Only requests queued before the window opened are drained;
            # anything submitted mid-drain waits for the next cycle's window.
            with self._prep_lock:
                pending = len(self._prep_queue)
            for _ in range(pending):
                with self._prep_lock:
                    fn, ticket = self._prep_queue.popleft()
                try:
                    fn(self, next_cycle)
                except PrepRejected as e:
                    ticket._resolve(Ticket.REJECTED, reason=str(e))
                except ConfigurationError as e:
                    ticket._resolve(Ticket.REJECTED, reason=str(e))
                else:
                    ticket._resolve(Ticket.APPLIED, cycle=next_cycle)
        finally:
            self._in_prep = False

    # -- execution ---------------------------------------------------------

    def run(self, until, start_cycle=1):
        report = RunReport(self.schedule)
        if self.schedule.clock_mode is ClockMode.DETERMINISTIC:
            self._run_deterministic(until, start_cycle, report)
        else:
            self._run_wall(until, start_cycle, report)
        return report

    def _sync_stage_bodies(self, cycle, pos, metrics, timed):
        pl = self.pipeline
        for stage in (INPUT_STAGE, CONTROL_STAGE, OUTPUT_STAGE):
            t0 = time.perf_counter_ns() if timed else 0
            stage_cost = 0
            for entry in self.stage_tasks(stage):
                if timed:
                    tt = time.perf_counter_ns()
                    self._call_stage_task(entry, stage, cycle, pos, metrics)
                    dt = time.perf_counter_ns() - tt
                else:
                    self._call_stage_task(entry, stage, cycle, pos, metrics)
                    dt = entry.modeled_cost_ns(cycle)
                if stage == CONTROL_STAGE:
                    metrics.task_ns[entry.id] = dt
                if entry.priority is Priority.P1:
                    stage_cost += dt
            if stage == CONTROL_STAGE and self.stage2_epilogue is not None:
                self.stage2_epilogue(cycle, pos)
            pl.publish_stage(stage, cycle)
            metrics.stage_ns[stage] = (
                time.perf_counter_ns() - t0 if timed else stage_cost
            )

    def _call_stage_task(self, entry, stage, cycle, pos, metrics):
        if stage == OUTPUT_STAGE:
            entry.fn(cycle, pos, metrics.overrun)
        else:
            entry.fn(cycle, pos)

    def _run_async_stage(self, cycle):
        for entry in self.stage_tasks(ASYNC_STAGE):
            entry.fn(cycle)
        if self.pipeline.completed[ASYNC_STAGE] == cycle - 1:
            self.pipeline.publish_stage(ASYNC_STAGE, cycle)

    def _run_deterministic(self, until, start_cycle, report):
        for cycle in range(start_cycle, until + 1):
            self._drain_prep(cycle)
            metrics = CycleMetrics(cycle)
            pos = self.pipeline.claim(cycle)
            self.in_operation_path = True
            try:
                self._sync_stage_bodies(cycle, pos, metrics, timed=False)
            finally:
                self.in_operation_path = False
            self.current_cycle = cycle
            self.last_metrics = metrics
            report.metrics.append(metrics)
            self._run_async_stage(cycle)

    def _run_wall(self, until, start_cycle, report):
        period_ns = int(self.schedule.period_us * 1000)
        prep_ns = int(self.schedule.prep_offset_us * 1000)
        self._start_async_worker()
        try:
            origin = time.perf_counter_ns() + period_ns
            for cycle in range(start_cycle, until + 1):
                t_start = origin + (cycle - start_cycle) * period_ns
                self._sleep_until(t_start - prep_ns)
                self._drain_prep(cycle)
                self._sleep_until(t_start)
                now = time.perf_counter_ns()
                metrics = CycleMetrics(cycle, start_jitter_ns=now - t_start)
                pos = self.pipeline.claim(cycle)
                self.in_operation_path = True
                try:
                    # hold-last if the deadline already passed at stage-3 entry
                    metrics.overrun = time.perf_counter_ns() > t_start + period_ns
                    self._sync_stage_bodies(cycle, pos, metrics, timed=True)
                finally:
                    self.in_operation_path = False
                end = time.perf_counter_ns()
                if end > t_start + period_ns:
                    metrics.overrun = True
                metrics.deadline_met = not metrics.overrun
                self.current_cycle = cycle
                self.last_metrics = metrics
                report.metrics.append(metrics)
                self._async_queue.append(cycle)
        finally:
            self._stop_async_worker()

    @staticmethod
    def _sleep_until(deadline_ns):
        while True:
            remaining = deadline_ns - time.perf_counter_ns()
            if remaining <= 0:
                return
            if remaining > 200_000:
                time.sleep((remaining - 150_000) / 1e9)
            # busy-wait the final stretch for low jitter

    def _start_async_worker(self):
        self._async_stop.clear()

        def worker():
            while not self._async_stop.is_set():
                if not self._async_queue:
                    time.sleep(0.0002)
                    continue
                cycle = self._async_queue.popleft()
                self._run_async_stage(cycle)

        self._async_thread = threading.Thread(
            target=worker, name="cyclab-p2-worker", daemon=True
        )
        self._async_thread.start()

    def _stop_async_worker(self):
        deadline = time.monotonic() + 1.0
        while self._async_queue and time.monotonic() < deadline:
            time.sleep(0.001)
        self._async_stop.set()
        if self._async_thread is not None:
            self._async_thread.join(timeout=2.0)
            self._async_thread = None
