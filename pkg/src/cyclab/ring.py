"""Bounded shared ring pipeline with per-stage barriers and seqlock reads.

The producer (the stage-1 input task) claims one slot per cycle and is never
blocked by consumer progress: claiming re-stamps the slot's cycle index first,
which invalidates any in-flight transactional read of the old entry. Slower
asynchronous readers detect the invalidation by comparing the stamp before and
after their copy. Synchronous stages 1-3 hand cycles forward through per-stage
sequence counters; everything after stage 2 is read-only.
"""

import threading

import numpy as np

from cyclab import _kernels

INPUT_STAGE = 1
CONTROL_STAGE = 2
OUTPUT_STAGE = 3
ASYNC_STAGE = 4

SYNC_STAGES = (INPUT_STAGE, CONTROL_STAGE, OUTPUT_STAGE)
ALL_STAGES = (INPUT_STAGE, CONTROL_STAGE, OUTPUT_STAGE, ASYNC_STAGE)

# Cycles are numbered from 1; stamp 0 marks a slot that was never written, so
# first-lap reads fail validation instead of returning garbage.
NEVER_WRITTEN = 0

WRITER_STAGES = (INPUT_STAGE, CONTROL_STAGE)


class ConfigurationError(Exception):
    """Invalid pipeline/stage-graph configuration."""


class PipelineProtocolError(Exception):
    """Operation called out of the legal cycle/stage order."""


class StageGraph:
    """Ordered four-stage task graph with a single stage-1 producer."""

    def __init__(self, tasks_per_stage):
        self.tasks_per_stage = {s: list(tasks_per_stage.get(s, [])) for s in ALL_STAGES}
        self.validate()

    def validate(self):
        unknown = set(self.tasks_per_stage) - set(ALL_STAGES)
        if unknown:
            raise ConfigurationError(f"unknown stages: {sorted(unknown)}")
        producers = self.tasks_per_stage[INPUT_STAGE]
        if len(producers) != 1:
            raise ConfigurationError(
                f"exactly one stage-1 producer required, got {len(producers)}"
            )
        seen = set()
        for tasks in self.tasks_per_stage.values():
            for task in tasks:
                if task in seen:
                    raise ConfigurationError(f"duplicate task id {task!r}")
                seen.add(task)

    @property
    def producer(self):
        return self.tasks_per_stage[INPUT_STAGE][0]

    def stage_of(self, task_id):
        for stage, tasks in self.tasks_per_stage.items():
            if task_id in tasks:
                return stage
        raise ConfigurationError(f"unknown task {task_id!r}")

    def may_write(self, task_id):
        return self.stage_of(task_id) in WRITER_STAGES

    def applied(self, delta):
        """Return a new validated graph with `delta` applied."""
        tasks = {s: list(t) for s, t in self.tasks_per_stage.items()}
        for task_id in delta.remove:
            stage = None
            for s, ts in tasks.items():
                if task_id in ts:
                    stage = s
                    ts.remove(task_id)
            if stage is None:
                raise ConfigurationError(f"cannot remove unknown task {task_id!r}")
            if stage == INPUT_STAGE and not tasks[INPUT_STAGE]:
                raise ConfigurationError("cannot remove the sole producer")
        for stage, task_id in delta.add:
            if stage not in ALL_STAGES:
                raise ConfigurationError(f"invalid stage {stage}")
            if stage == INPUT_STAGE and tasks[INPUT_STAGE]:
                raise ConfigurationError("second producer not allowed")
            tasks[stage].append(task_id)
        return StageGraph(tasks)


class GraphDelta:
    """Reconfiguration change set applied at a preparation window."""

    def __init__(self, add=(), remove=()):
        self.add = list(add)        # (stage, task_id)
        self.remove = list(remove)  # task_id

    def __bool__(self):
        return bool(self.add or self.remove)


class ReadTxn:
    """One transactional read attempt; confined to its creating worker."""

    __slots__ = ("position", "observed_stamp")

    def __init__(self, position, observed_stamp):
        self.position = position
        self.observed_stamp = observed_stamp


class RingPipeline:
    """The adapted Disruptor: wait-free producer, transactional consumers."""

    def __init__(self, capacity, graph, layout):
        if capacity < 2 or capacity & (capacity - 1):
            raise ConfigurationError(
                f"capacity must be a power of two >= 2, got {capacity}"
            )
        graph.validate()
        self.capacity = capacity
        self.mask = capacity - 1
        self.graph = graph
        self.layout = layout
        self.stamps = np.full(capacity, NEVER_WRITTEN, dtype=np.int64)
        self.frames = np.zeros((capacity, layout.width))
        self.checksums = np.zeros(capacity, dtype=np.uint64)
        # int64 mirrors readable from the nogil stress kernel: produced is
        # bumped at claim, published when stage 2 seals the frame
        self.produced_ref = np.zeros(1, dtype=np.int64)
        self.published_ref = np.zeros(1, dtype=np.int64)
        self.produced = 0
        self.completed = {s: 0 for s in ALL_STAGES}
        self.invalidated_reads = 0
        self.last_claim_steps = 0
        self._reconfig_lock = threading.Lock()

    # -- producer side -----------------------------------------------------

    def claim(self, cycle):
        """Reserve the slot for `cycle`; never waits on any consumer.

        The slot stamp is overwritten first, in one store, so readers of the
        old entry see the invalidation before any frame byte changes.
        """
        steps = 1
        if cycle != self.produced + 1:
            raise PipelineProtocolError(
                f"claim({cycle}) out of order, produced={self.produced}"
            )
        pos = cycle & self.mask
        steps += 1
        self.stamps[pos] = cycle  # single release store; old entry now invalid
        steps += 1
        self.frames[pos, 0] = cycle
        self.produced = cycle
        self.produced_ref[0] = cycle
        steps += 2
        self.last_claim_steps = steps
        return pos

    def seal(self, pos):
        """Freeze the frame: record its checksum after all writes are done."""
        self.checksums[pos] = _kernels.checksum_row(self.frames[pos])

    def publish_stage(self, stage, cycle):
        if stage not in ALL_STAGES:
            raise PipelineProtocolError(f"unknown stage {stage}")
        if cycle != self.completed[stage] + 1:
            raise PipelineProtocolError(
                f"publish_stage({stage}, {cycle}) out of order, "
                f"completed={self.completed[stage]}"
            )
        upstream = self.produced if stage == INPUT_STAGE else self.completed[stage - 1]
        if cycle > upstream:
            raise PipelineProtocolError(
                f"stage {stage} publishing cycle {cycle} ahead of upstream ({upstream})"
            )
        self.completed[stage] = cycle
        if stage == CONTROL_STAGE:
            self.published_ref[0] = cycle

    def available(self, stage):
        """Highest cycle a `stage` task may consume."""
        if stage == INPUT_STAGE:
            return self.produced
        return self.completed[stage - 1]

    # -- consumer side -----------------------------------------------------

    def begin_read(self, position):
        return ReadTxn(position, int(self.stamps[position]))

    def read_frame(self, txn):
        return self.frames[txn.position].copy()

    def end_read(self, txn):
        valid = int(self.stamps[txn.position]) == txn.observed_stamp
        if not valid:
            self.invalidated_reads += 1
        return valid

    def try_read_cycle(self, cycle, out=None):
        """Validated copy of the frame of `cycle`, or None if overwritten."""
        if out is None:
            out = np.empty(self.layout.width)
        r = _kernels.try_read_cycle(
            self.stamps, self.frames, self.checksums, cycle, self.mask, out
        )
        if r == 1:
            return out
        if r == -1:
            raise AssertionError(f"validated read with checksum mismatch at cycle {cycle}")
        self.invalidated_reads += 1
        return None

    # -- reconfiguration ---------------------------------------------------

    def reconfigure(self, delta):
        """Swap in a new stage graph; caller must be inside a prep window."""
        with self._reconfig_lock:
            self.graph = self.graph.applied(delta)

    # -- diagnostics -------------------------------------------------------

    def debug_dump(self):
        lines = [
            f"ring capacity={self.capacity} produced={self.produced} "
            f"completed={ {s: self.completed[s] for s in ALL_STAGES} }",
            f"invalidated_reads={self.invalidated_reads}",
        ]
        for pos in range(self.capacity):
            lines.append(
                f"  slot {pos}: stamp={int(self.stamps[pos])} "
                f"crc={int(self.checksums[pos]):016x}"
            )
        return "\n".join(lines)
