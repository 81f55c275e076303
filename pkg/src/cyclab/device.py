"""One simulated control device: ring pipeline, cyclic executive, controller
services behind the output gate, plants with actuator ports, twins, and the
device-level adaptation manager wired together.

Stage bodies per cycle:
  1  producer senses every plant and writes the input half of the frame
  2  each controller service computes its output into its frame slot; the
     stage epilogue evaluates the gate, records applied/source, seals the frame
  3  the forwarder actuates exactly one output per asset and steps the plant
  4  twin recorder (transactional read), adaptation monitor, management twin
"""

import math

import numpy as np

from cyclab import frames
from cyclab.adaptation import AdaptationManager, ResourceBudget
from cyclab.control import (
    ControllerSpec,
    Gate,
    PidController,
    Priority,
    Role,
    ServiceDescriptor,
    SwitchDirective,
)
from cyclab.executor import CyclicExecutor, CycleSchedule, TaskEntry
from cyclab.plant import ActuatorPort, PlantModel
from cyclab.ring import RingPipeline, StageGraph
from cyclab.twin import LEVEL_KPI, LEVEL_SUPERVISORY, FidelitySpec, TwinStore

DEFAULT_CAPACITY = 1024


class Device:
    def __init__(self, device_id, asset_ids, schedule=None, seed=0,
                 capacity=DEFAULT_CAPACITY, twin_depth=1_000_000,
                 retention_cycles=1000, mgmt_twin_rate=100,
                 fidelity_specs=None, health_window=1000):
        self.id = device_id
        self.asset_ids = list(asset_ids)
        self.seed = seed
        self.layout = frames.make_layout(self.asset_ids)
        self.schedule = schedule or CycleSchedule()
        self.gate = Gate()
        self.plants = {}
        self.ports = {a: ActuatorPort(a) for a in self.asset_ids}
        self.services = {}       # id -> (descriptor, controller)
        self.slot_owner = {}     # (asset, slot) -> service id
        self.cost_models = {}    # service id -> cost_us value/callable
        self.applied_log = {a: [] for a in self.asset_ids}  # (cycle, service id)
        self.mgmt_twin_rate = mgmt_twin_rate

        graph = StageGraph({1: ["input"], 3: ["forward"],
                            4: ["twin", "monitor", "mgmt-twin"]})
        self.pipeline = RingPipeline(capacity, graph, self.layout)
        self.executor = CyclicExecutor(self.schedule, self.pipeline)

        specs = fidelity_specs
        if specs is None:
            applied = tuple(f"applied_{a}" for a in self.asset_ids)
            specs = {
                LEVEL_SUPERVISORY: FidelitySpec(applied, rate=100, aggregation="mean"),
                # rate is in source records: 100 level-3 windows = 10,000 cycles
                LEVEL_KPI: FidelitySpec(applied, rate=100, aggregation="mean"),
            }
        self.twin = TwinStore(self.layout.names(), specs, depth=twin_depth)
        self.manager = AdaptationManager(
            self.executor, _Binding(self), retention_cycles=retention_cycles,
            health_window=health_window,
        )
        self._register_core_tasks()

    # -- construction ------------------------------------------------------

    def add_plant(self, asset_id, a, b, x0=0.0, noise=None):
        idx = self.asset_ids.index(asset_id)
        self.plants[asset_id] = PlantModel(
            asset_id, a, b, x0=x0, noise=noise, seed=self.seed, asset_index=idx
        )

    def add_active_service(self, service_id, asset_id, spec):
        desc = ServiceDescriptor(
            id=service_id, role=Role.ACTIVE, priority=Priority.P1,
            controller_spec=spec, target_asset=asset_id, slot=0,
        )
        self.services[service_id] = (desc, PidController(spec))
        self.slot_owner[(asset_id, 0)] = service_id
        self.gate.set_initial(asset_id, service_id)
        self._register_service_task(desc)
        return desc

    def make_shadow_descriptor(self, service_id, asset_id, spec):
        return ServiceDescriptor(
            id=service_id, role=Role.SHADOW, priority=Priority.P2,
            controller_spec=spec, target_asset=asset_id, slot=1,
        )

    def set_service_cost(self, service_id, cost_us):
        self.cost_models[service_id] = cost_us
        entry = self.executor.tasks.get(f"svc:{service_id}")
        if entry is not None:
            entry.cost_us = cost_us

    # -- stage bodies ------------------------------------------------------

    def _register_core_tasks(self):
        ex = self.executor
        ex._in_prep = True
        try:
            ex.tasks["input"] = TaskEntry("input", 1, self._produce)
            ex.tasks["forward"] = TaskEntry("forward", 3, self._forward)
            ex.tasks["twin"] = TaskEntry("twin", 4, self._record_twin,
                                         priority=Priority.P1, mode="asynchronous")
            ex.tasks["monitor"] = TaskEntry("monitor", 4, self._monitor,
                                            priority=Priority.P2, mode="asynchronous")
            ex.tasks["mgmt-twin"] = TaskEntry("mgmt-twin", 4, self._mgmt_twin,
                                              priority=Priority.P2,
                                              mode="asynchronous")
        finally:
            ex._in_prep = False
        ex.stage2_epilogue = self._gate_and_seal

    def _register_service_task(self, desc):
        entry = TaskEntry(
            f"svc:{desc.id}", 2, self._make_service_fn(desc),
            priority=desc.priority, budget_us=0.0,
            cost_us=self.cost_models.get(desc.id, 1.0),
        )
        ex = self.executor
        if ex._in_prep:
            ex.register_task(entry)
        else:
            ex._in_prep = True
            try:
                ex.register_task(entry)
            finally:
                ex._in_prep = False

    def _make_service_fn(self, desc):
        controller = self.services[desc.id][1]
        asset_idx = self.asset_ids.index(desc.target_asset)
        y_col = self.layout.col("y", asset_idx)
        u_col = self.layout.service_col(asset_idx, desc.slot)
        frames_arr = self.pipeline.frames

        def run(cycle, pos):
            y = frames_arr[pos, y_col]
            frames_arr[pos, u_col] = controller.step(y)

        return run

    def _produce(self, cycle, pos):
        row = self.pipeline.frames[pos]
        layout = self.layout
        for idx, asset in enumerate(self.asset_ids):
            plant = self.plants[asset]
            row[layout.col("x", idx)] = plant.x
            row[layout.col("y", idx)] = plant.sense()
            row[layout.col("u0", idx)] = math.nan
            row[layout.col("u1", idx)] = math.nan
            row[layout.col("applied", idx)] = math.nan
            row[layout.col("source", idx)] = frames.NO_SOURCE
            row[layout.col("fault", idx)] = 0.0

    def _gate_and_seal(self, cycle, pos):
        row = self.pipeline.frames[pos]
        layout = self.layout
        for idx, asset in enumerate(self.asset_ids):
            outputs = {}
            for slot in (0, 1):
                owner = self.slot_owner.get((asset, slot))
                if owner is None:
                    continue
                value = row[layout.service_col(idx, slot)]
                if not math.isnan(value):
                    outputs[owner] = value
            decision = self.gate.apply(asset, cycle, outputs)
            desc = self.services[decision.source][0]
            row[layout.col("applied", idx)] = decision.applied
            row[layout.col("source", idx)] = float(desc.slot)
            row[layout.col("fault", idx)] = 1.0 if decision.fault else 0.0
            self.applied_log[asset].append((cycle, decision.source))
        self.pipeline.seal(pos)

    def _forward(self, cycle, pos, overrun):
        row = self.pipeline.frames[pos]
        layout = self.layout
        for idx, asset in enumerate(self.asset_ids):
            port = self.ports[asset]
            port.begin_cycle(cycle)
            designated = self.gate.designated(asset, cycle)
            if overrun:
                # deadline already missed: fail-operational hold-last
                port.actuate(port.last_value, designated, designated)
            else:
                slot = int(row[layout.col("source", idx)])
                source = self.slot_owner.get((asset, slot))
                port.actuate(row[layout.col("applied", idx)], source, designated)
            self.plants[asset].step(port.last_value)

    def _record_twin(self, cycle):
        row = self.pipeline.try_read_cycle(cycle)
        if row is None:
            self.twin.ops.skip()
            return
        values = dict(zip(self.layout.names(), (float(v) for v in row)))
        del values["cycle"]
        self.twin.ops.record(cycle, values)

    def _monitor(self, cycle):
        metrics = self.executor.last_metrics
        if metrics is not None and metrics.cycle == cycle:
            self.manager.on_cycle(metrics)

    def _mgmt_twin(self, cycle):
        if cycle % self.mgmt_twin_rate == 0:
            self.twin.update_management(self.snapshot())

    # -- management surface ------------------------------------------------

    def deploy_shadow(self, service_id, asset_id, spec, budget=None):
        desc = self.make_shadow_descriptor(service_id, asset_id, spec)
        return self.manager.deploy_shadow(desc, budget or ResourceBudget())

    def request_promote(self, asset_id, k):
        return self.manager.request_promote(asset_id, k)

    def request_rollback(self, asset_id, m):
        return self.manager.request_rollback(asset_id, m)

    def snapshot(self):
        snap = self.manager.snapshot()
        snap["device"] = self.id
        snap["services"] = {
            sid: {"asset": d.target_asset, "role": d.role.value,
                  "priority": d.priority.value, "slot": d.slot}
            for sid, (d, _) in self.services.items()
        }
        snap["twin"] = {"recorded": self.twin.ops.recorded,
                        "skipped": self.twin.ops.skipped}
        snap["integrity_faults"] = self.integrity_faults()
        return snap

    def integrity_faults(self):
        return sum(len(p.faults) for p in self.ports.values())

    def finish(self):
        for port in self.ports.values():
            port.finish()

    def run(self, until):
        report = self.executor.run(until)
        self.finish()
        return report

    def divergence(self, asset_id, first, last):
        return self.twin.ops.divergence(
            f"u0_{asset_id}", f"u1_{asset_id}", first, last
        )


class _Binding:
    """Adaptation-manager effectors; every method runs inside a prep window."""

    def __init__(self, device):
        self.device = device

    def bind_shadow(self, descriptor):
        dev = self.device
        dev.services[descriptor.id] = (descriptor, PidController(descriptor.controller_spec))
        dev.slot_owner[(descriptor.target_asset, descriptor.slot)] = descriptor.id
        dev._register_service_task(descriptor)

    def unbind_shadow(self, descriptor):
        dev = self.device
        task_id = f"svc:{descriptor.id}"
        if task_id in dev.executor.tasks:
            dev.executor.deregister_task(task_id)
        dev.services.pop(descriptor.id, None)
        dev.slot_owner.pop((descriptor.target_asset, descriptor.slot), None)

    def promote_shadow(self, descriptor):
        dev = self.device
        descriptor.role = Role.ACTIVE
        descriptor.priority = Priority.P1
        entry = dev.executor.tasks.get(f"svc:{descriptor.id}")
        if entry is not None:
            entry.priority = Priority.P1

    def retire_active(self, shadow_descriptor):
        """Decommission the service the promoted shadow replaced."""
        dev = self.device
        asset = shadow_descriptor.target_asset
        for sid, (desc, _) in list(dev.services.items()):
            if desc.target_asset == asset and sid != shadow_descriptor.id:
                task_id = f"svc:{sid}"
                if task_id in dev.executor.tasks:
                    dev.executor.deregister_task(task_id)
                dev.services.pop(sid, None)
                dev.slot_owner.pop((asset, desc.slot), None)

    def arm_switch(self, asset, k, direction):
        dev = self.device
        current = dev.executor.current_cycle
        if direction == "promote":
            target = dev.slot_owner.get((asset, 1))
        else:
            target = dev.slot_owner.get((asset, 0))
        if target is None:
            from cyclab.executor import PrepRejected
            raise PrepRejected(f"no {direction} target deployed for {asset!r}")
        dev.gate.arm(SwitchDirective(asset, k, direction), current, target)


def build_single_asset_device(device_id="dev0", asset="asset0", seed=42,
                              schedule=None, plant=None, controller=None,
                              **kwargs):
    """Convenience wiring for tests: one plant, one active PID service."""
    dev = Device(device_id, [asset], schedule=schedule, seed=seed, **kwargs)
    plant = plant or {"a": 0.9, "b": 0.1, "x0": 0.0}
    dev.add_plant(asset, **plant)
    spec = controller or ControllerSpec(kp=2.0, ki=0.5, kd=0.0, setpoint=1.0,
                                        integral_clamp=10.0)
    dev.add_active_service("A", asset, spec)
    return dev
