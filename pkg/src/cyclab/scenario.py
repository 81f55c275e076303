"""Scenario configuration (YAML) and the embedded scenario runner.

A scenario describes the device under test: cycle schedule, plants, the A and
optional B controller specs, resource budgets, and a script of management
events. Event semantics: `deploy_shadow` and `inject_budget_violation` fire at
their stated cycle; `promote` and `rollback` state the cycle the switch takes
effect, so the underlying request is issued `request_lead` cycles earlier.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import yaml

from cyclab import _kernels
from cyclab.adaptation import Phase, RequestRejected, ResourceBudget
from cyclab.control import ControllerSpec
from cyclab.device import Device
from cyclab.executor import ClockMode, CycleSchedule
from cyclab.plant import NoiseSpec


class ScenarioError(Exception):
    """Scenario file violates the schema."""


@dataclass
class AssetConfig:
    id: str
    plant: dict
    controller_a: ControllerSpec
    controller_b: ControllerSpec = None
    noise_std: float = 0.0


@dataclass
class Event:
    cycle: int
    action: str
    asset: str = None
    params: dict = field(default_factory=dict)


KNOWN_ACTIONS = ("deploy_shadow", "promote", "rollback", "abort",
                 "inject_budget_violation")


@dataclass
class Scenario:
    name: str
    seed: int
    run_cycles: int
    schedule: CycleSchedule
    assets: list
    budget: ResourceBudget
    events: list
    capacity: int = 1024
    retention_cycles: int = 1000
    request_lead: int = 10

    @classmethod
    def from_dict(cls, d):
        try:
            schedule_d = d.get("schedule", {})
            clock = ClockMode(schedule_d.get("clock", "deterministic"))
            schedule = CycleSchedule(
                period_us=float(schedule_d.get("period_us", 1000.0)),
                prep_offset_us=float(
                    schedule_d.get("prep_offset_us",
                                   0.1 * float(schedule_d.get("period_us", 1000.0)))
                ),
                clock_mode=clock,
            )
            if clock is ClockMode.DETERMINISTIC and "seed" not in d:
                raise ScenarioError("seed is mandatory in deterministic mode")
            assets = []
            for a in d.get("assets", []):
                cb = a.get("controller_b")
                assets.append(AssetConfig(
                    id=str(a["id"]),
                    plant=dict(a.get("plant", {"a": 0.9, "b": 0.1, "x0": 0.0})),
                    controller_a=ControllerSpec.from_dict(a["controller_a"]),
                    controller_b=ControllerSpec.from_dict(cb) if cb else None,
                    noise_std=float(a.get("plant", {}).get("noise_std", 0.0)),
                ))
            if not assets:
                raise ScenarioError("at least one asset required")
            budget_d = d.get("budget", {})
            budget = ResourceBudget(
                max_stage2_us=float(budget_d.get("max_stage2_us", 200.0)),
                violation_threshold=int(budget_d.get("violation_threshold", 5)),
                arena_bytes=int(budget_d.get("arena_bytes", 1 << 20)),
            )
            events = []
            last_cycle = 0
            for e in d.get("events", []):
                ev = Event(
                    cycle=int(e["cycle"]), action=str(e["action"]),
                    asset=e.get("asset", assets[0].id),
                    params={k: v for k, v in e.items()
                            if k not in ("cycle", "action", "asset")},
                )
                if ev.action not in KNOWN_ACTIONS:
                    raise ScenarioError(f"unknown event action {ev.action!r}")
                if ev.cycle <= last_cycle:
                    raise ScenarioError("event cycles must be strictly increasing")
                last_cycle = ev.cycle
                events.append(ev)
            return cls(
                name=str(d.get("name", "scenario")),
                seed=int(d.get("seed", 0)),
                run_cycles=int(d["run_cycles"]),
                schedule=schedule,
                assets=assets,
                budget=budget,
                events=events,
                capacity=int(d.get("capacity", 1024)),
                retention_cycles=int(d.get("retention_cycles", 1000)),
                request_lead=int(d.get("request_lead", 10)),
            )
        except KeyError as e:
            raise ScenarioError(f"missing required field: {e}") from e

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))


def build_device(scenario, device_id="dev0"):
    dev = Device(
        device_id, [a.id for a in scenario.assets],
        schedule=scenario.schedule, seed=scenario.seed,
        capacity=scenario.capacity, retention_cycles=scenario.retention_cycles,
    )
    for a in scenario.assets:
        plant = dict(a.plant)
        noise_std = plant.pop("noise_std", a.noise_std)
        dev.add_plant(a.id, noise=NoiseSpec(std=noise_std) if noise_std else None,
                      **plant)
        dev.add_active_service(f"A@{a.id}", a.id, a.controller_a)
    return dev


@dataclass
class RunResult:
    scenario: Scenario
    device: Device
    report: object
    tickets: list
    switch_cycles: list

    def summary(self):
        dev = self.device
        shadow_windows = {}
        for asset in dev.asset_ids:
            div = dev.divergence(asset, 1, dev.executor.current_cycle)
            shadow_windows[asset] = {
                "divergence_rms": div.rms, "divergence_max": div.max,
                "compared_cycles": div.count,
            }
        recorded = dev.twin.ops.recorded
        skipped = dev.twin.ops.skipped
        return {
            "scenario": self.scenario.name,
            "backend": _kernels.BACKEND,
            "cycles": self.report.cycles,
            "overruns": self.report.overruns,
            "deadline_ratio": self.report.deadline_ratio(),
            "p99_start_jitter_ns": self.report.jitter_percentile(99),
            "switch_cycles": self.switch_cycles,
            "divergence": shadow_windows,
            "twin_skip_ratio": skipped / max(1, recorded + skipped),
            "integrity_faults": dev.integrity_faults(),
            "adaptation": dev.manager.snapshot()["assets"],
            "transitions": dev.manager.history_records(),
        }

    def export_csv(self, path):
        """Per-cycle frame log in the documented column order (first asset;
        additional assets go to sibling `_<asset>.csv` files)."""
        dev = self.device
        period_ns = int(self.scenario.schedule.period_us * 1000)
        jitter = {m.cycle: m.start_jitter_ns for m in self.report.metrics}
        overrun = {m.cycle: m.overrun for m in self.report.metrics}
        for n, asset in enumerate(dev.asset_ids):
            target = path if n == 0 else _sibling(path, asset)
            with open(target, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["cycle", "t_start_ns", "x", "y", "u_A", "u_B",
                            "u_applied", "source", "overrun",
                            "adaptation_state"])
                sources = dict(dev.applied_log.get(asset, ()))
                for rec in dev.twin.ops.records:
                    c = rec.window[0]
                    v = rec.values
                    w.writerow([
                        c,
                        (c - 1) * period_ns + jitter.get(c, 0),
                        v.get(f"x_{asset}"),
                        v.get(f"y_{asset}"),
                        _num(v.get(f"u0_{asset}")),
                        _num(v.get(f"u1_{asset}")),
                        v.get(f"applied_{asset}"),
                        sources.get(c, ""),
                        int(overrun.get(c, False)),
                        dev.manager.phase_at(asset, c).value,
                    ])

    def export_summary(self, path):
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")


def _num(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return v


def _sibling(path, asset):
    if path.endswith(".csv"):
        return f"{path[:-4]}_{asset}.csv"
    return f"{path}_{asset}.csv"


def run_scenario(scenario, device=None, progress=None):
    """Execute a scenario embedded (no gateway); returns a RunResult."""
    dev = device or build_device(scenario)
    ex = dev.executor
    tickets = []
    switch_cycles = []

    # (trigger_cycle, fn) pairs; promote/rollback requests lead their cycle
    actions = []
    for ev in scenario.events:
        if ev.action == "deploy_shadow":
            actions.append((ev.cycle, _deploy_fn(dev, scenario, ev, tickets)))
        elif ev.action == "inject_budget_violation":
            actions.append((ev.cycle, _inject_fn(dev, ev)))
        elif ev.action == "abort":
            actions.append((ev.cycle, _abort_fn(dev, ev, tickets)))
        elif ev.action in ("promote", "rollback"):
            trigger = max(1, ev.cycle - scenario.request_lead)
            actions.append(
                (trigger, _switch_fn(dev, ev, tickets, switch_cycles))
            )
    actions.sort(key=lambda t: t[0])

    cursor = 1
    report = None
    for trigger, fn in actions:
        if trigger > scenario.run_cycles:
            break
        if trigger > cursor:
            seg = ex.run(trigger - 1, start_cycle=cursor)
            report = _merge(report, seg)
            cursor = trigger
        fn()
        if progress:
            progress(cursor)
    if cursor <= scenario.run_cycles:
        seg = ex.run(scenario.run_cycles, start_cycle=cursor)
        report = _merge(report, seg)
    dev.finish()
    return RunResult(scenario, dev, report, tickets, switch_cycles)


def _merge(report, segment):
    if report is None:
        return segment
    report.metrics.extend(segment.metrics)
    return report


def _deploy_fn(dev, scenario, ev, tickets):
    def fire():
        cfg = next(a for a in scenario.assets if a.id == ev.asset)
        spec = cfg.controller_b or cfg.controller_a
        t = dev.deploy_shadow(f"B@{ev.asset}", ev.asset, spec, scenario.budget)
        tickets.append(("deploy_shadow", ev.asset, t))
    return fire


def _inject_fn(dev, ev):
    start = ev.cycle
    cost = float(ev.params.get("cost_us", 1e6))

    def fire():
        sid = f"B@{ev.asset}"
        dev.set_service_cost(sid, lambda c: cost if c >= start else 1.0)
    return fire


def _abort_fn(dev, ev, tickets):
    def fire():
        try:
            dev.manager.request_abort(ev.asset)
        except RequestRejected as e:
            tickets.append(("abort", ev.asset, str(e)))
    return fire


def _switch_fn(dev, ev, tickets, switch_cycles):
    def fire():
        try:
            if ev.action == "promote":
                t = dev.request_promote(ev.asset, ev.cycle)
            else:
                t = dev.request_rollback(ev.asset, ev.cycle)
            tickets.append((ev.action, ev.asset, t))
            switch_cycles.append(ev.cycle)
        except RequestRejected as e:
            tickets.append((ev.action, ev.asset, str(e)))
    return fire
