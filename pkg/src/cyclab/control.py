"""Controller services, the software output gate, and cycle-atomic switching.

The gate is the freedom-from-interference boundary: every cycle it designates
exactly one service per asset whose output reaches the actuator; all other
outputs are recorded for the twins but blocked in software. Switching and
rollback are breakpoints in the gate's cycle->service mapping, armed during
preparation windows and taking effect at exactly the agreed cycle.
"""

import math
from dataclasses import dataclass
from enum import Enum

from cyclab import _kernels


class Role(Enum):
    ACTIVE = "active"
    SHADOW = "shadow"


class Priority(Enum):
    P1 = "P1"
    P2 = "P2"


class GateError(Exception):
    """Switch directive rejected or gate misconfigured."""


@dataclass
class ControllerSpec:
    kp: float
    ki: float
    kd: float
    setpoint: float
    integral_clamp: float = 1e6

    @classmethod
    def from_dict(cls, d):
        return cls(
            kp=float(d.get("kp", 0.0)),
            ki=float(d.get("ki", 0.0)),
            kd=float(d.get("kd", 0.0)),
            setpoint=float(d.get("setpoint", 0.0)),
            integral_clamp=float(d.get("integral_clamp", 1e6)),
        )


class PidController:
    """Discrete PID with clamped integral; state confined to its stage-2 task."""

    def __init__(self, spec):
        self.spec = spec
        self.integral = 0.0
        self.prev_err = 0.0
        self.faulted = False

    def step(self, measurement):
        if not math.isfinite(measurement):
            self.faulted = True
            raise ValueError(f"non-finite measurement {measurement!r}")
        s = self.spec
        u, self.integral, self.prev_err = _kernels.pid_step(
            s.kp, s.ki, s.kd, s.setpoint, s.integral_clamp,
            self.integral, self.prev_err, measurement,
        )
        return u


@dataclass
class ServiceDescriptor:
    id: str
    role: Role
    priority: Priority
    controller_spec: ControllerSpec
    target_asset: str
    slot: int = 0  # frame service-output slot


@dataclass
class SwitchDirective:
    asset: str
    switch_cycle: int
    direction: str  # "promote" | "rollback"


@dataclass
class GateDecision:
    applied: float
    source: str
    fault: bool = False


class Gate:
    """Per-asset step function from cycle ranges to the forwarding service."""

    def __init__(self):
        # asset -> ordered list of (from_cycle, service_id)
        self._breakpoints = {}
        self._last_applied = {}
        self._last_eval_cycle = {}

    def set_initial(self, asset, service_id):
        self._breakpoints[asset] = [(1, service_id)]

    def assets(self):
        return list(self._breakpoints)

    def designated(self, asset, cycle):
        points = self._breakpoints.get(asset)
        if not points:
            raise GateError(f"no service gated for asset {asset!r}")
        current = points[0][1]
        for from_cycle, service_id in points:
            if cycle >= from_cycle:
                current = service_id
            else:
                break
        return current

    def arm(self, directive, current_cycle, target_service):
        """Install a switch breakpoint; must run inside a prep window."""
        if directive.switch_cycle < current_cycle + 1:
            raise GateError(
                f"switch cycle {directive.switch_cycle} not after current "
                f"cycle {current_cycle}"
            )
        points = self._breakpoints.get(directive.asset)
        if points is None:
            raise GateError(f"no service gated for asset {directive.asset!r}")
        points.append((directive.switch_cycle, target_service))
        points.sort(key=lambda p: p[0])

    def apply(self, asset, cycle, outputs):
        """Pick the one output forwarded to the actuator this cycle."""
        last = self._last_eval_cycle.get(asset)
        if last == cycle:
            raise GateError(f"gate evaluated twice for {asset!r} cycle {cycle}")
        self._last_eval_cycle[asset] = cycle
        source = self.designated(asset, cycle)
        value = outputs.get(source)
        if value is None or not math.isfinite(value):
            held = self._last_applied.get(asset, 0.0)
            decision = GateDecision(applied=held, source=source, fault=True)
        else:
            decision = GateDecision(applied=value, source=source)
        self._last_applied[asset] = decision.applied
        return decision

    def breakpoints(self, asset):
        return list(self._breakpoints.get(asset, ()))
