"""Simulated physical layer: first-order plants, sensors, actuator ports.

The actuator port is the fieldbus boundary where output gating is enforced:
exactly one tagged write per asset per cycle, never from a shadow service.
Violations are recorded as integrity faults, not silently accepted.
"""

from dataclasses import dataclass

import numpy as np

from cyclab import _kernels


@dataclass
class NoiseSpec:
    std: float = 0.0


@dataclass
class IntegrityFault:
    cycle: int
    asset: str
    reason: str


class PlantModel:
    """x' = a*x + b*u + d with optional seeded sensor noise."""

    def __init__(self, asset_id, a, b, x0=0.0, noise=None, seed=0, asset_index=0):
        if abs(a) >= 1.0:
            raise ValueError(f"default plant must be stable, |a| < 1 (got {a})")
        self.asset_id = asset_id
        self.a = a
        self.b = b
        self.x = x0
        self.noise = noise or NoiseSpec()
        # Per-asset stream: asset 2's trajectory stays bit-identical whether
        # or not another asset gets a shadow deployment.
        self._rng = np.random.default_rng((seed, asset_index))

    def sense(self):
        if self.noise.std > 0.0:
            return self.x + self._rng.normal(0.0, self.noise.std)
        return self.x

    def step(self, u, d=0.0):
        self.x = _kernels.plant_step(self.a, self.b, self.x, u, d)
        return self.x


class ActuatorPort:
    """Single-writer actuator boundary; the zero-downtime probe lives here."""

    def __init__(self, asset_id):
        self.asset_id = asset_id
        self.last_value = 0.0
        self.last_source = None
        self.total_writes = 0
        self.faults = []
        self._cycle = None
        self._writes_this_cycle = 0

    def begin_cycle(self, cycle):
        if self._cycle is not None and self._writes_this_cycle != 1:
            self.faults.append(
                IntegrityFault(self._cycle, self.asset_id,
                               f"{self._writes_this_cycle} writes in cycle")
            )
        self._cycle = cycle
        self._writes_this_cycle = 0

    def actuate(self, value, source, expected_source=None):
        if self._writes_this_cycle >= 1:
            self.faults.append(
                IntegrityFault(self._cycle, self.asset_id, "duplicate actuate")
            )
            return
        if expected_source is not None and source != expected_source:
            self.faults.append(
                IntegrityFault(self._cycle, self.asset_id,
                               f"ungated output from {source!r} reached actuator")
            )
            return
        self._writes_this_cycle += 1
        self.total_writes += 1
        self.last_value = value
        self.last_source = source

    def finish(self):
        """Close the final cycle's bookkeeping."""
        if self._cycle is not None and self._writes_this_cycle != 1:
            self.faults.append(
                IntegrityFault(self._cycle, self.asset_id,
                               f"{self._writes_this_cycle} writes in cycle")
            )
            self._cycle = None
