"""Layered twin store: high-fidelity operations twin, management twin, and
fidelity-reducing downsampling between levels.

The operations twin (level 2) appends one record per validated transactional
read of the ring; skipped cycles are counted, never back-filled -- bounded
loss is acceptable for twinning, never for control. Higher levels (3 and 5)
are pure functions of the level below: windowed aggregates at a reduced rate.
"""

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field

LEVEL_CONTROL = 2
LEVEL_SUPERVISORY = 3
LEVEL_KPI = 5

AGGREGATIONS = ("latest", "mean", "max", "rms")


class TwinQueryError(Exception):
    """Unknown level, signal, or malformed fidelity spec."""


@dataclass
class FidelitySpec:
    parameters: tuple
    rate: int = 1
    aggregation: str = "latest"

    def __post_init__(self):
        if self.rate < 1:
            raise TwinQueryError(f"twinning rate must be >= 1, got {self.rate}")
        if self.aggregation not in AGGREGATIONS:
            raise TwinQueryError(f"unknown aggregation {self.aggregation!r}")
        self.parameters = tuple(self.parameters)


@dataclass
class TwinRecord:
    level: int
    window: tuple  # (first_cycle, last_cycle); equal for rate-1 records
    values: dict


@dataclass
class DivergenceMetrics:
    window: tuple
    count: int = 0
    rms: float = 0.0
    max: float = 0.0
    per_cycle: list = field(default_factory=list)

    @property
    def empty(self):
        return self.count == 0


def _aggregate(kind, samples):
    if kind == "latest":
        return samples[-1]
    if kind == "mean":
        return sum(samples) / len(samples)
    if kind == "max":
        return max(samples)
    if kind == "rms":
        return math.sqrt(sum(v * v for v in samples) / len(samples))
    raise TwinQueryError(f"unknown aggregation {kind!r}")


def downsample(records, spec):
    """Aggregate ordered source records into one record per complete window.

    A trailing incomplete window is dropped; call with flush=True semantics by
    passing exactly window-aligned input if the tail is wanted.
    """
    out = []
    window = []
    for rec in records:
        for name in spec.parameters:
            if name not in rec.values:
                raise TwinQueryError(f"unknown signal {name!r} in fidelity spec")
        window.append(rec)
        if len(window) == spec.rate:
            values = {
                name: _aggregate(spec.aggregation, [r.values[name] for r in window])
                for name in spec.parameters
            }
            out.append(
                TwinRecord(
                    level=window[0].level + 1,
                    window=(window[0].window[0], window[-1].window[1]),
                    values=values,
                )
            )
            window = []
    return out


class OpsTwin:
    """Level-2 operations twin: bounded in-memory ring of per-cycle records."""

    def __init__(self, signal_names, depth=1_000_000):
        self.signal_names = tuple(signal_names)
        self.records = deque(maxlen=depth)
        self.skipped = 0
        self.recorded = 0

    def record(self, cycle, values):
        self.records.append(TwinRecord(LEVEL_CONTROL, (cycle, cycle), dict(values)))
        self.recorded += 1

    def skip(self, count=1):
        self.skipped += count

    def query(self, signals, first, last):
        for s in signals:
            if s not in self.signal_names:
                raise TwinQueryError(f"unknown signal {s!r}")
        out = []
        for rec in self.records:
            c = rec.window[0]
            if first <= c <= last:
                out.append(
                    TwinRecord(rec.level, rec.window,
                               {s: rec.values[s] for s in signals if s in rec.values})
                )
        return out

    def divergence(self, a_signal, b_signal, first, last):
        """|u_A - u_B| per cycle plus windowed rms/max over [first, last]."""
        diffs = []
        for rec in self.records:
            c = rec.window[0]
            if not first <= c <= last:
                continue
            ua = rec.values.get(a_signal)
            ub = rec.values.get(b_signal)
            if ua is None or ub is None or math.isnan(ua) or math.isnan(ub):
                continue
            diffs.append((c, abs(ua - ub)))
        m = DivergenceMetrics(window=(first, last))
        if not diffs:
            return m
        m.per_cycle = diffs
        m.count = len(diffs)
        m.max = max(d for _, d in diffs)
        m.rms = math.sqrt(sum(d * d for _, d in diffs) / len(diffs))
        return m

    def export_csv(self, path, signals=None):
        signals = tuple(signals or self.signal_names)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("cycle",) + signals)
            for rec in self.records:
                w.writerow([rec.window[0]] + [rec.values.get(s, "") for s in signals])


class TwinStore:
    """Operations twin plus derived levels and the management twin."""

    def __init__(self, signal_names, fidelity_specs=None, depth=1_000_000):
        self.ops = OpsTwin(signal_names, depth=depth)
        self.fidelity = dict(fidelity_specs or {})  # level -> FidelitySpec
        self.management = {}

    def query(self, level, signals, first, last):
        if level == LEVEL_CONTROL:
            return self.ops.query(signals, first, last)
        spec = self.fidelity.get(level)
        if spec is None:
            raise TwinQueryError(f"no fidelity spec for level {level}")
        source = self.ops.query(spec.parameters, first, last)
        if level == LEVEL_KPI and LEVEL_SUPERVISORY in self.fidelity:
            source = downsample(source, self.fidelity[LEVEL_SUPERVISORY])
        records = downsample(source, spec)
        return [
            TwinRecord(level, r.window, {s: r.values[s] for s in signals})
            for r in records
        ]

    def update_management(self, snapshot):
        self.management = dict(snapshot)

    def snapshot_management_state(self):
        return dict(self.management)

    def export_management_jsonl(self, path, history=()):
        with open(path, "w") as f:
            f.write(json.dumps(self.management, sort_keys=True) + "\n")
            for entry in history:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
