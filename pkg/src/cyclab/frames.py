"""Fixed-width signal frame layout shared by the ring pipeline and the twins.

A frame is one cycle's worth of signals for every asset on the device, stored
as a flat float64 row so slots stay cache-friendly and checksummable. Column 0
echoes the cycle index; per asset there are columns for plant state, sensor
measurement, two per-service control outputs, the applied output, the source
tag and a fault flag.
"""

import math
from dataclasses import dataclass

SERVICE_SLOTS = 2  # active + one shadow; more concurrent versions are a non-goal

NO_SOURCE = -1.0

_ASSET_FIELDS = ("x", "y", "u0", "u1", "applied", "source", "fault")


@dataclass(frozen=True)
class FrameLayout:
    assets: tuple

    @property
    def width(self):
        return 1 + len(self.assets) * len(_ASSET_FIELDS)

    def col(self, field, asset_index=None):
        if field == "cycle":
            return 0
        if asset_index is None or not 0 <= asset_index < len(self.assets):
            raise KeyError(f"unknown asset index {asset_index!r}")
        return 1 + asset_index * len(_ASSET_FIELDS) + _ASSET_FIELDS.index(field)

    def service_col(self, asset_index, slot):
        if slot not in (0, 1):
            raise KeyError(f"service slot out of range: {slot}")
        return self.col("u0" if slot == 0 else "u1", asset_index)

    def names(self):
        cols = ["cycle"]
        for asset in self.assets:
            cols.extend(f"{field}_{asset}" for field in _ASSET_FIELDS)
        return cols

    def describe(self, row):
        """Row -> {column name: value}, NaN service slots omitted."""
        out = {}
        for name, value in zip(self.names(), row):
            if not math.isnan(value):
                out[name] = float(value)
        return out


def make_layout(asset_ids):
    if not asset_ids:
        raise ValueError("at least one asset required")
    return FrameLayout(tuple(asset_ids))
