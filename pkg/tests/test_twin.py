"""Twin store: downsampling oracles, divergence recomputation, exports."""

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclab.twin import (
    LEVEL_CONTROL,
    LEVEL_KPI,
    LEVEL_SUPERVISORY,
    FidelitySpec,
    OpsTwin,
    TwinQueryError,
    TwinRecord,
    TwinStore,
    downsample,
)


def make_records(values, signal="s"):
    return [TwinRecord(LEVEL_CONTROL, (c, c), {signal: v})
            for c, v in enumerate(values, start=1)]


finite = st.floats(allow_nan=False, allow_infinity=False,
                   min_value=-1e6, max_value=1e6)


class TestDownsample:
    @given(st.lists(finite, min_size=1, max_size=120),
           st.integers(min_value=1, max_value=10))
    @settings(max_examples=60, deadline=None)
    def test_mean_matches_bruteforce(self, values, rate):
        spec = FidelitySpec(("s",), rate=rate, aggregation="mean")
        out = downsample(make_records(values), spec)
        assert len(out) == len(values) // rate
        for i, rec in enumerate(out):
            window = values[i * rate:(i + 1) * rate]
            assert rec.values["s"] == pytest.approx(
                sum(window) / len(window), abs=0
            )
            assert rec.window == (i * rate + 1, (i + 1) * rate)
            assert rec.level == LEVEL_CONTROL + 1

    @given(st.lists(finite, min_size=1, max_size=120),
           st.integers(min_value=1, max_value=10))
    @settings(max_examples=60, deadline=None)
    def test_max_matches_bruteforce(self, values, rate):
        spec = FidelitySpec(("s",), rate=rate, aggregation="max")
        out = downsample(make_records(values), spec)
        for i, rec in enumerate(out):
            assert rec.values["s"] == max(values[i * rate:(i + 1) * rate])

    @given(st.lists(finite, min_size=1, max_size=120),
           st.integers(min_value=1, max_value=10))
    @settings(max_examples=60, deadline=None)
    def test_rms_matches_bruteforce(self, values, rate):
        spec = FidelitySpec(("s",), rate=rate, aggregation="rms")
        out = downsample(make_records(values), spec)
        for i, rec in enumerate(out):
            window = values[i * rate:(i + 1) * rate]
            ref = math.sqrt(sum(v * v for v in window) / len(window))
            err = abs(rec.values["s"] - ref) / max(1.0, abs(ref))
            assert err <= 1e-12

    def test_latest_keeps_last_sample(self):
        spec = FidelitySpec(("s",), rate=3, aggregation="latest")
        out = downsample(make_records([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), spec)
        assert [r.values["s"] for r in out] == [3.0, 6.0]

    def test_incomplete_tail_window_dropped(self):
        spec = FidelitySpec(("s",), rate=4, aggregation="mean")
        out = downsample(make_records([1.0] * 7), spec)
        assert len(out) == 1

    def test_unknown_signal_rejected(self):
        spec = FidelitySpec(("ghost",), rate=2, aggregation="mean")
        with pytest.raises(TwinQueryError):
            downsample(make_records([1.0, 2.0]), spec)

    def test_bad_rate_and_aggregation_rejected(self):
        with pytest.raises(TwinQueryError):
            FidelitySpec(("s",), rate=0)
        with pytest.raises(TwinQueryError):
            FidelitySpec(("s",), aggregation="median")


class TestOpsTwin:
    def fill(self, twin, n=50):
        for c in range(1, n + 1):
            twin.record(c, {"u0": float(c), "u1": float(c) * 0.5})

    def test_query_window_and_signals(self):
        twin = OpsTwin(("u0", "u1"))
        self.fill(twin)
        out = twin.query(("u0",), 10, 12)
        assert [r.window[0] for r in out] == [10, 11, 12]
        assert all(set(r.values) == {"u0"} for r in out)

    def test_query_unknown_signal_rejected(self):
        twin = OpsTwin(("u0",))
        with pytest.raises(TwinQueryError):
            twin.query(("nope",), 1, 10)

    def test_bounded_depth_evicts_oldest(self):
        twin = OpsTwin(("u0",), depth=10)
        for c in range(1, 31):
            twin.record(c, {"u0": float(c)})
        assert len(twin.records) == 10
        assert twin.records[0].window[0] == 21
        assert twin.recorded == 30

    def test_skip_counter(self):
        twin = OpsTwin(("u0",))
        twin.skip()
        twin.skip(3)
        assert twin.skipped == 4

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=200))
    @settings(max_examples=40, deadline=None)
    def test_divergence_matches_independent_recomputation(self, pairs):
        twin = OpsTwin(("ua", "ub"))
        for c, (a, b) in enumerate(pairs, start=1):
            twin.record(c, {"ua": a, "ub": b})
        m = twin.divergence("ua", "ub", 1, len(pairs))
        diffs = [abs(a - b) for a, b in pairs]
        assert m.count == len(diffs)
        assert m.max == max(diffs)
        ref_rms = math.sqrt(sum(d * d for d in diffs) / len(diffs))
        assert abs(m.rms - ref_rms) <= 1e-12 * max(1.0, ref_rms)

    def test_divergence_skips_nan_and_missing(self):
        twin = OpsTwin(("ua", "ub"))
        twin.record(1, {"ua": 1.0, "ub": math.nan})
        twin.record(2, {"ua": 1.0})
        twin.record(3, {"ua": 1.0, "ub": 0.5})
        m = twin.divergence("ua", "ub", 1, 3)
        assert m.count == 1 and m.max == 0.5

    def test_divergence_empty_window(self):
        twin = OpsTwin(("ua", "ub"))
        m = twin.divergence("ua", "ub", 1, 100)
        assert m.empty and m.rms == 0.0

    def test_export_csv_golden(self, tmp_path):
        twin = OpsTwin(("u0", "u1"))
        twin.record(1, {"u0": 1.0, "u1": 2.0})
        twin.record(2, {"u0": 3.0, "u1": 4.0})
        path = tmp_path / "twin.csv"
        twin.export_csv(path)
        assert path.read_text().splitlines() == [
            "cycle,u0,u1", "1,1.0,2.0", "2,3.0,4.0",
        ]


class TestTwinStore:
    def make_store(self, n=1000):
        store = TwinStore(
            ("applied",),
            {
                LEVEL_SUPERVISORY: FidelitySpec(("applied",), rate=10,
                                                aggregation="mean"),
                LEVEL_KPI: FidelitySpec(("applied",), rate=10,
                                        aggregation="mean"),
            },
        )
        for c in range(1, n + 1):
            store.ops.record(c, {"applied": float(c)})
        return store

    def test_level3_query_downsampled(self):
        store = self.make_store(100)
        out = store.query(LEVEL_SUPERVISORY, ("applied",), 1, 100)
        assert len(out) == 10
        assert out[0].values["applied"] == pytest.approx(5.5)
        assert all(r.level == LEVEL_SUPERVISORY for r in out)

    def test_level5_derives_from_level3(self):
        store = self.make_store(1000)
        out = store.query(LEVEL_KPI, ("applied",), 1, 1000)
        # 1000 cycles -> 100 level-3 windows -> 10 KPI records
        assert len(out) == 10
        assert out[0].window == (1, 100)
        assert out[0].values["applied"] == pytest.approx(50.5)

    def test_unknown_level_rejected(self):
        store = self.make_store(10)
        with pytest.raises(TwinQueryError):
            store.query(4, ("applied",), 1, 10)

    def test_management_snapshot_roundtrip(self):
        store = TwinStore(("applied",))
        store.update_management({"cycle": 5, "assets": {}})
        assert store.snapshot_management_state() == {"cycle": 5, "assets": {}}

    def test_management_jsonl_export(self, tmp_path):
        store = TwinStore(("applied",))
        store.update_management({"cycle": 9})
        path = tmp_path / "mgmt.jsonl"
        store.export_management_jsonl(
            path, history=[{"cycle": 1, "transition": "Idle->Allocating"}]
        )
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert lines[0] == {"cycle": 9}
        assert lines[1]["transition"] == "Idle->Allocating"
