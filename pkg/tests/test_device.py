"""Whole-device behavior: interference freedom, targeting, gating, twinning."""

import math

import pytest

from cyclab.control import ControllerSpec
from cyclab.device import Device, build_single_asset_device
from cyclab.frames import NO_SOURCE

B_SPEC = ControllerSpec(kp=2.5, ki=0.4, kd=0.1, setpoint=1.0,
                        integral_clamp=10.0)


def x_trajectory(dev, asset, first, last):
    return [rec.values[f"x_{asset}"]
            for rec in dev.twin.ops.records
            if first <= rec.window[0] <= last]


def run_with_shadow(deploy_at, until, promote_at=None, seed=42):
    dev = build_single_asset_device(seed=seed)
    dev.executor.run(deploy_at - 1)
    dev.deploy_shadow("B", "asset0", B_SPEC)
    if promote_at:
        dev.executor.run(promote_at - 11, start_cycle=deploy_at)
        dev.request_promote("asset0", promote_at)
        dev.executor.run(until, start_cycle=promote_at - 10)
    else:
        dev.executor.run(until, start_cycle=deploy_at)
    dev.finish()
    return dev


class TestFreedomFromInterference:
    def test_shadow_does_not_perturb_plant_trajectory(self):
        """Bit-identical x up to the switch cycle, with and without B."""
        baseline = build_single_asset_device(seed=42)
        baseline.run(600)
        shadowed = run_with_shadow(deploy_at=100, until=600)
        assert x_trajectory(baseline, "asset0", 1, 600) == \
            x_trajectory(shadowed, "asset0", 1, 600)
        assert shadowed.integrity_faults() == 0

    def test_shadow_outputs_recorded_but_not_applied(self):
        dev = run_with_shadow(deploy_at=100, until=300)
        for rec in dev.twin.ops.records:
            c = rec.window[0]
            u_b = rec.values["u1_asset0"]
            if c < 101:  # B starts computing once bound (Configuring at 101)
                assert math.isnan(u_b)
            else:
                assert not math.isnan(u_b)
            assert rec.values["source_asset0"] == 0.0  # always slot 0 (A)

    def test_applied_equals_active_output_every_cycle(self):
        dev = run_with_shadow(deploy_at=100, until=300)
        for rec in dev.twin.ops.records:
            assert rec.values["applied_asset0"] == rec.values["u0_asset0"]
            assert rec.values["fault_asset0"] == 0.0


class TestTargetedDeployment:
    def make_two_asset(self, seed=7):
        dev = Device("dev0", ["asset0", "asset1"], seed=seed)
        dev.add_plant("asset0", a=0.9, b=0.1, x0=0.0)
        dev.add_plant("asset1", a=0.85, b=0.2, x0=0.5)
        dev.add_active_service("A0", "asset0",
                               ControllerSpec(2.0, 0.5, 0.0, 1.0, 10.0))
        dev.add_active_service("A1", "asset1",
                               ControllerSpec(1.5, 0.3, 0.0, 0.8, 10.0))
        return dev

    def test_untargeted_asset_bit_identical(self):
        baseline = self.make_two_asset()
        baseline.run(500)
        dev = self.make_two_asset()
        dev.executor.run(99)
        dev.deploy_shadow("B0", "asset0", B_SPEC)
        dev.executor.run(300, start_cycle=100)
        dev.request_promote("asset0", 320)
        dev.executor.run(500, start_cycle=301)
        dev.finish()
        # asset1 never sees the deployment, the switch, or anything else
        assert x_trajectory(baseline, "asset1", 1, 500) == \
            x_trajectory(dev, "asset1", 1, 500)
        assert dict(dev.applied_log["asset1"])[500] == "A1"
        # asset0 did switch
        assert dict(dev.applied_log["asset0"])[500] == "B0"
        assert dev.integrity_faults() == 0


class TestOutputGating:
    def test_exactly_one_actuation_per_cycle(self):
        dev = run_with_shadow(deploy_at=50, until=200, promote_at=150)
        port = dev.ports["asset0"]
        assert port.total_writes == 200
        assert port.faults == []

    def test_applied_source_is_step_function(self):
        dev = run_with_shadow(deploy_at=50, until=300, promote_at=150)
        sources = [s for _, s in sorted(dev.applied_log["asset0"])]
        changes = [i for i in range(1, len(sources))
                   if sources[i] != sources[i - 1]]
        assert len(changes) == 1
        assert changes[0] == 149  # 0-based index of cycle 150
        assert sources[148] == "A" and sources[149] == "B"

    def test_frame_source_column_tracks_gate(self):
        dev = run_with_shadow(deploy_at=50, until=300, promote_at=150)
        for rec in dev.twin.ops.records:
            c = rec.window[0]
            expected = 0.0 if c < 150 else 1.0
            assert rec.values["source_asset0"] == expected

    def test_producer_resets_frame_columns(self):
        dev = build_single_asset_device()
        dev.executor.run(3)
        pos = 3 & dev.pipeline.mask
        row = dev.pipeline.frames[pos]
        layout = dev.layout
        assert row[layout.col("cycle")] == 3
        assert math.isnan(row[layout.col("u1", 0)])
        assert row[layout.col("source", 0)] != NO_SOURCE  # gate filled it


class TestTwinIntegration:
    def test_deterministic_run_records_every_cycle(self):
        dev = build_single_asset_device()
        dev.run(500)
        assert dev.twin.ops.recorded == 500
        assert dev.twin.ops.skipped == 0

    def test_divergence_zero_for_identical_controllers(self):
        # Pure-proportional controllers are stateless, so a late-deployed B
        # with the same gains computes bit-identical outputs from its first
        # cycle on; integral state would keep A and B apart forever.
        p_only = ControllerSpec(kp=2.0, ki=0.0, kd=0.0, setpoint=1.0,
                                integral_clamp=10.0)
        dev = build_single_asset_device(controller=p_only)
        dev.executor.run(49)
        dev.deploy_shadow("B", "asset0", p_only)
        dev.executor.run(300, start_cycle=50)
        div = dev.divergence("asset0", 60, 300)
        assert div.count > 0
        assert div.rms == 0.0 and div.max == 0.0

    def test_divergence_positive_for_different_controllers(self):
        dev = run_with_shadow(deploy_at=50, until=300)
        div = dev.divergence("asset0", 60, 300)
        assert div.count > 0 and div.rms > 0.0

    def test_management_twin_refreshes_at_rate(self):
        dev = build_single_asset_device(mgmt_twin_rate=100)
        dev.run(250)
        snap = dev.twin.snapshot_management_state()
        assert snap["cycle"] == 200  # last multiple of the twin rate

    def test_snapshot_shape(self):
        dev = build_single_asset_device()
        dev.run(10)
        snap = dev.snapshot()
        assert snap["device"] == "dev0"
        assert snap["services"]["A"]["role"] == "active"
        assert snap["twin"]["recorded"] == 10
        assert snap["integrity_faults"] == 0


class TestRegulation:
    def test_plant_converges_to_setpoint(self):
        dev = build_single_asset_device()
        dev.run(400)
        assert dev.plants["asset0"].x == pytest.approx(1.0, abs=1e-6)

    def test_switch_preserves_regulation(self):
        dev = run_with_shadow(deploy_at=50, until=400, promote_at=150)
        assert dev.plants["asset0"].x == pytest.approx(1.0, abs=1e-3)
