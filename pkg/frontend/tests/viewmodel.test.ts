import { describe, expect, it } from "vitest";

import { MetricsPayload } from "../src/protocol.js";
import { renderSparkline, renderText } from "../src/render.js";
import { ConsoleViewModel } from "../src/viewmodel.js";

function push(overrides: Partial<{
  cycle: number;
  state: string;
  rms: number;
  chart: MetricsPayload["chart"];
  jitterNs: number;
}> = {}): MetricsPayload {
  const cycle = overrides.cycle ?? 100;
  return {
    device: "dev0",
    snapshot: {
      device: "dev0",
      cycle,
      assets: {
        asset0: {
          state: overrides.state ?? "Idle",
          service_b: null,
          switch_cycle: null,
          rollback_cycle: null,
          violations: 0,
        },
      },
      integrity_faults: 0,
      twin: { recorded: cycle, skipped: 0 },
    },
    divergence: { rms: overrides.rms ?? 0, max: overrides.rms ?? 0, count: 1 },
    chart: overrides.chart ?? [],
    cycle_metrics: {
      cycle,
      start_jitter_ns: overrides.jitterNs ?? 1000,
      overrun: false,
      deadline_met: true,
    },
  };
}

describe("view derivation", () => {
  it("derives everything from the latest push", () => {
    const vm = new ConsoleViewModel();
    vm.applyPush(push({ cycle: 500, state: "Shadow", rms: 0.25 }));
    expect(vm.device).toBe("dev0");
    expect(vm.cycle).toBe(500);
    expect(vm.assetState("asset0")).toBe("Shadow");
    expect(vm.divergenceRms).toBe(0.25);
  });

  it("a fresh view model fed the same push reproduces the identical view", () => {
    // protocol-client property: no state lives only in the UI
    const a = new ConsoleViewModel();
    const b = new ConsoleViewModel();
    const p = push({ cycle: 900, state: "Switching", rms: 0.1 });
    a.applyPush(push({ cycle: 100, state: "Idle" }));
    a.applyPush(p);
    b.applyPush(p);
    expect(renderText(a, "asset0")).toContain("adaptation: Switching");
    expect(a.assetState("asset0")).toBe(b.assetState("asset0"));
    expect(a.divergenceRms).toBe(b.divergenceRms);
    expect(a.cycle).toBe(b.cycle);
  });

  it("records a timeline entry per observed state change", () => {
    const vm = new ConsoleViewModel();
    for (const [cycle, state] of [
      [100, "Idle"],
      [200, "Shadow"],
      [210, "Shadow"],
      [300, "Switching"],
      [320, "Active"],
    ] as const) {
      vm.applyPush(push({ cycle, state }));
    }
    expect(vm.timeline.map((t) => t.state)).toEqual([
      "Idle",
      "Shadow",
      "Switching",
      "Active",
    ]);
  });

  it("bounds the chart to its window and dedupes cycles", () => {
    const vm = new ConsoleViewModel(100);
    const sample = (cycle: number) => ({
      cycle,
      u_a: 1,
      u_b: null,
      applied: 1,
      x: 0.5,
    });
    vm.applyPush(push({ cycle: 50, chart: [sample(40), sample(50)] }));
    vm.applyPush(push({ cycle: 60, chart: [sample(50), sample(60)] }));
    expect(vm.chart.map((s) => s.cycle)).toEqual([40, 50, 60]);
    vm.applyPush(push({ cycle: 400, chart: [sample(400)] }));
    expect(vm.chart.map((s) => s.cycle)).toEqual([400]); // window slid past
  });

  it("computes jitter percentiles from pushes", () => {
    const vm = new ConsoleViewModel();
    for (let i = 1; i <= 100; i += 1) {
      vm.applyPush(push({ cycle: i, jitterNs: i * 1000 }));
    }
    expect(vm.jitterPercentileUs(50)).toBeCloseTo(51, 0);
  });
});

describe("action gating", () => {
  const states: Record<string, string[]> = {
    deploy_shadow: ["Idle"],
    promote: ["Shadow"],
    rollback: ["Active"],
    abort: ["Shadow", "Switching"],
  };
  const all = [
    "Idle",
    "Allocating",
    "Configuring",
    "Shadow",
    "Switching",
    "Active",
    "RolledBack",
    "Aborted",
  ];

  it("enables each action exactly in its precondition states", () => {
    for (const [action, enabled] of Object.entries(states)) {
      for (const state of all) {
        const vm = new ConsoleViewModel();
        vm.applyPush(push({ state }));
        expect(
          vm.actionEnabled(action as never, "asset0"),
          `${action} in ${state}`,
        ).toBe(enabled.includes(state));
      }
    }
  });

  it("promote is disabled in Aborted and the rejection shows verbatim", () => {
    const vm = new ConsoleViewModel();
    vm.applyPush(push({ state: "Aborted" }));
    expect(vm.actionEnabled("promote", "asset0")).toBe(false);
    vm.noteReply({
      v: 1,
      type: "error",
      id: "x",
      payload: { reason: "rejected", detail: "promote requires Shadow, is Aborted" },
    });
    const text = renderText(vm, "asset0");
    expect(text).toContain("promote (disabled)");
    expect(text).toContain("promote requires Shadow, is Aborted");
  });

  it("proposes a switch cycle after the live cycle", () => {
    const vm = new ConsoleViewModel();
    vm.applyPush(push({ cycle: 1000 }));
    expect(vm.proposedSwitchCycle()).toBe(1500);
  });
});

describe("connection state", () => {
  it("shows a stale banner after disconnect and clears on reconnect", () => {
    const vm = new ConsoleViewModel();
    vm.applyPush(push({}));
    expect(renderText(vm, "asset0")).not.toContain("STALE");
    vm.onDisconnect();
    expect(vm.stale).toBe(true);
    expect(renderText(vm, "asset0")).toContain("STALE DATA");
    vm.applyPush(push({ cycle: 200 }));
    expect(vm.stale).toBe(false);
  });
});

describe("rendering", () => {
  it("divergence gauge reads exactly 0 for identical controllers", () => {
    const vm = new ConsoleViewModel();
    vm.applyPush(push({ rms: 0 }));
    expect(renderText(vm, "asset0")).toContain("divergence rms 0.000000");
  });

  it("sparkline covers the applied samples", () => {
    const vm = new ConsoleViewModel();
    const chart = Array.from({ length: 20 }, (_, i) => ({
      cycle: i + 1,
      u_a: 1,
      u_b: null,
      applied: Math.sin(i / 3),
      x: 0,
    }));
    vm.applyPush(push({ cycle: 20, chart }));
    const line = renderSparkline(vm, 20);
    expect(line).toHaveLength(20);
    expect(line).toMatch(/[▁▂▃▄▅▆▇█]{20}/u);
  });
});
