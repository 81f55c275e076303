/**
 * Console view model: everything displayed derives from gateway pushes; no
 * state lives only in the UI, so reconnecting reproduces the identical view.
 */

import {
  AssetState,
  ChartSample,
  Message,
  MetricsPayload,
  errorReason,
} from "./protocol.js";

export interface TimelineEntry {
  cycle: number;
  state: string;
}

export interface Toast {
  kind: "ok" | "error";
  text: string;
}

export type Action = "promote" | "rollback" | "abort" | "deploy_shadow";

const CHART_WINDOW_CYCLES_DEFAULT = 10_000; // 10 s at a 1 ms period

export class ConsoleViewModel {
  connected = false;
  stale = false;
  device = "";
  cycle = 0;
  assets: Record<string, AssetState> = {};
  divergenceRms = 0;
  divergenceMax = 0;
  integrityFaults = 0;
  chart: ChartSample[] = [];
  timeline: TimelineEntry[] = [];
  jitterSamplesNs: number[] = [];
  lastToast: Toast | null = null;

  constructor(readonly chartWindowCycles = CHART_WINDOW_CYCLES_DEFAULT) {}

  /** Fold one metrics push into the view. */
  applyPush(payload: MetricsPayload): void {
    this.connected = true;
    this.stale = false;
    this.device = payload.snapshot.device;
    this.cycle = payload.snapshot.cycle;
    this.integrityFaults = payload.snapshot.integrity_faults;
    for (const [asset, state] of Object.entries(payload.snapshot.assets)) {
      const previous = this.assets[asset]?.state;
      if (previous !== state.state) {
        this.timeline.push({ cycle: payload.snapshot.cycle, state: state.state });
      }
      this.assets[asset] = state;
    }
    this.divergenceRms = payload.divergence.rms;
    this.divergenceMax = payload.divergence.max;
    this.mergeChart(payload.chart);
    if (payload.cycle_metrics) {
      this.jitterSamplesNs.push(Math.abs(payload.cycle_metrics.start_jitter_ns));
      if (this.jitterSamplesNs.length > 1000) this.jitterSamplesNs.shift();
    }
  }

  private mergeChart(samples: ChartSample[]): void {
    const lastSeen = this.chart.length ? this.chart[this.chart.length - 1].cycle : 0;
    for (const sample of samples) {
      if (sample.cycle > lastSeen) this.chart.push(sample);
    }
    const horizon = this.cycle - this.chartWindowCycles;
    while (this.chart.length && this.chart[0].cycle < horizon) {
      this.chart.shift();
    }
  }

  onDisconnect(): void {
    this.connected = false;
    this.stale = true; // banner: data no longer live
  }

  assetState(asset: string): string {
    return this.assets[asset]?.state ?? "Idle";
  }

  /** Action preconditions mirror the adaptation manager's. */
  actionEnabled(action: Action, asset: string): boolean {
    const state = this.assetState(asset);
    switch (action) {
      case "deploy_shadow":
        return state === "Idle";
      case "promote":
        return state === "Shadow";
      case "rollback":
        return state === "Active";
      case "abort":
        return state === "Shadow" || state === "Switching";
    }
  }

  /** Suggested switch cycle: comfortably after the live cycle. */
  proposedSwitchCycle(leadCycles = 500): number {
    return this.cycle + leadCycles;
  }

  noteReply(reply: Message): void {
    if (reply.type === "ack") {
      this.lastToast = { kind: "ok", text: "accepted" };
    } else {
      // rejection reason shown verbatim from the gateway error payload
      this.lastToast = { kind: "error", text: errorReason(reply) };
    }
  }

  jitterPercentileUs(q: number): number {
    if (!this.jitterSamplesNs.length) return 0;
    const sorted = [...this.jitterSamplesNs].sort((a, b) => a - b);
    const idx = Math.min(
      sorted.length - 1,
      Math.floor((q / 100) * sorted.length),
    );
    return sorted[idx] / 1000;
  }
}
