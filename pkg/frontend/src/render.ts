/**
 * Rendering split in two layers: a pure text/summary layer (testable without
 * a DOM) and a thin DOM binder used by the browser entry point.
 */

import { ConsoleViewModel, Action } from "./viewmodel.js";

const ACTIONS: Action[] = ["deploy_shadow", "promote", "rollback", "abort"];

/** Plain-text rendering of the full console state. */
export function renderText(vm: ConsoleViewModel, asset: string): string {
  const lines: string[] = [];
  if (vm.stale) lines.push("!! STALE DATA — connection lost, reconnecting");
  lines.push(`device ${vm.device || "-"}  cycle ${vm.cycle}`);
  lines.push(`adaptation: ${vm.assetState(asset)}`);
  lines.push(
    `divergence rms ${vm.divergenceRms.toFixed(6)}  ` +
      `max ${vm.divergenceMax.toFixed(6)}`,
  );
  lines.push(`integrity faults: ${vm.integrityFaults}`);
  lines.push(`p99 start jitter: ${vm.jitterPercentileUs(99).toFixed(1)} us`);
  const timeline = vm.timeline
    .map((t) => `${t.state}@${t.cycle}`)
    .join(" -> ");
  lines.push(`timeline: ${timeline || "(no transitions yet)"}`);
  const buttons = ACTIONS.map(
    (a) => `${a}${vm.actionEnabled(a, asset) ? "" : " (disabled)"}`,
  );
  lines.push(`actions: ${buttons.join(", ")}`);
  if (vm.lastToast) lines.push(`last action: [${vm.lastToast.kind}] ${vm.lastToast.text}`);
  return lines.join("\n");
}

/** Sparkline of the applied output over the chart window. */
export function renderSparkline(vm: ConsoleViewModel, width = 60): string {
  const glyphs = "▁▂▃▄▅▆▇█";
  const values = vm.chart
    .map((s) => s.applied)
    .filter((v): v is number => v !== null);
  if (!values.length) return "(no samples)";
  const tail = values.slice(-width);
  const min = Math.min(...tail);
  const max = Math.max(...tail);
  const span = max - min || 1;
  return tail
    .map((v) => glyphs[Math.min(7, Math.floor(((v - min) / span) * 8))])
    .join("");
}

/** Bind the view model to a live document; returns the refresh function. */
export function mount(
  vm: ConsoleViewModel,
  asset: string,
  doc: Document,
): () => void {
  const pre = doc.getElementById("console-view");
  const spark = doc.getElementById("console-chart");
  return () => {
    if (pre) pre.textContent = renderText(vm, asset);
    if (spark) spark.textContent = renderSparkline(vm);
  };
}
