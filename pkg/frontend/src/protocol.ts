/**
 * Wire grammar of the management gateway: versioned NDJSON messages.
 *
 * The console is strictly a protocol client; every request it emits and
 * every push it consumes goes through these codecs so a grammar drift fails
 * loudly instead of rendering garbage.
 */

export const PROTOCOL_VERSION = 1;

export type RequestType =
  | "deploy_shadow"
  | "promote"
  | "rollback"
  | "abort"
  | "status"
  | "subscribe_metrics";

export type ReplyType = "ack" | "error" | "metrics_push";

export interface Message {
  v: number;
  type: string;
  id: string | null;
  payload: Record<string, unknown>;
}

export interface ControllerSpec {
  kp?: number;
  ki?: number;
  kd?: number;
  setpoint?: number;
  integral_clamp?: number;
}

export interface AssetState {
  state: string;
  service_b: string | null;
  switch_cycle: number | null;
  rollback_cycle: number | null;
  violations: number;
}

export interface Snapshot {
  device: string;
  cycle: number;
  assets: Record<string, AssetState>;
  integrity_faults: number;
  twin: { recorded: number; skipped: number };
}

export interface ChartSample {
  cycle: number;
  u_a: number | null;
  u_b: number | null;
  applied: number | null;
  x: number | null;
}

export interface MetricsPayload {
  device: string;
  snapshot: Snapshot;
  divergence: { rms: number; max: number; count: number };
  chart: ChartSample[];
  cycle_metrics: {
    cycle: number;
    start_jitter_ns: number;
    overrun: boolean;
    deadline_met: boolean;
  } | null;
}

let counter = 0;

/** Fresh correlation id; unique within a console session. */
export function nextId(prefix = "con"): string {
  counter += 1;
  return `${prefix}-${Date.now().toString(36)}-${counter}`;
}

export function makeMessage(
  type: RequestType,
  id: string,
  payload: Record<string, unknown> = {},
): Message {
  return { v: PROTOCOL_VERSION, type, id, payload };
}

export function encodeLine(msg: Message): string {
  return JSON.stringify(msg) + "\n";
}

export function decodeMessage(line: string): Message {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch {
    throw new Error(`not JSON: ${line.slice(0, 80)}`);
  }
  if (
    typeof parsed !== "object" ||
    parsed === null ||
    Array.isArray(parsed) ||
    !("type" in parsed) ||
    !("id" in parsed)
  ) {
    throw new Error("message must be an object with 'type' and 'id'");
  }
  const msg = parsed as Message;
  if (typeof msg.type !== "string") {
    throw new Error("message 'type' must be a string");
  }
  return { v: msg.v, type: msg.type, id: msg.id, payload: msg.payload ?? {} };
}

/** Narrow a metrics_push message to its typed payload. */
export function asMetricsPayload(msg: Message): MetricsPayload {
  if (msg.type !== "metrics_push") {
    throw new Error(`expected metrics_push, got ${msg.type}`);
  }
  return msg.payload as unknown as MetricsPayload;
}

export function errorReason(reply: Message): string {
  const payload = reply.payload as { reason?: string; detail?: string };
  if (payload.detail) return `${payload.reason ?? "error"}: ${payload.detail}`;
  return payload.reason ?? "error";
}
