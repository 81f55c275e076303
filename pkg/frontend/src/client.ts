/**
 * Gateway transport: commands over the HTTP bridge (POST /command), live
 * metrics over the server-sent-events stream (GET /events).
 *
 * Works in both browsers and node 20 -- only fetch + ReadableStream are used.
 */

import {
  Message,
  decodeMessage,
  encodeLine,
  makeMessage,
  nextId,
  RequestType,
} from "./protocol.js";

export interface GatewayEvents {
  onPush?: (msg: Message) => void;
  onDisconnect?: (reason: string) => void;
}

export class GatewayClient {
  private readonly base: string;
  private controller: AbortController | null = null;

  constructor(baseUrl: string) {
    this.base = baseUrl.replace(/\/$/, "");
  }

  /** Send one command; resolves with the correlated ack or error message. */
  async command(
    type: RequestType,
    payload: Record<string, unknown> = {},
  ): Promise<Message> {
    const msg = makeMessage(type, nextId(), payload);
    const resp = await fetch(`${this.base}/command`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: encodeLine(msg),
    });
    const reply = decodeMessage(await resp.text());
    if (reply.id !== null && reply.id !== msg.id) {
      throw new Error(`correlation mismatch: sent ${msg.id}, got ${reply.id}`);
    }
    return reply;
  }

  /** Subscribe to the SSE stream until stop() or a network error. */
  async stream(events: GatewayEvents): Promise<void> {
    this.controller = new AbortController();
    let reason = "stream closed";
    try {
      const resp = await fetch(`${this.base}/events`, {
        signal: this.controller.signal,
      });
      if (!resp.ok || resp.body === null) {
        throw new Error(`events endpoint returned ${resp.status}`);
      }
      const reader = resp.body.getReader();
      const decoder = new TextDecoder();
      let buffer = "";
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        let idx: number;
        while ((idx = buffer.indexOf("\n\n")) >= 0) {
          const event = buffer.slice(0, idx);
          buffer = buffer.slice(idx + 2);
          for (const line of event.split("\n")) {
            if (line.startsWith("data: ")) {
              events.onPush?.(decodeMessage(line.slice(6)));
            }
          }
        }
      }
    } catch (err) {
      if ((err as Error).name === "AbortError") return;
      reason = String(err);
    } finally {
      events.onDisconnect?.(reason);
    }
  }

  stop(): void {
    this.controller?.abort();
    this.controller = null;
  }
}
