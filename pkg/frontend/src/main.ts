/**
 * Browser entry point: connect to the gateway bridge, stream pushes into the
 * view model, wire the action buttons.
 *
 * Serve index.html next to the compiled dist/ output and point it at a
 * running gateway (default http://127.0.0.1:7701).
 */

import { GatewayClient } from "./client.js";
import { asMetricsPayload } from "./protocol.js";
import { mount } from "./render.js";
import { Action, ConsoleViewModel } from "./viewmodel.js";

export function start(doc: Document, baseUrl?: string): void {
  const params = new URLSearchParams(doc.location?.search ?? "");
  const base = baseUrl ?? params.get("gateway") ?? "http://127.0.0.1:7701";
  const asset = params.get("asset") ?? "asset0";
  const vm = new ConsoleViewModel();
  const client = new GatewayClient(base);
  const refresh = mount(vm, asset, doc);

  const connect = (): void => {
    void client.stream({
      onPush: (msg) => {
        vm.applyPush(asMetricsPayload(msg));
        refresh();
      },
      onDisconnect: () => {
        vm.onDisconnect();
        refresh();
        setTimeout(connect, 1000); // reconnect with the stale banner up
      },
    });
  };
  connect();

  const act = async (action: Action): Promise<void> => {
    if (!vm.actionEnabled(action, asset)) return;
    const payload: Record<string, unknown> = { asset };
    if (action === "promote" || action === "rollback") {
      payload.cycle = vm.proposedSwitchCycle();
    }
    const reply = await client.command(action, payload);
    vm.noteReply(reply);
    refresh();
  };

  for (const action of [
    "deploy_shadow",
    "promote",
    "rollback",
    "abort",
  ] as Action[]) {
    doc
      .getElementById(`btn-${action}`)
      ?.addEventListener("click", () => void act(action));
  }
}
