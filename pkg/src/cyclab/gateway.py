"""Management gateway: the mediator between management clients and devices.

Wire format: newline-delimited JSON, UTF-8, one message per line, with an
explicit schema version. Every well-formed request yields exactly one ack or
error carrying the request's correlation id; metrics_push messages are
server-initiated and carry the subscription id. The same payloads are bridged
to browsers over an HTTP server-sent-events channel for the operator console.

Management traffic only ever touches the operation plane through the
executors' preparation-window queues (R4 separation).
"""

import asyncio
import json
import threading
import time
from dataclasses import dataclass, field

from cyclab.adaptation import RequestRejected, ResourceBudget
from cyclab.control import ControllerSpec
from cyclab.executor import BackpressureError

PROTOCOL_VERSION = 1

REQUEST_TYPES = ("deploy_shadow", "promote", "rollback", "abort", "status",
                 "subscribe_metrics")


def make_message(msg_type, msg_id, payload=None):
    return {"v": PROTOCOL_VERSION, "type": msg_type, "id": msg_id,
            "payload": payload or {}}


def encode_line(msg):
    return json.dumps(msg, sort_keys=True, separators=(",", ":")) + "\n"


def decode_line(line):
    msg = json.loads(line)
    if not isinstance(msg, dict) or "type" not in msg or "id" not in msg:
        raise ValueError("message must be an object with 'type' and 'id'")
    return msg


class DeviceAdapter:
    """Management-side handle to one in-process device."""

    def __init__(self, device):
        self.device = device

    @property
    def id(self):
        return self.device.id

    @property
    def manager(self):
        return self.device.manager

    def status(self):
        return self.device.snapshot()

    def deploy_shadow(self, asset, controller=None, budget=None):
        spec = ControllerSpec.from_dict(controller or {})
        b = ResourceBudget(**budget) if budget else ResourceBudget()
        ticket = self.device.deploy_shadow(f"B@{asset}", asset, spec, b)
        return {"ticket": ticket.label or "deploy", "status": ticket.status}

    def promote(self, asset, cycle):
        ticket = self.device.request_promote(asset, cycle)
        return {"status": ticket.status, "switch_cycle": cycle}

    def rollback(self, asset, cycle):
        ticket = self.device.request_rollback(asset, cycle)
        return {"status": ticket.status, "rollback_cycle": cycle}

    def abort(self, asset):
        self.device.manager.request_abort(asset)
        return {"status": "aborted"}

    def metrics(self, chart_cycles=200):
        dev = self.device
        current = dev.executor.current_cycle
        first = max(1, current - chart_cycles + 1)
        samples = []
        for rec in dev.twin.ops.query(dev.twin.ops.signal_names, first, current):
            c = rec.window[0]
            v = rec.values
            a0 = dev.asset_ids[0]
            samples.append({
                "cycle": c,
                "u_a": _clean(v.get(f"u0_{a0}")),
                "u_b": _clean(v.get(f"u1_{a0}")),
                "applied": _clean(v.get(f"applied_{a0}")),
                "x": _clean(v.get(f"x_{a0}")),
            })
        div = dev.divergence(dev.asset_ids[0], first, current)
        m = dev.executor.last_metrics
        return {
            "snapshot": dev.snapshot(),
            "divergence": {"rms": div.rms, "max": div.max, "count": div.count},
            "chart": samples,
            "cycle_metrics": None if m is None else {
                "cycle": m.cycle,
                "start_jitter_ns": m.start_jitter_ns,
                "overrun": m.overrun,
                "deadline_met": m.deadline_met,
            },
        }


def _clean(v):
    # JSON has no NaN; absent service outputs become null
    if v is None or v != v:
        return None
    return v


@dataclass
class SwitchAgreement:
    proposed_cycle: int
    participants: list
    acks: dict = field(default_factory=dict)
    committed: bool = False


class Gateway:
    """Serializes state-mutating commands per device; fans out metric pushes."""

    def __init__(self, devices, push_interval_s=0.5):
        self.devices = {d.id: d for d in devices}
        self.push_interval_s = push_interval_s
        self._command_lock = threading.Lock()

    def _device(self, payload):
        device_id = payload.get("device")
        if device_id is None:
            if len(self.devices) == 1:
                return next(iter(self.devices.values()))
            raise KeyError("payload must name a device")
        return self.devices[device_id]

    def handle(self, msg):
        """One request in, exactly one ack or error out."""
        msg_id = msg.get("id")
        msg_type = msg.get("type")
        payload = msg.get("payload") or {}
        if msg_type not in REQUEST_TYPES:
            return make_message("error", msg_id,
                               {"reason": "unknown_type", "detail": str(msg_type)})
        try:
            with self._command_lock:
                if msg_type == "status":
                    adapter = self._device(payload)
                    return make_message("ack", msg_id, adapter.status())
                if msg_type == "deploy_shadow":
                    adapter = self._device(payload)
                    out = adapter.deploy_shadow(
                        payload["asset"], payload.get("controller"),
                        payload.get("budget"),
                    )
                    return make_message("ack", msg_id, out)
                if msg_type == "promote":
                    return make_message("ack", msg_id, self._promote(payload))
                if msg_type == "rollback":
                    adapter = self._device(payload)
                    out = adapter.rollback(payload["asset"], int(payload["cycle"]))
                    return make_message("ack", msg_id, out)
                if msg_type == "abort":
                    adapter = self._device(payload)
                    return make_message("ack", msg_id, adapter.abort(payload["asset"]))
                if msg_type == "subscribe_metrics":
                    return make_message("ack", msg_id, {
                        "subscription": msg_id,
                        "push_interval_s": self.push_interval_s,
                    })
        except (RequestRejected, BackpressureError) as e:
            return make_message("error", msg_id,
                               {"reason": "rejected", "detail": str(e)})
        except (KeyError, TypeError, ValueError) as e:
            return make_message("error", msg_id,
                               {"reason": "bad_request", "detail": repr(e)})

    def _promote(self, payload):
        phase = payload.get("phase")
        asset = payload["asset"]
        k = int(payload["cycle"])
        adapter = self._device(payload)
        if phase is None:
            return adapter.promote(asset, k)
        if phase == "prepare":
            adapter.manager.prepare_promote(asset, k)
            return {"status": "prepared", "cycle": k}
        if phase == "commit":
            adapter.manager.commit_promote(asset, k)
            return {"status": "committed", "cycle": k}
        if phase == "abort":
            adapter.manager.abort_agreement(asset, k)
            return {"status": "agreement_aborted", "cycle": k}
        raise ValueError(f"unknown phase {phase!r}")

    # -- two-phase switch-cycle agreement ----------------------------------

    def coordinate_switch(self, device_assets, k):
        """Propose `k` to every device; commit only on unanimous ack.

        `device_assets` is a list of (device_id, asset) pairs. On any nack the
        agreement is aborted and no gate anywhere changes.
        """
        agreement = SwitchAgreement(k, [d for d, _ in device_assets])
        for device_id, asset in device_assets:
            reply = self.handle(make_message("promote", f"prep-{device_id}", {
                "device": device_id, "asset": asset, "cycle": k,
                "phase": "prepare",
            }))
            agreement.acks[device_id] = reply["type"] == "ack"
        if all(agreement.acks.values()):
            for device_id, asset in device_assets:
                self.handle(make_message("promote", f"commit-{device_id}", {
                    "device": device_id, "asset": asset, "cycle": k,
                    "phase": "commit",
                }))
            agreement.committed = True
        else:
            for device_id, asset in device_assets:
                self.handle(make_message("promote", f"abort-{device_id}", {
                    "device": device_id, "asset": asset, "cycle": k,
                    "phase": "abort",
                }))
        return agreement


class GatewayServer:
    """NDJSON TCP endpoint plus an HTTP/SSE bridge for the console."""

    def __init__(self, gateway, host="127.0.0.1", port=7700, http_port=None):
        self.gateway = gateway
        self.host = host
        self.port = port
        self.http_port = http_port if http_port is not None else port + 1
        self._subscribers = set()   # asyncio.Queue per push consumer
        self._loop = None
        self._servers = []
        self._push_task = None

    # -- NDJSON ------------------------------------------------------------

    async def _handle_tcp(self, reader, writer):
        queue = None
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = decode_line(line.decode("utf-8"))
                except (ValueError, UnicodeDecodeError) as e:
                    reply = make_message("error", None,
                                         {"reason": "parse", "detail": str(e)})
                    writer.write(encode_line(reply).encode())
                    await writer.drain()
                    continue
                reply = self.gateway.handle(msg)
                writer.write(encode_line(reply).encode())
                if msg.get("type") == "subscribe_metrics" and reply["type"] == "ack":
                    if queue is None:
                        queue = asyncio.Queue(maxsize=16)
                        self._subscribers.add(queue)
                        asyncio.ensure_future(self._pump(queue, writer, msg["id"]))
                await writer.drain()
        except (ConnectionResetError, asyncio.CancelledError):
            pass
        finally:
            if queue is not None:
                self._subscribers.discard(queue)
            writer.close()

    async def _pump(self, queue, writer, subscription_id):
        try:
            while True:
                payload = await queue.get()
                payload = dict(payload, subscription=subscription_id)
                writer.write(encode_line(
                    make_message("metrics_push", subscription_id, payload)
                ).encode())
                await writer.drain()
        except (ConnectionResetError, asyncio.CancelledError):
            self._subscribers.discard(queue)

    # -- HTTP bridge -------------------------------------------------------

    async def _handle_http(self, reader, writer):
        try:
            request_line = await reader.readline()
            if not request_line:
                writer.close()
                return
            parts = request_line.decode("latin-1").split()
            method, path = (parts + ["", ""])[:2]
            headers = {}
            while True:
                line = await reader.readline()
                if line in (b"\r\n", b"\n", b""):
                    break
                key, _, value = line.decode("latin-1").partition(":")
                headers[key.strip().lower()] = value.strip()
            if method == "GET" and path.startswith("/events"):
                await self._serve_sse(writer)
            elif method == "POST" and path == "/command":
                length = int(headers.get("content-length", 0))
                body = await reader.readexactly(length) if length else b""
                try:
                    msg = decode_line(body.decode("utf-8"))
                    reply = self.gateway.handle(msg)
                except (ValueError, UnicodeDecodeError) as e:
                    reply = make_message("error", None,
                                         {"reason": "parse", "detail": str(e)})
                data = encode_line(reply).encode()
                writer.write(self._http_headers("200 OK", "application/json",
                                                len(data)) + data)
                await writer.drain()
                writer.close()
            else:
                body = b'{"error": "not found"}\n'
                writer.write(self._http_headers("404 Not Found",
                                                "application/json",
                                                len(body)) + body)
                await writer.drain()
                writer.close()
        except (ConnectionResetError, asyncio.CancelledError,
                asyncio.IncompleteReadError):
            writer.close()

    @staticmethod
    def _http_headers(status, ctype, length=None, extra=()):
        lines = [f"HTTP/1.1 {status}", f"Content-Type: {ctype}",
                 "Access-Control-Allow-Origin: *", "Connection: close"]
        if length is not None:
            lines.append(f"Content-Length: {length}")
        lines.extend(extra)
        return ("\r\n".join(lines) + "\r\n\r\n").encode()

    async def _serve_sse(self, writer):
        writer.write(self._http_headers("200 OK", "text/event-stream",
                                        extra=["Cache-Control: no-cache"]))
        await writer.drain()
        queue = asyncio.Queue(maxsize=16)
        self._subscribers.add(queue)
        try:
            while True:
                payload = await queue.get()
                msg = make_message("metrics_push", "sse", payload)
                writer.write(b"data: " + encode_line(msg).encode() + b"\n")
                await writer.drain()
        except (ConnectionResetError, ConnectionError, asyncio.CancelledError):
            pass
        finally:
            self._subscribers.discard(queue)
            writer.close()

    # -- push loop ---------------------------------------------------------

    async def _push_loop(self):
        while True:
            await asyncio.sleep(self.gateway.push_interval_s)
            if not self._subscribers:
                continue
            for adapter in self.gateway.devices.values():
                payload = adapter.metrics()
                payload["device"] = adapter.id
                for queue in list(self._subscribers):
                    if queue.full():
                        try:
                            queue.get_nowait()
                        except asyncio.QueueEmpty:
                            pass
                    queue.put_nowait(payload)

    async def start(self):
        self._loop = asyncio.get_event_loop()
        tcp = await asyncio.start_server(self._handle_tcp, self.host, self.port)
        http = await asyncio.start_server(self._handle_http, self.host,
                                          self.http_port)
        self._servers = [tcp, http]
        self._push_task = asyncio.ensure_future(self._push_loop())
        return self

    async def stop(self):
        if self._push_task:
            self._push_task.cancel()
        for server in self._servers:
            server.close()
            await server.wait_closed()
        current = asyncio.current_task()
        for task in asyncio.all_tasks():
            if task is not current:
                task.cancel()
        await asyncio.sleep(0)

    def serve_forever(self):
        async def _main():
            await self.start()
            while True:
                await asyncio.sleep(3600)

        asyncio.run(_main())


def request_once(host, port, msg, timeout=5.0):
    """Blocking client helper: send one message, return the one response."""
    import socket

    with socket.create_connection((host, port), timeout=timeout) as sock:
        sock.sendall(encode_line(msg).encode())
        buf = b""
        deadline = time.monotonic() + timeout
        while b"\n" not in buf:
            if time.monotonic() > deadline:
                raise TimeoutError("no response from gateway")
            chunk = sock.recv(4096)
            if not chunk:
                break
            buf += chunk
        line = buf.split(b"\n", 1)[0]
        return decode_line(line.decode("utf-8"))
