"""Operator/automation command-line client and scenario runner."""

import argparse
import json
import sys
import threading
import uuid

from cyclab import _kernels
from cyclab.gateway import (
    DeviceAdapter,
    Gateway,
    GatewayServer,
    make_message,
    request_once,
)
from cyclab.scenario import Scenario, ScenarioError, build_device, run_scenario


def _gateway_args(parser):
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=7700)
    parser.add_argument("--device", default=None)
    parser.add_argument("--asset", default=None)


def _send(args, msg_type, payload):
    if args.device:
        payload["device"] = args.device
    msg = make_message(msg_type, str(uuid.uuid4()), payload)
    try:
        reply = request_once(args.host, args.port, msg)
    except (OSError, TimeoutError) as e:
        print(f"gateway unreachable at {args.host}:{args.port}: {e}",
              file=sys.stderr)
        return 2
    print(json.dumps(reply, indent=2, sort_keys=True))
    return 0 if reply.get("type") == "ack" else 1


def cmd_run(args):
    try:
        scenario = Scenario.load(args.scenario)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2
    result = run_scenario(scenario)
    summary = result.summary()
    if args.csv:
        result.export_csv(args.csv)
    if args.summary:
        result.export_summary(args.summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if summary["integrity_faults"] == 0 else 1


def cmd_serve(args):
    try:
        scenario = Scenario.load(args.scenario)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2
    device = build_device(scenario)

    runner = threading.Thread(
        target=run_scenario, args=(scenario,), kwargs={"device": device},
        daemon=True, name="cyclab-device",
    )
    runner.start()

    gateway = Gateway([DeviceAdapter(device)],
                      push_interval_s=args.push_interval)
    server = GatewayServer(gateway, host=args.host, port=args.port)
    print(f"gateway: ndjson on {args.host}:{args.port}, "
          f"http bridge on {args.host}:{server.http_port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_status(args):
    return _send(args, "status", {})


def cmd_deploy(args):
    payload = {"asset": args.asset}
    if args.controller:
        payload["controller"] = json.loads(args.controller)
    return _send(args, "deploy_shadow", payload)


def cmd_promote(args):
    return _send(args, "promote", {"asset": args.asset, "cycle": args.cycle})


def cmd_rollback(args):
    return _send(args, "rollback", {"asset": args.asset, "cycle": args.cycle})


def cmd_abort(args):
    return _send(args, "abort", {"asset": args.asset})


def cmd_export(args):
    try:
        scenario = Scenario.load(args.scenario)
    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return 2
    result = run_scenario(scenario)
    result.export_csv(args.csv)
    print(f"wrote {args.csv}")
    return 0 if result.summary()["integrity_faults"] == 0 else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="cyclab",
        description="Shadow/A-B deployment runtime for cyclic control "
                    f"(kernel backend: {_kernels.BACKEND})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario embedded, no gateway")
    p.add_argument("scenario")
    p.add_argument("--csv", help="per-cycle frame log output path")
    p.add_argument("--summary", help="summary JSON output path")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("serve", help="run a scenario with a live gateway")
    p.add_argument("scenario")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7700)
    p.add_argument("--push-interval", type=float, default=0.5)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("status", help="query adaptation state")
    _gateway_args(p)
    p.set_defaults(fn=cmd_status)

    p = sub.add_parser("deploy-shadow", help="deploy a shadow service")
    _gateway_args(p)
    p.add_argument("--controller", help="controller spec as JSON")
    p.set_defaults(fn=cmd_deploy)

    p = sub.add_parser("promote", help="switch to the shadow at cycle k")
    _gateway_args(p)
    p.add_argument("--cycle", type=int, required=True)
    p.set_defaults(fn=cmd_promote)

    p = sub.add_parser("rollback", help="switch back to the old service at cycle m")
    _gateway_args(p)
    p.add_argument("--cycle", type=int, required=True)
    p.set_defaults(fn=cmd_rollback)

    p = sub.add_parser("abort", help="terminate the shadow deployment")
    _gateway_args(p)
    p.set_defaults(fn=cmd_abort)

    p = sub.add_parser("export", help="run a scenario and export the frame CSV")
    p.add_argument("scenario")
    p.add_argument("--csv", required=True)
    p.set_defaults(fn=cmd_export)

    args = parser.parse_args(argv)
    if args.command in ("deploy-shadow", "promote", "rollback", "abort") \
            and not args.asset:
        parser.error("--asset is required")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
