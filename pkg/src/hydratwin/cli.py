"""Command-line entry points: run the twin, replay attacks, analyze logs,
and produce connection reports."""

from __future__ import annotations

import argparse
import asyncio
import sys
from pathlib import Path

from .analyzer import (
    classify_operations,
    default_catalog,
    detect_ransomware,
    load_catalog,
    reconstruct_chain,
    render_report,
    tag_stages,
)
from .control import ControlConfig
from .gateway import AccessRule, CommandQueue, GatewayCore, PeerIdentity
from .loop import PlantLoop
from .replayer import GatewayClient, load_script, replay
from .telemetry import (
    EventStore,
    connection_stats,
    flows_from_events,
    sessions_from_events,
)
from .topology import PlantTopology, build_topology, load_topology_config, reference_topology

DEFAULT_LISTEN = "127.0.0.1:8844"
DEFAULT_ALLOWED = "127.0.0.1"


def _topology_from(args) -> PlantTopology:
    if getattr(args, "config", None):
        return build_topology(load_topology_config(args.config))
    return reference_topology()


def _parse_bucket(text: str) -> float:
    units = {"s": 1.0, "m": 60.0, "h": 3600.0, "d": 86400.0}
    text = text.strip().lower()
    if text and text[-1] in units:
        return float(text[:-1]) * units[text[-1]]
    return float(text)


def _parse_speed(text: str) -> float:
    return float("inf") if text.lower() in ("inf", "infinite", "max") else float(text)


def cmd_run(args) -> int:
    topology = _topology_from(args)
    control = ControlConfig.from_topology(topology)
    queue = CommandQueue(args.queue_bound)
    loop = PlantLoop(topology, control_config=control, queue=queue)
    telemetry = EventStore(args.telemetry) if args.telemetry else None
    core = GatewayCore(
        topology=topology,
        rules=[AccessRule(args.allow, "twin_v1", max_sessions=args.max_sessions)],
        control_config=control,
        state_provider=loop.latest_state,
        queue=queue,
        telemetry=telemetry,
        publish_period=args.publish_period,
    )

    if args.replay:
        # Offline: the replayer stands in for the human interface.
        script = load_script(args.replay)
        peer = PeerIdentity(args.allow.split("/")[0], "REPLAY", "twin_v1")
        session, decision = core.connect(peer)
        if not decision.accepted:
            print(f"replay peer rejected: {decision.reason}", file=sys.stderr)
            return 2
        store = EventStore(args.out) if args.out else EventStore()
        client = GatewayClient(core, session)
        summary = replay(script, store, gateway_client=client, speed=_parse_speed(args.speed))
        loop.run(args.ticks)
        print(
            f"replayed {summary.script}: {summary.events_emitted} events, "
            f"{summary.acks} ack / {summary.nacks} nack"
        )
        print(f"plant at t={loop.latest_state().sim_time:g}s after {args.ticks} ticks")
        for line in loop.journal[-10:]:
            print(" ", line)
        return 0

    host, _, port = args.listen.partition(":")
    from .server import TwinServer, start_static_server

    server = TwinServer(
        loop,
        core,
        host=host or "127.0.0.1",
        port=int(port or 8844),
        max_ticks=args.ticks if args.ticks > 0 else None,
    )
    if args.hmi_port:
        hmi_dir = Path(args.hmi_dir) if args.hmi_dir else None
        if hmi_dir is None or not hmi_dir.is_dir():
            print(f"hmi assets directory not found: {hmi_dir}", file=sys.stderr)
            return 2
        start_static_server(hmi_dir, args.hmi_port)
        print(f"operator UI on http://127.0.0.1:{args.hmi_port}/")
    print(f"twin gateway listening on ws://{args.listen} (allow: {args.allow})")
    try:
        asyncio.run(server.run())
    except KeyboardInterrupt:
        pass
    return 0


def cmd_replay(args) -> int:
    script = load_script(args.script)
    store = EventStore(args.out)
    summary = replay(script, store, speed=_parse_speed(args.speed))
    print(f"script: {summary.script}")
    for action, count in sorted(summary.counts.items()):
        print(f"  {action}: {count}")
    print(f"events written: {summary.events_emitted} -> {args.out}")
    return 0


def cmd_analyze(args) -> int:
    store = EventStore(args.source)
    events = store.events()
    sessions = sessions_from_events(events)
    chain = reconstruct_chain(events)
    classes = classify_operations(events)
    tags = tag_stages(events, chain, classes, sessions)
    catalog = load_catalog(args.catalog) if args.catalog else default_catalog()
    verdict = detect_ransomware(events, catalog=catalog, threshold=args.threshold)
    report = render_report(events, sessions, chain, classes, tags, verdict)
    Path(args.report).write_text(report, encoding="utf-8")
    flag = "POSITIVE" if verdict.positive else "negative"
    print(
        f"ransomware verdict: {flag} (score {verdict.score:g} / "
        f"threshold {verdict.threshold:g}, signatures: "
        f"{', '.join(verdict.matched_ids()) or 'none'})"
    )
    if verdict.family_hint:
        print(f"family hint: {verdict.family_hint}")
    print(f"report written to {args.report}")
    return 0


def cmd_report(args) -> int:
    store = EventStore(args.source)
    events = store.events()
    sessions = sessions_from_events(events)
    flows = flows_from_events(events)
    stats = connection_stats(sessions, flows, bucket=_parse_bucket(args.bucket))
    text = stats.to_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"report written to {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydratwin",
        description="Water-treatment cyber-twin honeypot toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the plant loop behind the gateway")
    p_run.add_argument("--config", help="topology_v1 TOML (default: shipped reference plant)")
    p_run.add_argument("--listen", default=DEFAULT_LISTEN, help="websocket host:port")
    p_run.add_argument("--allow", default=DEFAULT_ALLOWED, help="allow-listed peer address or CIDR")
    p_run.add_argument("--max-sessions", type=int, default=1)
    p_run.add_argument("--queue-bound", type=int, default=64)
    p_run.add_argument("--publish-period", type=float, default=1.0, help="state publish period, seconds")
    p_run.add_argument("--hmi-port", type=int, default=0, help="serve operator UI assets here")
    p_run.add_argument("--hmi-dir", help="operator UI asset directory")
    p_run.add_argument("--telemetry", help="event log path for gateway telemetry")
    p_run.add_argument("--replay", help="attach this attack script instead of listening")
    p_run.add_argument("--speed", default="inf", help="replay speed multiplier or 'inf'")
    p_run.add_argument("--out", help="event log for --replay output")
    p_run.add_argument("--ticks", type=int, default=0, help="stop after N ticks (0 = forever)")
    p_run.set_defaults(func=cmd_run)

    p_replay = sub.add_parser("replay", help="replay an attack script into an event log")
    p_replay.add_argument("--script", required=True, help="builtin name (makop, benign) or path")
    p_replay.add_argument("--speed", default="inf")
    p_replay.add_argument("--out", required=True, help="event log path")
    p_replay.set_defaults(func=cmd_replay)

    p_analyze = sub.add_parser("analyze", help="forensic report over an event log")
    p_analyze.add_argument("--from", dest="source", required=True, help="event log path")
    p_analyze.add_argument("--report", required=True, help="report output path")
    p_analyze.add_argument("--catalog", help="sigs_v1 signature catalog override")
    p_analyze.add_argument("--threshold", type=float, default=None)
    p_analyze.set_defaults(func=cmd_analyze)

    p_report = sub.add_parser("report", help="connection statistics from an event log")
    p_report.add_argument("--from", dest="source", required=True, help="event log path")
    p_report.add_argument("--bucket", default="1d", help="bucket duration (e.g. 1d, 6h, 300s)")
    p_report.add_argument("--out", help="write the text report here instead of stdout")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
