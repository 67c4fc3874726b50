"""Deterministic scripted attacker: replays attack sessions into the event
store and, when attached, drives the gateway like the human interface
would.

Scripts are script_v1 text: header lines (schema/name/clock), then one
step per line as `<offset-seconds> <ACTION> key=value ...`. Values with
spaces are double-quoted; a doubled quote inside a quoted value is a
literal quote; backslashes are never escape characters, so Windows paths
read verbatim. Scripts carry event metadata only — no payloads.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from importlib import resources
from pathlib import Path

from .protocol import ChannelMessage, MessageKind, command
from .telemetry import EventKind, EventStore, HostEvent, ProcessRef

SCRIPT_SCHEMA = "script_v1"
BUILTIN_SCRIPTS = ("makop", "benign")
GATEWAY_ADDRESS = "10.10.2.10"
GATEWAY_PORT = 8844


class ScriptError(ValueError):
    def __init__(self, message: str, line_no: int | None = None):
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)
        self.line_no = line_no


class Action(str, Enum):
    LOGIN = "LOGIN"
    SPAWN = "SPAWN"
    REGISTRY = "REGISTRY"
    CONNECT = "CONNECT"
    FILE = "FILE"
    HMI_COMMAND = "HMI_COMMAND"
    WAIT = "WAIT"


REQUIRED_PARAMS = {
    Action.LOGIN: ("username", "source", "outcome"),
    Action.SPAWN: ("ref", "image"),
    Action.REGISTRY: ("key", "value"),
    Action.CONNECT: ("port",),
    Action.FILE: ("op", "path"),
    Action.HMI_COMMAND: ("tag", "target"),
    Action.WAIT: (),
}


@dataclass(frozen=True)
class ScriptStep:
    at: float
    action: Action
    params: dict
    line_no: int = 0


@dataclass(frozen=True)
class AttackScript:
    name: str
    steps: tuple[ScriptStep, ...]
    clock: float  # virtual start, epoch seconds


def tokenize(line: str, line_no: int) -> list[str]:
    """Whitespace-split with double-quote grouping; `""` is a literal quote."""
    tokens: list[str] = []
    buf: list[str] = []
    in_quotes = False
    started = False
    i = 0
    while i < len(line):
        ch = line[i]
        if in_quotes:
            if ch == '"':
                if i + 1 < len(line) and line[i + 1] == '"':
                    buf.append('"')
                    i += 2
                    continue
                in_quotes = False
            else:
                buf.append(ch)
        else:
            if ch == '"':
                in_quotes = True
                started = True
            elif ch.isspace():
                if started:
                    tokens.append("".join(buf))
                    buf = []
                    started = False
            else:
                buf.append(ch)
                started = True
        i += 1
    if in_quotes:
        raise ScriptError("unterminated quote", line_no)
    if started:
        tokens.append("".join(buf))
    return tokens


def _parse_clock(value: str, line_no: int) -> float:
    try:
        return float(value)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(value.replace("Z", "+00:00")).timestamp()
    except ValueError:
        raise ScriptError(f"bad clock value {value!r}", line_no) from None


def parse_script(text: str, default_name: str = "script") -> AttackScript:
    name = default_name
    clock = 0.0
    schema_seen = False
    steps: list[ScriptStep] = []
    refs: set[str] = set()
    last_at = float("-inf")

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = tokenize(line, line_no)
        head = tokens[0]
        if head == "schema":
            if len(tokens) != 2 or tokens[1] != SCRIPT_SCHEMA:
                raise ScriptError(f"expected 'schema {SCRIPT_SCHEMA}'", line_no)
            schema_seen = True
            continue
        if head == "name":
            name = tokens[1] if len(tokens) > 1 else name
            continue
        if head == "clock":
            if len(tokens) != 2:
                raise ScriptError("clock takes one value", line_no)
            clock = _parse_clock(tokens[1], line_no)
            continue

        try:
            at = float(head)
        except ValueError:
            raise ScriptError(f"expected step offset, got {head!r}", line_no) from None
        if at < last_at:
            raise ScriptError(f"step time {at:g} goes backwards", line_no)
        last_at = at
        if len(tokens) < 2:
            raise ScriptError("step needs an action", line_no)
        try:
            action = Action(tokens[1])
        except ValueError:
            raise ScriptError(f"unknown action {tokens[1]!r}", line_no) from None

        params: dict[str, str] = {}
        for tok in tokens[2:]:
            if "=" not in tok:
                raise ScriptError(f"expected key=value, got {tok!r}", line_no)
            key, _, value = tok.partition("=")
            if not key:
                raise ScriptError(f"empty key in {tok!r}", line_no)
            params[key] = value

        for required in REQUIRED_PARAMS[action]:
            if required not in params:
                raise ScriptError(f"{action.value} step missing {required!r}", line_no)
        if action is Action.LOGIN and params["outcome"] not in ("SUCCESS", "FAILURE"):
            raise ScriptError("LOGIN outcome must be SUCCESS or FAILURE", line_no)
        if action is Action.CONNECT and not (params.get("domain") or params.get("address")):
            raise ScriptError("CONNECT needs domain or address", line_no)
        if action is Action.SPAWN:
            if params["ref"] in refs:
                raise ScriptError(f"duplicate process ref {params['ref']!r}", line_no)
            refs.add(params["ref"])
        for ref_key in ("parent", "actor"):
            ref = params.get(ref_key)
            if ref is not None and ref not in refs:
                raise ScriptError(f"undefined process reference {ref!r}", line_no)

        steps.append(ScriptStep(at=at, action=action, params=params, line_no=line_no))

    if not schema_seen:
        raise ScriptError(f"script must declare 'schema {SCRIPT_SCHEMA}'")
    return AttackScript(name=name, steps=tuple(steps), clock=clock)


def load_script(source: str | Path) -> AttackScript:
    """Load a script by builtin name ('makop', 'benign') or file path."""
    if isinstance(source, str) and source in BUILTIN_SCRIPTS:
        text = (
            resources.files("hydratwin.data").joinpath(f"{source}.script").read_text("utf-8")
        )
        return parse_script(text, default_name=source)
    path = Path(source)
    if not path.exists():
        raise ScriptError(f"script {source!r} is neither a builtin nor a file")
    return parse_script(path.read_text("utf-8"), default_name=path.stem)


@dataclass
class ReplaySummary:
    script: str
    counts: dict = field(default_factory=dict)
    events_emitted: int = 0
    commands_sent: int = 0
    acks: int = 0
    nacks: int = 0
    nack_reasons: list = field(default_factory=list)

    def bump(self, action: Action) -> None:
        self.counts[action.value] = self.counts.get(action.value, 0) + 1


class GatewayClient:
    """Synchronous command handle used by the replayer in place of the
    human interface: one authorized session, sequential command seqs."""

    def __init__(self, core, session):
        self.core = core
        self.session = session
        self._seq = 0

    def send_command(self, tag: str, target: str, sent_at_ms: int) -> ChannelMessage:
        self._seq += 1
        msg = command(self._seq, tag, target, sent_at=sent_at_ms)
        return self.core.handle_command(msg, self.session)


def replay(
    script: AttackScript,
    store: EventStore,
    gateway_client: GatewayClient | None = None,
    speed: float = float("inf"),
) -> ReplaySummary:
    """Emit the script's events at virtual time `clock + at`.

    speed=inf is logical-clock mode: no sleeping, fully deterministic.
    A gateway NACK on an HMI command is recorded, never fatal.
    """
    if speed <= 0:
        raise ScriptError("speed must be positive")
    summary = ReplaySummary(script=script.name)
    pids: dict[str, ProcessRef] = {}
    next_pid = 4000
    counter = 0
    prev_at = 0.0

    def next_id() -> str:
        nonlocal counter
        counter += 1
        return f"{script.name}-{counter:05d}"

    def emit(ev: HostEvent) -> None:
        store.append(ev)
        summary.events_emitted += 1

    for step in script.steps:
        if speed != float("inf") and step.at > prev_at:
            _time.sleep((step.at - prev_at) / speed)
        prev_at = step.at
        ts = script.clock + step.at
        p = step.params
        summary.bump(step.action)

        if step.action is Action.WAIT:
            continue

        if step.action is Action.LOGIN:
            detail = {
                "username": p["username"],
                "source_address": p["source"],
                "outcome": p["outcome"],
                "service": p.get("service", "rdp"),
            }
            if "duration" in p:
                detail["duration"] = float(p["duration"])
            emit(HostEvent(next_id(), ts, EventKind.LOGIN_ATTEMPT, detail=detail))

        elif step.action is Action.SPAWN:
            pid = int(p["pid"]) if "pid" in p else next_pid
            if "pid" not in p:
                next_pid += 1
            ref = ProcessRef(pid, p["image"])
            pids[p["ref"]] = ref
            emit(
                HostEvent(
                    next_id(),
                    ts,
                    EventKind.PROCESS_CREATE,
                    actor=ref,
                    parent=pids.get(p.get("parent", "")),
                    detail={"command_line": p.get("cmdline", p["image"])},
                )
            )

        elif step.action is Action.REGISTRY:
            emit(
                HostEvent(
                    next_id(),
                    ts,
                    EventKind.REGISTRY_SET,
                    actor=pids.get(p.get("actor", "")),
                    detail={"key": p["key"], "value": p["value"]},
                )
            )

        elif step.action is Action.CONNECT:
            detail = {"port": int(p["port"])}
            if "domain" in p:
                detail["domain"] = p["domain"]
            if "address" in p:
                detail["address"] = p["address"]
            emit(
                HostEvent(
                    next_id(),
                    ts,
                    EventKind.NET_CONNECT,
                    actor=pids.get(p.get("actor", "")),
                    detail=detail,
                )
            )

        elif step.action is Action.FILE:
            detail = {"path": p["path"], "operation": p["op"]}
            for extra in ("new_path", "offset", "length"):
                if extra in p:
                    detail[extra] = p[extra]
            emit(
                HostEvent(
                    next_id(),
                    ts,
                    EventKind.FILE_OP,
                    actor=pids.get(p.get("actor", "")),
                    detail=detail,
                )
            )

        elif step.action is Action.HMI_COMMAND:
            # The click is host-visible traffic toward the twin gateway...
            emit(
                HostEvent(
                    next_id(),
                    ts,
                    EventKind.NET_CONNECT,
                    actor=pids.get(p.get("actor", "")),
                    detail={
                        "address": GATEWAY_ADDRESS,
                        "port": GATEWAY_PORT,
                        "protocol": "twin_v1",
                        "purpose": "hmi-command",
                        "tag": p["tag"],
                        "target": p["target"],
                    },
                )
            )
            # ...and, with a live twin attached, an actual command.
            if gateway_client is not None:
                reply = gateway_client.send_command(p["tag"], p["target"], int(ts * 1000))
                summary.commands_sent += 1
                if reply.kind is MessageKind.ACK:
                    summary.acks += 1
                else:
                    summary.nacks += 1
                    summary.nack_reasons.append(reply.payload.get("reason", "?"))

    return summary
