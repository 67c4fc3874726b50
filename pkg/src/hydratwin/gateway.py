"""Access-gated gateway between the plant loop and its one allowed peer.

Admission is deliberately thin — address + protocol allow-list, no
credentials — because the defense being modeled is network segmentation.
Accepted peers get a session; their commands are schema-checked,
sequence-checked, interlock-checked, and queued for the plant loop (never
applied directly). State flows the other way as full snapshots. The
gateway never dials out: there is no code path that opens an outbound
connection, and `outbound_connections` stays 0 as a checkable witness.
"""

from __future__ import annotations

import ipaddress
import itertools
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable

from .control import ActuatorCommand, CommandOrigin, ControlConfig, interlock_check
from .plant import PlantState, Position, read_sensor
from .protocol import (
    PROTOCOL_NAME,
    ChannelMessage,
    MessageKind,
    ack,
    nack,
    now_ms,
    state_update,
)
from .telemetry import EventKind, EventStore, HostEvent
from .topology import PlantTopology


class GatewayError(ValueError):
    pass


@dataclass(frozen=True)
class PeerIdentity:
    address: str
    declared_role: str = "OTHER"  # HMI | OTHER
    channel_protocol: str = ""

    def parsed_address(self):
        try:
            return ipaddress.ip_address(self.address)
        except ValueError:
            return None


@dataclass(frozen=True)
class AccessRule:
    allowed_address: str  # exact address or CIDR prefix
    allowed_protocol: str
    max_sessions: int = 1

    def __post_init__(self):
        if self.max_sessions < 1:
            raise GatewayError("max_sessions must be >= 1")
        ipaddress.ip_network(self.allowed_address, strict=False)  # validates

    def matches_address(self, peer: PeerIdentity) -> bool:
        addr = peer.parsed_address()
        if addr is None:
            return False
        return addr in ipaddress.ip_network(self.allowed_address, strict=False)


@dataclass(frozen=True)
class Decision:
    accepted: bool
    reason: str | None = None  # "address" | "protocol" | "slots"

    @classmethod
    def accept(cls) -> "Decision":
        return cls(True)

    @classmethod
    def reject(cls, reason: str) -> "Decision":
        return cls(False, reason)


def authorize(
    peer: PeerIdentity,
    rules: list[AccessRule],
    active_sessions: int = 0,
    emit: Callable[[Decision], None] | None = None,
) -> Decision:
    """Accept iff some rule matches the address AND the protocol AND a
    session slot is free. Rejections name the first failing gate."""
    if not rules:
        raise GatewayError("authorize requires at least one access rule")
    address_matches = [r for r in rules if r.matches_address(peer)]
    if not address_matches:
        decision = Decision.reject("address")
    else:
        protocol_matches = [
            r for r in address_matches if r.allowed_protocol == peer.channel_protocol
        ]
        if not protocol_matches:
            decision = Decision.reject("protocol")
        elif all(active_sessions >= r.max_sessions for r in protocol_matches):
            decision = Decision.reject("slots")
        else:
            decision = Decision.accept()
    if emit is not None:
        emit(decision)
    return decision


@dataclass
class Session:
    session_id: str
    peer: PeerIdentity
    connected_at: float
    open: bool = True
    last_command_seq: int = -1
    next_state_seq: int = 0


@dataclass(frozen=True)
class QueuedCommand:
    command: ActuatorCommand
    peer: PeerIdentity
    session_id: str
    seq: int


class CommandQueue:
    """Bounded multi-producer queue into the plant loop."""

    def __init__(self, bound: int = 64):
        self.bound = bound
        self._items: deque[QueuedCommand] = deque()
        self.total_enqueued = 0

    def offer(self, item: QueuedCommand) -> bool:
        if len(self._items) >= self.bound:
            return False
        self._items.append(item)
        self.total_enqueued += 1
        return True

    def drain(self) -> list[QueuedCommand]:
        out = list(self._items)
        self._items.clear()
        return out

    def __len__(self) -> int:
        return len(self._items)


class GatewayCore:
    """Sessions, command admission, and state publishing (transport-free)."""

    def __init__(
        self,
        topology: PlantTopology,
        rules: list[AccessRule],
        control_config: ControlConfig,
        state_provider: Callable[[], PlantState],
        queue: CommandQueue | None = None,
        telemetry: EventStore | None = None,
        publish_period: float = 1.0,
        clock: Callable[[], float] = time.time,
    ):
        if not rules:
            raise GatewayError("gateway needs at least one access rule")
        self.topology = topology
        self.rules = list(rules)
        self.control_config = control_config
        self.state_provider = state_provider
        self.queue = queue if queue is not None else CommandQueue()
        self.telemetry = telemetry
        self.publish_period = publish_period
        self.clock = clock
        self.sessions: dict[str, Session] = {}
        self.outbound_connections = 0  # the gateway never dials out
        self._ids = itertools.count(1)
        self._event_ids = itertools.count(1)

    # -- telemetry ------------------------------------------------------

    def _emit(self, kind: EventKind, detail: dict) -> None:
        if self.telemetry is None:
            return
        self.telemetry.append(
            HostEvent(
                event_id=f"gw-{next(self._event_ids):06d}",
                timestamp=self.clock(),
                kind=kind,
                detail=detail,
            )
        )

    # -- session lifecycle ----------------------------------------------

    def active_count(self) -> int:
        return sum(1 for s in self.sessions.values() if s.open)

    def connect(self, peer: PeerIdentity) -> tuple[Session | None, Decision]:
        decision = authorize(peer, self.rules, self.active_count())
        self._emit(
            EventKind.NET_CONNECT,
            {
                "address": peer.address or "<empty>",
                "port": 0,
                "protocol": peer.channel_protocol or "<none>",
                "purpose": "gateway-admission",
                "outcome": "accept" if decision.accepted else f"reject:{decision.reason}",
            },
        )
        if not decision.accepted:
            return None, decision
        session = Session(
            session_id=f"s{next(self._ids):05d}", peer=peer, connected_at=self.clock()
        )
        self.sessions[session.session_id] = session
        return session, decision

    def disconnect(self, session_id: str) -> None:
        session = self.sessions.get(session_id)
        if session is not None and session.open:
            session.open = False
            self._emit(
                EventKind.NET_CONNECT,
                {
                    "address": session.peer.address,
                    "port": 0,
                    "purpose": "gateway-disconnect",
                    "outcome": "closed",
                },
            )

    # -- command path -----------------------------------------------------

    def handle_command(self, msg: ChannelMessage, session: Session) -> ChannelMessage:
        """Admit or refuse one COMMAND; never applies it directly."""
        if msg.kind is not MessageKind.COMMAND:
            raise GatewayError("handle_command takes COMMAND messages")
        if not session.open or session.session_id not in self.sessions:
            return nack(msg.seq, "session", sent_at=now_ms())
        if msg.seq <= session.last_command_seq:
            return nack(msg.seq, "seq", sent_at=now_ms())
        session.last_command_seq = msg.seq

        command = self._parse_command(msg, session)
        if command is None:
            return nack(msg.seq, "schema", sent_at=now_ms())

        state = self.state_provider()
        decision = interlock_check(command, state, self.control_config)
        if not decision.permitted:
            return nack(msg.seq, "interlock", sent_at=now_ms())

        queued = QueuedCommand(
            command=command, peer=session.peer, session_id=session.session_id, seq=msg.seq
        )
        if not self.queue.offer(queued):
            return nack(msg.seq, "busy", sent_at=now_ms())
        return ack(msg.seq, sent_at=now_ms())

    def _parse_command(self, msg: ChannelMessage, session: Session) -> ActuatorCommand | None:
        tag_name = msg.payload.get("tag")
        target_name = msg.payload.get("target")
        if not isinstance(tag_name, str) or not isinstance(target_name, str):
            return None
        tag = self.topology.tags.get(tag_name)
        if tag is None or not tag.kind.is_actuator:
            return None
        try:
            target = Position(target_name)
        except ValueError:
            return None
        origin = (
            CommandOrigin.REPLAY if session.peer.declared_role == "REPLAY" else CommandOrigin.HMI
        )
        command = ActuatorCommand(
            tag=tag_name, target=target, issued_at=self.state_provider().sim_time, origin=origin
        )
        try:
            command.validate(self.topology)
        except ValueError:
            return None
        return command

    # -- state path --------------------------------------------------------

    def snapshot_payload(self, state: PlantState, alarms: tuple = ()) -> tuple[dict, list]:
        tags: dict[str, object] = {}
        for tag in self.topology.tags.values():
            if tag.kind.is_sensor:
                tags[tag.name] = read_sensor(state, tag).value
            else:
                tags[tag.name] = state.actuator_positions.get(tag.name, Position.OFF).value
        alarm_rows = [[subject, condition.value] for subject, condition in alarms]
        return tags, alarm_rows

    def publish_state(
        self, state: PlantState, session: Session, alarms: tuple = ()
    ) -> ChannelMessage | None:
        """Full snapshot: every topology tag exactly once. Returns None (and
        records the fact) if the session is gone."""
        if not session.open:
            self._emit(
                EventKind.NET_CONNECT,
                {
                    "address": session.peer.address,
                    "port": 0,
                    "purpose": "state-publish-drop",
                    "outcome": "closed",
                },
            )
            return None
        tags, alarm_rows = self.snapshot_payload(state, alarms)
        msg = state_update(
            seq=session.next_state_seq,
            sim_time=state.sim_time,
            tags=tags,
            alarms=alarm_rows,
            sent_at=now_ms(),
        )
        session.next_state_seq += 1
        return msg


class PipeEnd:
    """One end of an in-memory duplex byte pipe (test transport)."""

    def __init__(self):
        from .protocol import FrameDecoder

        self._peer: "PipeEnd" | None = None
        self._decoder = FrameDecoder()
        self._inbox: deque[bytes] = deque()
        self.closed = False

    def send(self, data: bytes) -> None:
        if self.closed or self._peer is None or self._peer.closed:
            raise GatewayError("pipe closed")
        self._peer._inbox.append(data)

    def send_message(self, msg: ChannelMessage) -> None:
        self.send(msg.encode())

    def receive(self) -> list[ChannelMessage]:
        out = []
        while self._inbox:
            out.extend(self._decoder.feed(self._inbox.popleft()))
        return out

    def close(self) -> None:
        self.closed = True


def duplex_pipe() -> tuple[PipeEnd, PipeEnd]:
    a, b = PipeEnd(), PipeEnd()
    a._peer, b._peer = b, a
    return a, b
