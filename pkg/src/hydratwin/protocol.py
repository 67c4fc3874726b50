"""twin_v1 wire protocol: length-delimited canonical-JSON frames.

A frame is the ASCII decimal byte length of the body, one linefeed, then
the body. The body is JSON with object keys sorted, no whitespace,
non-ASCII escaped, and floats that are mathematically integral emitted as
integers — one canonical byte encoding per message, reproducible from any
language (timestamps travel as integral epoch milliseconds for the same
reason). The full grammar with frozen example bytes is in
docs/protocol.md.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from enum import Enum

MAX_FRAME_BYTES = 1 << 20
PROTOCOL_NAME = "twin_v1"


class ProtocolError(ValueError):
    """Malformed frame or message."""


class MessageKind(str, Enum):
    STATE_UPDATE = "STATE_UPDATE"
    COMMAND = "COMMAND"
    ACK = "ACK"
    NACK = "NACK"
    HELLO = "HELLO"
    PING = "PING"


@dataclass(frozen=True)
class ChannelMessage:
    kind: MessageKind
    seq: int
    payload: dict
    sent_at: int  # epoch milliseconds

    def encode(self) -> bytes:
        return encode_frame(self)


def now_ms() -> int:
    return int(time.time() * 1000)


def _canonize(obj):
    if isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            raise ProtocolError("non-finite numbers are not representable")
        return int(obj) if obj.is_integer() else obj
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            if not isinstance(k, str):
                raise ProtocolError("object keys must be strings")
            out[k] = _canonize(v)
        return out
    if isinstance(obj, (list, tuple)):
        return [_canonize(v) for v in obj]
    if obj is None or isinstance(obj, (str, int, bool)):
        return obj
    raise ProtocolError(f"unencodable value of type {type(obj).__name__}")


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(
        _canonize(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=True
    ).encode("ascii")


def encode_frame(msg: ChannelMessage) -> bytes:
    if not isinstance(msg.seq, int) or isinstance(msg.seq, bool) or msg.seq < 0:
        raise ProtocolError("seq must be a non-negative integer")
    if not isinstance(msg.sent_at, int) or isinstance(msg.sent_at, bool):
        raise ProtocolError("sent_at must be integral epoch milliseconds")
    body = canonical_json_bytes(
        {
            "kind": msg.kind.value,
            "payload": msg.payload,
            "seq": msg.seq,
            "sent_at": msg.sent_at,
        }
    )
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolError("frame too large")
    return str(len(body)).encode("ascii") + b"\n" + body


def decode_body(body: bytes) -> ChannelMessage:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"body is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ProtocolError("body must be a JSON object")
    missing = {"kind", "payload", "seq", "sent_at"} - set(doc)
    if missing:
        raise ProtocolError(f"message missing fields: {sorted(missing)}")
    try:
        kind = MessageKind(doc["kind"])
    except ValueError:
        raise ProtocolError(f"unknown message kind {doc['kind']!r}") from None
    seq = doc["seq"]
    sent_at = doc["sent_at"]
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise ProtocolError("seq must be a non-negative integer")
    if not isinstance(sent_at, int) or isinstance(sent_at, bool):
        raise ProtocolError("sent_at must be integral epoch milliseconds")
    payload = doc["payload"]
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be an object")
    return ChannelMessage(kind=kind, seq=seq, payload=payload, sent_at=sent_at)


class FrameDecoder:
    """Incremental frame parser for a byte stream."""

    def __init__(self):
        self._buffer = bytearray()

    def feed(self, data: bytes) -> list[ChannelMessage]:
        self._buffer.extend(data)
        out = []
        while True:
            msg = self._try_pop()
            if msg is None:
                return out
            out.append(msg)

    def _try_pop(self) -> ChannelMessage | None:
        newline = self._buffer.find(b"\n")
        if newline == -1:
            if len(self._buffer) > 20:
                raise ProtocolError("length prefix too long")
            return None
        prefix = bytes(self._buffer[:newline])
        if not prefix.isdigit():
            raise ProtocolError(f"bad length prefix {prefix!r}")
        length = int(prefix)
        if length > MAX_FRAME_BYTES:
            raise ProtocolError("frame too large")
        if len(self._buffer) < newline + 1 + length:
            return None
        body = bytes(self._buffer[newline + 1 : newline + 1 + length])
        del self._buffer[: newline + 1 + length]
        return decode_body(body)


# -- message constructors ---------------------------------------------------


def hello(seq: int, role: str, sent_at: int | None = None) -> ChannelMessage:
    return ChannelMessage(
        MessageKind.HELLO,
        seq,
        {"role": role, "protocol": PROTOCOL_NAME},
        now_ms() if sent_at is None else sent_at,
    )


def command(seq: int, tag: str, target: str, sent_at: int | None = None) -> ChannelMessage:
    return ChannelMessage(
        MessageKind.COMMAND,
        seq,
        {"tag": tag, "target": target},
        now_ms() if sent_at is None else sent_at,
    )


def ack(of_seq: int, seq: int | None = None, sent_at: int | None = None) -> ChannelMessage:
    return ChannelMessage(
        MessageKind.ACK,
        of_seq if seq is None else seq,
        {"of": of_seq},
        now_ms() if sent_at is None else sent_at,
    )


def nack(
    of_seq: int, reason: str, seq: int | None = None, sent_at: int | None = None
) -> ChannelMessage:
    return ChannelMessage(
        MessageKind.NACK,
        of_seq if seq is None else seq,
        {"of": of_seq, "reason": reason},
        now_ms() if sent_at is None else sent_at,
    )


def state_update(
    seq: int,
    sim_time: float,
    tags: dict,
    alarms: list,
    sent_at: int | None = None,
) -> ChannelMessage:
    return ChannelMessage(
        MessageKind.STATE_UPDATE,
        seq,
        {"sim_time": sim_time, "tags": tags, "alarms": alarms},
        now_ms() if sent_at is None else sent_at,
    )
