"""Telemetry pipeline: append-only event store, breach alerting, session
statistics, and pull-only backup replication with digest manifests.

On disk everything is events_v1-style JSON Lines: a header line naming the
schema, then one record per line. Records at a given offset never change;
deduplication is by event id. Alerts are written to their ledger before
any delivery attempt, so a crash between detection and delivery loses
nothing (at-least-once).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator

EVENTS_SCHEMA = "events_v1"
DIGEST_ALGORITHM = "sha256"


class TelemetryError(ValueError):
    """Malformed event, record, or query."""


class SinkError(RuntimeError):
    """An alert sink failed to deliver."""


class EventKind(str, Enum):
    PROCESS_CREATE = "PROCESS_CREATE"
    REGISTRY_SET = "REGISTRY_SET"
    NET_CONNECT = "NET_CONNECT"
    FILE_OP = "FILE_OP"
    LOGIN_ATTEMPT = "LOGIN_ATTEMPT"
    DEFENSE_TAMPER = "DEFENSE_TAMPER"


FILE_OPERATIONS = frozenset({"create", "write", "read", "rename", "delete", "setzerodata"})
LOGIN_OUTCOMES = frozenset({"SUCCESS", "FAILURE"})


@dataclass(frozen=True)
class ProcessRef:
    pid: int
    image: str

    def as_list(self) -> list:
        return [self.pid, self.image]


@dataclass(frozen=True)
class HostEvent:
    event_id: str
    timestamp: float
    kind: EventKind
    actor: ProcessRef | None = None
    parent: ProcessRef | None = None
    detail: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.event_id:
            raise TelemetryError("event_id must be non-empty")
        d = self.detail
        if self.kind is EventKind.PROCESS_CREATE:
            if self.actor is None or not self.actor.image:
                raise TelemetryError("PROCESS_CREATE needs an actor with an image path")
        elif self.kind is EventKind.REGISTRY_SET:
            if not d.get("key"):
                raise TelemetryError("REGISTRY_SET needs detail.key")
        elif self.kind is EventKind.NET_CONNECT:
            if not d.get("address") and not d.get("domain"):
                raise TelemetryError("NET_CONNECT needs detail.address or detail.domain")
        elif self.kind is EventKind.FILE_OP:
            if not d.get("path"):
                raise TelemetryError("FILE_OP needs detail.path")
            op = d.get("operation")
            if op not in FILE_OPERATIONS:
                raise TelemetryError(f"FILE_OP operation {op!r} not in {sorted(FILE_OPERATIONS)}")
            if op == "rename" and not d.get("new_path"):
                raise TelemetryError("rename needs detail.new_path")
        elif self.kind is EventKind.LOGIN_ATTEMPT:
            if not d.get("username") or not d.get("source_address"):
                raise TelemetryError("LOGIN_ATTEMPT needs username and source_address")
            if d.get("outcome") not in LOGIN_OUTCOMES:
                raise TelemetryError("LOGIN_ATTEMPT outcome must be SUCCESS or FAILURE")
        elif self.kind is EventKind.DEFENSE_TAMPER:
            if not d.get("component"):
                raise TelemetryError("DEFENSE_TAMPER needs detail.component")

    def to_json_line(self) -> str:
        doc = {
            "id": self.event_id,
            "ts": self.timestamp,
            "kind": self.kind.value,
            "actor": self.actor.as_list() if self.actor else None,
            "parent": self.parent.as_list() if self.parent else None,
            "detail": self.detail,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)

    @classmethod
    def from_json_line(cls, line: str) -> "HostEvent":
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TelemetryError(f"bad event record: {exc}") from None

        def ref(v):
            return ProcessRef(int(v[0]), str(v[1])) if v else None

        try:
            ev = cls(
                event_id=doc["id"],
                timestamp=float(doc["ts"]),
                kind=EventKind(doc["kind"]),
                actor=ref(doc.get("actor")),
                parent=ref(doc.get("parent")),
                detail=doc.get("detail", {}),
            )
        except (KeyError, ValueError) as exc:
            raise TelemetryError(f"bad event record: {exc}") from None
        ev.validate()
        return ev


@dataclass(frozen=True)
class Receipt:
    offset: int
    event_id: str
    deduplicated: bool = False


@dataclass(frozen=True)
class EventFilter:
    kinds: frozenset | None = None
    since: float | None = None  # inclusive
    until: float | None = None  # inclusive
    image_contains: str | None = None  # actor or parent image, case-insensitive
    pid: int | None = None
    detail_contains: tuple[str, str] | None = None  # (key, substring)

    def validate(self) -> None:
        if self.kinds is not None:
            for k in self.kinds:
                if not isinstance(k, EventKind):
                    raise TelemetryError(f"filter kind {k!r} is not an EventKind")
        for bound in (self.since, self.until):
            if bound is not None and not isinstance(bound, (int, float)):
                raise TelemetryError("time bounds must be numbers")
        if self.image_contains is not None and not isinstance(self.image_contains, str):
            raise TelemetryError("image_contains must be a string")
        if self.pid is not None and not isinstance(self.pid, int):
            raise TelemetryError("pid must be an integer")
        if self.detail_contains is not None:
            key, sub = self.detail_contains
            if not isinstance(key, str) or not isinstance(sub, str):
                raise TelemetryError("detail_contains must be (key, substring) strings")

    def matches(self, ev: HostEvent) -> bool:
        if self.kinds is not None and ev.kind not in self.kinds:
            return False
        if self.since is not None and ev.timestamp < self.since:
            return False
        if self.until is not None and ev.timestamp > self.until:
            return False
        if self.image_contains is not None:
            needle = self.image_contains.lower()
            images = [r.image.lower() for r in (ev.actor, ev.parent) if r is not None]
            if not any(needle in img for img in images):
                return False
        if self.pid is not None:
            pids = [r.pid for r in (ev.actor, ev.parent) if r is not None]
            if self.pid not in pids:
                return False
        if self.detail_contains is not None:
            key, sub = self.detail_contains
            value = ev.detail.get(key)
            if not isinstance(value, str) or sub.lower() not in value.lower():
                return False
        return True


class JsonlLog:
    """Append-only JSON Lines file with a schema header and a write counter.

    path=None keeps everything in memory (same semantics, no durability).
    """

    def __init__(self, path: str | Path | None, schema: str):
        self.schema = schema
        self.path = Path(path) if path is not None else None
        self._lines: list[str] = []
        self.write_counter = 0
        self._fh = None
        if self.path is not None:
            if self.path.exists() and self.path.stat().st_size > 0:
                self._load()
            else:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                header = json.dumps({"schema": schema})
                self.path.write_text(header + "\n", encoding="utf-8")
            self._fh = open(self.path, "a", encoding="utf-8")

    def _load(self) -> None:
        with open(self.path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            try:
                declared = json.loads(header).get("schema")
            except (json.JSONDecodeError, AttributeError):
                raise TelemetryError(f"{self.path} has no schema header") from None
            if declared != self.schema:
                raise TelemetryError(f"{self.path}: schema {declared!r}, expected {self.schema!r}")
            self._lines = [line.rstrip("\n") for line in fh if line.strip()]

    def append_line(self, line: str) -> int:
        offset = len(self._lines)
        self._lines.append(line)
        self.write_counter += 1
        if self._fh is not None:
            self._fh.write(line + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
        return offset

    def line_at(self, offset: int) -> str:
        return self._lines[offset]

    def lines(self) -> list[str]:
        return list(self._lines)

    def __len__(self) -> int:
        return len(self._lines)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def read_handle(self, name: str) -> "ReadHandle":
        return ReadHandle(name=name, schema=self.schema, _lines=self.lines)


@dataclass
class ReadHandle:
    """Pull-only view of a log: exposes record bytes, nothing writable."""

    name: str
    schema: str
    _lines: Callable[[], list[str]]

    def iter_record_bytes(self) -> Iterator[bytes]:
        for line in self._lines():
            yield line.encode("utf-8")

    def record_count(self) -> int:
        return len(self._lines())


class EventStore:
    """Append-only host-event store with id deduplication and queries."""

    def __init__(self, path: str | Path | None = None):
        self._log = JsonlLog(path, EVENTS_SCHEMA)
        self._by_id: dict[str, int] = {}
        self._events: list[HostEvent] = []
        for line in self._log.lines():
            ev = HostEvent.from_json_line(line)
            self._by_id.setdefault(ev.event_id, len(self._events))
            self._events.append(ev)

    @property
    def path(self) -> Path | None:
        return self._log.path

    @property
    def write_counter(self) -> int:
        return self._log.write_counter

    def append(self, ev: HostEvent) -> Receipt:
        ev.validate()
        existing = self._by_id.get(ev.event_id)
        if existing is not None:
            return Receipt(offset=existing, event_id=ev.event_id, deduplicated=True)
        line = ev.to_json_line()
        offset = self._log.append_line(line)
        self._by_id[ev.event_id] = offset
        self._events.append(ev)
        return Receipt(offset=offset, event_id=ev.event_id)

    def get(self, offset: int) -> HostEvent:
        return self._events[offset]

    def events(self) -> list[HostEvent]:
        return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def query(self, flt: EventFilter) -> list[HostEvent]:
        """All and only matching events, in offset order."""
        flt.validate()
        return [ev for ev in self._events if flt.matches(ev)]

    def read_handle(self, name: str) -> ReadHandle:
        return self._log.read_handle(name)

    def close(self) -> None:
        self._log.close()


def record_event(store: EventStore, ev: HostEvent) -> Receipt:
    return store.append(ev)


def query_events(store: EventStore, flt: EventFilter) -> list[HostEvent]:
    return store.query(flt)


# ------------------------------------------------------------------ alerts


class Severity(str, Enum):
    INFO = "INFO"
    BREACH = "BREACH"
    RANSOMWARE = "RANSOMWARE"


@dataclass(frozen=True)
class Alert:
    alert_id: str
    severity: Severity
    subject: str
    evidence: tuple[str, ...]
    raised_at: float

    def validate(self) -> None:
        if self.severity in (Severity.BREACH, Severity.RANSOMWARE) and not self.evidence:
            raise TelemetryError(f"{self.severity.value} alerts need evidence")

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.alert_id,
                "severity": self.severity.value,
                "subject": self.subject,
                "evidence": list(self.evidence),
                "raised_at": self.raised_at,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "Alert":
        doc = json.loads(line)
        return cls(
            alert_id=doc["id"],
            severity=Severity(doc["severity"]),
            subject=doc["subject"],
            evidence=tuple(doc["evidence"]),
            raised_at=doc["raised_at"],
        )


class FileSink:
    """Appends one JSON line per alert."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def deliver(self, alert: Alert) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(alert.to_json() + "\n")


class StdoutSink:
    def deliver(self, alert: Alert) -> None:
        print(f"[{alert.severity.value}] {alert.subject} evidence={list(alert.evidence)}")


class CollectingSink:
    def __init__(self):
        self.alerts: list[Alert] = []

    def deliver(self, alert: Alert) -> None:
        self.alerts.append(alert)


class AlertLedger:
    """Write-ahead alert persistence: record first, deliver after.

    The file is append-only: a pending alert is one line, a later
    delivery marker is another. Survivors of a crash are exactly the
    alerts with no marker.
    """

    def __init__(self, path: str | Path | None = None):
        self._log = JsonlLog(path, "alerts_v1")
        self._pending: dict[str, Alert] = {}
        self._seen: set[str] = set()
        for line in self._log.lines():
            doc = json.loads(line)
            if "delivered_id" in doc:
                self._pending.pop(doc["delivered_id"], None)
            else:
                alert = Alert.from_json(line)
                self._pending[alert.alert_id] = alert
                self._seen.add(alert.alert_id)

    def record(self, alert: Alert) -> None:
        alert.validate()
        if alert.alert_id in self._seen:
            return
        self._log.append_line(alert.to_json())
        self._pending[alert.alert_id] = alert
        self._seen.add(alert.alert_id)

    def mark_delivered(self, alert_id: str) -> None:
        if alert_id in self._pending:
            self._log.append_line(json.dumps({"delivered_id": alert_id}))
            del self._pending[alert_id]

    def pending(self) -> list[Alert]:
        return list(self._pending.values())

    def close(self) -> None:
        self._log.close()


class BreachMonitor:
    """Raises exactly one BREACH alert per successful login, synchronously
    with ingestion, persisted before delivery is attempted."""

    def __init__(self, sink=None, ledger: AlertLedger | None = None):
        self.sink = sink
        self.ledger = ledger if ledger is not None else AlertLedger()
        self._counter = len(self.ledger.pending())

    def feed(self, ev: HostEvent) -> Alert | None:
        if ev.kind is not EventKind.LOGIN_ATTEMPT:
            return None
        if ev.detail.get("outcome") != "SUCCESS":
            return None
        self._counter += 1
        alert = Alert(
            alert_id=f"breach-{ev.event_id}",
            severity=Severity.BREACH,
            subject=f"{ev.detail['username']}@{ev.detail['source_address']}",
            evidence=(ev.event_id,),
            raised_at=ev.timestamp,
        )
        self.ledger.record(alert)
        self._try_deliver(alert)
        return alert

    def _try_deliver(self, alert: Alert) -> None:
        if self.sink is None:
            return
        try:
            self.sink.deliver(alert)
        except SinkError:
            return  # stays pending; retry_pending() will pick it up
        self.ledger.mark_delivered(alert.alert_id)

    def retry_pending(self) -> int:
        delivered = 0
        for alert in self.ledger.pending():
            try:
                if self.sink is not None:
                    self.sink.deliver(alert)
            except SinkError:
                continue
            self.ledger.mark_delivered(alert.alert_id)
            delivered += 1
        return delivered


def detect_breach(
    events: Iterable[HostEvent], sink=None, ledger: AlertLedger | None = None
) -> list[Alert]:
    """One BREACH alert per SUCCESS login, in stream order."""
    monitor = BreachMonitor(sink=sink, ledger=ledger)
    out = []
    for ev in events:
        alert = monitor.feed(ev)
        if alert is not None:
            out.append(alert)
    return out


# ----------------------------------------------------------------- sessions


@dataclass(frozen=True)
class LoginSession:
    session_id: str
    source_address: str
    username: str
    started_at: float
    ended_at: float | None
    outcome: str  # SUCCESS | FAILURE
    event_id: str = ""

    def __post_init__(self):
        if self.ended_at is not None and self.ended_at < self.started_at:
            raise TelemetryError("session cannot end before it starts")
        if self.outcome not in LOGIN_OUTCOMES:
            raise TelemetryError("session outcome must be SUCCESS or FAILURE")


def sessions_from_events(events: Iterable[HostEvent]) -> list[LoginSession]:
    """Each login attempt is one modeled session; SUCCESS sessions last
    detail.duration seconds (default 0)."""
    out = []
    for ev in events:
        if ev.kind is not EventKind.LOGIN_ATTEMPT:
            continue
        outcome = ev.detail["outcome"]
        duration = float(ev.detail.get("duration", 0.0)) if outcome == "SUCCESS" else 0.0
        out.append(
            LoginSession(
                session_id=f"sess-{ev.event_id}",
                source_address=ev.detail["source_address"],
                username=ev.detail["username"],
                started_at=ev.timestamp,
                ended_at=ev.timestamp + duration,
                outcome=outcome,
                event_id=ev.event_id,
            )
        )
    return out


@dataclass(frozen=True)
class FlowRecord:
    direction: str  # INCOMING | OUTGOING
    src: str  # address:port
    dst: str
    protocol: str
    bytes: int
    first_seen: float
    last_seen: float

    def __post_init__(self):
        if self.direction not in ("INCOMING", "OUTGOING"):
            raise TelemetryError("flow direction must be INCOMING or OUTGOING")
        if self.bytes < 0:
            raise TelemetryError("flow bytes must be non-negative")
        if self.last_seen < self.first_seen:
            raise TelemetryError("flow cannot end before it starts")

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "direction": self.direction,
                "src": self.src,
                "dst": self.dst,
                "protocol": self.protocol,
                "bytes": self.bytes,
                "first_seen": self.first_seen,
                "last_seen": self.last_seen,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


def flows_from_events(events: Iterable[HostEvent], host: str = "W1") -> list[FlowRecord]:
    """Synthesize flow records from login and network-connection events."""
    flows = []
    for ev in events:
        if ev.kind is EventKind.LOGIN_ATTEMPT:
            flows.append(
                FlowRecord(
                    direction="INCOMING",
                    src=f"{ev.detail['source_address']}:0",
                    dst=f"{host}:3389",
                    protocol="rdp",
                    bytes=4096,
                    first_seen=ev.timestamp,
                    last_seen=ev.timestamp + float(ev.detail.get("duration", 0.0)),
                )
            )
        elif ev.kind is EventKind.NET_CONNECT:
            target = ev.detail.get("domain") or ev.detail.get("address")
            port = ev.detail.get("port", 0)
            flows.append(
                FlowRecord(
                    direction="OUTGOING",
                    src=f"{host}:0",
                    dst=f"{target}:{port}",
                    protocol=str(ev.detail.get("protocol", "tcp")),
                    bytes=int(ev.detail.get("bytes", 1024)),
                    first_seen=ev.timestamp,
                    last_seen=ev.timestamp,
                )
            )
    return flows


# -------------------------------------------------------------------- stats


@dataclass(frozen=True)
class BucketStat:
    index: int
    start: float
    connections: int
    successes: int
    failures: int


@dataclass(frozen=True)
class StatsReport:
    bucket_seconds: float
    start: float
    buckets: tuple[BucketStat, ...]
    addresses: tuple[tuple[str, int], ...]  # (source address, connection count)
    total_connections: int
    total_successes: int
    total_failures: int
    incoming_bytes: int
    outgoing_bytes: int

    def to_rows(self) -> list[tuple]:
        return [(b.index, b.start, b.connections, b.successes, b.failures) for b in self.buckets]

    def to_text(self) -> str:
        lines = [
            f"connections: {self.total_connections} "
            f"(success {self.total_successes} / failure {self.total_failures})",
            f"bucket seconds: {self.bucket_seconds:g}, buckets: {len(self.buckets)}",
            "",
            "bucket\tstart\tconnections\tsuccesses\tfailures",
        ]
        for b in self.buckets:
            lines.append(f"{b.index}\t{b.start:.0f}\t{b.connections}\t{b.successes}\t{b.failures}")
        lines += ["", "source address\tconnections"]
        for addr, n in self.addresses:
            lines.append(f"{addr}\t{n}")
        lines += [
            "",
            f"flow bytes: incoming {self.incoming_bytes}, outgoing {self.outgoing_bytes}",
        ]
        return "\n".join(lines) + "\n"


def connection_stats(
    sessions: list[LoginSession], flows: list[FlowRecord], bucket: float
) -> StatsReport:
    """Per-bucket connection counts, per-address totals, success/failure split."""
    if bucket <= 0:
        raise TelemetryError("bucket must be positive")
    incoming = sum(f.bytes for f in flows if f.direction == "INCOMING")
    outgoing = sum(f.bytes for f in flows if f.direction == "OUTGOING")
    if not sessions:
        return StatsReport(bucket, 0.0, (), (), 0, 0, 0, incoming, outgoing)

    t0 = min(s.started_at for s in sessions)
    start = (t0 // bucket) * bucket
    t_last = max(s.started_at for s in sessions)
    n_buckets = int((t_last - start) // bucket) + 1

    conn = [0] * n_buckets
    succ = [0] * n_buckets
    fail = [0] * n_buckets
    addr_counts: dict[str, int] = {}
    for s in sessions:
        i = int((s.started_at - start) // bucket)
        conn[i] += 1
        if s.outcome == "SUCCESS":
            succ[i] += 1
        else:
            fail[i] += 1
        addr_counts[s.source_address] = addr_counts.get(s.source_address, 0) + 1

    buckets = tuple(
        BucketStat(i, start + i * bucket, conn[i], succ[i], fail[i]) for i in range(n_buckets)
    )
    addresses = tuple(sorted(addr_counts.items(), key=lambda kv: (-kv[1], kv[0])))
    return StatsReport(
        bucket_seconds=bucket,
        start=start,
        buckets=buckets,
        addresses=addresses,
        total_connections=len(sessions),
        total_successes=sum(succ),
        total_failures=sum(fail),
        incoming_bytes=incoming,
        outgoing_bytes=outgoing,
    )


# ------------------------------------------------------------------- backup


class ReplicationError(RuntimeError):
    """Digest mismatch while replicating; the prior snapshot is retained."""


@dataclass(frozen=True)
class BackupManifest:
    snapshot_id: str
    source_store: str
    record_count: int
    digest: str  # sha256 hex over record lines
    taken_at: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "snapshot_id": self.snapshot_id,
                "source_store": self.source_store,
                "record_count": self.record_count,
                "digest": self.digest,
                "algorithm": DIGEST_ALGORITHM,
                "taken_at": self.taken_at,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


def records_digest(lines: Iterable[bytes]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line)
        h.update(b"\n")
    return h.hexdigest()


class BackupStore:
    """The backup workstation's side: pulls from read handles, never the
    reverse. Every channel use is noted in direction_log as
    (initiator, target, operation)."""

    def __init__(self, directory: str | Path, name: str = "U2"):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.name = name
        self.direction_log: list[tuple[str, str, str]] = []

    def snapshot_path(self, source_store: str) -> Path:
        safe = source_store.replace("/", "_")
        return self.dir / f"{safe}.snap"

    def pull(self, handle: ReadHandle, now: float = 0.0) -> BackupManifest:
        self.direction_log.append((self.name, handle.name, "pull"))
        lines = list(handle.iter_record_bytes())
        digest = records_digest(lines)
        tmp = self.snapshot_path(handle.name).with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            for line in lines:
                fh.write(line)
                fh.write(b"\n")
        written = self._read_back(tmp)
        if records_digest(written) != digest:
            tmp.unlink(missing_ok=True)
            raise ReplicationError(f"digest mismatch replicating {handle.name}")
        os.replace(tmp, self.snapshot_path(handle.name))
        manifest = BackupManifest(
            snapshot_id=f"{handle.name}:{digest[:16]}",
            source_store=handle.name,
            record_count=len(lines),
            digest=digest,
            taken_at=now,
        )
        with open(self.dir / "manifests.jsonl", "a", encoding="utf-8") as fh:
            fh.write(manifest.to_json() + "\n")
        return manifest

    def _read_back(self, path: Path) -> list[bytes]:
        with open(path, "rb") as fh:
            return [line.rstrip(b"\n") for line in fh]

    def verify(self, manifest: BackupManifest) -> bool:
        """Recompute the digest over the stored snapshot copy."""
        path = self.snapshot_path(manifest.source_store)
        if not path.exists():
            return False
        lines = self._read_back(path)
        return len(lines) == manifest.record_count and records_digest(lines) == manifest.digest


def replicate_backup(
    sources: dict[str, ReadHandle] | ReadHandle, sink: BackupStore, now: float = 0.0
) -> dict[str, BackupManifest]:
    """Pull-only copy of each source store into the sink, digest-verified."""
    if isinstance(sources, ReadHandle):
        sources = {sources.name: sources}
    return {name: sink.pull(handle, now=now) for name, handle in sources.items()}
