"""Forensics over captured host events: process-chain reconstruction,
operation classification, adversary-tactic tagging, ransomware signature
scoring with IOC extraction, and the attacker-negotiation state machine.

Everything here is pure analysis over immutable event collections. The
signature catalog is data (sigs_v1 TOML): each entry names a built-in
predicate by id and carries its parameters and weight, so thresholds and
windows are tunable without touching code.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .telemetry import EventKind, HostEvent, LoginSession

SIGS_SCHEMA = "sigs_v1"

# Images that never count as payloads: the honeypot's own baseline software.
BENIGN_IMAGES = frozenset(
    {
        "explorer.exe",
        "svchost.exe",
        "winlogon.exe",
        "services.exe",
        "lsass.exe",
        "cmd.exe",
        "conhost.exe",
        "chrome.exe",
        "msedge.exe",
        "firefox.exe",
        "notepad.exe",
        "mstsc.exe",
        "taskmgr.exe",
    }
)

EXECUTABLE_SUFFIXES = (".exe", ".dll", ".bat", ".cmd", ".ps1", ".scr")

DISCOVERY_MARKERS = (
    "enum",
    "net view",
    "systeminfo",
    "tasklist",
    "qwinsta",
    "hostname",
    "volume",
)

REMOTE_SHARE_MARKER = "\\\\tsclient\\"


class AnalyzerError(ValueError):
    pass


def _basename(path: str) -> str:
    return path.replace("/", "\\").rsplit("\\", 1)[-1].lower()


def is_benign_image(image: str) -> bool:
    return _basename(image) in BENIGN_IMAGES


def _sorted_events(events) -> list[HostEvent]:
    return sorted(events, key=lambda e: (e.timestamp, e.event_id))


# ------------------------------------------------------------ process chain


@dataclass(frozen=True)
class ProcessNode:
    pid: int
    image: str
    command_line: str = ""
    start_time: float | None = None  # None for synthesized (pre-existing) parents
    synthesized: bool = False

    @property
    def key(self) -> tuple:
        return (self.pid, self.start_time)


@dataclass(frozen=True)
class ProcessChain:
    nodes: dict[tuple, ProcessNode]
    edges: tuple[tuple[tuple, tuple], ...]  # (parent key, child key)
    roots: tuple[tuple, ...]
    anomalies: tuple[str, ...] = ()
    event_for: dict[tuple, str] = field(default_factory=dict)

    def children_of(self, key: tuple) -> list[tuple]:
        return [c for p, c in self.edges if p == key]

    def parent_of(self, key: tuple) -> tuple | None:
        for p, c in self.edges:
            if c == key:
                return p
        return None

    def nodes_by_image(self, needle: str) -> list[ProcessNode]:
        needle = needle.lower()
        return [n for n in self.nodes.values() if needle in n.image.lower()]

    def has_cycle(self) -> bool:
        children: dict[tuple, list[tuple]] = {}
        for p, c in self.edges:
            children.setdefault(p, []).append(c)
        seen: set[tuple] = set()
        stack: set[tuple] = set()

        def visit(key) -> bool:
            if key in stack:
                return True
            if key in seen:
                return False
            seen.add(key)
            stack.add(key)
            hit = any(visit(c) for c in children.get(key, ()))
            stack.discard(key)
            return hit

        return any(visit(k) for k in self.nodes)

    def render(self) -> str:
        children: dict[tuple, list[tuple]] = {}
        for p, c in self.edges:
            children.setdefault(p, []).append(c)
        starts = [n.start_time for n in self.nodes.values() if n.start_time is not None]
        origin = min(starts) if starts else 0.0

        lines: list[str] = []

        def walk(key, depth):
            node = self.nodes[key]
            mark = "*" if node.synthesized else ""
            if node.start_time is None:
                start = "pre-existing"
            else:
                start = f"t=+{node.start_time - origin:g}s"
            lines.append("  " * depth + f"{node.image}{mark} (pid {node.pid}, {start})")
            for child in sorted(children.get(key, ()), key=lambda k: self.nodes[k].start_time or 0):
                walk(child, depth + 1)

        for root in sorted(self.roots, key=lambda k: (self.nodes[k].start_time or -1, k[0])):
            walk(root, 0)
        return "\n".join(lines)


def reconstruct_chain(events) -> ProcessChain:
    """Rebuild the process creation forest from (possibly unordered) events.

    Parents with no creation event of their own become synthesized root
    nodes; a second creation for the same pid+start with a different parent
    is flagged and the first-seen parent wins.
    """
    creates = [e for e in _sorted_events(events) if e.kind is EventKind.PROCESS_CREATE]
    nodes: dict[tuple, ProcessNode] = {}
    parent_of: dict[tuple, tuple] = {}
    event_for: dict[tuple, str] = {}
    anomalies: list[str] = []
    by_pid: dict[int, list[tuple]] = {}

    def register(node: ProcessNode) -> None:
        nodes[node.key] = node
        by_pid.setdefault(node.pid, []).append(node.key)

    for ev in creates:
        child = ProcessNode(
            pid=ev.actor.pid,
            image=ev.actor.image,
            command_line=str(ev.detail.get("command_line", "")),
            start_time=ev.timestamp,
        )
        if child.key in nodes:
            prior_parent = parent_of.get(child.key)
            want_parent_pid = ev.parent.pid if ev.parent else None
            if (prior_parent[0] if prior_parent else None) != want_parent_pid:
                anomalies.append(
                    f"event {ev.event_id}: contradictory parentage for pid {child.pid} "
                    f"at t={ev.timestamp:g}; first-seen parent kept"
                )
            continue
        register(child)
        event_for[child.key] = ev.event_id
        if ev.parent is None:
            continue
        candidates = [
            k
            for k in by_pid.get(ev.parent.pid, ())
            if k != child.key and (k[1] is None or k[1] <= ev.timestamp)
        ]
        if candidates:
            parent_key = max(candidates, key=lambda k: (k[1] is not None, k[1] or 0.0))
        else:
            parent_key = (ev.parent.pid, None)
            if parent_key not in nodes:
                register(
                    ProcessNode(
                        pid=ev.parent.pid,
                        image=ev.parent.image,
                        start_time=None,
                        synthesized=True,
                    )
                )
        parent_of[child.key] = parent_key

    edges = tuple(sorted((p, c) for c, p in parent_of.items()))
    roots = tuple(sorted((k for k in nodes if k not in parent_of), key=lambda k: (k[1] or -1.0, k[0])))
    return ProcessChain(
        nodes=nodes, edges=edges, roots=roots, anomalies=tuple(anomalies), event_for=event_for
    )


# ------------------------------------------------------- operation buckets


class OperationBucket(str, Enum):
    PROCESS_OPS = "PROCESS_OPS"
    REGISTRY_OPS = "REGISTRY_OPS"
    NETWORK_OPS = "NETWORK_OPS"


@dataclass(frozen=True)
class OperationClass:
    bucket: OperationBucket
    event_ids: tuple[str, ...]


@dataclass(frozen=True)
class Classification:
    classes: tuple[OperationClass, ...]
    omitted: tuple[str, ...]

    def bucket(self, bucket: OperationBucket) -> OperationClass:
        for c in self.classes:
            if c.bucket is bucket:
                return c
        raise KeyError(bucket)


def classify_operations(events) -> Classification:
    """Split events into process / registry / network operations; everything
    else is omitted but counted. Buckets are disjoint by construction."""
    process: list[str] = []
    registry: list[str] = []
    network: list[str] = []
    omitted: list[str] = []
    for ev in _sorted_events(events):
        if ev.kind is EventKind.PROCESS_CREATE:
            process.append(ev.event_id)
        elif ev.kind is EventKind.FILE_OP and str(ev.detail.get("path", "")).lower().endswith(
            EXECUTABLE_SUFFIXES
        ):
            process.append(ev.event_id)
        elif ev.kind is EventKind.REGISTRY_SET:
            registry.append(ev.event_id)
        elif ev.kind is EventKind.NET_CONNECT:
            network.append(ev.event_id)
        else:
            omitted.append(ev.event_id)
    return Classification(
        classes=(
            OperationClass(OperationBucket.PROCESS_OPS, tuple(process)),
            OperationClass(OperationBucket.REGISTRY_OPS, tuple(registry)),
            OperationClass(OperationBucket.NETWORK_OPS, tuple(network)),
        ),
        omitted=tuple(omitted),
    )


# ------------------------------------------------------------ tactic tags


class Tactic(str, Enum):
    INITIAL_ACCESS = "InitialAccess"
    EXECUTION = "Execution"
    PERSISTENCE = "Persistence"
    DEFENSE_EVASION = "DefenseEvasion"
    DISCOVERY = "Discovery"
    LATERAL_MOVEMENT = "LateralMovement"
    COMMAND_AND_CONTROL = "CommandAndControl"


@dataclass(frozen=True)
class AttackStageTag:
    tactic: Tactic
    evidence: tuple[str, ...]

    def __post_init__(self):
        if not self.evidence:
            raise AnalyzerError("stage tags need evidence")


DEFENSE_KEY_MARKERS = ("zonemap\\proxybypass", "zonemap\\autodetect", "\\notifications\\data")
TRACKER_DOMAINS = ("iplogger.com", "iplogger.org", "iplogger.ru")
REPEAT_SPAWN_THRESHOLD = 12


def _is_private_address(value: str) -> bool:
    import ipaddress

    try:
        return ipaddress.ip_address(value).is_private
    except ValueError:
        return False


def _mentions_share(ev: HostEvent) -> bool:
    texts = [
        str(ev.detail.get("path", "")),
        str(ev.detail.get("new_path", "")),
        str(ev.detail.get("command_line", "")),
    ]
    if ev.actor:
        texts.append(ev.actor.image)
    return any(REMOTE_SHARE_MARKER.lower() in t.lower() for t in texts)


def _repeated_spawn_groups(events, threshold: int):
    groups: dict[tuple, list[HostEvent]] = {}
    for ev in events:
        if ev.kind is not EventKind.PROCESS_CREATE or ev.parent is None:
            continue
        if is_benign_image(ev.actor.image):
            continue
        key = (_basename(ev.actor.image), _basename(ev.parent.image))
        groups.setdefault(key, []).append(ev)
    return {k: v for k, v in groups.items() if len(v) >= threshold}


def tag_stages(
    events,
    chain: ProcessChain | None = None,
    classes: Classification | None = None,
    sessions: list[LoginSession] | None = None,
) -> list[AttackStageTag]:
    """Rule-driven tactic tagging over one incident window.

    The chain drives the repeated-execution rule and the classification
    buckets scope the registry/network rules; both are derived from the
    events when not supplied. Each rule is re-checkable: its evidence
    events all satisfy the rule's predicate.
    """
    ordered = _sorted_events(events)
    chain = chain if chain is not None else reconstruct_chain(ordered)
    classes = classes if classes is not None else classify_operations(ordered)
    sessions = sessions if sessions is not None else []
    by_id = {e.event_id: e for e in ordered}
    registry_events = [
        by_id[i] for i in classes.bucket(OperationBucket.REGISTRY_OPS).event_ids if i in by_id
    ]
    network_events = [
        by_id[i] for i in classes.bucket(OperationBucket.NETWORK_OPS).event_ids if i in by_id
    ]
    tags: list[AttackStageTag] = []

    def add(tactic: Tactic, evidence: list[str]) -> None:
        ids = tuple(dict.fromkeys(evidence))
        if ids:
            tags.append(AttackStageTag(tactic, ids))

    # Successful interactive logins on the exposed remote-desktop ingress.
    add(
        Tactic.INITIAL_ACCESS,
        [s.event_id for s in sessions if s.outcome == "SUCCESS" and s.event_id],
    )

    # Payload runs: creations of images outside the baseline software set.
    add(
        Tactic.EXECUTION,
        [
            e.event_id
            for e in ordered
            if e.kind is EventKind.PROCESS_CREATE and not is_benign_image(e.actor.image)
        ],
    )

    # Redundant self-execution: many same-image children under one parent.
    persistence: list[str] = []
    children_of: dict[tuple, list[tuple]] = {}
    for parent_key, child_key in chain.edges:
        children_of.setdefault(parent_key, []).append(child_key)
    for parent_key, child_keys in children_of.items():
        groups: dict[str, list[tuple]] = {}
        for key in child_keys:
            node = chain.nodes[key]
            if is_benign_image(node.image):
                continue
            groups.setdefault(_basename(node.image), []).append(key)
        for keys in groups.values():
            if len(keys) >= REPEAT_SPAWN_THRESHOLD:
                persistence.extend(
                    chain.event_for[k] for k in keys if k in chain.event_for
                )
    add(Tactic.PERSISTENCE, persistence)

    # Notification/monitoring tamper, incl. proxy-bypass registry writes.
    evasion = [e.event_id for e in ordered if e.kind is EventKind.DEFENSE_TAMPER]
    evasion += [
        e.event_id
        for e in registry_events
        if any(m in str(e.detail.get("key", "")).lower() for m in DEFENSE_KEY_MARKERS)
    ]
    add(Tactic.DEFENSE_EVASION, evasion)

    # Host/share/volume enumeration and credential-store reads.
    discovery = []
    for e in ordered:
        if e.kind is EventKind.PROCESS_CREATE and not is_benign_image(e.actor.image):
            cl = str(e.detail.get("command_line", "")).lower()
            if any(m in cl for m in DISCOVERY_MARKERS):
                discovery.append(e.event_id)
        elif e.kind is EventKind.FILE_OP and e.detail.get("operation") == "read":
            if "credential" in str(e.detail.get("path", "")).lower():
                discovery.append(e.event_id)
    add(Tactic.DISCOVERY, discovery)

    # Remote-desktop share paths and probes toward internal hosts.
    lateral = [e.event_id for e in ordered if _mentions_share(e)]
    lateral += [
        e.event_id
        for e in network_events
        if _is_private_address(str(e.detail.get("address", "")))
        and (e.actor is None or not is_benign_image(e.actor.image))
    ]
    add(Tactic.LATERAL_MOVEMENT, lateral)

    # Tracker beacons and payload-initiated connections to public services.
    c2 = []
    for e in network_events:
        domain = str(e.detail.get("domain", "")).lower()
        if domain and any(domain == t or domain.endswith("." + t) for t in TRACKER_DOMAINS):
            c2.append(e.event_id)
            continue
        if (
            e.actor is not None
            and not is_benign_image(e.actor.image)
            and not _is_private_address(str(e.detail.get("address", "")))
        ):
            c2.append(e.event_id)
    add(Tactic.COMMAND_AND_CONTROL, c2)

    return tags


# --------------------------------------------------------------- signatures


@dataclass(frozen=True)
class Signature:
    id: str
    description: str
    weight: float
    tactic: Tactic
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.weight <= 0:
            raise AnalyzerError("signature weight must be positive")


@dataclass(frozen=True)
class SignatureMatch:
    signature: Signature
    evidence: tuple[str, ...]


@dataclass(frozen=True)
class SignatureCatalog:
    signatures: tuple[Signature, ...]
    threshold: float

    def get(self, sig_id: str) -> Signature:
        for s in self.signatures:
            if s.id == sig_id:
                return s
        raise KeyError(sig_id)


class IocKind(str, Enum):
    DOMAIN = "DOMAIN"
    PATH = "PATH"
    COMMAND = "COMMAND"
    REGISTRY_KEY = "REGISTRY_KEY"
    EXTENSION = "EXTENSION"


@dataclass(frozen=True)
class RansomwareVerdict:
    positive: bool
    score: float
    threshold: float
    matched: tuple[SignatureMatch, ...]
    family_hint: str | None
    iocs: tuple[tuple[IocKind, str], ...]

    def matched_ids(self) -> list[str]:
        return [m.signature.id for m in self.matched]


# -- signature evaluators (id -> function(events, params) -> evidence ids) --


def _eval_rename_storm(events, params) -> list[str]:
    window = float(params.get("window_seconds", 60.0))
    minimum = int(params.get("min_renames", 20))
    extensions = tuple(x.lower() for x in params.get("extensions", (".makop", ".mkp")))
    renames = [
        e
        for e in events
        if e.kind is EventKind.FILE_OP
        and e.detail.get("operation") == "rename"
        and str(e.detail.get("new_path", "")).lower().endswith(extensions)
    ]
    times = [e.timestamp for e in renames]
    for i in range(len(times) - minimum + 1):
        if times[i + minimum - 1] - times[i] <= window:
            return [e.event_id for e in renames]
    return []


def _eval_ransom_note(events, params) -> list[str]:
    names = tuple(n.lower() for n in params.get("note_names", ("+readme-warning+.txt",)))
    out = []
    for e in events:
        if e.kind is EventKind.FILE_OP and e.detail.get("operation") in ("create", "write"):
            if _basename(str(e.detail.get("path", ""))) in names:
                out.append(e.event_id)
        elif e.kind is EventKind.PROCESS_CREATE:
            cl = str(e.detail.get("command_line", "")).lower()
            if any(n in cl for n in names):
                out.append(e.event_id)
    return out


def _eval_trace_wipe(events, params) -> list[str]:
    out = []
    zeroed_at: dict[str, str] = {}  # lowered path -> event id
    for e in events:
        if e.kind is EventKind.FILE_OP:
            path = str(e.detail.get("path", "")).lower()
            op = e.detail.get("operation")
            if op == "setzerodata":
                zeroed_at[path] = e.event_id
            elif op == "delete" and path in zeroed_at:
                out.extend([zeroed_at[path], e.event_id])
        elif e.kind is EventKind.PROCESS_CREATE:
            cl = str(e.detail.get("command_line", "")).lower()
            if "setzerodata" in cl and "del" in cl:
                out.append(e.event_id)
    return out


def _eval_proxy_evasion(events, params) -> list[str]:
    markers = tuple(
        m.lower() for m in params.get("key_markers", ("zonemap\\proxybypass", "zonemap\\autodetect"))
    )
    return [
        e.event_id
        for e in events
        if e.kind is EventKind.REGISTRY_SET
        and any(m in str(e.detail.get("key", "")).lower() for m in markers)
    ]


def _eval_wallpaper_swap(events, params) -> list[str]:
    key_marker = str(params.get("key_marker", "desktop\\wallpaper")).lower()
    value_suffix = str(params.get("value_suffix", ".tmp.bmp")).lower()
    return [
        e.event_id
        for e in events
        if e.kind is EventKind.REGISTRY_SET
        and key_marker in str(e.detail.get("key", "")).lower()
        and str(e.detail.get("value", "")).lower().endswith(value_suffix)
    ]


def _eval_tracker_beacon(events, params) -> list[str]:
    trackers = tuple(t.lower() for t in params.get("domains", TRACKER_DOMAINS))
    out = []
    for e in events:
        if e.kind is not EventKind.NET_CONNECT:
            continue
        domain = str(e.detail.get("domain", "")).lower()
        if domain and any(domain == t or domain.endswith("." + t) for t in trackers):
            out.append(e.event_id)
    return out


def _eval_repeated_self_execution(events, params) -> list[str]:
    threshold = int(params.get("min_spawns", REPEAT_SPAWN_THRESHOLD))
    out = []
    for group in _repeated_spawn_groups(events, threshold).values():
        out.extend(e.event_id for e in group)
    return out


SIGNATURE_EVALUATORS = {
    "S1": _eval_rename_storm,
    "S2": _eval_ransom_note,
    "S3": _eval_trace_wipe,
    "S4": _eval_proxy_evasion,
    "S5": _eval_wallpaper_swap,
    "S6": _eval_tracker_beacon,
    "S7": _eval_repeated_self_execution,
}

FAMILY_SIGNATURES = ("S1", "S2")  # extension / note evidence names the family
MAKOP_FAMILY = "Makop"


def parse_catalog_document(doc: dict) -> SignatureCatalog:
    if doc.get("schema") != SIGS_SCHEMA:
        raise AnalyzerError(f"expected schema {SIGS_SCHEMA!r}, got {doc.get('schema')!r}")
    signatures = []
    for raw in doc.get("signature", []):
        sig_id = raw.get("id")
        if sig_id not in SIGNATURE_EVALUATORS:
            raise AnalyzerError(f"unknown signature id {sig_id!r}")
        signatures.append(
            Signature(
                id=sig_id,
                description=raw.get("description", ""),
                weight=float(raw["weight"]),
                tactic=Tactic(raw["tactic"]),
                params=raw.get("params", {}),
            )
        )
    if not signatures:
        raise AnalyzerError("signature catalog is empty")
    return SignatureCatalog(signatures=tuple(signatures), threshold=float(doc.get("threshold", 4.0)))


def load_catalog(path: str | Path) -> SignatureCatalog:
    with open(path, "rb") as fh:
        return parse_catalog_document(tomllib.load(fh))


def default_catalog() -> SignatureCatalog:
    data = resources.files("hydratwin.data").joinpath("signatures.toml").read_bytes()
    return parse_catalog_document(tomllib.loads(data.decode("utf-8")))


def extract_iocs(events) -> list[tuple[IocKind, str]]:
    """Per-event indicator extraction (deduplicated, deterministic order).

    Extraction is pointwise so that IOCs over any partition of an event
    list union to the IOCs of the whole list.
    """
    found: set[tuple[IocKind, str]] = set()
    for ev in events:
        if ev.kind is EventKind.NET_CONNECT:
            domain = str(ev.detail.get("domain", "")).lower()
            if domain:
                found.add((IocKind.DOMAIN, domain))
        elif ev.kind is EventKind.PROCESS_CREATE:
            image = ev.actor.image
            if not is_benign_image(image):
                found.add((IocKind.PATH, image))
            cl = str(ev.detail.get("command_line", ""))
            low = cl.lower()
            if "fsutil" in low and "setzerodata" in low:
                found.add((IocKind.COMMAND, cl))
        elif ev.kind is EventKind.REGISTRY_SET:
            key = str(ev.detail.get("key", ""))
            if key:
                found.add((IocKind.REGISTRY_KEY, key))
        elif ev.kind is EventKind.FILE_OP:
            op = ev.detail.get("operation")
            path = str(ev.detail.get("path", ""))
            base = _basename(path)
            if op == "rename":
                new = str(ev.detail.get("new_path", ""))
                dot = new.rfind(".")
                if dot != -1:
                    found.add((IocKind.EXTENSION, new[dot:].lower()))
            if "readme" in base and "warning" in base:
                note_name = path.replace("/", "\\").rsplit("\\", 1)[-1]
                found.add((IocKind.PATH, note_name))
            if op in ("setzerodata", "delete") and path.lower().endswith(EXECUTABLE_SUFFIXES):
                found.add((IocKind.PATH, path))
    return sorted(found, key=lambda kv: (kv[0].value, kv[1]))


def detect_ransomware(
    events,
    catalog: SignatureCatalog | None = None,
    threshold: float | None = None,
) -> RansomwareVerdict:
    """Score the shipped behavior signatures over an event window."""
    catalog = catalog if catalog is not None else default_catalog()
    cutoff = catalog.threshold if threshold is None else float(threshold)
    ordered = _sorted_events(events)
    by_id = {e.event_id: e for e in ordered}

    matches: list[SignatureMatch] = []
    score = 0.0
    for sig in catalog.signatures:
        evidence = SIGNATURE_EVALUATORS[sig.id](ordered, sig.params)
        evidence = tuple(dict.fromkeys(evidence))
        if evidence:
            matches.append(SignatureMatch(signature=sig, evidence=evidence))
            score += sig.weight

    matched_ids = {m.signature.id for m in matches}
    family = MAKOP_FAMILY if matched_ids & set(FAMILY_SIGNATURES) else None
    evidence_events = [
        by_id[eid] for m in matches for eid in m.evidence if eid in by_id
    ]
    return RansomwareVerdict(
        positive=score >= cutoff,
        score=score,
        threshold=cutoff,
        matched=tuple(matches),
        family_hint=family,
        iocs=tuple(extract_iocs(evidence_events)),
    )


# -------------------------------------------------------------- negotiation


class NegotiationPhase(str, Enum):
    INIT = "Init"
    PROOF_REQUESTED = "ProofRequested"
    PROOF_RECEIVED = "ProofReceived"
    PRICE_NEGOTIATION = "PriceNegotiation"
    OFFER_REDUCED = "OfferReduced"
    DISENGAGED = "Disengaged"


class NegotiationInputKind(str, Enum):
    SEND_INITIAL = "SEND_INITIAL"
    PROOF_OK = "PROOF_OK"
    PROOF_INSUFFICIENT = "PROOF_INSUFFICIENT"
    DEMAND = "DEMAND"
    OFFER_REDUCED = "OFFER_REDUCED"
    FOLLOWUP = "FOLLOWUP"
    STOP = "STOP"


@dataclass(frozen=True)
class Money:
    amount: float
    currency: str = "USD"

    def __str__(self):
        return f"{self.amount:g} {self.currency}"


@dataclass(frozen=True)
class NegotiationInput:
    kind: NegotiationInputKind
    amount: Money | None = None


ACTOR_FOR_INPUT = {
    NegotiationInputKind.SEND_INITIAL: "US",
    NegotiationInputKind.PROOF_OK: "ATTACKER",
    NegotiationInputKind.PROOF_INSUFFICIENT: "US",
    NegotiationInputKind.DEMAND: "ATTACKER",
    NegotiationInputKind.OFFER_REDUCED: "ATTACKER",
    NegotiationInputKind.FOLLOWUP: "ATTACKER",
    NegotiationInputKind.STOP: "US",
}

_P = NegotiationPhase
_I = NegotiationInputKind

# Legal transitions; anything absent is rejected with the state unchanged.
TRANSITIONS: dict[NegotiationPhase, dict[NegotiationInputKind, NegotiationPhase]] = {
    _P.INIT: {
        _I.SEND_INITIAL: _P.PROOF_REQUESTED,
        _I.STOP: _P.DISENGAGED,
    },
    _P.PROOF_REQUESTED: {
        _I.PROOF_OK: _P.PROOF_RECEIVED,
        _I.PROOF_INSUFFICIENT: _P.PROOF_REQUESTED,
        _I.FOLLOWUP: _P.PROOF_REQUESTED,
        _I.STOP: _P.DISENGAGED,
    },
    _P.PROOF_RECEIVED: {
        _I.DEMAND: _P.PRICE_NEGOTIATION,
        _I.PROOF_INSUFFICIENT: _P.PROOF_REQUESTED,
        _I.FOLLOWUP: _P.PROOF_RECEIVED,
        _I.STOP: _P.DISENGAGED,
    },
    _P.PRICE_NEGOTIATION: {
        _I.OFFER_REDUCED: _P.OFFER_REDUCED,
        _I.DEMAND: _P.PRICE_NEGOTIATION,
        _I.FOLLOWUP: _P.PRICE_NEGOTIATION,
        _I.STOP: _P.DISENGAGED,
    },
    _P.OFFER_REDUCED: {
        _I.OFFER_REDUCED: _P.OFFER_REDUCED,
        _I.FOLLOWUP: _P.OFFER_REDUCED,
        _I.STOP: _P.DISENGAGED,
    },
    _P.DISENGAGED: {
        _I.FOLLOWUP: _P.DISENGAGED,  # absorbing; followups are no-ops
    },
}


@dataclass(frozen=True)
class NegotiationState:
    phase: NegotiationPhase = NegotiationPhase.INIT
    transcript: tuple[tuple[str, NegotiationInputKind], ...] = ()
    current_demand: Money | None = None


def is_legal(phase: NegotiationPhase, kind: NegotiationInputKind) -> bool:
    return kind in TRANSITIONS[phase]


def negotiation_advance(state: NegotiationState, inp: NegotiationInput) -> NegotiationState:
    """Deterministic, total transition function. Illegal inputs are rejected
    by returning the state unchanged; Disengaged admits no exit."""
    nxt = TRANSITIONS[state.phase].get(inp.kind)
    if nxt is None:
        return state
    demand = state.current_demand
    if inp.kind in (NegotiationInputKind.DEMAND, NegotiationInputKind.OFFER_REDUCED):
        demand = inp.amount
    return NegotiationState(
        phase=nxt,
        transcript=state.transcript + ((ACTOR_FOR_INPUT[inp.kind], inp.kind),),
        current_demand=demand,
    )


def reference_negotiation_trace() -> list[NegotiationInput]:
    """The captured exchange: initial mail with encrypted samples, proof,
    an (undisclosed) demand, attacker follow-ups, then the reduction to
    3750 USD."""
    return [
        NegotiationInput(NegotiationInputKind.SEND_INITIAL),
        NegotiationInput(NegotiationInputKind.PROOF_OK),
        NegotiationInput(NegotiationInputKind.DEMAND),  # amount not disclosed
        NegotiationInput(NegotiationInputKind.FOLLOWUP),
        NegotiationInput(NegotiationInputKind.FOLLOWUP),
        NegotiationInput(NegotiationInputKind.OFFER_REDUCED, Money(3750, "USD")),
    ]


# ------------------------------------------------------------------ report


def render_report(
    events,
    sessions: list[LoginSession],
    chain: ProcessChain,
    classes: Classification,
    tags: list[AttackStageTag],
    verdict: RansomwareVerdict,
) -> str:
    lines: list[str] = []
    lines.append("INCIDENT REPORT")
    lines.append("=" * 60)
    lines.append(f"events analyzed: {len(list(events))}")
    lines.append(f"login sessions: {len(sessions)} "
                 f"({sum(1 for s in sessions if s.outcome == 'SUCCESS')} successful)")
    lines.append("")
    lines.append("PROCESS CHAIN")
    lines.append("-" * 60)
    lines.append(chain.render() or "(no process activity)")
    if chain.anomalies:
        lines.append("")
        lines.append("anomalies:")
        lines.extend(f"  {a}" for a in chain.anomalies)
    lines.append("")
    lines.append("OPERATIONS")
    lines.append("-" * 60)
    for cls in classes.classes:
        lines.append(f"{cls.bucket.value}: {len(cls.event_ids)} events")
        for eid in cls.event_ids:
            lines.append(f"  {eid}")
    lines.append(f"omitted (unclassified): {len(classes.omitted)}")
    lines.append("")
    lines.append("ADVERSARY TACTICS")
    lines.append("-" * 60)
    if tags:
        for tag in tags:
            lines.append(f"{tag.tactic.value}: {len(tag.evidence)} evidence event(s)")
            lines.append("  " + ", ".join(tag.evidence))
    else:
        lines.append("(none tagged)")
    lines.append("")
    lines.append("RANSOMWARE VERDICT")
    lines.append("-" * 60)
    lines.append(f"positive: {verdict.positive}")
    lines.append(f"score: {verdict.score:g} (threshold {verdict.threshold:g})")
    lines.append(f"family hint: {verdict.family_hint or '(none)'}")
    lines.append("matched signatures:")
    if verdict.matched:
        for m in verdict.matched:
            lines.append(
                f"  {m.signature.id} [{m.signature.weight:g}] {m.signature.description} "
                f"({len(m.evidence)} events)"
            )
    else:
        lines.append("  (none)")
    lines.append("")
    lines.append("INDICATORS OF COMPROMISE")
    lines.append("-" * 60)
    if verdict.iocs:
        for kind, value in verdict.iocs:
            lines.append(f"  {kind.value}: {value}")
    else:
        lines.append("  (none)")
    lines.append("")
    return "\n".join(lines)
