"""Static description of the treatment plant: stages, tanks, tags, and flow edges.

The topology is data, not code: it is loaded from a ``topology_v1`` TOML
document (see ``data/reference_topology.toml`` for the shipped six-stage,
68-tag reference plant) and validated here. Everything downstream — the
simulator, the PLC scan logic, the gateway's state snapshots — works off
this object.
"""

from __future__ import annotations

import re
import sys
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TOPOLOGY_SCHEMA = "topology_v1"
CONTROL_SCHEMA = "control_v1"

# External endpoints of the flow graph. RAW is the only water source; DRAIN
# collects reject/backwash; PRODUCT is the treated-water delivery point.
RAW = "RAW"
DRAIN = "DRAIN"
PRODUCT = "PRODUCT"
EXTERNAL_NODES = frozenset({RAW, DRAIN, PRODUCT})

REFERENCE_TAG_COUNT = 68
STAGE_COUNT = 6

_TAG_RE = re.compile(r"^(LIT|FIT|AIT|MV|P)([1-6])(\d{2})$")


class TopologyError(ValueError):
    """Invalid topology configuration."""


class TagKind(str, Enum):
    LIT = "LIT"  # tank level, gallons
    FIT = "FIT"  # edge flow, gal/min
    AIT = "AIT"  # analyzer (pH, ORP, conductivity, ...)
    MV = "MV"  # motorized valve
    P = "P"  # pump

    @property
    def is_sensor(self) -> bool:
        return self in (TagKind.LIT, TagKind.FIT, TagKind.AIT)

    @property
    def is_actuator(self) -> bool:
        return self in (TagKind.MV, TagKind.P)


class TagRole(str, Enum):
    PRIMARY = "primary"
    BACKUP = "backup"
    STANDALONE = "standalone"


@dataclass(frozen=True)
class Tag:
    """One named process point (sensor or actuator)."""

    name: str
    kind: TagKind
    stage: int
    role: TagRole = TagRole.STANDALONE
    backs_up: str | None = None  # primary tag name, role=backup only
    tank: str | None = None  # LIT binding
    nominal: float | None = None  # AIT resting value
    unit: str = ""

    @staticmethod
    def parse_name(name: str) -> tuple[TagKind, int, int]:
        """Split a tag name into (kind, stage, index).

        The numeric suffix is the stage digit followed by a two-digit index,
        e.g. FIT201 -> (FIT, 2, 1).
        """
        m = _TAG_RE.match(name)
        if not m:
            raise TopologyError(f"malformed tag name {name!r}")
        return TagKind(m.group(1)), int(m.group(2)), int(m.group(3))


@dataclass(frozen=True)
class Tank:
    name: str
    stage: int
    capacity: float  # gallons
    initial_level: float = 0.0  # gallons


@dataclass(frozen=True)
class FlowEdge:
    """Directed water path. Flow runs at ``max_flow`` when the governor (or
    its backup) is effectively driving, else 0."""

    src: str
    dst: str
    governor: str  # actuator tag name
    max_flow: float  # gal/min
    meter: str | None = None  # FIT tag name

    @property
    def key(self) -> str:
        return f"{self.src}->{self.dst}"


@dataclass(frozen=True)
class StageSpec:
    number: int
    name: str
    tanks: tuple[str, ...]
    tags: tuple[str, ...]


@dataclass
class TopologyConfig:
    """Parsed but not yet validated topology document."""

    stages: list[dict]
    tanks: list[dict]
    tags: list[dict]
    edges: list[dict]
    strict: bool = True
    control: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PlantTopology:
    stages: tuple[StageSpec, ...]
    tags: dict[str, Tag]
    tanks: dict[str, Tank]
    edges: tuple[FlowEdge, ...]
    control: dict = field(default_factory=dict, compare=False)

    @property
    def tag_count(self) -> int:
        return len(self.tags)

    def sensors(self) -> list[Tag]:
        return [t for t in self.tags.values() if t.kind.is_sensor]

    def actuators(self) -> list[Tag]:
        return [t for t in self.tags.values() if t.kind.is_actuator]

    def backups_of(self, primary: str) -> list[Tag]:
        return [t for t in self.tags.values() if t.backs_up == primary]

    def edges_governed_by(self, tag_name: str) -> list[FlowEdge]:
        return [e for e in self.edges if e.governor == tag_name]

    def edge_for_meter(self, fit_name: str) -> FlowEdge | None:
        for e in self.edges:
            if e.meter == fit_name:
                return e
        return None

    def inlet_governor(self, tank: str) -> str | None:
        """Governor of the highest-capacity inbound edge, used for level control."""
        inbound = [e for e in self.edges if e.dst == tank]
        if not inbound:
            return None
        return max(inbound, key=lambda e: (e.max_flow, e.key)).governor

    def outlet_governor(self, tank: str) -> str | None:
        outbound = [e for e in self.edges if e.src == tank]
        if not outbound:
            return None
        return max(outbound, key=lambda e: (e.max_flow, e.key)).governor


def _as_tag(raw: dict) -> Tag:
    try:
        name = raw["name"]
    except KeyError:
        raise TopologyError("tag entry missing 'name'") from None
    kind, stage, _ = Tag.parse_name(name)
    declared_kind = raw.get("kind")
    if declared_kind is not None and TagKind(declared_kind) is not kind:
        raise TopologyError(f"tag {name}: declared kind {declared_kind} contradicts name")
    declared_stage = raw.get("stage")
    if declared_stage is not None and int(declared_stage) != stage:
        raise TopologyError(f"tag {name}: declared stage {declared_stage} contradicts name")
    role = TagRole(raw.get("role", "standalone"))
    backs_up = raw.get("backs_up")
    if role is TagRole.BACKUP and not backs_up:
        raise TopologyError(f"backup tag {name} does not name its primary")
    if role is not TagRole.BACKUP and backs_up:
        raise TopologyError(f"tag {name} names a primary but role is {role.value}")
    tank = raw.get("tank")
    if kind is TagKind.LIT and tank is None:
        tank = "T" + name[len(kind.value):]
    return Tag(
        name=name,
        kind=kind,
        stage=stage,
        role=role,
        backs_up=backs_up,
        tank=tank,
        nominal=raw.get("nominal"),
        unit=raw.get("unit", ""),
    )


def build_topology(config: TopologyConfig) -> PlantTopology:
    """Validate a config and assemble the immutable plant topology.

    Raises TopologyError on duplicate tag names, a tag count other than 68
    in strict mode, backup tags with missing/mismatched primaries, edges
    touching unknown units, or a flow graph that does not connect the raw
    inlet to the product outlet.
    """
    tags: dict[str, Tag] = {}
    for raw in config.tags:
        tag = _as_tag(raw)
        if tag.name in tags:
            raise TopologyError(f"duplicate tag name {tag.name}")
        tags[tag.name] = tag

    if config.strict and len(tags) != REFERENCE_TAG_COUNT:
        raise TopologyError(
            f"strict topology requires {REFERENCE_TAG_COUNT} tags, got {len(tags)}"
        )

    for tag in tags.values():
        if tag.role is TagRole.BACKUP:
            primary = tags.get(tag.backs_up or "")
            if primary is None:
                raise TopologyError(f"backup {tag.name} references missing primary {tag.backs_up}")
            if primary.kind is not tag.kind or primary.stage != tag.stage:
                raise TopologyError(
                    f"backup {tag.name} must match {tag.backs_up} in kind and stage"
                )

    tanks: dict[str, Tank] = {}
    for raw in config.tanks:
        tank = Tank(
            name=raw["name"],
            stage=int(raw["stage"]),
            capacity=float(raw["capacity"]),
            initial_level=float(raw.get("initial_level", 0.0)),
        )
        if tank.name in tanks:
            raise TopologyError(f"duplicate tank name {tank.name}")
        if tank.capacity <= 0:
            raise TopologyError(f"tank {tank.name} capacity must be positive")
        if not 0 <= tank.initial_level <= tank.capacity:
            raise TopologyError(f"tank {tank.name} initial level outside [0, capacity]")
        tanks[tank.name] = tank

    for tag in tags.values():
        if tag.kind is TagKind.LIT and tag.tank not in tanks:
            raise TopologyError(f"level sensor {tag.name} bound to unknown tank {tag.tank}")

    units = set(tanks) | EXTERNAL_NODES
    edges: list[FlowEdge] = []
    seen_keys: set[str] = set()
    for raw in config.edges:
        edge = FlowEdge(
            src=raw["from"],
            dst=raw["to"],
            governor=raw["governor"],
            max_flow=float(raw["max_flow"]),
            meter=raw.get("meter"),
        )
        if edge.src not in units or edge.dst not in units:
            raise TopologyError(f"edge {edge.key} references unknown unit")
        if edge.src == edge.dst:
            raise TopologyError(f"edge {edge.key} is a self-loop")
        if edge.key in seen_keys:
            raise TopologyError(f"duplicate edge {edge.key}")
        if edge.max_flow <= 0:
            raise TopologyError(f"edge {edge.key} max_flow must be positive")
        gov = tags.get(edge.governor)
        if gov is None or not gov.kind.is_actuator:
            raise TopologyError(f"edge {edge.key} governor {edge.governor} is not an actuator tag")
        if edge.meter is not None:
            meter = tags.get(edge.meter)
            if meter is None or meter.kind is not TagKind.FIT:
                raise TopologyError(f"edge {edge.key} meter {edge.meter} is not a FIT tag")
        seen_keys.add(edge.key)
        edges.append(edge)

    meters = [e.meter for e in edges if e.meter]
    if len(meters) != len(set(meters)):
        raise TopologyError("a FIT tag meters more than one edge")

    stage_numbers = sorted(int(s["number"]) for s in config.stages)
    if config.strict and stage_numbers != list(range(1, STAGE_COUNT + 1)):
        raise TopologyError(f"strict topology requires stages 1..{STAGE_COUNT}, got {stage_numbers}")
    if len(stage_numbers) != len(set(stage_numbers)):
        raise TopologyError("duplicate stage number")
    for tag in tags.values():
        if tag.stage not in stage_numbers:
            raise TopologyError(f"tag {tag.name} belongs to undeclared stage {tag.stage}")
    for tank in tanks.values():
        if tank.stage not in stage_numbers:
            raise TopologyError(f"tank {tank.name} belongs to undeclared stage {tank.stage}")

    stages = tuple(
        StageSpec(
            number=n,
            name=next(s.get("name", f"stage {n}") for s in config.stages if int(s["number"]) == n),
            tanks=tuple(sorted(t.name for t in tanks.values() if t.stage == n)),
            tags=tuple(sorted(t.name for t in tags.values() if t.stage == n)),
        )
        for n in stage_numbers
    )

    topology = PlantTopology(
        stages=stages, tags=tags, tanks=tanks, edges=tuple(edges), control=config.control
    )
    _check_connected(topology)
    return topology


def _check_connected(topology: PlantTopology) -> None:
    """Breadth-first search along flow edges: RAW must reach PRODUCT."""
    adjacency: dict[str, list[str]] = {}
    for e in topology.edges:
        adjacency.setdefault(e.src, []).append(e.dst)
    frontier = deque([RAW])
    seen = {RAW}
    while frontier:
        node = frontier.popleft()
        for nxt in adjacency.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    if PRODUCT not in seen:
        raise TopologyError("flow graph does not connect the raw inlet to the product outlet")
    orphan_tanks = set(topology.tanks) - seen
    # Chemical day tanks only feed the train; they may be unreachable from RAW
    # as long as they themselves reach it.
    for tank in sorted(orphan_tanks):
        if not any(e.src == tank for e in topology.edges):
            raise TopologyError(f"tank {tank} is disconnected from the flow graph")


def parse_topology_document(doc: dict, strict: bool | None = None) -> TopologyConfig:
    schema = doc.get("schema")
    if schema != TOPOLOGY_SCHEMA:
        raise TopologyError(f"expected schema {TOPOLOGY_SCHEMA!r}, got {schema!r}")
    control = doc.get("control", {})
    if control and control.get("schema") != CONTROL_SCHEMA:
        raise TopologyError(f"control section must declare schema {CONTROL_SCHEMA!r}")
    return TopologyConfig(
        stages=list(doc.get("stage", [])),
        tanks=list(doc.get("tank", [])),
        tags=list(doc.get("tag", [])),
        edges=list(doc.get("edge", [])),
        strict=bool(doc.get("strict", True)) if strict is None else strict,
        control=control,
    )


def load_topology_config(path: str | Path) -> TopologyConfig:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return parse_topology_document(doc)


def reference_config() -> TopologyConfig:
    """The shipped six-stage reference plant (68 tags)."""
    data = resources.files("hydratwin.data").joinpath("reference_topology.toml").read_bytes()
    return parse_topology_document(tomllib.loads(data.decode("utf-8")))


def reference_topology() -> PlantTopology:
    return build_topology(reference_config())
