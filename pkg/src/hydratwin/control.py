"""Per-stage scan-cycle control: threshold logic, failover, interlocks.

Each scan reads the stage's (possibly lying) sensors and emits actuator
commands under hysteresis band logic. Control always acts on readings,
never on physical truth — that is what makes sensor tampering meaningful.
Alarms: LL at reading <= LL, HH at reading >= HH, FAULT when a sensor
reports the offline sentinel. Band commands use strict bounds (activate
below L, deactivate above H, hold inside [L, H]).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import ClassVar

from .plant import (
    OFFLINE_SENTINEL,
    FaultKind,
    FaultMode,
    PlantState,
    Position,
    SensorReading,
    active_position,
    idle_position,
    legal_targets,
)
from .topology import PlantTopology, Tag, TagKind, TagRole, TopologyError


class ControlError(ValueError):
    """Bad control configuration or scan input."""


class MissingReadingError(ControlError):
    """A stage sensor reading was absent from the scan input."""


class CommandOrigin(str, Enum):
    PLC = "PLC"
    HMI = "HMI"
    REPLAY = "REPLAY"


class AlarmCondition(str, Enum):
    LL = "LL"
    HH = "HH"
    FAULT = "FAULT"


@dataclass(frozen=True)
class ActuatorCommand:
    tag: str
    target: Position
    issued_at: float
    origin: CommandOrigin
    forced: bool = False  # LL/HH safe-state; wins merge conflicts

    def validate(self, topology: PlantTopology) -> None:
        tag = topology.tags.get(self.tag)
        if tag is None:
            raise ControlError(f"unknown tag {self.tag}")
        if self.target not in legal_targets(tag.kind):
            raise ControlError(f"{self.target.value} illegal for {tag.kind.value} tag {self.tag}")


@dataclass(frozen=True)
class TankThresholds:
    ll: float
    l: float
    h: float
    hh: float

    def __post_init__(self):
        if not (self.ll < self.l < self.h < self.hh):
            raise ControlError(f"thresholds must satisfy LL < L < H < HH, got {self}")

    @classmethod
    def default_for(cls, capacity: float) -> "TankThresholds":
        return cls(0.10 * capacity, 0.25 * capacity, 0.80 * capacity, 0.95 * capacity)


@dataclass(frozen=True)
class TankControl:
    tank: str
    stage: int
    level_tag: str
    thresholds: TankThresholds
    inlet_governor: str | None
    outlet_governor: str | None


@dataclass(frozen=True)
class ControlConfig:
    tanks: dict[str, TankControl]
    scan_period: float = 1.0
    failover_enabled: bool = True
    stage_sensors: dict[int, tuple[str, ...]] = field(default_factory=dict)
    # governor tag -> tanks it fills / drains (backups inherit their primary's edges)
    fills: dict[str, tuple[str, ...]] = field(default_factory=dict)
    drains: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.scan_period <= 0:
            raise ControlError("scan_period must be positive")

    def stage_tanks(self, stage: int) -> list[TankControl]:
        return sorted(
            (tc for tc in self.tanks.values() if tc.stage == stage), key=lambda tc: tc.tank
        )

    @classmethod
    def from_topology(
        cls,
        topology: PlantTopology,
        thresholds: dict[str, TankThresholds] | None = None,
        scan_period: float | None = None,
        failover_enabled: bool | None = None,
    ) -> "ControlConfig":
        """Derive the control table: the topology's control_v1 section
        supplies thresholds and timing; gaps fall back to the 10/25/80/95%
        capacity defaults."""
        section = topology.control or {}
        table = dict(thresholds or {})
        declared = section.get("thresholds", {})
        for tank in topology.tanks.values():
            if tank.name in table:
                continue
            if tank.name in declared:
                d = declared[tank.name]
                table[tank.name] = TankThresholds(d["ll"], d["l"], d["h"], d["hh"])
            else:
                table[tank.name] = TankThresholds.default_for(tank.capacity)

        level_tags = {
            t.tank: t.name for t in topology.tags.values() if t.kind is TagKind.LIT
        }
        tanks: dict[str, TankControl] = {}
        for tank in topology.tanks.values():
            if tank.name not in level_tags:
                raise ControlError(f"tank {tank.name} has no level sensor")
            tanks[tank.name] = TankControl(
                tank=tank.name,
                stage=tank.stage,
                level_tag=level_tags[tank.name],
                thresholds=table[tank.name],
                inlet_governor=topology.inlet_governor(tank.name),
                outlet_governor=topology.outlet_governor(tank.name),
            )

        stage_sensors = {
            s.number: tuple(
                name for name in s.tags if topology.tags[name].kind.is_sensor
            )
            for s in topology.stages
        }

        fills: dict[str, list[str]] = {}
        drains: dict[str, list[str]] = {}
        for edge in topology.edges:
            governors = [edge.governor] + [b.name for b in topology.backups_of(edge.governor)]
            for gov in governors:
                if edge.dst in topology.tanks:
                    fills.setdefault(gov, []).append(edge.dst)
                if edge.src in topology.tanks:
                    drains.setdefault(gov, []).append(edge.src)

        return cls(
            tanks=tanks,
            scan_period=float(
                section.get("scan_period", 1.0) if scan_period is None else scan_period
            ),
            failover_enabled=bool(
                section.get("failover", True) if failover_enabled is None else failover_enabled
            ),
            stage_sensors=stage_sensors,
            fills={k: tuple(v) for k, v in fills.items()},
            drains={k: tuple(v) for k, v in drains.items()},
        )


@dataclass(frozen=True)
class ScanResult:
    commands: tuple[ActuatorCommand, ...] = ()
    alarms: tuple[tuple[str, AlarmCondition], ...] = ()
    scan_index: int = -1
    # Last-commanded-position belief; the hysteresis memory threaded scan to
    # scan (the closed loop refreshes it from actual positions each cycle).
    positions: dict[str, Position] = field(default_factory=dict)


def scan(
    stage: int,
    readings: list[SensorReading],
    prior: ScanResult | None,
    config: ControlConfig,
    topology: PlantTopology,
) -> ScanResult:
    """One PLC scan for a stage. Pure: output depends only on arguments."""
    prior = prior if prior is not None else ScanResult()
    by_tag = {r.tag.name: r for r in readings}
    expected = config.stage_sensors.get(stage, ())
    missing = [name for name in expected if name not in by_tag]
    if missing:
        raise MissingReadingError(f"stage {stage} scan missing readings: {missing}")

    now = max((r.sim_time for r in readings), default=0.0)
    belief = dict(prior.positions)
    commands: dict[str, ActuatorCommand] = {}
    alarms: list[tuple[str, AlarmCondition]] = []

    def emit(tag_name: str, target: Position, forced: bool) -> None:
        if belief.get(tag_name) == target:
            return
        if tag_name in commands:
            if forced and not commands[tag_name].forced:
                pass  # safe-state replaces the earlier band command
            else:
                return
        cmd = ActuatorCommand(tag_name, target, now, CommandOrigin.PLC, forced)
        cmd.validate(topology)
        commands[tag_name] = cmd
        belief[tag_name] = target

    stage_tank_names = sorted(t.name for t in topology.tanks.values() if t.stage == stage)
    for name in stage_tank_names:
        if name not in config.tanks:
            raise ControlError(f"no threshold config for tank {name}")

    for tc in config.stage_tanks(stage):
        reading = by_tag.get(tc.level_tag)
        if reading is None:
            raise MissingReadingError(f"stage {stage} scan missing level {tc.level_tag}")
        level = reading.value
        th = tc.thresholds

        if level == OFFLINE_SENTINEL:
            alarms.append((tc.level_tag, AlarmCondition.FAULT))
        if level <= th.ll:
            alarms.append((tc.tank, AlarmCondition.LL))
        elif level >= th.hh:
            alarms.append((tc.tank, AlarmCondition.HH))

        inlet = tc.inlet_governor
        if inlet is not None:
            kind = topology.tags[inlet].kind
            if level < th.l:
                emit(inlet, active_position(kind), forced=False)
            elif level > th.h:
                emit(inlet, idle_position(kind), forced=level >= th.hh)

        outlet = tc.outlet_governor
        if outlet is not None and level <= th.ll:
            kind = topology.tags[outlet].kind
            emit(outlet, idle_position(kind), forced=True)

    return ScanResult(
        commands=tuple(commands.values()),
        alarms=tuple(alarms),
        scan_index=prior.scan_index + 1,
        positions=belief,
    )


@dataclass(frozen=True)
class PrimaryStatus:
    tag: str
    position: Position
    fault: FaultMode


def failover(
    primary: PrimaryStatus,
    backup_tag: Tag,
    demand: bool,
    *,
    enabled: bool = True,
    now: float = 0.0,
) -> ActuatorCommand | None:
    """Backup engagement rule: ON only while the primary is demanded but
    stuck; OFF whenever the primary is healthy. Latching across scans is
    the closed-loop driver's job."""
    if backup_tag.role is not TagRole.BACKUP or not backup_tag.backs_up:
        raise ControlError(f"{backup_tag.name} is not a backup with a primary reference")
    if backup_tag.backs_up != primary.tag:
        raise ControlError(f"{backup_tag.name} does not back up {primary.tag}")
    faulted = primary.fault.kind is FaultKind.STUCK_OFF
    if not faulted:
        return ActuatorCommand(
            backup_tag.name, idle_position(backup_tag.kind), now, CommandOrigin.PLC
        )
    if demand and enabled:
        return ActuatorCommand(
            backup_tag.name, active_position(backup_tag.kind), now, CommandOrigin.PLC, forced=True
        )
    return None


@dataclass(frozen=True)
class InterlockDecision:
    permitted: bool
    reason: str | None = None

    PERMIT: ClassVar["InterlockDecision"]

    @classmethod
    def deny(cls, reason: str) -> "InterlockDecision":
        return cls(False, reason)


InterlockDecision.PERMIT = InterlockDecision(True)


def interlock_check(
    cmd: ActuatorCommand, state: PlantState, config: ControlConfig
) -> InterlockDecision:
    """Deny HMI/replay pump activations that would dry-run an empty tank or
    keep filling one already at HH. PLC commands are always permitted."""
    if cmd.origin is CommandOrigin.PLC:
        return InterlockDecision.PERMIT
    try:
        kind, _, _ = Tag.parse_name(cmd.tag)
    except TopologyError:
        return InterlockDecision.PERMIT  # unknown names are the schema layer's problem
    if not cmd.target.is_active or kind is not TagKind.P:
        return InterlockDecision.PERMIT
    levels = state.levels
    for tank in config.drains.get(cmd.tag, ()):
        tc = config.tanks.get(tank)
        if tc is not None and levels.get(tank, 0.0) <= tc.thresholds.ll:
            return InterlockDecision.deny("dry-run")
    for tank in config.fills.get(cmd.tag, ()):
        tc = config.tanks.get(tank)
        if tc is not None and levels.get(tank, 0.0) >= tc.thresholds.hh:
            return InterlockDecision.deny("overflow")
    return InterlockDecision.PERMIT
