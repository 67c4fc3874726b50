"""Continuous physics of the treatment plant: tank mass balance and sensors.

Integration is explicit Euler over the flow graph. Levels are stored
internally in units of 1/60 gallon so that ``flow [gal/min] * dt [s]`` is a
single exact float product; with the dyadic flow limits of the reference
topology every balance quantity (levels, inlet/drain/product integrals,
clamp ledger) is then exact, which is what lets the conservation suite
demand an exact ledger match. External reads are plain gallons.

Single-writer: one PlantSimulator owns the mutable state; everything else
sees frozen PlantState snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from .topology import DRAIN, PRODUCT, RAW, FlowEdge, PlantTopology, Tag, TagKind

UNITS_PER_GALLON = 60.0
OFFLINE_SENTINEL = -1.0


class PlantError(ValueError):
    """Bad tag, command, or state passed to the plant."""


class Position(str, Enum):
    OPEN = "OPEN"
    CLOSED = "CLOSED"
    ON = "ON"
    OFF = "OFF"

    @property
    def is_active(self) -> bool:
        return self in (Position.OPEN, Position.ON)


def active_position(kind: TagKind) -> Position:
    return Position.OPEN if kind is TagKind.MV else Position.ON


def idle_position(kind: TagKind) -> Position:
    return Position.CLOSED if kind is TagKind.MV else Position.OFF


def legal_targets(kind: TagKind) -> tuple[Position, Position]:
    if kind is TagKind.MV:
        return (Position.OPEN, Position.CLOSED)
    if kind is TagKind.P:
        return (Position.ON, Position.OFF)
    raise PlantError(f"{kind.value} tags take no commands")


class FaultKind(str, Enum):
    NONE = "none"
    STUCK_OFF = "stuck_off"  # actuator ignores activate commands
    STUCK_VALUE = "stuck_value"  # sensor reports a frozen value
    OFFLINE = "offline"  # sensor reports the sentinel


@dataclass(frozen=True)
class FaultMode:
    kind: FaultKind = FaultKind.NONE
    value: float | None = None

    def __post_init__(self):
        if self.kind is FaultKind.STUCK_VALUE and self.value is None:
            raise PlantError("stuck_value fault needs the frozen value")

    @classmethod
    def none(cls) -> "FaultMode":
        return cls(FaultKind.NONE)

    @classmethod
    def stuck_off(cls) -> "FaultMode":
        return cls(FaultKind.STUCK_OFF)

    @classmethod
    def stuck_value(cls, value: float) -> "FaultMode":
        return cls(FaultKind.STUCK_VALUE, value)

    @classmethod
    def offline(cls) -> "FaultMode":
        return cls(FaultKind.OFFLINE)


@dataclass(frozen=True)
class SensorReading:
    tag: Tag
    value: float
    sim_time: float


@dataclass(frozen=True)
class ClampEvent:
    tank: str
    kind: str  # "overflow" | "underflow"
    volume_units: float

    @property
    def volume(self) -> float:
        return self.volume_units / UNITS_PER_GALLON


@dataclass(frozen=True)
class PlantState:
    """Immutable snapshot. Level/volume fields are in internal units;
    the gallon views are derived properties."""

    sim_time: float
    level_units: dict[str, float]
    actuator_positions: dict[str, Position]
    faults: dict[str, FaultMode]
    flows: dict[str, float]  # edge key -> gal/min
    meter_flows: dict[str, float]  # FIT name -> gal/min
    inlet_units: float = 0.0
    drained_units: float = 0.0
    production_units: float = 0.0
    underflow_units: float = 0.0
    overflow_units: float = 0.0
    clamp_events: tuple[ClampEvent, ...] = ()

    @property
    def levels(self) -> dict[str, float]:
        return {t: u / UNITS_PER_GALLON for t, u in self.level_units.items()}

    @property
    def production_total(self) -> float:
        return self.production_units / UNITS_PER_GALLON

    @property
    def drained_total(self) -> float:
        return self.drained_units / UNITS_PER_GALLON

    @property
    def inlet_total(self) -> float:
        return self.inlet_units / UNITS_PER_GALLON

    @property
    def clamp_balance_units(self) -> float:
        """Volume the clamps injected (underflow) minus what they discarded."""
        return self.underflow_units - self.overflow_units


def initial_state(topology: PlantTopology) -> PlantState:
    sim = PlantSimulator(topology)
    return sim.snapshot()


def total_volume_units(state: PlantState) -> float:
    total = 0.0
    for tank in sorted(state.level_units):
        total += state.level_units[tank]
    return total + state.production_units + state.drained_units


def total_volume(state: PlantState) -> float:
    """Water accounted for: in tanks, delivered, or sent to drain (gallons)."""
    return total_volume_units(state) / UNITS_PER_GALLON


def read_sensor(state: PlantState, tag: Tag) -> SensorReading:
    """Faulted sensors report per their fault mode, never physical truth."""
    if not tag.kind.is_sensor:
        raise PlantError(f"{tag.name} is an actuator, not a sensor")
    fault = state.faults.get(tag.name, FaultMode.none())
    if fault.kind is FaultKind.OFFLINE:
        return SensorReading(tag, OFFLINE_SENTINEL, state.sim_time)
    if fault.kind is FaultKind.STUCK_VALUE:
        return SensorReading(tag, float(fault.value), state.sim_time)
    if tag.kind is TagKind.LIT:
        if tag.tank not in state.level_units:
            raise PlantError(f"level sensor {tag.name} bound to unknown tank {tag.tank}")
        value = state.level_units[tag.tank] / UNITS_PER_GALLON
    elif tag.kind is TagKind.FIT:
        value = state.meter_flows.get(tag.name, 0.0)
    else:  # AIT
        value = tag.nominal if tag.nominal is not None else 0.0
    return SensorReading(tag, value, state.sim_time)


def inject_fault(
    state: PlantState, tag: Tag | str, mode: FaultMode, topology: PlantTopology
) -> PlantState:
    """Set a fault on a tag. Physics is untouched until the next step."""
    name = tag.name if isinstance(tag, Tag) else tag
    if name not in topology.tags:
        raise PlantError(f"unknown tag {name}")
    faults = dict(state.faults)
    if mode.kind is FaultKind.NONE:
        faults.pop(name, None)
    else:
        faults[name] = mode
    return replace(state, faults=faults)


def step(state: PlantState, topology: PlantTopology, dt: float) -> PlantState:
    """Advance one Euler step and return the successor snapshot."""
    sim = PlantSimulator(topology, state)
    sim.step(dt)
    return sim.snapshot()


class PlantSimulator:
    """Mutable single-writer core behind the functional step()."""

    def __init__(self, topology: PlantTopology, state: PlantState | None = None):
        self.topology = topology
        self._backups: dict[str, tuple[str, ...]] = {
            name: tuple(b.name for b in topology.backups_of(name)) for name in topology.tags
        }
        if state is None:
            self.sim_time = 0.0
            self.level_units = {
                t.name: t.initial_level * UNITS_PER_GALLON for t in topology.tanks.values()
            }
            self.positions = {
                t.name: idle_position(t.kind) for t in topology.actuators()
            }
            self.faults: dict[str, FaultMode] = {}
            self.inlet_units = 0.0
            self.drained_units = 0.0
            self.production_units = 0.0
            self.underflow_units = 0.0
            self.overflow_units = 0.0
            self.flows = self._compute_flows()
            self.clamp_events: tuple[ClampEvent, ...] = ()
        else:
            self.sim_time = state.sim_time
            self.level_units = dict(state.level_units)
            self.positions = dict(state.actuator_positions)
            self.faults = dict(state.faults)
            self.inlet_units = state.inlet_units
            self.drained_units = state.drained_units
            self.production_units = state.production_units
            self.underflow_units = state.underflow_units
            self.overflow_units = state.overflow_units
            self.flows = dict(state.flows)
            self.clamp_events = state.clamp_events

    # -- commands and faults -------------------------------------------

    def apply_command(self, tag_name: str, target: Position) -> None:
        tag = self.topology.tags.get(tag_name)
        if tag is None:
            raise PlantError(f"unknown tag {tag_name}")
        if target not in legal_targets(tag.kind):
            raise PlantError(f"{target.value} is not a legal target for {tag_name}")
        self.positions[tag_name] = target

    def inject_fault(self, tag_name: str, mode: FaultMode) -> None:
        if tag_name not in self.topology.tags:
            raise PlantError(f"unknown tag {tag_name}")
        if mode.kind is FaultKind.NONE:
            self.faults.pop(tag_name, None)
        else:
            self.faults[tag_name] = mode

    # -- flow law -------------------------------------------------------

    def _effective(self, tag_name: str) -> bool:
        fault = self.faults.get(tag_name)
        if fault is not None and fault.kind is FaultKind.STUCK_OFF:
            return False
        return self.positions.get(tag_name, Position.OFF).is_active

    def _edge_active(self, edge: FlowEdge) -> bool:
        if self._effective(edge.governor):
            return True
        return any(self._effective(b) for b in self._backups.get(edge.governor, ()))

    def _compute_flows(self) -> dict[str, float]:
        return {
            e.key: (e.max_flow if self._edge_active(e) else 0.0) for e in self.topology.edges
        }

    # -- integration ----------------------------------------------------

    def step(self, dt: float) -> None:
        if dt < 0:
            raise PlantError("dt must be non-negative")
        if dt == 0:
            return
        self.flows = self._compute_flows()
        delta: dict[str, float] = {t: 0.0 for t in self.level_units}
        for edge in self.topology.edges:
            moved = self.flows[edge.key] * dt  # units (gal/min == units/s)
            if moved == 0.0:
                continue
            if edge.src == RAW:
                self.inlet_units += moved
            else:
                delta[edge.src] -= moved
            if edge.dst == DRAIN:
                self.drained_units += moved
            elif edge.dst == PRODUCT:
                self.production_units += moved
            else:
                delta[edge.dst] += moved
        events: list[ClampEvent] = []
        for tank, d in delta.items():
            if d == 0.0:
                continue
            level = self.level_units[tank] + d
            cap = self.topology.tanks[tank].capacity * UNITS_PER_GALLON
            if level < 0.0:
                events.append(ClampEvent(tank, "underflow", -level))
                self.underflow_units += -level
                level = 0.0
            elif level > cap:
                events.append(ClampEvent(tank, "overflow", level - cap))
                self.overflow_units += level - cap
                level = cap
            self.level_units[tank] = level
        self.clamp_events = tuple(events)
        self.sim_time += dt

    # -- reads ------------------------------------------------------------

    def snapshot(self) -> PlantState:
        meter_flows = {
            e.meter: self.flows[e.key] for e in self.topology.edges if e.meter is not None
        }
        return PlantState(
            sim_time=self.sim_time,
            level_units=dict(self.level_units),
            actuator_positions=dict(self.positions),
            faults=dict(self.faults),
            flows=dict(self.flows),
            meter_flows=meter_flows,
            inlet_units=self.inlet_units,
            drained_units=self.drained_units,
            production_units=self.production_units,
            underflow_units=self.underflow_units,
            overflow_units=self.overflow_units,
            clamp_events=self.clamp_events,
        )

    def read(self, tag_name: str) -> SensorReading:
        tag = self.topology.tags.get(tag_name)
        if tag is None:
            raise PlantError(f"unknown tag {tag_name}")
        return read_sensor(self.snapshot(), tag)


# ---------------------------------------------------------------- batch


@dataclass
class BatchResult:
    tanks: tuple[str, ...]
    actuators: tuple[str, ...]
    level_units: np.ndarray  # [runs, tanks]
    inlet_units: np.ndarray  # [runs]
    drained_units: np.ndarray
    production_units: np.ndarray
    underflow_units: np.ndarray
    overflow_units: np.ndarray

    def total_volume_units(self) -> np.ndarray:
        return self.level_units.sum(axis=1) + self.production_units + self.drained_units


def simulate_batch(
    topology: PlantTopology,
    schedule: Callable[[int], np.ndarray],
    n_steps: int,
    dt: float,
    runs: int,
    initial_level_units: np.ndarray | None = None,
) -> BatchResult:
    """Vectorized Euler integration of many runs at once.

    ``schedule(i)`` returns a bool array [runs, n_actuators] of *effective*
    actuator activity for step i (commanded active and not stuck), indexed
    by the sorted actuator-name order in the result. Arithmetic is
    per-edge in topology order, matching PlantSimulator.step exactly.
    """
    tanks = tuple(sorted(topology.tanks))
    tank_idx = {t: i for i, t in enumerate(tanks)}
    actuators = tuple(sorted(t.name for t in topology.actuators()))
    act_idx = {a: i for i, a in enumerate(actuators)}
    backups = {
        name: tuple(act_idx[b.name] for b in topology.backups_of(name)) for name in actuators
    }

    # (gov column, backup columns, src tank or None, dst tank or None,
    #  sink kind, max_flow)
    plan = []
    for e in topology.edges:
        src = tank_idx.get(e.src)
        dst = tank_idx.get(e.dst)
        sink = e.dst if e.dst in (DRAIN, PRODUCT) else None
        source_is_raw = e.src == RAW
        plan.append((act_idx[e.governor], backups[e.governor], src, dst, sink, source_is_raw, e.max_flow))

    if initial_level_units is None:
        base = np.array(
            [topology.tanks[t].initial_level * UNITS_PER_GALLON for t in tanks], dtype=np.float64
        )
        levels = np.tile(base, (runs, 1))
    else:
        levels = np.array(initial_level_units, dtype=np.float64).copy()
        if levels.shape != (runs, len(tanks)):
            raise PlantError("initial_level_units must be [runs, n_tanks]")

    caps = np.array([topology.tanks[t].capacity * UNITS_PER_GALLON for t in tanks])
    inlet = np.zeros(runs)
    drained = np.zeros(runs)
    production = np.zeros(runs)
    underflow = np.zeros(runs)
    overflow = np.zeros(runs)
    delta = np.empty_like(levels)

    for i in range(n_steps):
        act = schedule(i)
        delta[:] = 0.0
        for gov, backs, src, dst, sink, source_is_raw, max_flow in plan:
            active = act[:, gov]
            for b in backs:
                active = active | act[:, b]
            moved = np.where(active, max_flow * dt, 0.0)
            if source_is_raw:
                inlet += moved
            elif src is not None:
                delta[:, src] -= moved
            if sink == DRAIN:
                drained += moved
            elif sink == PRODUCT:
                production += moved
            elif dst is not None:
                delta[:, dst] += moved
        levels += delta
        over = np.clip(levels - caps, 0.0, None)
        overflow += over.sum(axis=1)
        levels -= over
        under = np.clip(-levels, 0.0, None)
        underflow += under.sum(axis=1)
        levels += under

    return BatchResult(
        tanks=tanks,
        actuators=actuators,
        level_units=levels,
        inlet_units=inlet,
        drained_units=drained,
        production_units=production,
        underflow_units=underflow,
        overflow_units=overflow,
    )
