"""Closed-loop plant driver: the single writer that owns the simulator.

Each tick drains the gateway's command queue (re-checking interlocks
against the authoritative state), runs all six stage scans on fresh
sensor readings, merges commands (LL/HH safe states beat everything
else), evaluates pump failover with a one-scan release latch, applies
the result, and advances the physics. Everything observable — applied
and denied commands, alarms, clamp events — lands in the journal.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .control import (
    ActuatorCommand,
    AlarmCondition,
    CommandOrigin,
    ControlConfig,
    PrimaryStatus,
    ScanResult,
    failover,
    interlock_check,
    scan,
)
from .gateway import CommandQueue
from .plant import (
    ClampEvent,
    FaultKind,
    FaultMode,
    PlantSimulator,
    PlantState,
    Position,
    read_sensor,
)
from .topology import PlantTopology, TagRole


@dataclass(frozen=True)
class TickReport:
    tick_index: int
    sim_time: float
    applied: tuple[ActuatorCommand, ...]
    denied: tuple[tuple[ActuatorCommand, str], ...]
    alarms: tuple[tuple[str, AlarmCondition], ...]
    clamp_events: tuple[ClampEvent, ...]


@dataclass
class _Latch:
    engaged: bool = False
    healthy_ticks: int = 0


class PlantLoop:
    def __init__(
        self,
        topology: PlantTopology,
        control_config: ControlConfig | None = None,
        queue: CommandQueue | None = None,
        journal_limit: int = 10000,
    ):
        self.topology = topology
        self.config = (
            control_config if control_config is not None else ControlConfig.from_topology(topology)
        )
        self.queue = queue if queue is not None else CommandQueue()
        self.sim = PlantSimulator(topology)
        self._actuators = sorted(t.name for t in topology.actuators())
        self._backups = [t for t in topology.tags.values() if t.role is TagRole.BACKUP]
        self._scan_results: dict[int, ScanResult] = {}
        self._latches: dict[str, _Latch] = {b.name: _Latch() for b in self._backups}
        self.tick_index = 0
        self.last_alarms: tuple[tuple[str, AlarmCondition], ...] = ()
        self.journal: list[str] = []
        self._journal_limit = journal_limit
        self._snapshot = self.sim.snapshot()

    # -- observability ----------------------------------------------------

    def latest_state(self) -> PlantState:
        return self._snapshot

    def _note(self, message: str) -> None:
        if len(self.journal) < self._journal_limit:
            self.journal.append(f"[t={self.sim.sim_time:g}] {message}")

    def inject_fault(self, tag_name: str, mode: FaultMode) -> None:
        self.sim.inject_fault(tag_name, mode)
        self._note(f"fault {mode.kind.value} injected on {tag_name}")
        self._snapshot = self.sim.snapshot()

    # -- the cycle ---------------------------------------------------------

    def tick(self, dt: float | None = None) -> TickReport:
        dt = self.config.scan_period if dt is None else dt
        applied: list[ActuatorCommand] = []
        denied: list[tuple[ActuatorCommand, str]] = []

        # External (HMI/replay) commands: re-check against the state they
        # will actually act on, then apply.
        pre_state = self.sim.snapshot()
        for item in self.queue.drain():
            decision = interlock_check(item.command, pre_state, self.config)
            if not decision.permitted:
                denied.append((item.command, decision.reason or "interlock"))
                self._note(
                    f"denied {item.command.origin.value} command "
                    f"{item.command.tag}->{item.command.target.value}: {decision.reason}"
                )
                continue
            self.sim.apply_command(item.command.tag, item.command.target)
            applied.append(item.command)

        # Stage scans on fresh (possibly faulted) readings, with the belief
        # map re-anchored to the actual commanded positions.
        state = self.sim.snapshot()
        positions = {a: self.sim.positions[a] for a in self._actuators}
        alarms: list[tuple[str, AlarmCondition]] = []
        merged: dict[str, ActuatorCommand] = {}
        for stage in (s.number for s in self.topology.stages):
            readings = [
                read_sensor(state, tag)
                for tag in self.topology.sensors()
                if tag.stage == stage
            ]
            prior = self._scan_results.get(stage, ScanResult())
            prior = replace(prior, positions=dict(positions))
            result = scan(stage, readings, prior, self.config, self.topology)
            self._scan_results[stage] = result
            alarms.extend(result.alarms)
            for cmd in result.commands:
                current = merged.get(cmd.tag)
                if current is None or (cmd.forced and not current.forced):
                    merged[cmd.tag] = cmd

        # Failover for every backup pump, latched for one healthy scan.
        for backup in self._backups:
            primary = backup.backs_up
            latch = self._latches[backup.name]
            if primary in merged:
                demand = merged[primary].target.is_active
            else:
                demand = self.sim.positions[primary].is_active
            fault = self.sim.faults.get(primary, FaultMode.none())
            status = PrimaryStatus(primary, self.sim.positions[primary], fault)
            cmd = failover(
                status,
                backup,
                demand,
                enabled=self.config.failover_enabled,
                now=self.sim.sim_time,
            )
            if cmd is None:
                continue
            if cmd.target.is_active:
                latch.engaged = True
                latch.healthy_ticks = 0
                merged[backup.name] = cmd
            else:
                # Primary healthy: release only after one full healthy scan.
                latch.healthy_ticks += 1
                if latch.engaged and latch.healthy_ticks >= 2:
                    latch.engaged = False
                    merged[backup.name] = cmd
                elif not latch.engaged and self.sim.positions[backup.name].is_active:
                    merged[backup.name] = cmd

        for cmd in merged.values():
            self.sim.apply_command(cmd.tag, cmd.target)
            applied.append(cmd)

        self.sim.step(dt)
        self._snapshot = self.sim.snapshot()
        for event in self.sim.clamp_events:
            self._note(
                f"clamp {event.kind} on {event.tank}: {event.volume:.6g} gal "
                "absorbed by limiter"
            )
        for subject, condition in alarms:
            self._note(f"alarm {condition.value} on {subject}")

        self.last_alarms = tuple(alarms)
        report = TickReport(
            tick_index=self.tick_index,
            sim_time=self.sim.sim_time,
            applied=tuple(applied),
            denied=tuple(denied),
            alarms=self.last_alarms,
            clamp_events=self.sim.clamp_events,
        )
        self.tick_index += 1
        return report

    def run(self, ticks: int, dt: float | None = None) -> list[TickReport]:
        return [self.tick(dt) for _ in range(ticks)]
