"""Plant physics: Euler mass balance, sensors, faults, conservation.

The conservation oracle integrates the same schedules independently in
exact rational arithmetic (fractions.Fraction), so any disagreement with
the simulator is a simulator bug, not float noise.
"""

import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydratwin.plant import (
    OFFLINE_SENTINEL,
    UNITS_PER_GALLON,
    FaultKind,
    FaultMode,
    PlantError,
    PlantSimulator,
    Position,
    active_position,
    idle_position,
    initial_state,
    inject_fault,
    read_sensor,
    simulate_batch,
    step,
    total_volume,
    total_volume_units,
)
from hydratwin.topology import build_topology

from conftest import small_config


# ---------------------------------------------------------------- oracle


def oracle_integrate(topology, schedule):
    """Exact-rational reference integration.

    schedule: list of (positions: {tag: Position}, stuck: set[str], dt).
    Returns dict with Fraction gallons for levels and the ledgers.
    """
    levels = {t.name: Fraction(t.initial_level) for t in topology.tanks.values()}
    caps = {t.name: Fraction(t.capacity) for t in topology.tanks.values()}
    backups = {name: [b.name for b in topology.backups_of(name)] for name in topology.tags}
    inlet = drained = produced = underflow = overflow = Fraction(0)

    def runs(tag, positions, stuck):
        if tag in stuck:
            return False
        return positions.get(tag, Position.OFF) in (Position.ON, Position.OPEN)

    for positions, stuck, dt in schedule:
        dtf = Fraction(dt)
        delta = {t: Fraction(0) for t in levels}
        for e in topology.edges:
            active = runs(e.governor, positions, stuck) or any(
                runs(b, positions, stuck) for b in backups[e.governor]
            )
            if not active:
                continue
            moved = Fraction(e.max_flow) * dtf / 60  # gallons
            if e.src == "RAW":
                inlet += moved
            else:
                delta[e.src] -= moved
            if e.dst == "DRAIN":
                drained += moved
            elif e.dst == "PRODUCT":
                produced += moved
            else:
                delta[e.dst] += moved
        for tank, d in delta.items():
            lv = levels[tank] + d
            if lv < 0:
                underflow += -lv
                lv = Fraction(0)
            elif lv > caps[tank]:
                overflow += lv - caps[tank]
                lv = caps[tank]
            levels[tank] = lv

    return {
        "levels": levels,
        "inlet": inlet,
        "drained": drained,
        "produced": produced,
        "underflow": underflow,
        "overflow": overflow,
    }


def random_schedule(topology, rng, n_steps, dts=(1.0,), fault_prob=0.02):
    actuators = sorted(t.name for t in topology.actuators())
    positions = {a: idle_position(topology.tags[a].kind) for a in actuators}
    stuck: set[str] = set()
    schedule = []
    for _ in range(n_steps):
        for a in actuators:
            if rng.random() < 0.15:
                kind = topology.tags[a].kind
                positions[a] = (
                    active_position(kind) if rng.random() < 0.5 else idle_position(kind)
                )
            if rng.random() < fault_prob:
                if a in stuck:
                    stuck.discard(a)
                else:
                    stuck.add(a)
        schedule.append((dict(positions), set(stuck), rng.choice(dts)))
    return schedule


def drive(topology, schedule):
    sim = PlantSimulator(topology)
    for positions, stuck, dt in schedule:
        for tag, pos in positions.items():
            sim.apply_command(tag, pos)
        for tag in list(sim.faults):
            sim.inject_fault(tag, FaultMode.none())
        for tag in stuck:
            sim.inject_fault(tag, FaultMode.stuck_off())
        sim.step(dt)
    return sim


def as_gallons_fraction(units: float) -> Fraction:
    return Fraction(units) / 60


# ---------------------------------------------------------------- basics


class TestStepBasics:
    def test_zero_dt_is_identity(self, small_topology):
        s0 = initial_state(small_topology)
        s1 = step(s0, small_topology, 0.0)
        assert s1 == s0
        assert s1.sim_time == s0.sim_time

    def test_all_closed_levels_unchanged(self, small_topology):
        s0 = initial_state(small_topology)
        s1 = step(s0, small_topology, 60.0)
        assert s1.level_units == s0.level_units
        assert s1.sim_time == 60.0

    def test_constant_inflow_raises_level_exactly(self, small_topology):
        # inlet open at 5 gal/min, outlet shut, one minute -> +5.0 gallons
        sim = PlantSimulator(small_topology)
        sim.apply_command("MV101", Position.OPEN)
        before = sim.level_units["T101"]
        sim.step(60.0)
        after = sim.level_units["T101"]
        assert (after - before) / UNITS_PER_GALLON == 5.0

    def test_flow_zero_when_governor_inactive(self, small_topology):
        sim = PlantSimulator(small_topology)
        sim.step(1.0)
        state = sim.snapshot()
        for edge in small_topology.edges:
            assert state.flows[edge.key] == 0.0

    def test_flows_clamped_to_edge_max(self, small_topology):
        sim = PlantSimulator(small_topology)
        for tag in ("MV101", "P101", "P201"):
            sim.apply_command(tag, active_position(small_topology.tags[tag].kind))
        sim.step(1.0)
        state = sim.snapshot()
        for edge in small_topology.edges:
            assert 0.0 <= state.flows[edge.key] <= edge.max_flow

    def test_negative_dt_rejected(self, small_topology):
        with pytest.raises(PlantError):
            step(initial_state(small_topology), small_topology, -1.0)

    def test_illegal_target_rejected(self, small_topology):
        sim = PlantSimulator(small_topology)
        with pytest.raises(PlantError):
            sim.apply_command("MV101", Position.ON)
        with pytest.raises(PlantError):
            sim.apply_command("P101", Position.OPEN)

    def test_overflow_clamps_and_records(self, small_topology):
        sim = PlantSimulator(small_topology)
        sim.apply_command("MV101", Position.OPEN)
        # 100-gal tank at 50: 5 gal/min for 700 s adds ~58.33 gal -> overflow
        sim.step(700.0)
        assert sim.level_units["T101"] == 100 * UNITS_PER_GALLON
        assert sim.overflow_units > 0
        assert any(e.kind == "overflow" and e.tank == "T101" for e in sim.clamp_events)

    def test_underflow_clamps_and_records(self, small_topology):
        sim = PlantSimulator(small_topology)
        sim.apply_command("P201", Position.ON)
        # drain T201 (50 gal) at 2 gal/min for 2000 s -> 66.7 gal demanded
        sim.step(2000.0)
        assert sim.level_units["T201"] == 0.0
        assert sim.underflow_units > 0
        assert any(e.kind == "underflow" and e.tank == "T201" for e in sim.clamp_events)


class TestSensors:
    def test_level_passthrough(self, small_topology):
        state = initial_state(small_topology)
        reading = read_sensor(state, small_topology.tags["LIT101"])
        assert reading.value == 50.0

    def test_stuck_value_ignores_physics(self, small_topology):
        state = initial_state(small_topology)
        state = inject_fault(state, "LIT101", FaultMode.stuck_value(500.0), small_topology)
        assert read_sensor(state, small_topology.tags["LIT101"]).value == 500.0
        state = step(state, small_topology, 60.0)
        assert read_sensor(state, small_topology.tags["LIT101"]).value == 500.0

    def test_offline_reads_sentinel(self, small_topology):
        state = initial_state(small_topology)
        state = inject_fault(state, "LIT101", FaultMode.offline(), small_topology)
        assert read_sensor(state, small_topology.tags["LIT101"]).value == OFFLINE_SENTINEL

    def test_fit_reads_zero_when_pump_off(self, small_topology):
        state = step(initial_state(small_topology), small_topology, 1.0)
        assert read_sensor(state, small_topology.tags["FIT201"]).value == 0.0

    def test_fit_matches_step_flow_table(self, small_topology):
        sim = PlantSimulator(small_topology)
        sim.apply_command("P101", Position.ON)
        sim.step(1.0)
        state = sim.snapshot()
        fit = read_sensor(state, small_topology.tags["FIT201"]).value
        assert fit == state.flows["T101->T201"] == 4.0

    def test_actuator_read_rejected(self, small_topology):
        state = initial_state(small_topology)
        with pytest.raises(PlantError, match="actuator"):
            read_sensor(state, small_topology.tags["MV101"])

    def test_ait_reads_nominal(self, ref_topology):
        state = initial_state(ref_topology)
        assert read_sensor(state, ref_topology.tags["AIT201"]).value == 7.1


class TestFaults:
    def test_stuck_off_pump_ignores_on(self, small_topology):
        sim = PlantSimulator(small_topology)
        sim.inject_fault("P101", FaultMode.stuck_off())
        sim.apply_command("P101", Position.ON)
        sim.step(60.0)
        assert sim.snapshot().flows["T101->T201"] == 0.0

    def test_inject_none_on_clean_tag_is_identity(self, small_topology):
        s0 = initial_state(small_topology)
        s1 = inject_fault(s0, "P101", FaultMode.none(), small_topology)
        assert s1 == s0

    def test_unknown_tag_rejected(self, small_topology):
        with pytest.raises(PlantError, match="unknown tag"):
            inject_fault(initial_state(small_topology), "XYZ999", FaultMode.offline(), small_topology)

    def test_backup_drives_edge_when_active(self, small_topology):
        sim = PlantSimulator(small_topology)
        sim.inject_fault("P101", FaultMode.stuck_off())
        sim.apply_command("P101", Position.ON)
        sim.apply_command("P102", Position.ON)
        sim.step(1.0)
        assert sim.snapshot().flows["T101->T201"] == 4.0


class TestConservation:
    def test_fresh_empty_plant_totals_zero(self):
        cfg = small_config()
        for t in cfg.tanks:
            t["initial_level"] = 0
        topo = build_topology(cfg)
        assert total_volume(initial_state(topo)) == 0.0

    def test_closed_system_volume_constant(self, small_topology):
        sim = PlantSimulator(small_topology)
        sim.apply_command("P101", Position.ON)  # internal transfer only
        start = total_volume_units(sim.snapshot())
        for _ in range(500):
            sim.step(1.0)
        assert total_volume_units(sim.snapshot()) == start

    @pytest.mark.parametrize("seed", range(6))
    def test_random_schedules_match_rational_oracle(self, small_topology, seed):
        rng = random.Random(seed)
        schedule = random_schedule(small_topology, rng, 400, dts=(1.0, 0.5, 2.0))
        sim = drive(small_topology, schedule)
        want = oracle_integrate(small_topology, schedule)
        for tank, frac in want["levels"].items():
            assert as_gallons_fraction(sim.level_units[tank]) == frac
        assert as_gallons_fraction(sim.inlet_units) == want["inlet"]
        assert as_gallons_fraction(sim.drained_units) == want["drained"]
        assert as_gallons_fraction(sim.production_units) == want["produced"]
        assert as_gallons_fraction(sim.underflow_units) == want["underflow"]
        assert as_gallons_fraction(sim.overflow_units) == want["overflow"]

    @pytest.mark.parametrize("seed", range(4))
    def test_reference_plant_ledger_balances_exactly(self, ref_topology, seed):
        rng = random.Random(100 + seed)
        schedule = random_schedule(ref_topology, rng, 300)
        sim = drive(ref_topology, schedule)
        snap = sim.snapshot()
        start = total_volume_units(initial_state(ref_topology))
        discrepancy = total_volume_units(snap) - start - snap.inlet_units
        assert discrepancy == snap.underflow_units - snap.overflow_units

    def test_volume_accounts_for_inlet_integral(self, small_topology):
        sim = PlantSimulator(small_topology)
        sim.apply_command("MV101", Position.OPEN)
        start = total_volume_units(sim.snapshot())
        for _ in range(120):
            sim.step(1.0)
        snap = sim.snapshot()
        assert total_volume_units(snap) - start == snap.inlet_units
        assert snap.inlet_total == pytest.approx(10.0)  # 5 gal/min * 120 s


class TestProperties:
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_levels_stay_within_bounds(self, seed):
        topo = build_topology(small_config())
        rng = random.Random(seed)
        sim = drive(topo, random_schedule(topo, rng, 150, dts=(1.0, 5.0, 30.0)))
        for tank, units in sim.level_units.items():
            assert 0.0 <= units <= topo.tanks[tank].capacity * UNITS_PER_GALLON

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_zero_flow_law(self, seed):
        topo = build_topology(small_config())
        rng = random.Random(seed)
        sim = drive(topo, random_schedule(topo, rng, 40))
        state = sim.snapshot()
        backups = {name: [b.name for b in topo.backups_of(name)] for name in topo.tags}

        def effective(tag):
            fault = state.faults.get(tag)
            if fault is not None and fault.kind is FaultKind.STUCK_OFF:
                return False
            return state.actuator_positions[tag].is_active

        for edge in topo.edges:
            if not effective(edge.governor) and not any(effective(b) for b in backups[edge.governor]):
                assert state.flows[edge.key] == 0.0

    @given(st.floats(min_value=0.0, max_value=100.0, allow_nan=False))
    @settings(max_examples=30, deadline=None)
    def test_stuck_sensor_opaque_to_physical_level(self, level):
        cfg = small_config()
        cfg.tanks[0]["initial_level"] = level
        topo = build_topology(cfg)
        state = inject_fault(initial_state(topo), "LIT101", FaultMode.stuck_value(77.0), topo)
        assert read_sensor(state, topo.tags["LIT101"]).value == 77.0

    def test_determinism_bit_identical(self, ref_topology):
        schedule = random_schedule(ref_topology, random.Random(7), 50)
        a = drive(ref_topology, schedule).snapshot()
        b = drive(ref_topology, schedule).snapshot()
        assert a == b
        assert repr(a.level_units) == repr(b.level_units)


class TestBatchRunner:
    def test_batch_matches_sequential_bitwise(self, ref_topology):
        runs, n_steps = 16, 120
        actuators = sorted(t.name for t in ref_topology.actuators())
        rng = np.random.default_rng(42)
        frames = (rng.random((n_steps, runs, len(actuators))) < 0.5)

        result = simulate_batch(
            ref_topology, lambda i: frames[i], n_steps=n_steps, dt=1.0, runs=runs
        )

        for r in range(runs):
            sim = PlantSimulator(ref_topology)
            for i in range(n_steps):
                for a_idx, name in enumerate(actuators):
                    kind = ref_topology.tags[name].kind
                    sim.apply_command(
                        name,
                        active_position(kind) if frames[i, r, a_idx] else idle_position(kind),
                    )
                sim.step(1.0)
            for t_idx, tank in enumerate(result.tanks):
                assert result.level_units[r, t_idx] == sim.level_units[tank]
            assert result.inlet_units[r] == sim.inlet_units
            assert result.drained_units[r] == sim.drained_units
            assert result.production_units[r] == sim.production_units
            assert result.underflow_units[r] == sim.underflow_units
            assert result.overflow_units[r] == sim.overflow_units

    def test_batch_conservation_ledger_exact(self, ref_topology):
        runs, n_steps = 64, 500
        actuators = sorted(t.name for t in ref_topology.actuators())
        rng = np.random.default_rng(3)
        current = np.zeros((runs, len(actuators)), dtype=bool)

        def schedule(i):
            flips = rng.random(current.shape) < 0.05
            np.logical_xor(current, flips, out=current)
            return current

        result = simulate_batch(ref_topology, schedule, n_steps=n_steps, dt=1.0, runs=runs)
        start = float(
            sum(t.initial_level for t in ref_topology.tanks.values()) * UNITS_PER_GALLON
        )
        discrepancy = result.total_volume_units() - start - result.inlet_units
        ledger = result.underflow_units - result.overflow_units
        assert np.array_equal(discrepancy, ledger)
