"""Shared fixtures: the reference plant and a small two-tank rig."""

import pytest

from hydratwin.topology import (
    TopologyConfig,
    build_topology,
    reference_topology,
)


@pytest.fixture(scope="session")
def ref_topology():
    return reference_topology()


def small_config(**overrides) -> TopologyConfig:
    """Two tanks in series: RAW -> T101 (via MV101) -> T201 (via P101/P102) -> PRODUCT (via P201... )

    Kept deliberately tiny so tests can hand-integrate it.
    """
    cfg = dict(
        stages=[{"number": 1, "name": "intake"}, {"number": 2, "name": "transfer"}],
        tanks=[
            {"name": "T101", "stage": 1, "capacity": 100, "initial_level": 50},
            {"name": "T201", "stage": 2, "capacity": 100, "initial_level": 50},
        ],
        tags=[
            {"name": "LIT101"},
            {"name": "FIT101"},
            {"name": "MV101"},
            {"name": "P101", "role": "primary"},
            {"name": "P102", "role": "backup", "backs_up": "P101"},
            {"name": "LIT201"},
            {"name": "FIT201"},
            {"name": "P201"},
        ],
        edges=[
            {"from": "RAW", "to": "T101", "governor": "MV101", "max_flow": 5.0, "meter": "FIT101"},
            {"from": "T101", "to": "T201", "governor": "P101", "max_flow": 4.0, "meter": "FIT201"},
            {"from": "T201", "to": "PRODUCT", "governor": "P201", "max_flow": 2.0},
        ],
        strict=False,
    )
    cfg.update(overrides)
    return TopologyConfig(**cfg)


@pytest.fixture
def small_topology():
    return build_topology(small_config())
