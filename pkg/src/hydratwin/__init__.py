"""Water-treatment cyber-twin honeypot: physics-backed plant simulation,
PLC scan control, an access-gated twin gateway, a telemetry/backup
pipeline, and ransomware forensics over replayable attack traces."""

from .analyzer import detect_ransomware, extract_iocs, reconstruct_chain, tag_stages
from .control import ControlConfig, failover, interlock_check, scan
from .gateway import AccessRule, GatewayCore, PeerIdentity, authorize
from .loop import PlantLoop
from .plant import (
    FaultMode,
    PlantSimulator,
    PlantState,
    inject_fault,
    read_sensor,
    step,
    total_volume,
)
from .replayer import AttackScript, load_script, replay
from .telemetry import (
    EventFilter,
    EventStore,
    HostEvent,
    connection_stats,
    detect_breach,
    replicate_backup,
)
from .topology import PlantTopology, Tag, TopologyError, build_topology, reference_topology

__version__ = "0.1.0"

__all__ = [
    "AccessRule",
    "AttackScript",
    "ControlConfig",
    "EventFilter",
    "EventStore",
    "FaultMode",
    "GatewayCore",
    "HostEvent",
    "PeerIdentity",
    "PlantLoop",
    "PlantSimulator",
    "PlantState",
    "PlantTopology",
    "Tag",
    "TopologyError",
    "authorize",
    "build_topology",
    "connection_stats",
    "detect_breach",
    "detect_ransomware",
    "extract_iocs",
    "failover",
    "inject_fault",
    "interlock_check",
    "load_script",
    "read_sensor",
    "reconstruct_chain",
    "reference_topology",
    "replay",
    "replicate_backup",
    "scan",
    "step",
    "tag_stages",
    "total_volume",
]
