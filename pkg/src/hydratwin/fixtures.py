"""Reference deployment fixture: nine days of remote-desktop exposure.

Eleven of the login attempts succeed (the breaches); everything else is
brute-force noise from documentation-range addresses. Totals are the
anchored facts; the per-day distribution and addresses are synthetic,
generated deterministically so every run sees identical data.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import Random

from .telemetry import (
    EventKind,
    FlowRecord,
    HostEvent,
    LoginSession,
    flows_from_events,
    sessions_from_events,
)

DEPLOYMENT_START = 1740355200.0  # 2025-02-24T00:00:00Z
DAY = 86400.0
DEPLOYMENT_DAYS = 9
BREACH_COUNT = 11

# Synthetic shape: failures and breaches per day (sums: 172 and 11).
FAILURES_PER_DAY = (14, 23, 9, 31, 18, 27, 12, 22, 16)
SUCCESSES_PER_DAY = (1, 1, 2, 0, 1, 3, 1, 0, 2)

_USERNAMES = ("administrator", "admin", "support", "operator", "scada", "guest")
_BREACH_USER = "support"


@dataclass(frozen=True)
class DeploymentFixture:
    events: tuple[HostEvent, ...]
    sessions: tuple[LoginSession, ...]
    flows: tuple[FlowRecord, ...]


def _address_pool(rng: Random, n: int = 28) -> list[str]:
    ranges = ("192.0.2", "198.51.100", "203.0.113")
    pool = set()
    while len(pool) < n:
        pool.add(f"{rng.choice(ranges)}.{rng.randint(1, 254)}")
    return sorted(pool)


def reference_deployment() -> DeploymentFixture:
    assert len(FAILURES_PER_DAY) == DEPLOYMENT_DAYS
    assert sum(SUCCESSES_PER_DAY) == BREACH_COUNT
    rng = Random(2021)
    pool = _address_pool(rng)
    events: list[HostEvent] = []
    counter = 0

    for day in range(DEPLOYMENT_DAYS):
        moments: list[tuple[float, str]] = []
        for _ in range(FAILURES_PER_DAY[day]):
            moments.append((rng.uniform(60.0, DAY - 60.0), "FAILURE"))
        for _ in range(SUCCESSES_PER_DAY[day]):
            moments.append((rng.uniform(60.0, DAY - 60.0), "SUCCESS"))
        moments.sort()
        for offset, outcome in moments:
            counter += 1
            detail = {
                "username": _BREACH_USER if outcome == "SUCCESS" else rng.choice(_USERNAMES),
                "source_address": rng.choice(pool),
                "outcome": outcome,
                "service": "rdp",
            }
            if outcome == "SUCCESS":
                detail["duration"] = float(rng.randint(120, 5400))
            events.append(
                HostEvent(
                    event_id=f"dep-{counter:05d}",
                    timestamp=DEPLOYMENT_START + day * DAY + offset,
                    kind=EventKind.LOGIN_ATTEMPT,
                    detail=detail,
                )
            )

    sessions = tuple(sessions_from_events(events))
    flows = tuple(flows_from_events(events))
    return DeploymentFixture(events=tuple(events), sessions=sessions, flows=flows)
