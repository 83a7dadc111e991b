"""Leader-side probing patrol: track follower responsiveness, rearrange configurations.

Each heartbeat round the leader ranks its followers by how current their logs
are and hands the shortest-timeout, fastest-term-growth configurations to the
most responsive ones. Everything here is a plain function over small values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

from .config import Configuration, ProtocolError, ProtocolParams, compute_election_timeout

log = logging.getLogger(__name__)


class MissingAssignment(ProtocolError, KeyError):
    pass


# A leader's rearrangements count up from term * stride. Leaders hold distinct
# terms, so two leaders can never issue the same clock even when the newer one
# never heard how far the older one got.
TERM_CLOCK_STRIDE = 1_000_000


def first_clock(term: int, own_clock: int) -> int:
    return max(own_clock, term * TERM_CLOCK_STRIDE)


@dataclass
class FollowerRecord:
    server: int
    last_log_index: int = 0
    last_reply_clock: int = -1
    ever_responded: bool = False
    # priority the follower reported holding (derived from its timer period)
    reported_priority: int = 0


@dataclass
class ResponsivenessTracker:
    records: dict[int, FollowerRecord]
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def for_followers(cls, followers) -> "ResponsivenessTracker":
        return cls({f: FollowerRecord(f) for f in sorted(followers)})

    @property
    def max_clock(self) -> int:
        return max((r.last_reply_clock for r in self.records.values()), default=-1)


@dataclass(frozen=True)
class ReplyStatus:
    """What a follower reports back on every AppendEntries reply."""

    log_index: int
    timer_period: float
    conf_clock: int | None = None


@dataclass(frozen=True)
class ConfigAssignment:
    clock: int
    mapping: Mapping[int, Configuration]


def record_reply(
    tracker: ResponsivenessTracker,
    sender: int,
    status: ReplyStatus,
    answered_clock: int,
    reported_priority: int | None = None,
) -> bool:
    rec = tracker.records.get(sender)
    if rec is None:
        msg = f"reply from unknown server {sender} ignored"
        log.warning(msg)
        tracker.warnings.append(msg)
        return False
    if answered_clock < rec.last_reply_clock:
        return False
    rec.last_reply_clock = answered_clock
    rec.last_log_index = max(rec.last_log_index, status.log_index)
    rec.ever_responded = True
    if reported_priority is not None:
        rec.reported_priority = reported_priority
    return True


def follower_pool(params: ProtocolParams, leader_priority: int | None) -> list[int]:
    """Priorities handed to followers, highest first; the leader keeps its own."""
    pool = range(params.n, 0, -1)
    if leader_priority is None:
        return list(pool)[: params.n - 1]
    return [p for p in pool if p != leader_priority]


def ranking_key(rec: FollowerRecord, previous_priority: int):
    # never-responders sink below everyone who answered
    return (
        not rec.ever_responded,
        -rec.last_log_index,
        -rec.last_reply_clock,
        -previous_priority,
        rec.server,
    )


def rearrange_configurations(
    tracker: ResponsivenessTracker,
    current: ConfigAssignment,
    params: ProtocolParams,
    leader_priority: int | None = None,
) -> ConfigAssignment:
    def previous(rec: FollowerRecord) -> int:
        cfg = current.mapping.get(rec.server)
        return cfg.priority if cfg is not None else rec.reported_priority

    ranked = sorted(tracker.records.values(), key=lambda r: ranking_key(r, previous(r)))
    pool = follower_pool(params, leader_priority)
    clock = current.clock + 1
    mapping = {
        rec.server: Configuration(p, compute_election_timeout(params, p), clock)
        for rec, p in zip(ranked, pool)
    }
    return ConfigAssignment(clock, mapping)


def piggyback(assignment: ConfigAssignment, target: int) -> Configuration:
    try:
        return assignment.mapping[target]
    except KeyError:
        raise MissingAssignment(f"server {target} has no slot in assignment {assignment.clock}") from None
