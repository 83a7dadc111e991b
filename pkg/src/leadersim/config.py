"""Value types shared by the protocol core and the probing patrol."""

from __future__ import annotations

import enum
from dataclasses import dataclass

US_PER_MS = 1000


class Variant(str, enum.Enum):
    RAFT = "raft"
    ZRAFT = "zraft"
    ESCAPE = "escape"


class Role(str, enum.Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


class ProtocolError(Exception):
    pass


class InvalidPriority(ProtocolError, ValueError):
    pass


class IllegalTransition(ProtocolError):
    pass


class InvalidParams(ProtocolError, ValueError):
    pass


def ms_to_us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


@dataclass(frozen=True)
class Configuration:
    """A prioritized configuration: term growth, timer period (ms) and its clock."""

    priority: int
    timer_period: int
    conf_clock: int = 0


@dataclass(frozen=True)
class ProtocolParams:
    variant: Variant
    n: int
    base_time: int = 1500
    k: int = 500
    raft_timeout_range: tuple[int, int] = (1500, 3000)
    heartbeat_interval: int = 500
    entries_per_heartbeat: int = 1
    # degeneracy knobs: with both flipped, Escape collapses to fixed-timeout Raft
    force_priority_one: bool = False
    clock_checks: bool = True
    ppf_enabled: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "raft_timeout_range", tuple(self.raft_timeout_range))
        if self.n < 1:
            raise InvalidParams(f"cluster size must be positive, got {self.n}")
        if self.base_time <= 0 or self.k < 0:
            raise InvalidParams("base_time must be positive and k non-negative")
        if self.heartbeat_interval <= 0:
            raise InvalidParams("heartbeat_interval must be positive")
        lo, hi = self.raft_timeout_range
        if self.variant is Variant.RAFT:
            if lo <= 0 or lo > hi:
                raise InvalidParams(f"bad raft timeout range {self.raft_timeout_range}")
            if self.heartbeat_interval >= lo:
                raise InvalidParams("heartbeat interval must be below the minimum election timeout")
        elif self.heartbeat_interval >= self.base_time:
            raise InvalidParams("heartbeat interval must be below base_time")
        if self.entries_per_heartbeat < 0:
            raise InvalidParams("entries_per_heartbeat must be >= 0")

    @property
    def quorum(self) -> int:
        return self.n // 2 + 1

    @property
    def uses_priorities(self) -> bool:
        """Priorities drive term growth and timeouts (Z-Raft and Escape)."""
        return self.variant is not Variant.RAFT and not self.force_priority_one

    @property
    def uses_clock(self) -> bool:
        return self.variant is Variant.ESCAPE and self.clock_checks and not self.force_priority_one

    @property
    def dynamic_configs(self) -> bool:
        """The leader rearranges configurations every heartbeat round."""
        return self.variant is Variant.ESCAPE and self.ppf_enabled and not self.force_priority_one


def compute_election_timeout(params: ProtocolParams, priority: int) -> int:
    """Election timeout in ms for ``priority``: base_time + k * (n - priority)."""
    if params.variant is Variant.RAFT:
        raise InvalidParams("Raft draws randomized timeouts; use sample_raft_timeout")
    if not 1 <= priority <= params.n:
        raise InvalidPriority(f"priority {priority} outside [1, {params.n}]")
    return params.base_time + params.k * (params.n - priority)


def initial_configuration(params: ProtocolParams, server_id: int) -> Configuration | None:
    """Server i starts with priority i at clock 0."""
    if params.variant is Variant.RAFT:
        return None
    priority = 1 if params.force_priority_one else server_id
    return Configuration(priority, compute_election_timeout(params, priority), 0)
