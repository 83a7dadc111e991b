"""Per-server consensus state machine for Raft, Z-Raft and Escape.

All three variants share Raft's log and vote rules. They differ only in how a
campaign advances the term, how the election timer is armed, and (Escape)
whether configurations travel on heartbeats and gate votes by clock.

Functions mutate the ``ServerState`` they are given and return whatever must
go on the wire. Every state transition is also appended to
``state.journal`` so the simulator can build a complete trace. Time is an
integer number of microseconds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import ppf
from .config import (
    Configuration,
    IllegalTransition,
    InvalidParams,
    InvalidPriority,
    ProtocolParams,
    Role,
    Variant,
    compute_election_timeout,
    initial_configuration,
    ms_to_us,
)
from .ppf import ConfigAssignment, ReplyStatus, ResponsivenessTracker

__all__ = [
    "AppendEntriesArgs",
    "AppendEntriesReply",
    "Configuration",
    "InvalidPriority",
    "IllegalTransition",
    "LogEntry",
    "ProtocolParams",
    "ReplyStatus",
    "RequestVoteArgs",
    "RequestVoteReply",
    "Role",
    "ServerState",
    "Variant",
    "adopt_configuration",
    "advance_term_for_campaign",
    "compute_election_timeout",
    "handle_append_entries",
    "handle_append_reply",
    "handle_request_vote",
    "handle_vote_reply",
    "is_log_up_to_date",
    "leader_heartbeat",
    "merge_term",
    "new_server",
    "sample_raft_timeout",
    "start_election",
]


@dataclass(frozen=True)
class LogEntry:
    term: int
    index: int
    payload: bytes = b""


@dataclass(frozen=True)
class AppendEntriesArgs:
    term: int
    leader_id: int
    prev_log_index: int
    prev_log_term: int
    entries: tuple[LogEntry, ...]
    leader_commit: int
    new_config: Configuration | None = None


@dataclass(frozen=True)
class AppendEntriesReply:
    term: int
    success: bool
    status: ReplyStatus


@dataclass(frozen=True)
class RequestVoteArgs:
    term: int
    candidate_id: int
    last_log_index: int
    last_log_term: int
    # Escape only: the candidate's configuration clock at campaign start
    conf_clock: int | None = None


@dataclass(frozen=True)
class RequestVoteReply:
    term: int
    vote_granted: bool


@dataclass
class ServerState:
    id: int
    role: Role = Role.FOLLOWER
    current_term: int = 0
    voted_for: tuple[int, int] | None = None  # (term, candidate)
    log: list[LogEntry] = field(default_factory=list)
    commit_index: int = 0
    config: Configuration | None = None
    timer_period_us: int = 0
    election_deadline: int | None = None
    votes_received: set[int] = field(default_factory=set)
    crashed: bool = False
    # leader volatile state
    next_index: dict[int, int] = field(default_factory=dict)
    match_index: dict[int, int] = field(default_factory=dict)
    acked: set[int] = field(default_factory=set)
    rounds: int = 0
    tracker: ResponsivenessTracker | None = None
    assignment: ConfigAssignment | None = None
    journal: list[tuple[str, dict]] = field(default_factory=list)

    @property
    def last_log_index(self) -> int:
        return len(self.log)

    @property
    def last_log_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def note(self, kind: str, **data) -> None:
        self.journal.append((kind, data))


def new_server(params: ProtocolParams, server_id: int) -> ServerState:
    if not 1 <= server_id <= params.n:
        raise InvalidParams(f"server id {server_id} outside [1, {params.n}]")
    return ServerState(id=server_id, config=initial_configuration(params, server_id))


# -- timers and terms ------------------------------------------------------


def sample_raft_timeout(params: ProtocolParams, rng: random.Random) -> float:
    """Uniform draw from the Raft timeout range, in ms at microsecond resolution."""
    lo, hi = params.raft_timeout_range
    return rng.randint(ms_to_us(lo), ms_to_us(hi)) / 1000


def reset_election_timer(state: ServerState, params: ProtocolParams, now: int, rng: random.Random) -> None:
    if params.variant is Variant.RAFT:
        period = ms_to_us(sample_raft_timeout(params, rng))
    else:
        period = ms_to_us(state.config.timer_period)
    state.timer_period_us = period
    state.election_deadline = now + period


def campaign_priority(state: ServerState, params: ProtocolParams) -> int:
    if params.variant is Variant.RAFT:
        return 1
    return state.config.priority


def advance_term_for_campaign(state: ServerState, params: ProtocolParams) -> int:
    return state.current_term + campaign_priority(state, params)


def _set_term(state: ServerState, term: int) -> None:
    if term != state.current_term:
        state.current_term = term
        state.note("term", term=term)


def _set_role(state: ServerState, role: Role) -> None:
    if role is not state.role:
        state.role = role
        state.note("role", role=role.value)


def _clear_leader_state(state: ServerState) -> None:
    state.next_index = {}
    state.match_index = {}
    state.acked = set()
    state.tracker = None
    state.assignment = None
    state.rounds = 0


def merge_term(state: ServerState, received_term: int) -> int:
    """Adopt the larger term; a newer term turns any server back into a follower."""
    if received_term > state.current_term:
        _set_term(state, received_term)
        if state.role is Role.LEADER:
            _clear_leader_state(state)
        state.votes_received = set()
        _set_role(state, Role.FOLLOWER)
    return state.current_term


def _ensure_timer(state: ServerState, params: ProtocolParams, now: int, rng: random.Random) -> None:
    # a leader that steps down has no timer running yet
    if state.election_deadline is None and state.role is not Role.LEADER:
        reset_election_timer(state, params, now, rng)


def is_log_up_to_date(candidate_last: tuple[int, int], voter_last: tuple[int, int]) -> bool:
    """Both arguments are ``(index, term)`` of the last log entry."""
    c_index, c_term = candidate_last
    v_index, v_term = voter_last
    if c_term != v_term:
        return c_term > v_term
    return c_index >= v_index


# -- elections -------------------------------------------------------------


def start_election(
    state: ServerState, params: ProtocolParams, now: int, rng: random.Random
) -> RequestVoteArgs:
    if state.role is Role.LEADER:
        raise IllegalTransition(f"server {state.id} is leader and cannot campaign")
    if state.crashed:
        raise IllegalTransition(f"server {state.id} is crashed")
    prev = state.current_term
    term = advance_term_for_campaign(state, params)
    clock = state.config.conf_clock if params.uses_clock else None
    if clock is None:
        state.note("campaign", term=term, prev_term=prev)
    else:
        state.note("campaign", term=term, prev_term=prev, clock=clock)
    _set_term(state, term)
    _set_role(state, Role.CANDIDATE)
    state.voted_for = (term, state.id)
    state.note("vote", term=term, candidate=state.id)
    state.votes_received = {state.id}
    reset_election_timer(state, params, now, rng)
    args = RequestVoteArgs(term, state.id, state.last_log_index, state.last_log_term, clock)
    if len(state.votes_received) >= params.quorum:
        become_leader(state, params, now)
    return args


def handle_request_vote(
    state: ServerState, params: ProtocolParams, args: RequestVoteArgs, now: int, rng: random.Random
) -> RequestVoteReply:
    merge_term(state, args.term)
    granted = False
    if args.term == state.current_term:
        vote = state.voted_for
        free = vote is None or vote[0] != args.term or vote[1] == args.candidate_id
        fresh_log = is_log_up_to_date(
            (args.last_log_index, args.last_log_term), (state.last_log_index, state.last_log_term)
        )
        fresh_clock = True
        if params.uses_clock:
            fresh_clock = args.conf_clock is not None and args.conf_clock >= state.config.conf_clock
        granted = free and fresh_log and fresh_clock
    if granted:
        if state.voted_for != (args.term, args.candidate_id):
            state.voted_for = (args.term, args.candidate_id)
            state.note("vote", term=args.term, candidate=args.candidate_id)
        reset_election_timer(state, params, now, rng)
    else:
        _ensure_timer(state, params, now, rng)
    return RequestVoteReply(state.current_term, granted)


def become_leader(state: ServerState, params: ProtocolParams, now: int) -> None:
    _set_role(state, Role.LEADER)
    state.note("leader", term=state.current_term)
    state.votes_received = set()
    state.election_deadline = None
    peers = [p for p in range(1, params.n + 1) if p != state.id]
    state.next_index = {p: state.last_log_index + 1 for p in peers}
    state.match_index = {p: 0 for p in peers}
    state.acked = set()
    state.rounds = 0
    if params.dynamic_configs:
        state.tracker = ResponsivenessTracker.for_followers(peers)
        # nothing is known about followers yet; replies fill the view in
        state.assignment = ConfigAssignment(ppf.first_clock(state.current_term, state.config.conf_clock), {})


def handle_vote_reply(
    state: ServerState,
    params: ProtocolParams,
    sender: int,
    reply: RequestVoteReply,
    now: int,
    rng: random.Random,
) -> bool:
    """Returns True when this reply completes a quorum."""
    merge_term(state, reply.term)
    _ensure_timer(state, params, now, rng)
    if state.role is not Role.CANDIDATE or reply.term != state.current_term or not reply.vote_granted:
        return False
    state.votes_received.add(sender)
    if len(state.votes_received) >= params.quorum:
        become_leader(state, params, now)
        return True
    return False


# -- replication -----------------------------------------------------------


def _append(state: ServerState, entry: LogEntry) -> None:
    state.log.append(entry)
    state.note("append", index=entry.index, term=entry.term)


def _set_commit(state: ServerState, index: int) -> None:
    if index > state.commit_index:
        state.commit_index = index
        state.note("commit", index=index)


def adopt_configuration(
    state: ServerState, params: ProtocolParams, new_config: Configuration | None, now: int
) -> bool:
    if new_config is None or state.config is None:
        return False
    if new_config.conf_clock <= state.config.conf_clock:
        return False
    state.config = new_config
    state.note(
        "config",
        priority=new_config.priority,
        period=new_config.timer_period,
        clock=new_config.conf_clock,
    )
    period = ms_to_us(new_config.timer_period)
    state.timer_period_us = period
    state.election_deadline = now + period
    return True


def _status(state: ServerState, params: ProtocolParams, log_index: int) -> ReplyStatus:
    clock = state.config.conf_clock if params.dynamic_configs else None
    return ReplyStatus(log_index, state.timer_period_us / 1000, clock)


def handle_append_entries(
    state: ServerState, params: ProtocolParams, args: AppendEntriesArgs, now: int, rng: random.Random
) -> AppendEntriesReply:
    merge_term(state, args.term)
    if args.term < state.current_term:
        _ensure_timer(state, params, now, rng)
        return AppendEntriesReply(state.current_term, False, _status(state, params, state.last_log_index))

    if state.role is Role.CANDIDATE:
        state.votes_received = set()
        _set_role(state, Role.FOLLOWER)
    if params.dynamic_configs and adopt_configuration(state, params, args.new_config, now):
        pass  # adoption already re-armed the timer from this arrival
    else:
        reset_election_timer(state, params, now, rng)

    prev = args.prev_log_index
    if prev > state.last_log_index or (prev > 0 and state.log[prev - 1].term != args.prev_log_term):
        hint = min(state.last_log_index, prev - 1)
        return AppendEntriesReply(state.current_term, False, _status(state, params, hint))

    for entry in args.entries:
        pos = entry.index - 1
        if pos < len(state.log):
            if state.log[pos].term == entry.term:
                continue
            del state.log[pos:]
            state.note("truncate", index=entry.index)
        _append(state, entry)
    last_new = prev + len(args.entries)
    _set_commit(state, min(args.leader_commit, last_new))
    return AppendEntriesReply(state.current_term, True, _status(state, params, last_new))


def leader_heartbeat(state: ServerState, params: ProtocolParams, now: int) -> dict[int, AppendEntriesArgs]:
    """One heartbeat round: fresh entries, (Escape) a rearranged assignment, one message per peer."""
    if state.role is not Role.LEADER or state.crashed:
        raise IllegalTransition(f"server {state.id} cannot send heartbeats as {state.role.value}")
    state.rounds += 1
    for _ in range(params.entries_per_heartbeat):
        _append(state, LogEntry(state.current_term, state.last_log_index + 1))

    assignment = None
    if params.dynamic_configs and state.rounds > 1:
        assignment = ppf.rearrange_configurations(
            state.tracker, state.assignment, params, leader_priority=state.config.priority
        )
        state.assignment = assignment
        state.note(
            "assign",
            clock=assignment.clock,
            mapping={str(s): c.priority for s, c in sorted(assignment.mapping.items())},
        )
        own = state.config
        state.config = Configuration(own.priority, own.timer_period, assignment.clock)
        state.note("config", priority=own.priority, period=own.timer_period, clock=assignment.clock)

    out = {}
    for peer in sorted(state.next_index):
        nxt = state.next_index[peer]
        prev = nxt - 1
        prev_term = state.log[prev - 1].term if prev > 0 else 0
        new_config = ppf.piggyback(assignment, peer) if assignment is not None else None
        out[peer] = AppendEntriesArgs(
            state.current_term,
            state.id,
            prev,
            prev_term,
            tuple(state.log[prev:]),
            state.commit_index,
            new_config,
        )
        # pipelined: assume delivery, back off when a reply says otherwise
        state.next_index[peer] = state.last_log_index + 1
    _advance_commit(state, params)
    return out


def _advance_commit(state: ServerState, params: ProtocolParams) -> None:
    matched = sorted(list(state.match_index.values()) + [state.last_log_index], reverse=True)
    candidate = matched[params.quorum - 1]
    if candidate > state.commit_index and state.log[candidate - 1].term == state.current_term:
        _set_commit(state, candidate)


def handle_append_reply(
    state: ServerState,
    params: ProtocolParams,
    sender: int,
    reply: AppendEntriesReply,
    now: int,
    rng: random.Random,
) -> None:
    merge_term(state, reply.term)
    _ensure_timer(state, params, now, rng)
    if state.role is not Role.LEADER or reply.term != state.current_term:
        return
    status = reply.status
    if reply.success:
        state.match_index[sender] = max(state.match_index[sender], status.log_index)
        state.acked.add(sender)
        _advance_commit(state, params)
    else:
        state.next_index[sender] = min(state.next_index[sender], status.log_index + 1)
    if state.tracker is not None:
        clock = status.conf_clock if status.conf_clock is not None else -1
        reported = None
        if params.k > 0:
            reported = params.n - round((status.timer_period - params.base_time) / params.k)
        ppf.record_reply(state.tracker, sender, status, clock, reported)
        for msg in state.tracker.warnings:
            state.note("warn", msg=msg)
        state.tracker.warnings.clear()
