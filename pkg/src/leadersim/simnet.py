"""Seeded discrete-event network with latency, broadcast loss, crashes and timer pins.

Simulated time is an integer count of microseconds. Events are totally ordered
by ``(time, seq)``; ``seq`` is a global insertion counter, so two runs with the
same inputs and seed process exactly the same events in the same order.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from . import protocol as core
from .config import ProtocolParams, Role, Variant, ms_to_us
from .protocol import (
    AppendEntriesArgs,
    AppendEntriesReply,
    RequestVoteArgs,
    RequestVoteReply,
    ServerState,
)

DELIVER, TIMER, HEARTBEAT, CRASH, RECOVER, EPOCH = range(6)
EVENT_NAMES = ("deliver", "timer", "heartbeat", "crash", "recover", "epoch")

MSG_TYPES = {
    AppendEntriesArgs: "AE",
    AppendEntriesReply: "AER",
    RequestVoteArgs: "RV",
    RequestVoteReply: "RVR",
}

LEADER = "leader"


class SimulationComplete(Exception):
    """The event queue ran dry."""


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    min: int = 100
    max: int = 200

    def __post_init__(self) -> None:
        if self.min < 0 or self.min > self.max:
            raise ScheduleError(f"latency bounds must satisfy 0 <= min <= max, got [{self.min}, {self.max}]")

    def sample_us(self, rng: random.Random) -> int:
        return rng.randint(ms_to_us(self.min), ms_to_us(self.max))


@dataclass
class FaultSchedule:
    """Faults applied after stabilization; times are ms after the fault epoch.

    A crash target may be a server id or ``"leader"`` (whoever leads at the
    epoch). ``adversary_crashes`` crashes that many successive candidates the
    instant they start campaigning.
    """

    crashes: list[tuple[int | str, int]] = field(default_factory=list)
    recoveries: list[tuple[int | str, int]] = field(default_factory=list)
    loss_rate: float = 0.0
    pinned_timeouts: list[tuple[int, int]] = field(default_factory=list)
    adversary_crashes: int = 0
    lossy_replies: bool = False
    allow_quorum_loss: bool = False

    def validate(self, n: int) -> None:
        if not 0.0 <= self.loss_rate < 1.0:
            raise ScheduleError(f"loss rate must lie in [0, 1), got {self.loss_rate}")
        if self.loss_rate >= 0.5 and not self.allow_quorum_loss:
            raise ScheduleError("loss rate >= 0.5 breaks quorums; set allow_quorum_loss to insist")
        for target, at in list(self.crashes) + list(self.recoveries) + list(self.pinned_timeouts):
            if target != LEADER and not (isinstance(target, int) and 1 <= target <= n):
                raise ScheduleError(f"unknown server {target!r}")
            if at < 0:
                raise ScheduleError(f"fault time must be non-negative, got {at}")
        crash_times: dict = {}
        for target, at in self.crashes:
            crash_times.setdefault(target, []).append(at)
        for target, at in self.recoveries:
            if not any(c < at for c in crash_times.get(target, [])):
                raise ScheduleError(f"recovery of {target!r} at {at} ms follows no crash")


def omitted_count(loss_rate: float, recipients: int) -> int:
    """Receivers a broadcast skips: round-half-up of loss_rate * recipients."""
    return int(math.floor(loss_rate * recipients + 0.5))


def broadcast_targets(
    recipients: list[int], loss_rate: float, rng: random.Random
) -> tuple[list[int], list[int]]:
    """Split recipients into (delivered, omitted), omitting a uniform random subset."""
    m = omitted_count(loss_rate, len(recipients))
    omitted = sorted(rng.sample(recipients, m)) if m else []
    skip = set(omitted)
    return [r for r in recipients if r not in skip], omitted


# -- trace -----------------------------------------------------------------


class Trace:
    """Append-only record of everything that happened in one run."""

    def __init__(self, records: list | None = None) -> None:
        self.records: list[tuple[int, int, str, dict]] = records if records is not None else []

    def add(self, t: int, server: int, kind: str, data: dict) -> None:
        self.records.append((t, server, kind, data))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def of_kind(self, *kinds: str) -> Iterator[tuple[int, int, str, dict]]:
        wanted = set(kinds)
        return (r for r in self.records if r[2] in wanted)

    def lines(self) -> Iterator[str]:
        for t, server, kind, data in self.records:
            yield json.dumps({"t": t, "server": server, "kind": kind, **data}, separators=(",", ":"))

    def dump(self, fp) -> None:
        for line in self.lines():
            fp.write(line)
            fp.write("\n")

    @classmethod
    def load(cls, fp) -> "Trace":
        records = []
        for line in fp:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            t, server, kind = obj.pop("t"), obj.pop("server"), obj.pop("kind")
            records.append((t, server, kind, obj))
        return cls(records)


def _msg_fields(msg) -> dict:
    if isinstance(msg, AppendEntriesArgs):
        d = {"term": msg.term, "prev": msg.prev_log_index, "n": len(msg.entries)}
        if msg.new_config is not None:
            d["cfg"] = [msg.new_config.priority, msg.new_config.conf_clock]
        return d
    if isinstance(msg, AppendEntriesReply):
        return {"term": msg.term, "ok": msg.success, "idx": msg.status.log_index}
    if isinstance(msg, RequestVoteArgs):
        return {"term": msg.term}
    return {"term": msg.term, "granted": msg.vote_granted}


# -- world -----------------------------------------------------------------


@dataclass
class _Pin:
    deadline: int
    repeats: int
    realign_us: int
    # voters this candidate's pinned vote requests reach at minimum latency;
    # everyone else hears it at maximum latency
    fast: frozenset | None = None


@dataclass
class RunOutcome:
    reason: str  # "stop", "horizon" or "drained"
    time: int
    trace: Trace


class World:
    """One simulated cluster plus its network, fault schedule and trace.

    The leader is bootstrapped by firing server 1's timer at t=0. Once the
    first leader has sent ``warmup_rounds`` heartbeat rounds, the fault epoch
    falls one maximum latency later (every heartbeat of that round has landed)
    and the fault schedule is applied relative to it.
    """

    def __init__(
        self,
        params: ProtocolParams,
        seed: int,
        latency: LatencyModel | None = None,
        faults: FaultSchedule | None = None,
        warmup_rounds: int = 3,
        forced_phases: int = 0,
        bootstrap: int | None = 1,
    ) -> None:
        self.params = params
        self.latency = latency or LatencyModel()
        self.faults = faults or FaultSchedule()
        self.faults.validate(params.n)
        if warmup_rounds < 1:
            raise ScheduleError("warmup needs at least one heartbeat round")
        self.warmup_rounds = warmup_rounds
        self.forced_phases = forced_phases
        self.seed = seed
        self.net_rng = random.Random(f"{seed}:net")
        self.timer_rng = random.Random(f"{seed}:timer")
        self.now = 0
        self._seq = 0
        self._queue: list = []
        self.trace = Trace()
        self.ids = list(range(1, params.n + 1))
        self.servers: dict[int, ServerState] = {i: core.new_server(params, i) for i in self.ids}
        self.epoch: int | None = None
        self._epoch_scheduled = False
        self.leader_crash_time: int | None = None
        self.crash_count = 0
        self.adversary_left = 0
        self.pins: dict[int, _Pin] = {}
        self.leaders: list[tuple[int, int, int]] = []  # (time, server, term)
        self.events_processed = 0
        self.synced: set[int] = set()
        self.crashed_leader: int | None = None

        for i in self.ids:
            s = self.servers[i]
            self.trace.add(0, i, "init", {"role": s.role.value, "term": s.current_term})
            if params.uses_priorities:
                c = s.config
                self.trace.add(0, i, "config", {"priority": c.priority, "period": c.timer_period, "clock": c.conf_clock})
            if i == bootstrap:
                s.election_deadline = 0
            else:
                core.reset_election_timer(s, params, 0, self.timer_rng)
            self._push(s.election_deadline, TIMER, (i, s.election_deadline))

    # -- queue ---------------------------------------------------------------

    def _push(self, t: int, kind: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, kind, payload))

    @property
    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    # -- messaging -----------------------------------------------------------

    def _send(self, src: int, dst: int, msg, delay: int | None = None, tag: int = 0) -> None:
        if delay is None:
            delay = self.latency.sample_us(self.net_rng)
        self._push(self.now + delay, DELIVER, (src, dst, msg, self.now, tag))

    def _reply(self, src: int, dst: int, msg, re_term: int) -> None:
        fields = {"re": re_term, **_msg_fields(msg)}
        if self.faults.lossy_replies and self.loss_rate > 0:
            if self.net_rng.random() < self.loss_rate:
                self.trace.add(self.now, src, "lost", {"dst": dst, "msg": MSG_TYPES[type(msg)], **fields})
                return
        self.trace.add(self.now, src, "send", {"dst": dst, "msg": MSG_TYPES[type(msg)], **fields})
        self._send(src, dst, msg)

    def _broadcast(self, src: int, msgs: dict, fast: frozenset | None = None, tag: int = 0) -> None:
        recipients = sorted(msgs)
        delivered, omitted = broadcast_targets(recipients, self.loss_rate, self.net_rng)
        first = msgs[recipients[0]]
        self.trace.add(
            self.now,
            src,
            "bcast",
            {"msg": MSG_TYPES[type(first)], "term": first.term, "sent": len(delivered), "omitted": omitted},
        )
        lo, hi = ms_to_us(self.latency.min), ms_to_us(self.latency.max)
        for dst in delivered:
            delay = None if fast is None else (lo if dst in fast else hi)
            self._send(src, dst, msgs[dst], delay, tag)

    @property
    def loss_rate(self) -> float:
        """Loss is a fault like any other: the network is clean until the epoch."""
        return self.faults.loss_rate if self.epoch is not None else 0.0

    # -- bookkeeping around handlers ---------------------------------------------

    def _drain(self, s: ServerState) -> None:
        if s.journal:
            for kind, data in s.journal:
                self.trace.add(self.now, s.id, kind, data)
                if kind == "leader":
                    self.leaders.append((self.now, s.id, data["term"]))
                    if self.epoch is None:
                        self.synced = set()
                    self._push(self.now, HEARTBEAT, (s.id, data["term"]))
                    self.pins.pop(s.id, None)
            s.journal.clear()

    def _after(self, s: ServerState, old_deadline) -> None:
        self._drain(s)
        pin = self.pins.get(s.id)
        if pin is not None and s.role is not Role.LEADER and s.election_deadline != pin.deadline:
            s.election_deadline = pin.deadline
        if s.election_deadline is not None and s.election_deadline != old_deadline:
            self._push(s.election_deadline, TIMER, (s.id, s.election_deadline))

    # -- event handlers ------------------------------------------------------------

    def _on_deliver(self, payload) -> None:
        src, dst, msg, sent, tag = payload
        s = self.servers[dst]
        mtype = MSG_TYPES[type(msg)]
        if s.crashed:
            self.trace.add(self.now, dst, "drop", {"src": src, "msg": mtype, "why": "crashed", "sent": sent})
            return
        self.trace.add(self.now, dst, "recv", {"src": src, "msg": mtype, "sent": sent, **_msg_fields(msg)})
        old = s.election_deadline
        params, now, rng = self.params, self.now, self.timer_rng
        if mtype == "AE":
            reply = core.handle_append_entries(s, params, msg, now, rng)
            if tag >= 2 and reply.term == msg.term:
                self.synced.add(dst)
            self._after(s, old)
            self._reply(dst, src, reply, msg.term)
        elif mtype == "RV":
            reply = core.handle_request_vote(s, params, msg, now, rng)
            self._after(s, old)
            self._reply(dst, src, reply, msg.term)
        elif mtype == "RVR":
            core.handle_vote_reply(s, params, src, msg, now, rng)
            self._after(s, old)
        else:
            core.handle_append_reply(s, params, src, msg, now, rng)
            self._after(s, old)

    def _on_timer(self, payload) -> None:
        sid, deadline = payload
        s = self.servers[sid]
        if s.crashed or s.role is Role.LEADER or s.election_deadline != deadline:
            return  # stale timer
        old = s.election_deadline
        args = core.start_election(s, self.params, self.now, self.timer_rng)
        pin = self.pins.get(sid)
        fast = pin.fast if pin is not None else None
        if pin is not None:
            if pin.repeats > 0:
                pin.deadline = self.now + pin.realign_us
                pin.repeats -= 1
                self.trace.add(self.now, sid, "pin", {"deadline": pin.deadline})
            else:
                del self.pins[sid]
        self._after(s, old)
        if self.params.n > 1:
            self._broadcast(sid, {p: args for p in self.ids if p != sid}, fast)
        if self.epoch is not None and self.adversary_left > 0 and s.role is Role.CANDIDATE:
            self.adversary_left -= 1
            self._push(self.now, CRASH, sid)

    def _on_heartbeat(self, payload) -> None:
        sid, term = payload
        s = self.servers[sid]
        if s.crashed or s.role is not Role.LEADER or s.current_term != term:
            return
        msgs = core.leader_heartbeat(s, self.params, self.now)
        self._drain(s)
        if msgs:
            self._broadcast(sid, msgs, tag=s.rounds)
        self._push(self.now + ms_to_us(self.params.heartbeat_interval), HEARTBEAT, (sid, term))
        if not self._epoch_scheduled and s.rounds >= self.warmup_rounds and self._all_synced(sid):
            # faults start once this round has landed everywhere it is going
            self._epoch_scheduled = True
            self._push(self.now + ms_to_us(self.latency.max), EPOCH, None)

    def _all_synced(self, leader: int) -> bool:
        """Every live follower accepted a heartbeat from round 2 on (the first carrying configurations)."""
        return all(i in self.synced for i in self.ids if i != leader and not self.servers[i].crashed)

    def _on_crash(self, sid) -> None:
        if sid == LEADER:
            sid = self.current_leader()
            if sid is None:
                # nobody to crash; re-election is still measured from here
                self.trace.add(self.now, 0, "leaderless", {})
                if self.leader_crash_time is None:
                    self.leader_crash_time = self.now
                return
        s = self.servers[sid]
        if s.crashed:
            return
        was_leader = s.role is Role.LEADER
        if was_leader:
            self.crashed_leader = sid
        s.crashed = True
        self.crash_count += 1
        self.trace.add(self.now, sid, "crash", {"leader": was_leader})
        # volatile state is lost; term, vote, log and configuration survive
        s.role = Role.FOLLOWER
        s.votes_received = set()
        core._clear_leader_state(s)
        s.commit_index = 0
        s.election_deadline = None
        s.journal.clear()
        if was_leader and self.leader_crash_time is None and self.epoch is not None:
            self.leader_crash_time = self.now
            if self.forced_phases:
                self._force_phases()

    def _on_recover(self, sid) -> None:
        if sid == LEADER:
            sid = self.crashed_leader
            if sid is None:
                return
        s = self.servers[sid]
        if not s.crashed:
            return
        s.crashed = False
        self.trace.add(self.now, sid, "recover", {"term": s.current_term})
        core.reset_election_timer(s, self.params, self.now, self.timer_rng)
        pin = self.pins.get(sid)
        if pin is not None and pin.deadline >= self.now:
            s.election_deadline = pin.deadline
        self._push(s.election_deadline, TIMER, (sid, s.election_deadline))

    def _on_epoch(self) -> None:
        self.epoch = self.now
        leader = self.current_leader()
        self.trace.add(self.now, leader or 0, "epoch", {})
        self.adversary_left = self.faults.adversary_crashes
        for target, at in self.faults.crashes:
            # "leader" is resolved when the crash fires, not now
            self._push(self.now + ms_to_us(at), CRASH, target)
        for target, at in self.faults.recoveries:
            self._push(self.now + ms_to_us(at), RECOVER, target)
        for sid, at in self.faults.pinned_timeouts:
            self.pin(sid, self.now + ms_to_us(at))

    # -- pins ----------------------------------------------------------------------

    def pin(
        self, sid: int, deadline: int, repeats: int = 0, realign_us: int = 0, fast: frozenset | None = None
    ) -> None:
        """Force ``sid``'s election deadline, overriding resets until it fires."""
        s = self.servers[sid]
        self.pins[sid] = _Pin(deadline, repeats, realign_us, fast)
        self.trace.add(self.now, sid, "pin", {"deadline": deadline})
        if not s.crashed and s.role is not Role.LEADER and s.election_deadline != deadline:
            s.election_deadline = deadline
            self._push(deadline, TIMER, (sid, deadline))

    def _force_phases(self) -> None:
        """Align the earliest phases+1 live followers so they campaign together.

        Every other server is dealt round-robin to one of the aligned
        candidates, whose vote request reaches it at minimum latency while the
        rivals' requests take the maximum. Votes therefore split evenly and no
        aligned candidate can reach a quorum on vote-count alone.
        """
        live = [s for s in self.servers.values() if not s.crashed and s.role is not Role.LEADER]
        live.sort(key=lambda s: (s.election_deadline, s.id))
        # earlier crashes may leave too few followers; force what they allow
        phases = min(self.forced_phases, len(live) - 1)
        if phases <= 0:
            return
        group = [s.id for s in live[: phases + 1]]
        at = self.servers[group[0]].election_deadline
        voters = [i for i in self.ids if i not in group and not self.servers[i].crashed]
        fast = {c: set() for c in group}
        for j, v in enumerate(voters):
            fast[group[j % len(group)]].add(v)
        repeats, realign = 0, 0
        if self.params.variant is Variant.RAFT:
            repeats = phases - 1
            realign = ms_to_us(self.params.raft_timeout_range[0])
        for c in group:
            self.pin(c, at, repeats, realign, frozenset(fast[c]))

    # -- driving -------------------------------------------------------------------

    def current_leader(self) -> int | None:
        best = None
        for s in self.servers.values():
            if s.role is Role.LEADER and not s.crashed:
                if best is None or s.current_term > best.current_term:
                    best = s
        return best.id if best is not None else None

    def max_term(self) -> int:
        return max(s.current_term for s in self.servers.values())

    def step(self):
        if not self._queue:
            raise SimulationComplete()
        t, _seq, kind, payload = heapq.heappop(self._queue)
        self.now = t
        self.events_processed += 1
        if kind == DELIVER:
            self._on_deliver(payload)
        elif kind == TIMER:
            self._on_timer(payload)
        elif kind == HEARTBEAT:
            self._on_heartbeat(payload)
        elif kind == CRASH:
            self._on_crash(payload)
        elif kind == RECOVER:
            self._on_recover(payload)
        else:
            self._on_epoch()
        return (t, kind, payload)

    def run_until(self, stop: Callable[["World"], bool], horizon_ms: float) -> RunOutcome:
        if horizon_ms <= 0:
            raise ScheduleError("horizon must be positive")
        limit = ms_to_us(horizon_ms)
        while True:
            if stop(self):
                return RunOutcome("stop", self.now, self.trace)
            if not self._queue:
                return RunOutcome("drained", self.now, self.trace)
            if self._queue[0][0] > limit:
                self.now = limit
                return RunOutcome("horizon", self.now, self.trace)
            self.step()


def run_until(world: World, stop: Callable[[World], bool], horizon_ms: float) -> RunOutcome:
    return world.run_until(stop, horizon_ms)


def step(world: World):
    return world.step()


def deliver_broadcast(world: World, sender: int, message, recipients: Iterable[int]) -> list[int]:
    """Fan ``message`` out from ``sender``; returns the recipients that were omitted."""
    recipients = sorted(recipients)
    if sender in recipients:
        raise ScheduleError("a broadcast never targets its sender")
    before = len(world.trace)
    world._broadcast(sender, {r: message for r in recipients})
    return world.trace.records[before][3]["omitted"]
