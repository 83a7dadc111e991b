"""Replay a trace and verify the safety, liveness and accounting invariants.

The checker never looks at live server objects; it rebuilds whatever state it
needs from trace records alone, so a trace written to disk can be re-checked
later with exactly the same verdicts.
"""

from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass, field

from .config import ProtocolParams, Variant, ms_to_us
from .simnet import LEADER, omitted_count

INVARIANTS = (
    "election_safety",
    "term_monotonic",
    "single_vote",
    "term_jump",
    "timeout_formula",
    "log_matching",
    "commit_durability",
    "config_uniqueness",
    "config_pair_uniqueness",
    "assignment_bijection",
    "assignment_clock_growth",
    "one_campaign",
    "liveness",
    "best_case_messages",
    "campaign_messages",
    "latency_bounds",
    "loss_exactness",
    "crash_opacity",
)


@dataclass(frozen=True)
class Violation:
    invariant: str
    index: int
    time: int
    server: int
    detail: str

    def __str__(self) -> str:
        return f"{self.invariant} at record {self.index} (t={self.time}us, server {self.server}): {self.detail}"


@dataclass
class CheckReport:
    violations: list[Violation] = field(default_factory=list)
    checked: set[str] = field(default_factory=set)

    @property
    def ok(self) -> bool:
        return not self.violations

    def first(self, invariant: str | None = None) -> Violation | None:
        for v in self.violations:
            if invariant is None or v.invariant == invariant:
                return v
        return None

    def failing(self) -> list[str]:
        seen = []
        for v in self.violations:
            if v.invariant not in seen:
                seen.append(v.invariant)
        return seen


def _chain(prev: bytes, term: int) -> bytes:
    return hashlib.blake2b(prev + term.to_bytes(8, "big"), digest_size=12).digest()


class _Checker:
    def __init__(self, scenario) -> None:
        self.params: ProtocolParams = scenario.params
        self.latency = scenario.latency
        self.faults = scenario.faults
        self.forced_phases = scenario.forced_phases
        n = self.params.n
        self.report = CheckReport()
        self.first_only: set[str] = set()
        self.term = defaultdict(int)
        self.crashed: set[int] = set()
        self.prio: dict[int, int] = {}
        self.clock: dict[int, int] = {}
        self.logs: dict[int, list[bytes]] = {i: [] for i in range(1, n + 1)}
        self.registry: dict[tuple[int, int], bytes] = {}
        self.committed_term: dict[int, int] = {}
        self.max_commit = defaultdict(int)
        self.leader_of_term: dict[int, int] = {}
        self.votes: dict[tuple[int, int], int] = {}
        self.last_assign: dict[tuple[int, int], int] = {}

    def fail(self, name: str, i: int, rec, detail: str) -> None:
        # one report per invariant keeps huge traces readable
        if name in self.first_only:
            return
        self.first_only.add(name)
        t, server, _kind, _data = rec
        self.report.violations.append(Violation(name, i, t, server, detail))

    # -- configuration bookkeeping -------------------------------------------------

    def _check_configs(self, i: int, rec) -> None:
        pairs: dict[tuple[int, int], int] = {}
        for s in sorted(self.prio):
            key = (self.prio[s], self.clock[s])
            if key in pairs:
                self.fail(
                    "config_pair_uniqueness", i, rec,
                    f"servers {pairs[key]} and {s} both hold priority {key[0]} at clock {key[1]}",
                )
                break
            pairs[key] = s
        live = [s for s in self.prio if s not in self.crashed]
        if not live:
            return
        top = max(self.clock[s] for s in live)
        seen: dict[int, int] = {}
        for s in sorted(live):
            if self.clock[s] != top:
                continue
            p = self.prio[s]
            if p in seen:
                self.fail(
                    "config_uniqueness", i, rec,
                    f"nonfaulty servers {seen[p]} and {s} share priority {p} at max clock {top}",
                )
                return
            seen[p] = s

    # -- main pass -----------------------------------------------------------------

    def run(self, records) -> CheckReport:
        p = self.params
        self.report.checked.update(INVARIANTS)
        lat_lo, lat_hi = ms_to_us(self.latency.min), ms_to_us(self.latency.max)
        expect_omit = omitted_count(self.faults.loss_rate, p.n - 1)
        rv_sent: dict[tuple[int, int], int] = {}
        rvr_sent = defaultdict(int)
        lossy = False

        for i, rec in enumerate(records):
            t, s, kind, d = rec
            if s in self.crashed and kind not in ("drop", "recover"):
                self.fail("crash_opacity", i, rec, f"crashed server {s} produced a {kind!r} record")

            if kind == "term":
                if d["term"] <= self.term[s]:
                    self.fail("term_monotonic", i, rec, f"term went {self.term[s]} -> {d['term']}")
                self.term[s] = d["term"]
            elif kind == "init":
                self.term[s] = d["term"]
            elif kind == "campaign":
                expected = self.prio.get(s, 1) if p.uses_priorities else 1
                jump = d["term"] - d["prev_term"]
                if jump != expected:
                    self.fail("term_jump", i, rec, f"campaign jumped {jump} terms with priority {expected}")
            elif kind == "vote":
                key = (s, d["term"])
                prev = self.votes.get(key)
                if prev is not None and prev != d["candidate"]:
                    self.fail("single_vote", i, rec, f"voted for {prev} and {d['candidate']} in term {d['term']}")
                self.votes[key] = d["candidate"]
            elif kind == "leader":
                holder = self.leader_of_term.get(d["term"])
                if holder is not None and holder != s:
                    self.fail("election_safety", i, rec, f"servers {holder} and {s} both lead term {d['term']}")
                self.leader_of_term[d["term"]] = s
            elif kind == "config":
                if d["period"] != p.base_time + p.k * (p.n - d["priority"]):
                    self.fail("timeout_formula", i, rec, f"priority {d['priority']} got period {d['period']}")
                self.prio[s], self.clock[s] = d["priority"], d["clock"]
                self._check_configs(i, rec)
            elif kind == "assign":
                got = sorted(d["mapping"].values())
                pool = sorted(q for q in range(1, p.n + 1) if q != self.prio.get(s))
                if got != pool or len(d["mapping"]) != p.n - 1:
                    self.fail("assignment_bijection", i, rec, f"assigned {got}, pool {pool}")
                key = (s, self.term[s])
                if key in self.last_assign and d["clock"] != self.last_assign[key] + 1:
                    self.fail(
                        "assignment_clock_growth", i, rec,
                        f"clock {self.last_assign[key]} followed by {d['clock']}",
                    )
                self.last_assign[key] = d["clock"]
            elif kind == "append":
                log = self.logs[s]
                idx = d["index"]
                if idx != len(log) + 1:
                    self.fail("log_matching", i, rec, f"append at {idx} onto log of length {len(log)}")
                    continue
                h = _chain(log[-1] if log else b"", d["term"])
                known = self.registry.setdefault((idx, d["term"]), h)
                if known != h:
                    self.fail("log_matching", i, rec, f"entry ({idx}, term {d['term']}) has a different prefix")
                log.append(h)
            elif kind == "truncate":
                if d["index"] <= self.max_commit[s]:
                    self.fail("commit_durability", i, rec, f"truncated committed index {d['index']}")
                del self.logs[s][d["index"] - 1 :]
            elif kind == "commit":
                idx = d["index"]
                self.max_commit[s] = max(self.max_commit[s], idx)
                log = self.logs[s]
                if idx > len(log):
                    self.fail("commit_durability", i, rec, f"committed {idx} beyond log length {len(log)}")
                    continue
                h = log[idx - 1]
                known = self.committed_term.setdefault(idx, h)
                if known != h:
                    self.fail("log_matching", i, rec, f"conflicting entries committed at index {idx}")
            elif kind == "crash":
                self.crashed.add(s)
                self._check_configs(i, rec)
            elif kind == "recover":
                self.crashed.discard(s)
                self._check_configs(i, rec)
            elif kind == "epoch":
                lossy = True
            elif kind == "bcast":
                if len(d["omitted"]) != (expect_omit if lossy else 0):
                    self.fail("loss_exactness", i, rec, f"omitted {len(d['omitted'])}, expected {expect_omit}")
                if d["msg"] == "RV":
                    rv_sent[(s, d["term"])] = d["sent"]
            elif kind == "send" and d["msg"] == "RVR":
                rvr_sent[(d["dst"], d["re"])] += 1
            elif kind in ("recv", "drop"):
                delay = t - d["sent"]
                if not lat_lo <= delay <= lat_hi:
                    self.fail("latency_bounds", i, rec, f"delay {delay}us outside [{lat_lo}, {lat_hi}]")

        for (cand, term), sent in rv_sent.items():
            total = sent + rvr_sent[(cand, term)]
            if total > 2 * p.n:
                rec = (0, cand, "campaign", {})
                self.fail("campaign_messages", -1, rec, f"campaign ({cand}, term {term}) used {total} messages")
        self._election_checks(records, rv_sent, rvr_sent)
        return self.report

    # -- whole-election properties -----------------------------------------------

    def _election_checks(self, records, rv_sent, rvr_sent) -> None:
        p, f = self.params, self.faults
        if p.variant is not Variant.ESCAPE or not p.uses_priorities:
            return
        crash_at = None
        last_fault = None
        for i, (t, s, kind, d) in enumerate(records):
            if kind == "crash":
                if d.get("leader") and crash_at is None:
                    crash_at = i
                last_fault = i
            elif kind == "leaderless" and crash_at is None:
                crash_at = last_fault = i
            elif kind == "recover":
                last_fault = i
        if crash_at is None:
            return
        winner_at = None
        for i in range(len(records) - 1, crash_at, -1):
            if records[i][2] == "leader":
                winner_at = i
                break
        lossless = f.loss_rate == 0
        if lossless and not f.pinned_timeouts:
            # a leader elected before the last fault counts if that fault spared it
            survived = winner_at is not None and not any(
                r[2] == "crash" and r[1] == records[winner_at][1] for r in records[winner_at:]
            )
            if winner_at is None or (winner_at < last_fault and not survived):
                self.fail("liveness", len(records) - 1, records[-1], "no leader elected after the last fault")
            elif self.forced_phases == 0:
                # forced phases stack candidates on purpose, so only natural timing is bounded
                camps = [r for r in records[last_fault + 1 : winner_at] if r[2] == "campaign"]
                bound = (p.n - 1) // 2 + 1
                if len(camps) > bound:
                    self.fail(
                        "liveness", winner_at, records[winner_at],
                        f"{len(camps)} campaigns after the last fault exceed f+1 = {bound}",
                    )
        qualifying = (
            lossless
            and self.forced_phases == 0
            and not f.pinned_timeouts
            and not f.recoveries
            and f.adversary_crashes == 0
            and len(f.crashes) == 1
        )
        if qualifying and winner_at is not None:
            camps = [r for r in records[crash_at:winner_at] if r[2] == "campaign"]
            if len(camps) != 1:
                self.fail("one_campaign", winner_at, records[winner_at], f"{len(camps)} campaigns to a winner")
            else:
                _t, cand, _k, d = camps[0]
                msgs = rv_sent.get((cand, d["term"]), 0) + rvr_sent[(cand, d["term"])]
                if msgs > 2 * (p.n - 1):
                    self.fail("best_case_messages", winner_at, records[winner_at], f"{msgs} > 2(n-1)")


def check_trace(trace, scenario) -> CheckReport:
    """Evaluate every invariant over ``trace``; violations carry the first offending record."""
    records = trace.records if hasattr(trace, "records") else list(trace)
    return _Checker(scenario).run(records)


__all__ = ["CheckReport", "INVARIANTS", "LEADER", "Violation", "check_trace"]
