"""Named experiment matrices and the two scripted golden scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

from .checker import Violation
from .harness import Scenario, SummaryStats, TrialOutcome, TrialResult, make_scenario, run_trials, summarize

SCALES = (8, 16, 32, 64, 128)
LOSS_SCALES = (10, 50, 100)
LOSS_RATES = (0.0, 0.1, 0.2, 0.3, 0.4)
RAFT_RANGE_TOPS = (1800, 1900, 2000, 2100, 2200, 2300)
# under loss the leader keeps running for four heartbeat rounds first, so
# lost appends and configurations have time to leave followers stale
LOSS_CRASH_AT_MS = 2000

# Seed under which the Fig.2-style split vote plays out exactly as narrated:
# S2 votes S3, S5 votes S4, the term-2 campaigns split, S3 wins term 3.
SPLIT_VOTE_SEED = 14


@dataclass
class SuiteCase:
    label: str
    scenario: Scenario
    axis: dict = field(default_factory=dict)


@dataclass
class CaseOutcome:
    case: SuiteCase
    results: list[TrialResult]
    summary: SummaryStats
    violations: list[tuple[int, Violation]]  # (seed, first violation per invariant)
    traces: list | None = None


def e1_cases(trials: int = 1000, seed: int = 0) -> list[SuiteCase]:
    return [
        SuiteCase(f"E1-{v}-n{n}", make_scenario(v, n, trials=trials, base_seed=seed), {"variant": v, "n": n})
        for v in ("raft", "escape")
        for n in SCALES
    ]


def e2_cases(trials: int = 1000, seed: int = 0) -> list[SuiteCase]:
    return [
        SuiteCase(
            f"E2-raft-1500-{hi}",
            make_scenario("raft", 5, trials=trials, base_seed=seed, raft_timeout_range=(1500, hi)),
            {"variant": "raft", "n": 5, "range": f"1500-{hi}"},
        )
        for hi in RAFT_RANGE_TOPS
    ]


def e3_cases(trials: int = 1000, seed: int = 0, scales=SCALES) -> list[SuiteCase]:
    return [
        SuiteCase(
            f"E3-{v}-n{n}-p{p}",
            make_scenario(v, n, trials=trials, base_seed=seed, forced_phases=p),
            {"variant": v, "n": n, "phases": p},
        )
        for v in ("raft", "escape")
        for n in scales
        for p in range(4)
    ]


def e4_cases(trials: int = 1000, seed: int = 0, scales=LOSS_SCALES) -> list[SuiteCase]:
    return [
        SuiteCase(
            f"E4-{v}-n{n}-loss{int(d * 100)}",
            make_scenario(
                v, n, trials=trials, base_seed=seed, loss_rate=d, crashes=[("leader", LOSS_CRASH_AT_MS)]
            ),
            {"variant": v, "n": n, "loss_rate": d},
        )
        for n in scales
        for d in LOSS_RATES
        for v in ("raft", "zraft", "escape")
    ]


def split_vote_scenario(seed: int = SPLIT_VOTE_SEED) -> Scenario:
    """Raft, n=5: the leader crashes and S3, S4 time out at the same instant."""
    return make_scenario(
        "raft", 5, base_seed=seed, crashes=[("leader", 0)], pinned_timeouts=[(3, 1000), (4, 1000)],
        name="golden-split-vote",
    )


def stale_candidate_scenario(seed: int = 0) -> Scenario:
    """Escape, n=5: three simultaneous campaigns, one from a server with a stale configuration.

    S2, S4, S5 crash together; S2 and S5 come back within two heartbeats and
    catch up, S4 stays down through later rearrangements. After the leader
    crashes S4 returns still holding its old configuration, and S2, S3, S4 all
    time out at the same instant.
    """
    return make_scenario(
        "escape", 5, base_seed=seed,
        crashes=[(4, 0), (2, 0), (5, 0), ("leader", 3000)],
        recoveries=[(2, 600), (5, 600), (4, 3100)],
        pinned_timeouts=[(2, 4000), (3, 4000), (4, 4000)],
        name="golden-stale-candidate",
    )


def golden_cases(trials: int = 1, seed: int | None = None) -> list[SuiteCase]:
    a = split_vote_scenario() if seed is None else split_vote_scenario(seed)
    b = stale_candidate_scenario() if seed is None else stale_candidate_scenario(seed)
    return [
        SuiteCase("golden-split-vote", replace(a, trials=trials), {"variant": "raft", "n": 5}),
        SuiteCase("golden-stale-candidate", replace(b, trials=trials), {"variant": "escape", "n": 5}),
    ]


def adversarial_cases(trials: int = 100, seed: int = 0, scales=(5, 8, 16)) -> list[SuiteCase]:
    """Crash the leader, then every new candidate as it starts, f faults in total."""
    out = []
    for n in scales:
        f = (n - 1) // 2
        sc = make_scenario("escape", n, trials=trials, base_seed=seed, adversary_crashes=f - 1, horizon_ms=600000)
        out.append(SuiteCase(f"adversary-escape-n{n}", sc, {"variant": "escape", "n": n, "faults": f}))
    return out


SUITES: dict[str, Callable[..., list[SuiteCase]]] = {
    "E1": e1_cases,
    "E2": e2_cases,
    "E3": e3_cases,
    "E4": e4_cases,
    "golden": golden_cases,
}


def suite_cases(name: str, trials: int | None = None, seed: int | None = None) -> list[SuiteCase]:
    try:
        build = SUITES[name]
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None
    kw = {}
    if trials is not None:
        kw["trials"] = trials
    if seed is not None:
        kw["seed"] = seed
    return build(**kw)


def run_case(case: SuiteCase, workers: int = 1, keep_traces: bool = False) -> CaseOutcome:
    outcomes: list[TrialOutcome] = run_trials(case.scenario, workers, keep_traces)
    results = [o.result for o in outcomes]
    violations = [(o.result.seed, v) for o in outcomes for v in o.report.violations]
    traces = [o.trace for o in outcomes] if keep_traces else None
    return CaseOutcome(case, results, summarize(results), violations, traces)
