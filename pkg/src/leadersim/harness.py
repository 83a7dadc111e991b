"""Seeded trial runner: scenarios, per-trial metrics, batch summaries."""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .checker import CheckReport, check_trace
from .config import ProtocolParams, Variant
from .simnet import FaultSchedule, LatencyModel, ScheduleError, Trace, World

CDF_STEP_MS = 50


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    params: ProtocolParams
    latency: LatencyModel = LatencyModel()
    faults: FaultSchedule = field(default_factory=lambda: FaultSchedule(crashes=[("leader", 0)]))
    trials: int = 1
    base_seed: int = 0
    forced_phases: int = 0
    horizon_ms: int = 60000
    warmup_rounds: int = 2
    name: str = ""

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ScenarioError("trials must be >= 1")
        if not 0 <= self.forced_phases <= 3:
            raise ScenarioError(f"forced_phases must be in 0..3, got {self.forced_phases}")
        if self.forced_phases and self.forced_phases + 1 > self.params.n - 1:
            raise ScenarioError(f"{self.forced_phases} forced phases need {self.forced_phases + 1} followers")
        if self.horizon_ms <= 0:
            raise ScenarioError("horizon must be positive")
        if self.warmup_rounds < 2 and self.params.dynamic_configs:
            raise ScenarioError("stabilization needs a completed rearrangement round (warmup_rounds >= 2)")
        try:
            self.faults.validate(self.params.n)
        except ScheduleError as e:
            raise ScenarioError(str(e)) from None

    @property
    def variant(self) -> Variant:
        return self.params.variant

    @property
    def n(self) -> int:
        return self.params.n

    def seed_for(self, trial: int) -> int:
        return self.base_seed ^ trial


def make_scenario(variant, n: int, **kw) -> Scenario:
    """Build a scenario from flat keyword arguments (param names or scenario fields)."""
    param_keys = set(ProtocolParams.__dataclass_fields__) - {"variant", "n"}
    params = ProtocolParams(Variant(variant), n, **{k: kw.pop(k) for k in list(kw) if k in param_keys})
    fault_keys = set(FaultSchedule.__dataclass_fields__)
    fault_kw = {k: kw.pop(k) for k in list(kw) if k in fault_keys}
    fault_kw.setdefault("crashes", [("leader", 0)])
    return Scenario(params=params, faults=FaultSchedule(**fault_kw), **kw)


def force_competing_phases(scenario: Scenario, phases: int) -> Scenario:
    return replace(scenario, forced_phases=phases)


@dataclass
class TrialResult:
    trial: int
    variant: str
    n: int
    seed: int
    converged: bool
    detection_ms: float | None
    election_ms: float | None
    total_ms: float | None
    campaigns: int
    split_vote_phases: int
    winner: int | None
    messages: int


@dataclass
class SummaryStats:
    trials: int
    converged: int
    mean: float | None
    p50: float | None
    p90: float | None
    p99: float | None
    mean_detection: float | None
    mean_election: float | None
    split_vote_rate: float
    non_convergence_rate: float
    cdf: list[tuple[int, float]]


def _stable(world: World) -> bool:
    return world.epoch is not None


def _recovered(world: World) -> bool:
    if world.leader_crash_time is None:
        return False
    lid = world.current_leader()
    if lid is None:
        return False
    leader = world.servers[lid]
    top = max(s.current_term for s in world.servers.values() if not s.crashed)
    return leader.current_term == top and len(leader.acked) >= world.params.quorum - 1


def _is_leader_fault(rec) -> bool:
    return (rec[2] == "crash" and rec[3].get("leader")) or rec[2] == "leaderless"


def _ms(us: int) -> float:
    return us / 1000


def extract_metrics(trace: Trace, scenario: Scenario, trial: int, seed: int, converged: bool) -> TrialResult:
    recs = trace.records
    crash_i = next((i for i, r in enumerate(recs) if _is_leader_fault(r)), None)
    base = dict(trial=trial, variant=scenario.variant.value, n=scenario.n, seed=seed)
    if crash_i is None:
        return TrialResult(**base, converged=False, detection_ms=None, election_ms=None, total_ms=None,
                           campaigns=0, split_vote_phases=0, winner=None, messages=0)
    crash_t = recs[crash_i][0]
    end_i = len(recs)
    winner = None
    if converged:
        for i in range(len(recs) - 1, crash_i, -1):
            if recs[i][2] == "leader":
                end_i, winner = i, recs[i][1]
                break
        else:
            converged = False
    window = recs[crash_i:end_i + 1] if winner is not None else recs[crash_i:]
    camps = [r for r in window if r[2] == "campaign"]
    first = camps[0][0] if camps else None
    detection = _ms(first - crash_t) if first is not None else None
    election = total = None
    if winner is not None and first is not None:
        election = _ms(recs[end_i][0] - first)
        total = _ms(recs[end_i][0] - crash_t)

    per_term: dict[int, int] = {}
    for r in camps:
        per_term[r[3]["term"]] = per_term.get(r[3]["term"], 0) + 1
    won = {r[3]["term"] for r in recs if r[2] == "leader"}
    splits = sum(1 for term, c in per_term.items() if c >= 2 and term not in won)

    messages = 0
    for r in window:
        if first is None or r[0] < first:
            continue
        if r[2] == "bcast" and r[3]["msg"] == "RV":
            messages += r[3]["sent"]
        elif r[2] == "send" and r[3]["msg"] == "RVR":
            messages += 1
    return TrialResult(**base, converged=converged and total is not None, detection_ms=detection,
                       election_ms=election, total_ms=total, campaigns=len(camps),
                       split_vote_phases=splits, winner=winner, messages=messages)


def build_world(scenario: Scenario, seed: int) -> World:
    return World(
        scenario.params,
        seed,
        latency=scenario.latency,
        faults=scenario.faults,
        warmup_rounds=scenario.warmup_rounds,
        forced_phases=scenario.forced_phases,
    )


def run_trial(scenario: Scenario, trial: int) -> tuple[TrialResult, Trace]:
    seed = scenario.seed_for(trial)
    world = build_world(scenario, seed)
    out = world.run_until(_stable, scenario.horizon_ms)
    converged = False
    if out.reason == "stop":
        out = world.run_until(_recovered, world.epoch / 1000 + scenario.horizon_ms)
        converged = out.reason == "stop"
    return extract_metrics(world.trace, scenario, trial, seed, converged), world.trace


@dataclass
class TrialOutcome:
    result: TrialResult
    report: CheckReport
    trace: Trace | None = None


def run_checked_trial(scenario: Scenario, trial: int, keep_trace: bool = False) -> TrialOutcome:
    result, trace = run_trial(scenario, trial)
    report = check_trace(trace, scenario)
    return TrialOutcome(result, report, trace if keep_trace else None)


def _worker(args) -> TrialOutcome:
    scenario, trial, keep = args
    return run_checked_trial(scenario, trial, keep)


def run_trials(scenario: Scenario, workers: int = 1, keep_traces: bool = False) -> list[TrialOutcome]:
    jobs = [(scenario, i, keep_traces) for i in range(scenario.trials)]
    if workers <= 1 or scenario.trials == 1:
        return [_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves trial order, so aggregation stays deterministic
        return list(pool.map(_worker, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def run_experiment(scenario: Scenario, workers: int = 1) -> tuple[list[TrialResult], SummaryStats]:
    outcomes = run_trials(scenario, workers)
    results = [o.result for o in outcomes]
    return results, summarize(results)


def _quantile(sorted_vals: list[float], q: int) -> float:
    if len(sorted_vals) == 1:
        return sorted_vals[0]
    return statistics.quantiles(sorted_vals, n=100, method="inclusive")[q - 1]


def cdf_points(results: list[TrialResult], step: int = CDF_STEP_MS) -> list[tuple[int, float]]:
    totals = sorted(r.total_ms for r in results if r.converged)
    if not results:
        return []
    top = math.ceil(totals[-1] / step) * step if totals else 0
    points, j = [], 0
    for t in range(0, top + step, step):
        while j < len(totals) and totals[j] <= t:
            j += 1
        points.append((t, j / len(results)))
    return points


def summarize(results: list[TrialResult]) -> SummaryStats:
    done = [r for r in results if r.converged]
    totals = sorted(r.total_ms for r in done)
    trials = len(results)

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return statistics.fmean(vals) if vals else None

    return SummaryStats(
        trials=trials,
        converged=len(done),
        mean=mean(totals),
        p50=_quantile(totals, 50) if totals else None,
        p90=_quantile(totals, 90) if totals else None,
        p99=_quantile(totals, 99) if totals else None,
        mean_detection=mean(r.detection_ms for r in done),
        mean_election=mean(r.election_ms for r in done),
        split_vote_rate=sum(1 for r in results if r.split_vote_phases > 0) / trials if trials else 0.0,
        non_convergence_rate=(trials - len(done)) / trials if trials else 0.0,
        cdf=cdf_points(results),
    )


def non_convergence_within(results: list[TrialResult], window_ms: float) -> float:
    """Fraction of trials that did not elect a leader within ``window_ms`` of the crash."""
    late = sum(1 for r in results if not r.converged or r.total_ms > window_ms)
    return late / len(results)

