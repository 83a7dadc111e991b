"""Scenario files in, results CSV / summary JSON / trace JSONL out."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import yaml

from .config import InvalidParams, Variant
from .harness import Scenario, ScenarioError, SummaryStats, TrialResult, make_scenario
from .simnet import LEADER, LatencyModel

RESULT_FIELDS = (
    "trial", "variant", "n", "seed", "converged", "detection_ms", "election_ms",
    "total_ms", "campaigns", "split_vote_phases", "winner", "messages",
)

# key -> (kind, required)
SCENARIO_KEYS = {
    "variant": ("variant", True),
    "n": ("posint", True),
    "trials": ("posint", False),
    "seed": ("int", False),
    "base_time_ms": ("posint", False),
    "k_ms": ("posint", False),
    "raft_timeout_range_ms": ("range", False),
    "heartbeat_ms": ("posint", False),
    "latency_ms": ("range", False),
    "loss_rate": ("fraction", False),
    "crash_schedule": ("schedule", False),
    "recover_schedule": ("schedule", False),
    "forced_phases": ("int", False),
    "horizon_ms": ("posint", False),
    # extensions beyond the core key set
    "pinned_timeouts": ("schedule", False),
    "adversary_crashes": ("int", False),
    "warmup_rounds": ("posint", False),
    "entries_per_heartbeat": ("int", False),
    "lossy_replies": ("bool", False),
    "name": ("str", False),
}


class ScenarioFileError(ValueError):
    def __init__(self, path, line: int | None, key: str | None, message: str) -> None:
        self.path, self.line, self.key = str(path), line, key
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {key + ': ' if key else ''}{message}")


def _check(kind: str, value, fail):
    if kind == "variant":
        try:
            return Variant(str(value).lower().replace("-", ""))
        except ValueError:
            fail(f"unknown variant {value!r} (raft, zraft, escape)")
    if kind in ("int", "posint"):
        if isinstance(value, bool) or not isinstance(value, int):
            fail(f"expected an integer, got {value!r}")
        if kind == "posint" and value <= 0:
            fail(f"must be a positive integer, got {value}")
        if value < 0:
            fail(f"must be non-negative, got {value}")
        return value
    if kind == "fraction":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0 <= value < 1:
            fail(f"expected a fraction in [0, 1), got {value!r}")
        return float(value)
    if kind == "range":
        if (
            not isinstance(value, list)
            or len(value) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in value)
            or value[0] > value[1]
        ):
            fail(f"expected [lo, hi] positive integers with lo <= hi, got {value!r}")
        return tuple(value)
    if kind == "schedule":
        if not isinstance(value, list):
            fail("expected a list of [server, time_ms] pairs")
        out = []
        for item in value:
            if not isinstance(item, list) or len(item) != 2:
                fail(f"expected [server, time_ms], got {item!r}")
            server, at = item
            if server != LEADER and (isinstance(server, bool) or not isinstance(server, int)):
                fail(f"server must be an id or 'leader', got {server!r}")
            if isinstance(at, bool) or not isinstance(at, int) or at < 0:
                fail(f"time must be a non-negative integer ms offset, got {at!r}")
            out.append((server, at))
        return out
    if kind == "bool":
        if not isinstance(value, bool):
            fail(f"expected true/false, got {value!r}")
        return value
    return str(value)


def parse_scenario_text(text: str, path="<scenario>", overrides: dict | None = None) -> Scenario:
    """Parse a YAML scenario document; overrides (already typed) win over file values."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioFileError(path, mark.line + 1 if mark else None, None, f"syntax error: {e}") from None
    if root is None or not isinstance(root, yaml.MappingNode):
        raise ScenarioFileError(path, 1, None, "scenario must be a mapping of keys to values")
    lines = {}
    for key_node, _ in root.value:
        key = key_node.value
        if key in lines:
            raise ScenarioFileError(path, key_node.start_mark.line + 1, key, "duplicate key")
        lines[key] = key_node.start_mark.line + 1
        if key not in SCENARIO_KEYS:
            raise ScenarioFileError(path, lines[key], key, "unknown key")
    raw = yaml.safe_load(text)

    values = {}
    for key, (kind, required) in SCENARIO_KEYS.items():
        if key not in raw:
            if required and not (overrides and key in overrides):
                raise ScenarioFileError(path, None, key, "required key missing")
            continue

        def fail(msg, key=key):
            raise ScenarioFileError(path, lines.get(key), key, msg)

        values[key] = _check(kind, raw[key], fail)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return scenario_from_values(values, path, lines)


def scenario_from_values(values: dict, path="<scenario>", lines: dict | None = None) -> Scenario:
    lines = lines or {}
    kw = {}
    rename = {
        "trials": "trials", "seed": "base_seed", "base_time_ms": "base_time", "k_ms": "k",
        "raft_timeout_range_ms": "raft_timeout_range", "heartbeat_ms": "heartbeat_interval",
        "loss_rate": "loss_rate", "crash_schedule": "crashes", "recover_schedule": "recoveries",
        "forced_phases": "forced_phases", "horizon_ms": "horizon_ms", "pinned_timeouts": "pinned_timeouts",
        "adversary_crashes": "adversary_crashes", "warmup_rounds": "warmup_rounds",
        "entries_per_heartbeat": "entries_per_heartbeat", "lossy_replies": "lossy_replies", "name": "name",
    }
    for key, target in rename.items():
        if key in values:
            kw[target] = values[key]
    if "latency_ms" in values:
        kw["latency"] = LatencyModel(*values["latency_ms"])
    try:
        return make_scenario(values["variant"], values["n"], **kw)
    except (ScenarioError, InvalidParams, ValueError) as e:
        raise ScenarioFileError(path, None, None, str(e)) from None


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ScenarioFileError(path, None, None, f"cannot read: {e.strerror}") from None
    return parse_scenario_text(text, p, overrides)


def scenario_to_dict(sc: Scenario) -> dict:
    p, f = sc.params, sc.faults
    return {
        "variant": p.variant.value,
        "n": p.n,
        "trials": sc.trials,
        "seed": sc.base_seed,
        "base_time_ms": p.base_time,
        "k_ms": p.k,
        "raft_timeout_range_ms": list(p.raft_timeout_range),
        "heartbeat_ms": p.heartbeat_interval,
        "latency_ms": [sc.latency.min, sc.latency.max],
        "loss_rate": f.loss_rate,
        "crash_schedule": [list(c) for c in f.crashes],
        "recover_schedule": [list(c) for c in f.recoveries],
        "forced_phases": sc.forced_phases,
        "horizon_ms": sc.horizon_ms,
        "pinned_timeouts": [list(c) for c in f.pinned_timeouts],
        "adversary_crashes": f.adversary_crashes,
        "warmup_rounds": sc.warmup_rounds,
        "entries_per_heartbeat": p.entries_per_heartbeat,
        "lossy_replies": f.lossy_replies,
        "name": sc.name,
    }


# -- results ---------------------------------------------------------------------


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def write_results_csv(path, results: list[TrialResult]) -> None:
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in results:
            w.writerow([_cell(getattr(r, f)) for f in RESULT_FIELDS])


def read_results_csv(path) -> list[TrialResult]:
    def opt(cast, s):
        return None if s == "" else cast(s)

    out = []
    with open(path, newline="") as fp:
        rows = csv.DictReader(fp)
        if tuple(rows.fieldnames or ()) != RESULT_FIELDS:
            raise ValueError(f"unexpected CSV header {rows.fieldnames}")
        for row in rows:
            out.append(TrialResult(
                trial=int(row["trial"]),
                variant=row["variant"],
                n=int(row["n"]),
                seed=int(row["seed"]),
                converged=row["converged"] == "true",
                detection_ms=opt(float, row["detection_ms"]),
                election_ms=opt(float, row["election_ms"]),
                total_ms=opt(float, row["total_ms"]),
                campaigns=int(row["campaigns"]),
                split_vote_phases=int(row["split_vote_phases"]),
                winner=opt(int, row["winner"]),
                messages=int(row["messages"]),
            ))
    return out


def summary_document(summary: SummaryStats, scenario: Scenario | None = None, violations=()) -> dict:
    doc = asdict(summary)
    doc["cdf"] = [[t, frac] for t, frac in summary.cdf]
    doc["cdf_step_ms"] = 50
    if scenario is not None:
        doc = {"scenario": scenario_to_dict(scenario), **doc}
    doc["violations"] = [
        {"seed": seed, "invariant": v.invariant, "record": v.index, "t_us": v.time, "server": v.server,
         "detail": v.detail}
        for seed, v in violations
    ]
    return doc


def write_summary_json(path, summary: SummaryStats, scenario: Scenario | None = None, violations=()) -> None:
    with open(path, "w") as fp:
        json.dump(summary_document(summary, scenario, violations), fp, indent=2)
        fp.write("\n")


def write_trace(path, trace) -> None:
    with open(path, "w") as fp:
        trace.dump(fp)
