"""Command-line front end: ``leadersim run <file>`` and ``leadersim suite <name>``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import formats
from .config import Variant
from .harness import run_trials, summarize
from .suites import SUITES, run_case, suite_cases

log = logging.getLogger("leadersim")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2

COMPARISON_FIELDS = (
    "case", "variant", "n", "axis", "trials", "converged", "mean_ms", "p50_ms", "p90_ms", "p99_ms",
    "mean_detection_ms", "mean_election_ms", "split_vote_rate", "non_convergence_rate", "violations",
)


def _fraction(text: str) -> float:
    v = float(text)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError(f"loss rate must lie in [0, 1), got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leadersim", description="Leader election simulator for Raft, Z-Raft and Escape.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
        sp.add_argument("--trials", type=_positive, help="trials per scenario")
        sp.add_argument("--seed", type=int, help="base seed; trial i runs with seed ^ i")
        sp.add_argument("--workers", type=_positive, default=1, help="parallel trial workers")
        sp.add_argument("--trace", action="store_true", help="write one JSONL trace per trial")

    run = sub.add_parser("run", help="run one scenario file")
    run.add_argument("scenario", type=Path)
    common(run)
    run.add_argument("--n", type=_positive, help="override cluster size")
    run.add_argument("--variant", choices=[v.value for v in Variant], help="override protocol variant")
    run.add_argument("--loss-rate", type=_fraction, help="override broadcast loss rate")

    suite = sub.add_parser("suite", help="run a named experiment suite")
    suite.add_argument("name", choices=list(SUITES))
    common(suite)
    return p


def _report_violations(violations, label: str) -> None:
    for seed, v in violations:
        print(f"{label}: invariant {v.invariant} violated in trial seed {seed}: {v}", file=sys.stderr)


def _write_traces(out: Path, outcomes) -> None:
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    for o in outcomes:
        formats.write_trace(tdir / f"trial-{o.result.trial:04d}-seed-{o.result.seed}.jsonl", o.trace)


def cmd_run(args) -> int:
    overrides = {
        "n": args.n,
        "variant": Variant(args.variant) if args.variant else None,
        "loss_rate": args.loss_rate,
        "trials": args.trials,
        "seed": args.seed,
    }
    try:
        scenario = formats.load_scenario(args.scenario, overrides)
    except formats.ScenarioFileError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    args.out.mkdir(parents=True, exist_ok=True)
    log.info("running %s: %d trials", args.scenario, scenario.trials)
    outcomes = run_trials(scenario, args.workers, keep_traces=args.trace)
    results = [o.result for o in outcomes]
    violations = [(o.result.seed, v) for o in outcomes for v in o.report.violations]
    formats.write_results_csv(args.out / "results.csv", results)
    formats.write_summary_json(args.out / "summary.json", summarize(results), scenario, violations)
    if args.trace:
        _write_traces(args.out, outcomes)
    if violations:
        _report_violations(violations, str(args.scenario))
        return EXIT_VIOLATION
    return EXIT_OK


def _axis(case) -> str:
    return ";".join(f"{k}={v}" for k, v in case.axis.items() if k not in ("variant", "n"))


def cmd_suite(args) -> int:
    cases = suite_cases(args.name, trials=args.trials, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    rows, bad = [], False
    for case in cases:
        log.info("%s: %d trials", case.label, case.scenario.trials)
        outcome = run_case(case, args.workers, keep_traces=args.trace)
        cdir = args.out / case.label
        cdir.mkdir(exist_ok=True)
        formats.write_results_csv(cdir / "results.csv", outcome.results)
        formats.write_summary_json(cdir / "summary.json", outcome.summary, case.scenario, outcome.violations)
        if args.trace:
            for r, t in zip(outcome.results, outcome.traces):
                tdir = cdir / "traces"
                tdir.mkdir(exist_ok=True)
                formats.write_trace(tdir / f"trial-{r.trial:04d}-seed-{r.seed}.jsonl", t)
        if outcome.violations:
            bad = True
            _report_violations(outcome.violations, case.label)
        s = outcome.summary
        rows.append([
            case.label, case.scenario.variant.value, case.scenario.n, _axis(case), s.trials, s.converged,
            *(formats._cell(x) for x in (s.mean, s.p50, s.p90, s.p99, s.mean_detection, s.mean_election)),
            f"{s.split_vote_rate:.4f}", f"{s.non_convergence_rate:.4f}", len(outcome.violations),
        ])
    with open(args.out / "comparison.csv", "w", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(COMPARISON_FIELDS)
        w.writerows(rows)
    for row in rows:
        print(f"{row[0]:<28} mean={row[6] or '-':>10} split={row[12]} nonconv={row[13]} violations={row[14]}")
    return EXIT_VIOLATION if bad else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "run":
        return cmd_run(args)
    return cmd_suite(args)


if __name__ == "__main__":
    sys.exit(main())
