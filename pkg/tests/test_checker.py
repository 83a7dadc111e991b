import copy

import pytest

from leadersim.checker import INVARIANTS, check_trace
from leadersim.harness import make_scenario, run_trial
from leadersim.simnet import Trace


@pytest.fixture(scope="module")
def clean():
    sc = make_scenario("escape", 5, base_seed=4)
    _, trace = run_trial(sc, 0)
    return sc, trace


def mutated(trace, at, *records):
    recs = copy.deepcopy(trace.records)
    recs[at:at] = list(records)
    return Trace(recs)


def index_of(trace, kind, pred=lambda r: True):
    return next(i for i, r in enumerate(trace.records) if r[2] == kind and pred(r))


def failing(trace, sc):
    return check_trace(trace, sc).failing()


def test_clean_trace_passes(clean):
    sc, trace = clean
    report = check_trace(trace, sc)
    assert report.ok, report.violations
    assert report.checked == set(INVARIANTS)


def test_two_leaders_in_one_term(clean):
    sc, trace = clean
    i = index_of(trace, "leader")
    t, s, _, d = trace.records[i]
    bad = mutated(trace, i + 1, (t, s % 5 + 1, "leader", {"term": d["term"]}))
    assert "election_safety" in failing(bad, sc)


def test_term_going_backwards(clean):
    sc, trace = clean
    i = index_of(trace, "term", lambda r: r[3]["term"] >= 2)
    t, s, _, d = trace.records[i]
    bad = mutated(trace, i + 1, (t, s, "term", {"term": d["term"] - 1}))
    assert "term_monotonic" in failing(bad, sc)


def test_double_vote(clean):
    sc, trace = clean
    i = index_of(trace, "vote", lambda r: r[1] != r[3]["candidate"])
    t, s, _, d = trace.records[i]
    other = next(c for c in range(1, 6) if c not in (s, d["candidate"]))
    bad = mutated(trace, i + 1, (t, s, "vote", {"term": d["term"], "candidate": other}))
    assert failing(bad, sc) == ["single_vote"]


def test_wrong_term_jump(clean):
    sc, trace = clean
    i = index_of(trace, "campaign")
    recs = copy.deepcopy(trace.records)
    recs[i][3]["term"] += 1
    assert "term_jump" in failing(Trace(recs), sc)


def test_wrong_timeout_period(clean):
    sc, trace = clean
    i = index_of(trace, "config", lambda r: r[3]["clock"] > 0)
    recs = copy.deepcopy(trace.records)
    recs[i][3]["period"] += 1
    assert "timeout_formula" in failing(Trace(recs), sc)


def test_duplicate_priority_at_max_clock(clean):
    sc, trace = clean
    i = max(i for i, r in enumerate(trace.records) if r[2] == "config" and r[1] != 1)
    t, s, _, d = trace.records[i]
    other = next(r for r in trace.records[:i] if r[2] == "config" and r[3]["clock"] == d["clock"] and r[1] != s)
    dup = {"priority": other[3]["priority"], "period": other[3]["period"], "clock": d["clock"]}
    bad = mutated(trace, i + 1, (t, s, "config", dup))
    got = failing(bad, sc)
    assert "config_uniqueness" in got and "config_pair_uniqueness" in got


def test_crashed_server_speaking(clean):
    sc, trace = clean
    i = index_of(trace, "crash")
    t, s, _, _ = trace.records[i]
    bad = mutated(trace, i + 1, (t + 1, s, "vote", {"term": 999, "candidate": s}))
    assert "crash_opacity" in failing(bad, sc)


def test_diverging_logs(clean):
    sc, trace = clean
    i = index_of(trace, "append", lambda r: r[3]["index"] == 1 and r[1] != 1)
    recs = copy.deepcopy(trace.records)
    recs[i][3]["term"] += 7
    assert "log_matching" in failing(Trace(recs), sc)


def test_commit_truncated(clean):
    sc, trace = clean
    i = index_of(trace, "commit", lambda r: r[1] != 1)
    t, s, _, d = trace.records[i]
    bad = mutated(trace, i + 1, (t, s, "truncate", {"index": d["index"]}))
    assert "commit_durability" in failing(bad, sc)


def test_out_of_bounds_latency(clean):
    sc, trace = clean
    i = index_of(trace, "recv")
    recs = copy.deepcopy(trace.records)
    recs[i][3]["sent"] = recs[i][0] - 250_000
    assert "latency_bounds" in failing(Trace(recs), sc)


def test_loss_count_mismatch():
    sc = make_scenario("escape", 10, base_seed=2, loss_rate=0.2, crashes=[("leader", 2000)])
    _, trace = run_trial(sc, 0)
    assert check_trace(trace, sc).ok
    i = index_of(trace, "bcast", lambda r: len(r[3]["omitted"]) == 2)
    recs = copy.deepcopy(trace.records)
    recs[i][3]["omitted"] = recs[i][3]["omitted"][:1]
    assert "loss_exactness" in failing(Trace(recs), sc)


def test_bijection_broken(clean):
    sc, trace = clean
    i = index_of(trace, "assign")
    recs = copy.deepcopy(trace.records)
    mapping = recs[i][3]["mapping"]
    a, b = list(mapping)[:2]
    mapping[a] = mapping[b]
    assert "assignment_bijection" in failing(Trace(recs), sc)


def test_clock_skips(clean):
    sc, trace = clean
    idx = [i for i, r in enumerate(trace.records) if r[2] == "assign"]
    recs = copy.deepcopy(trace.records)
    recs[idx[1]][3]["clock"] += 1
    assert "assignment_clock_growth" in failing(Trace(recs), sc)


def test_extra_campaign_breaks_one_campaign_lemma(clean):
    sc, trace = clean
    i = index_of(trace, "campaign", lambda r: r[3]["term"] > 1)
    t, s, _, d = trace.records[i]
    other = next(c for c in range(2, 6) if c != s)
    extra = (t, other, "campaign", {"term": d["term"] + 1, "prev_term": d["term"], "clock": 0})
    got = failing(mutated(trace, i + 1, extra), sc)
    assert "one_campaign" in got


def test_missing_winner_breaks_liveness(clean):
    sc, trace = clean
    crash = index_of(trace, "crash")
    recs = [r for i, r in enumerate(trace.records) if not (i > crash and r[2] == "leader")]
    assert "liveness" in failing(Trace(recs), sc)


def test_flooded_campaign(clean):
    sc, trace = clean
    i = index_of(trace, "bcast", lambda r: r[3]["msg"] == "RV" and r[3]["term"] > 1)
    recs = copy.deepcopy(trace.records)
    recs[i][3]["sent"] = 20
    got = failing(Trace(recs), sc)
    assert "campaign_messages" in got and "best_case_messages" in got


def test_check_trace_accepts_plain_record_lists(clean):
    sc, trace = clean
    assert check_trace(list(trace.records), sc).ok


def test_first_violation_is_reported_once(clean):
    sc, trace = clean
    recs = copy.deepcopy(trace.records)
    for r in recs:
        if r[2] == "recv":
            r[3]["sent"] = r[0] - 999_000
    report = check_trace(Trace(recs), sc)
    assert [v.invariant for v in report.violations].count("latency_bounds") == 1
    first = report.first("latency_bounds")
    assert first.index == index_of(trace, "recv") and "outside" in str(first)


def test_leader_surviving_a_later_follower_crash_is_live():
    # S8 wins just before S2 crashes; the later fault does not unseat it
    sc = make_scenario("escape", 8, crashes=[("leader", 1801), (2, 3724)])
    res, trace = run_trial(sc, 0)
    assert res.winner == 8
    crash = max(i for i, r in enumerate(trace.records) if r[2] == "crash")
    assert index_of(trace, "leader", lambda r: r[1] == 8) < crash
    assert check_trace(trace, sc).ok


def test_leader_crashing_after_election_is_not_live(clean):
    sc, trace = clean
    win = max(i for i, r in enumerate(trace.records) if r[2] == "leader")
    t, s, _, _ = trace.records[-1]
    bad = mutated(trace, len(trace.records), (t + 1, trace.records[win][1], "crash", {"leader": True}))
    assert "liveness" in failing(bad, sc)


def test_forced_phases_exempt_from_campaign_bound():
    # three aligned candidates at n=4 exceed f+1 = 2 by construction
    sc = make_scenario("escape", 4, forced_phases=2)
    res, trace = run_trial(sc, 0)
    assert res.converged and res.campaigns == 3
    assert check_trace(trace, sc).ok
