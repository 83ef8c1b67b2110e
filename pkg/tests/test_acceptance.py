"""Acceptance suite: one test per criterion, named ``test_criterion_<n>_...``.

The terminal summary prints ``criterion <n>: PASS|FAIL`` for each.
"""

from __future__ import annotations

import io
import random
import string
import time

import pytest

from dualkg.harness import call_stats, load_manifest, run_experiment
from dualkg.kg import Fact, KnowledgeGraph
from dualkg.llm import SAMPLING_VARIATIONS, SamplingParams, ScriptedBackend, UsageMeter
from dualkg.metrics import EvalRecord, evaluate
from dualkg.orchestrator import (
    DUAL,
    LIMIT_EXCEEDED,
    MULTI_PROMPT,
    PARAPHRASE,
    SAMPLING_VARIATION,
    SINGLE_SC,
    TRIAL_ABSTAINED,
    TRIAL_DISAGREEMENT,
    Abstained,
    Answered,
    RunConfig,
    build_trial_inputs,
    run_dual,
    unanimous_verdict,
)
from dualkg.prompts import load_prompt_set
from dualkg.protocol import ParseFailure, parse_operator_turn
from dualkg.server import OPERATOR, new_session, take_turn, write_transcript
from oracles import naive_metrics, scan_explore, scan_relations
from scenarios import (
    INCEPTION_OPERATOR,
    INCEPTION_QUERY,
    INCEPTION_SUPERVISOR,
    PROSE,
    TOY_ANSWERED,
    TOY_ANSWERED_SUPERVISOR_CALLS,
    TOY_OPERATOR_CALLS,
    TOY_SUPERVISOR_CALLS,
    VANISHING_OPERATOR,
    VANISHING_QUERY,
    VANISHING_SUPERVISOR,
)

PROMPTS = load_prompt_set()


# 1. metric oracle ----------------------------------------------------------

def _random_rows(rng: random.Random, n: int):
    pool = [f"l{i}" for i in range(12)] + ["L0 ", " l1"]
    rows = []
    for _ in range(n):
        gold = rng.sample(pool, rng.randint(1, 8))
        pred = None if rng.random() < 0.25 else rng.sample(pool, rng.randint(1, 8))
        rows.append((gold, pred))
    return rows


def test_criterion_1_metric_oracle():
    start = time.perf_counter()
    rng = random.Random(1)
    checked = 0
    for _ in range(40):
        rows = _random_rows(rng, rng.randint(200, 260))
        got = evaluate([EvalRecord.make(str(i), g, p) for i, (g, p) in enumerate(rows)])
        want = naive_metrics(rows)
        for key in ("coverage", "micro_f1", "samplewise_f1", "hit_rate"):
            assert abs(getattr(got, key) - float(want[key])) <= 1e-12, key
        checked += len(rows)
    assert checked >= 200

    ab = evaluate([EvalRecord.make("A", ["x"], ["x", "y"]), EvalRecord.make("B", ["z", "w"], ["z"])])
    assert ab.micro_f1 == 2 / 3 and ab.samplewise_f1 == 2 / 3
    assert time.perf_counter() - start < 5.0


# 2. loop conformance replay --------------------------------------------------

def _walkthrough(graph):
    op = ScriptedBackend(VANISHING_OPERATOR, role="operator")
    sup = ScriptedBackend(VANISHING_SUPERVISOR, role="supervisor")
    return run_dual(VANISHING_QUERY, ["The Vanishing American"], graph, op, sup, RunConfig(DUAL, 15), PROMPTS)


def _transcript_bytes(rows) -> bytes:
    buf = io.StringIO()
    write_transcript(rows, buf)
    return buf.getvalue().encode("utf-8")


def test_criterion_2_loop_conformance(movie_graph):
    res = _walkthrough(movie_graph)
    assert isinstance(res.verdict, Answered) and set(res.verdict.labels) == {"English", "French"}
    assert res.stats.iterations <= 6 and res.stats.supervisor_calls >= 1

    limit = 15
    op = ScriptedBackend([PROSE] * limit)
    sup = ScriptedBackend([])
    prose = run_dual(VANISHING_QUERY, ["The Vanishing American"], movie_graph, op, sup, RunConfig(DUAL, limit), PROMPTS)
    assert prose.verdict == Abstained(LIMIT_EXCEEDED) and prose.stats.iterations == limit

    runs = {_transcript_bytes(_walkthrough(movie_graph).transcript) for _ in range(3)}
    assert len(runs) == 1


# 3. budget safety -----------------------------------------------------------

_ENTITIES = ["Alien", "Blade Runner", "George B. Seitz", "Nobody", "Witness"]
_RELATIONS = ["directed_by", "~directed_by", "has_genre", "in_language", "nope"]


def _operator_turn(rng: random.Random) -> str:
    kind = rng.randrange(6)
    e = rng.choice(_ENTITIES)
    if kind == 0:
        return f"GetRelation({e})"
    if kind == 1:
        return f"ExploreKG({e}, [{', '.join(rng.sample(_RELATIONS, rng.randint(1, 3)))}])"
    if kind == 2:
        return "Verification()"
    if kind == 3:
        return f"Thinking...\nGetRelation({e})\nVerification()"
    if kind == 4:
        return f"ExploreKG({e}, {rng.choice(_RELATIONS)})"
    return PROSE


def _supervisor_turn(rng: random.Random) -> str:
    return rng.choice(["ANSWER: x", "FEEDBACK: keep going", "", "no idea", "ANSWER:"])


def _fuzz_string(rng: random.Random) -> str:
    parts = ["GetRelation(", "ExploreKG(", "Verification(", ")", "(", "[", "]", ", ", "~", "\n", "`", "- ", "1. ",
             "Alien", " ", " ", "\x00", "ANSWER:"]
    chars = string.printable + "éß漢字​"
    out = []
    for _ in range(rng.randint(0, 30)):
        out.append(rng.choice(parts) if rng.random() < 0.5 else "".join(rng.choices(chars, k=rng.randint(1, 5))))
    return "".join(out)


def test_criterion_3_budget_safety(movie_graph):
    rng = random.Random(3)
    for _ in range(1000):
        limit = rng.randint(1, 20)
        op = ScriptedBackend([_operator_turn(rng) for _ in range(limit + 5)], role="operator")
        sup = ScriptedBackend([_supervisor_turn(rng) for _ in range(limit + 5)], role="supervisor")
        res = run_dual("q", ["Alien"], movie_graph, op, sup, RunConfig(DUAL, limit), PROMPTS)
        turns = sum(1 for row in res.transcript if row["role"] == OPERATOR)
        assert turns == res.stats.iterations == op.cursor == res.stats.operator_calls <= limit
        assert isinstance(res.verdict, Answered) or res.verdict == Abstained(LIMIT_EXCEEDED)

    state = new_session("q", ["Alien"], 10_001)
    for _ in range(10_000):
        text = _fuzz_string(rng)
        parsed = parse_operator_turn(text)
        assert isinstance(parsed, ParseFailure) or (isinstance(parsed, list) and parsed)
        take_turn(state, movie_graph, text)
    assert state.iteration == 10_000


# 4. inverse / temporal semantics ---------------------------------------------

BAGGIO_FACTS = {
    Fact("Roberto Baggio", "member of sports team", "ACF Fiorentina", 1985, 1990),
    Fact("Roberto Baggio", "member of sports team", "Brescia Calcio", 2000, 2004),
    Fact("Roberto Baggio", "member of sports team", "Vicenza Calcio", 1982, 1985),
    Fact("Roberto Baggio", "member of sports team", "Juventus F.C.", 1990, 1995),
    Fact("Roberto Baggio", "member of sports team", "Italy national football team", 1988, 2004),
    Fact("Roberto Baggio", "member of sports team", "A.C. Milan", 1995, 1997),
    Fact("Roberto Baggio", "member of sports team", "Bologna F.C. 1909", 1997, 1998),
}


def _random_graph(rng: random.Random, size: int) -> KnowledgeGraph:
    entities = [f"e{i}" for i in range(60)]
    relations = [f"r{i}" for i in range(8)]
    facts = set()
    while len(facts) < size:
        h, t, r = rng.choice(entities), rng.choice(entities), rng.choice(relations)
        if rng.random() < 0.5:
            s = rng.randint(1900, 2020)
            facts.add(Fact(h, r, t, s, s + rng.randint(0, 10)))
        else:
            facts.add(Fact(h, r, t))
    return KnowledgeGraph(facts)


def test_criterion_4_inverse_temporal(baggio_graph, movie_graph):
    got = baggio_graph.explore("Roberto Baggio", ["member of sports team"])
    assert len(got) == 7 and set(got) == BAGGIO_FACTS

    rng = random.Random(4)
    graphs = [baggio_graph, movie_graph] + [_random_graph(rng, n) for n in (1, 50, 400, 1000)]
    for graph in graphs:
        facts = graph.facts
        assert len(facts) <= 1000
        for f in facts:
            assert f in graph.explore(f.head, [f.relation])
            assert Fact(f.tail, "~" + f.relation, f.head, f.start_time, f.end_time) in graph.explore(f.tail, ["~" + f.relation])
        for e in graph.entities():
            rels = graph.get_relations(e)
            assert list(rels) == scan_relations(facts, e)
            for r in rels:
                assert set(graph.explore(e, [r])) == scan_explore(facts, e, [r])
                # (a, r, b) <=> (b, ~r, a) through the graph's own view
                for v in graph.explore(e, [r]):
                    back = "~" + r if not r.startswith("~") else r[1:]
                    assert v.inverted() in graph.explore(v.tail, [back])


# 5. strict self-consistency algebra -----------------------------------------

def _spec_verdict(pattern):
    if any(p is None for p in pattern):
        return Abstained(TRIAL_ABSTAINED)
    if len({frozenset(p) for p in pattern}) > 1:
        return Abstained(TRIAL_DISAGREEMENT)
    return Answered(tuple(pattern[0]))


def test_criterion_5_self_consistency(movie_graph):
    import itertools

    outcomes = [None, ("A",), ("B",), ("A", "B"), ("B", "A")]
    for n in (2, 3):
        for pattern in itertools.product(outcomes, repeat=n):
            got = unanimous_verdict(list(pattern))
            want = _spec_verdict(pattern)
            if isinstance(want, Answered):
                assert isinstance(got, Answered) and set(got.labels) == set(want.labels)
            else:
                assert got == want
    assert unanimous_verdict([("A",)] * 3) == Answered(("A",))
    assert unanimous_verdict([("A",), ("A",), ("B",)]) == Abstained(TRIAL_DISAGREEMENT)
    assert unanimous_verdict([("A",), None, ("A",)]) == Abstained(TRIAL_ABSTAINED)

    assert SAMPLING_VARIATIONS == ((0.3, 0.5), (0.7, 1.0), (0.95, 0.95))
    for trials in (2, 3):
        for strategy in (MULTI_PROMPT, PARAPHRASE, SAMPLING_VARIATION):
            cfg = RunConfig(SINGLE_SC, trials=trials, strategy=strategy)
            backend = ScriptedBackend(["1. Who made Alien?\n2. Alien's director?\n3. Name Alien's director."])
            inputs = build_trial_inputs("Who directed Alien?", cfg, PROMPTS, backend)
            assert len(inputs) == trials == len(set(inputs))
            if strategy == SAMPLING_VARIATION:
                assert [i.sampling for i in inputs] == [SamplingParams(p, t) for p, t in SAMPLING_VARIATIONS[:trials]]


# 6. knowledge-shortcut fixture -----------------------------------------------

def test_criterion_6_contradiction_graph(contradiction_graph):
    op = ScriptedBackend(INCEPTION_OPERATOR, role="operator")
    sup = ScriptedBackend(INCEPTION_SUPERVISOR, role="supervisor")
    res = run_dual(INCEPTION_QUERY, ["Inception"], contradiction_graph, op, sup, RunConfig(DUAL, 15), PROMPTS)
    assert res.verdict == Answered(("Mario Van Peebles",))
    server = "\n".join(r["text"] for r in res.transcript if r["role"] == "server")
    assert "[Inception, directed_by, Mario Van Peebles]" in server
    assert "Christopher Nolan" not in server


# 7. abstain-insensitivity -------------------------------------------------------

def test_criterion_7_abstain_insensitivity():
    rng = random.Random(7)
    for _ in range(300):
        rows = _random_rows(rng, rng.randint(1, 40))
        recs = [EvalRecord.make(str(i), g, p) for i, (g, p) in enumerate(rows)]
        k = rng.randint(1, 25)
        padded = recs + [EvalRecord.make(f"abstain{j}", ["g"], None) for j in range(k)]
        before, after = evaluate(recs), evaluate(padded)
        assert after.coverage == before.counts.n_answered / (len(recs) + k)
        for key in ("micro_f1", "samplewise_f1", "hit_rate"):
            assert getattr(before, key) == getattr(after, key)


# 8. call accounting ------------------------------------------------------------

def test_criterion_8_accounting(fixtures_dir, tmp_path):
    meter = UsageMeter()
    out = run_experiment(load_manifest(fixtures_dir / "toy_manifest.yaml", output=tmp_path / "toy"), meter)
    st = call_stats(out)
    assert st["samples"] == 12
    assert st["mean_operator_calls"] == TOY_OPERATOR_CALLS / 12
    assert st["mean_supervisor_calls"] == TOY_SUPERVISOR_CALLS / 12
    assert st["mean_supervisor_calls_answered"] == TOY_ANSWERED_SUPERVISOR_CALLS / TOY_ANSWERED
    assert st["mean_supervisor_calls_answered"] >= 1.0
    assert meter.calls("operator") == st["operator_calls_total"]
    assert meter.calls("supervisor") == st["supervisor_calls_total"]


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(pytest.main([__file__, "-v"]))
