from __future__ import annotations

import pytest

from dualkg.prompts import (
    load_prompt_set,
    operator_messages,
    paraphrase_messages,
    parse_paraphrases,
    single_answer_messages,
    supervisor_messages,
)
from dualkg.server import SUPERVISOR, new_session, snapshot_evidence, take_turn


def test_builtin_set_renders_without_placeholders():
    p = load_prompt_set()
    assert len(p.operator_few_shots) >= 3
    for i in range(len(p.operator_few_shots)):
        text = p.operator_system(i)
        assert "${" not in text and "GetRelation" in text
    assert "ANSWER:" in p.supervisor_system() and "FEEDBACK:" in p.supervisor_system()


def test_custom_dir_falls_back(tmp_path):
    (tmp_path / "fewshot").mkdir()
    (tmp_path / "fewshot" / "operator_1.txt").write_text("only example", encoding="utf-8")
    (tmp_path / "fewshot" / "operator_10.txt").write_text("tenth", encoding="utf-8")
    (tmp_path / "fewshot" / "operator_2.txt").write_text("second", encoding="utf-8")
    p = load_prompt_set(tmp_path)
    assert p.operator_few_shots == ("only example", "second", "tenth")
    assert p.supervisor == load_prompt_set("builtin").supervisor
    with pytest.raises(FileNotFoundError):
        load_prompt_set(tmp_path / "missing")


def test_operator_messages_alternate(movie_graph):
    p = load_prompt_set()
    state = new_session("Who directed Alien?", ["Alien"], 5)
    take_turn(state, movie_graph, "GetRelation(Alien)\nVerification()")
    state.record(SUPERVISOR, "FEEDBACK: explore directed_by")
    take_turn(state, movie_graph, "ExploreKG(Alien, [directed_by])")
    msgs = operator_messages(p, state, ["Alien"])
    assert [m.role for m in msgs] == ["system", "user", "assistant", "user", "assistant", "user"]
    assert msgs[1].content == "Query: Who directed Alien?\nTopic entities: Alien"
    assert msgs[3].content.startswith("[Server]\n") and "\n\n[Supervisor]\nFEEDBACK: explore directed_by" in msgs[3].content
    assert "[Alien, directed_by, Ridley Scott]" in msgs[5].content


def test_evidence_messages(movie_graph):
    p = load_prompt_set()
    state = new_session("Who directed Alien?", ["Alien"], 5)
    take_turn(state, movie_graph, "GetRelation(Alien)")
    take_turn(state, movie_graph, "ExploreKG(Alien, [directed_by])")
    ev = snapshot_evidence(state)
    sup = supervisor_messages(p, state.query, ev)
    assert "[Alien, directed_by, Ridley Scott]" in sup[-1].content
    assert "Alien: directed_by, has_genre, release_year, starred_actors" in sup[-1].content
    single = single_answer_messages(p, state.query, ev, 1)
    assert single[0].content == p.operator_system(1) and "${" not in single[-1].content


def test_paraphrases():
    p = load_prompt_set()
    assert "3" in paraphrase_messages(p, "q?", 3)[0].content
    reply = "Here you go:\n1. Who made Alien?\n2) Who made Alien?\n3. Alien was directed by whom?\n  4.  Name Alien's director.\n"
    assert parse_paraphrases(reply) == ["Who made Alien?", "Alien was directed by whom?", "Name Alien's director."]
