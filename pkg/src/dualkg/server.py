"""Executes Operator calls against a graph and keeps per-query session state."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

from .kg import Fact, KnowledgeGraph, UsageError, normalize_name
from .protocol import (
    AgentAction,
    Diagnostic,
    ExploreKG,
    GetRelation,
    ParseFailure,
    Verification,
    parse_operator_turn,
    render_server_reply,
)

OPERATOR = "operator"
SERVER = "server"
SUPERVISOR = "supervisor"
ROLES = (OPERATOR, SERVER, SUPERVISOR)


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ChatEntry:
    role: str
    text: str
    iteration: int

    def to_dict(self) -> dict:
        return {"role": self.role, "text": self.text, "iteration": self.iteration}


@dataclass
class SessionState:
    query: str
    limit: int
    seen_entities: dict[str, None] = field(default_factory=dict)
    relation_stack: dict[str, set[str]] = field(default_factory=dict)
    fact_stack: dict[Fact, None] = field(default_factory=dict)
    chat_log: list[ChatEntry] = field(default_factory=list)
    iteration: int = 0

    @property
    def exhausted(self) -> bool:
        return self.iteration >= self.limit

    def record(self, role: str, text: str) -> None:
        if role not in ROLES:
            raise ValueError(f"unknown chat role {role!r}")
        self.chat_log.append(ChatEntry(role, text, self.iteration))


@dataclass(frozen=True)
class Evidence:
    facts: tuple[Fact, ...]
    relations: dict[str, tuple[str, ...]]


def new_session(query: str, topic_entities: Sequence[str], limit: int) -> SessionState:
    topics = [normalize_name(e) for e in topic_entities]
    if not topics or not all(topics):
        raise UsageError("a session needs at least one non-empty topic entity")
    if limit < 1:
        raise UsageError(f"iteration limit must be >= 1, got {limit}")
    return SessionState(query=query, limit=limit, seen_entities=dict.fromkeys(topics))


def _execute(state: SessionState, graph: KnowledgeGraph, action: AgentAction):
    if isinstance(action, GetRelation):
        if not graph.has_entity(action.entity):
            return Diagnostic("unknown entity")
        rels = graph.get_relations(action.entity)
        if rels:
            state.relation_stack.setdefault(action.entity, set()).update(rels)
        return rels
    if isinstance(action, ExploreKG):
        if not graph.has_entity(action.entity):
            return Diagnostic("unknown entity")
        try:
            facts = graph.explore(action.entity, action.relations)
        except UsageError as exc:
            return Diagnostic(str(exc))
        if not facts:
            return Diagnostic("relation not found at this entity; call GetRelation first")
        for fact in facts:
            state.fact_stack.setdefault(fact, None)
            state.seen_entities.setdefault(fact.head, None)
            state.seen_entities.setdefault(fact.tail, None)
        return facts
    if isinstance(action, Verification):
        return None
    raise TypeError(f"not an agent action: {action!r}")


def apply_actions(
    state: SessionState,
    graph: KnowledgeGraph,
    operator_text: str,
    actions: list[AgentAction] | ParseFailure,
) -> tuple[SessionState, str, bool]:
    """Run one Operator turn.

    Consumes exactly one iteration whatever the turn contains, including a
    parse failure. Returns the (mutated) state, the server reply text, and
    whether the turn asked for verification.
    """
    if state.exhausted:
        raise BudgetExceeded(f"iteration {state.iteration} >= limit {state.limit}")
    state.iteration += 1
    state.record(OPERATOR, operator_text)

    if isinstance(actions, ParseFailure):
        results = [(actions, None)]
        verify = False
    else:
        results = []
        verify = False
        for action in actions:
            results.append((action, _execute(state, graph, action)))
            verify = verify or isinstance(action, Verification)

    reply = render_server_reply(results)
    state.record(SERVER, reply)
    return state, reply, verify


def take_turn(state: SessionState, graph: KnowledgeGraph, operator_text: str) -> tuple[SessionState, str, bool]:
    return apply_actions(state, graph, operator_text, parse_operator_turn(operator_text))


def snapshot_evidence(state: SessionState) -> Evidence:
    """Copies of G_k (in exploration order) and R_k (entity insertion order)."""
    relations = {entity: tuple(sorted(rels)) for entity, rels in state.relation_stack.items()}
    return Evidence(tuple(state.fact_stack), relations)


def write_transcript(entries: Iterable[ChatEntry | dict], out: IO[str]) -> None:
    for entry in entries:
        row = entry.to_dict() if isinstance(entry, ChatEntry) else entry
        out.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def save_transcript(entries: Iterable[ChatEntry | dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        write_transcript(entries, fh)


def load_transcript(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def replay_session(
    graph: KnowledgeGraph,
    query: str,
    topic_entities: Sequence[str],
    limit: int,
    entries: Iterable[dict],
) -> SessionState:
    """Re-execute the Operator turns of a recorded transcript.

    Server replies are regenerated from ``graph``; Supervisor entries are
    copied verbatim. Comparing the result's chat log with the recording
    detects graph drift or nondeterminism.
    """
    state = new_session(query, topic_entities, limit)
    for entry in entries:
        if entry["role"] == OPERATOR:
            take_turn(state, graph, entry["text"])
        elif entry["role"] == SUPERVISOR:
            state.record(SUPERVISOR, entry["text"])
    return state
