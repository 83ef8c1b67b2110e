"""Text call language spoken by the Operator and Supervisor agents.

Operator turns carry one helper call per line::

    GetRelation(<entity>)
    ExploreKG(<entity>, [<relation>, <relation>, ...])
    Verification()

Any other line is treated as free-form reasoning and ignored, as long as at
least one line in the turn is a valid call. Supervisor turns carry either an
``ANSWER: a | b`` line or a ``FEEDBACK: ...`` block.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .kg import Fact, normalize_name


@dataclass(frozen=True)
class GetRelation:
    entity: str


@dataclass(frozen=True)
class ExploreKG:
    entity: str
    relations: tuple[str, ...]

    def __post_init__(self) -> None:
        rels = tuple(dict.fromkeys(self.relations))
        if not rels:
            raise ValueError("ExploreKG requires at least one relation")
        object.__setattr__(self, "relations", rels)


@dataclass(frozen=True)
class Verification:
    pass


AgentAction = Union[GetRelation, ExploreKG, Verification]


@dataclass(frozen=True)
class Answer:
    labels: tuple[str, ...]


@dataclass(frozen=True)
class Feedback:
    guidance: str


VerificationOutcome = Union[Answer, Feedback]


@dataclass(frozen=True)
class ParseFailure:
    raw: str
    diagnostic: str


@dataclass(frozen=True)
class Diagnostic:
    """Per-action error text returned to the Operator in place of a result."""

    message: str


CALL_NAMES = ("GetRelation", "ExploreKG", "Verification")

_BULLET = re.compile(r"^(?:[-*•]\s+|\d+[.)]\s+)")
_GET_RELATION = re.compile(r"^GetRelation\(([^()\n]*)\)$")
_EXPLORE = re.compile(r"^ExploreKG\(([^()\n]*?),\s*\[([^()\[\]\n]*)\]\s*\)$")
_VERIFICATION = re.compile(r"^Verification\(\s*\)$")
_LOOKS_LIKE_CALL = re.compile(r"\b(?:GetRelation|ExploreKG|Verification)\s*\(")

USAGE_HINT = (
    "expected one call per line: GetRelation(<entity>), "
    "ExploreKG(<entity>, [<relation>, ...]) or Verification()"
)


def _clean_line(line: str) -> str:
    line = _BULLET.sub("", line.strip(), count=1).strip()
    if len(line) >= 2 and line[0] == line[-1] == "`":
        line = line.strip("`").strip()
    return line


def parse_call(line: str) -> AgentAction | None:
    """Parse a single line, returning ``None`` if it is not a well-formed call."""
    line = _clean_line(line)
    if _VERIFICATION.match(line):
        return Verification()
    m = _GET_RELATION.match(line)
    if m:
        entity = normalize_name(m.group(1))
        return GetRelation(entity) if entity else None
    m = _EXPLORE.match(line)
    if m:
        entity = normalize_name(m.group(1))
        rels = [normalize_name(r) for r in m.group(2).split(",")]
        if not entity or not all(rels) or any(r == "~" for r in rels):
            return None
        return ExploreKG(entity, tuple(rels))
    return None


def parse_operator_turn(text: str) -> list[AgentAction] | ParseFailure:
    actions = []
    malformed = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        action = parse_call(line)
        if action is not None:
            actions.append(action)
        elif malformed is None and _LOOKS_LIKE_CALL.search(line):
            malformed = (lineno, line.strip())
    if actions:
        return actions
    if malformed is not None:
        lineno, line = malformed
        excerpt = line if len(line) <= 80 else line[:77] + "..."
        return ParseFailure(text, f"malformed call on line {lineno} ({excerpt}); {USAGE_HINT}")
    return ParseFailure(text, f"no helper-function call found; {USAGE_HINT}")


_ANSWER = re.compile(r"^\s*ANSWER\s*:(.*)$", re.IGNORECASE)
_FEEDBACK = re.compile(r"^\s*FEEDBACK\s*:", re.IGNORECASE)


def split_labels(raw: str) -> tuple[str, ...]:
    labels = (normalize_name(part) for part in raw.split("|"))
    return tuple(dict.fromkeys(label for label in labels if label))


def parse_supervisor_turn(text: str) -> VerificationOutcome | ParseFailure:
    lines = text.splitlines()
    for line in lines:
        m = _ANSWER.match(line)
        if m:
            labels = split_labels(m.group(1))
            if labels:
                return Answer(labels)
            return ParseFailure(text, "ANSWER line carries no labels")
    for i, line in enumerate(lines):
        m = _FEEDBACK.match(line)
        if m:
            rest = "\n".join([line[m.end():], *lines[i + 1:]]).strip()
            if rest:
                return Feedback(rest)
            return ParseFailure(text, "FEEDBACK line carries no guidance")
    return ParseFailure(text, "neither ANSWER: nor FEEDBACK: found")


def render_action(action: AgentAction) -> str:
    """Canonical call text; ``parse_operator_turn(render_action(a)) == [a]``."""
    if isinstance(action, GetRelation):
        return f"GetRelation({action.entity})"
    if isinstance(action, ExploreKG):
        return f"ExploreKG({action.entity}, [{', '.join(action.relations)}])"
    if isinstance(action, Verification):
        return "Verification()"
    raise TypeError(f"not an agent action: {action!r}")


def render_fact(fact: Fact) -> str:
    return "[" + ", ".join(str(v) for v in fact.fields()) + "]"


def render_facts(facts: Iterable[Fact]) -> str:
    return "\n".join(render_fact(f) for f in facts)


def render_relation_map(relations: dict[str, Sequence[str]]) -> str:
    return "\n".join(f"{entity}: {', '.join(sorted(rels))}" for entity, rels in relations.items())


def render_answer(labels: Sequence[str]) -> str:
    return "ANSWER: " + " | ".join(labels)


NO_RESULT = "NO RESULT"

ServerResult = tuple[Union[AgentAction, ParseFailure], object]


def _render_one(action, payload) -> str:
    if isinstance(action, ParseFailure):
        return f"FORMAT ERROR: {action.diagnostic}"
    if isinstance(action, Verification):
        return "Verification(): requested"
    if isinstance(action, GetRelation):
        header = f"Relations({action.entity}):"
    elif isinstance(action, ExploreKG):
        header = f"Triples({action.entity}, [{', '.join(action.relations)}]):"
    else:
        raise TypeError(f"not an agent action: {action!r}")
    if isinstance(payload, Diagnostic):
        return f"{header} {NO_RESULT} ({payload.message})"
    if not payload:
        return f"{header} {NO_RESULT}"
    if isinstance(action, GetRelation):
        return f"{header} {', '.join(sorted(payload))}"
    return header + "\n" + render_facts(sorted(payload, key=Fact.sort_key))


def render_server_reply(results: Sequence[ServerResult]) -> str:
    """One section per action, in call order; byte-stable for equal inputs."""
    return "\n\n".join(_render_one(action, payload) for action, payload in results)
