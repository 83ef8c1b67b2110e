"""Prompt templates and message builders for the Operator and Supervisor."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Sequence

from .llm import Message
from .protocol import render_facts, render_relation_map
from .server import OPERATOR, Evidence, SessionState

BUILTIN = "builtin"


@dataclass(frozen=True)
class PromptSet:
    """Raw template text. Porting to a new KG or task means swapping the few-shot blocks."""

    task_description: str
    helper_functions: str
    operator: str
    supervisor: str
    single_answer: str
    paraphrase: str
    operator_few_shots: tuple[str, ...]
    supervisor_few_shot: str

    def operator_system(self, few_shot: int = 0) -> str:
        return Template(self.operator).substitute(
            task_description=self.task_description.strip(),
            helper_functions=self.helper_functions.strip(),
            few_shot=self.operator_few_shots[few_shot].strip(),
        )

    def supervisor_system(self) -> str:
        return Template(self.supervisor).substitute(few_shot=self.supervisor_few_shot.strip())


def _read_dir(root) -> PromptSet:
    def text(name: str) -> str:
        return (root / name).read_text(encoding="utf-8")

    fewshot_dir = root / "fewshot"
    names = sorted(p.name for p in fewshot_dir.iterdir() if re.fullmatch(r"operator_\d+\.txt", p.name))
    if not names:
        raise FileNotFoundError(f"no fewshot/operator_N.txt files under {root}")
    names.sort(key=lambda n: int(re.search(r"\d+", n).group()))
    return PromptSet(
        task_description=text("task_description.txt"),
        helper_functions=text("helper_functions.txt"),
        operator=text("operator.txt"),
        supervisor=text("supervisor.txt"),
        single_answer=text("single_answer.txt"),
        paraphrase=text("paraphrase.txt"),
        operator_few_shots=tuple((fewshot_dir / n).read_text(encoding="utf-8") for n in names),
        supervisor_few_shot=(fewshot_dir / "supervisor.txt").read_text(encoding="utf-8"),
    )


def load_prompt_set(path: str | Path | None = None) -> PromptSet:
    """Load a prompt directory; ``None`` or ``"builtin"`` selects the packaged set.

    A custom directory may contain only a ``fewshot/`` folder; missing
    templates fall back to the packaged ones.
    """
    builtin = _read_dir(resources.files("dualkg") / "prompts")
    if path is None or str(path) == BUILTIN:
        return builtin
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"prompt set directory not found: {root}")
    fields = {}
    for attr, name in [
        ("task_description", "task_description.txt"),
        ("helper_functions", "helper_functions.txt"),
        ("operator", "operator.txt"),
        ("supervisor", "supervisor.txt"),
        ("single_answer", "single_answer.txt"),
        ("paraphrase", "paraphrase.txt"),
    ]:
        f = root / name
        fields[attr] = f.read_text(encoding="utf-8") if f.exists() else getattr(builtin, attr)
    fewshot = root / "fewshot"
    shots = sorted(fewshot.glob("operator_*.txt"), key=lambda p: int(re.search(r"\d+", p.stem).group())) if fewshot.is_dir() else []
    fields["operator_few_shots"] = tuple(p.read_text(encoding="utf-8") for p in shots) or builtin.operator_few_shots
    sup = fewshot / "supervisor.txt"
    fields["supervisor_few_shot"] = sup.read_text(encoding="utf-8") if sup.exists() else builtin.supervisor_few_shot
    return PromptSet(**fields)


def task_header(query: str, topic_entities: Sequence[str]) -> str:
    return f"Query: {query}\nTopic entities: {', '.join(topic_entities)}"


def operator_messages(
    prompts: PromptSet,
    state: SessionState,
    topic_entities: Sequence[str],
    few_shot: int = 0,
) -> list[Message]:
    """System prompt, task header, then the chat log as alternating turns.

    Consecutive server/supervisor entries fold into one user message so
    that assistant and user turns alternate.
    """
    messages = [
        Message("system", prompts.operator_system(few_shot)),
        Message("user", task_header(state.query, topic_entities)),
    ]
    for entry in state.chat_log:
        if entry.role == OPERATOR:
            messages.append(Message("assistant", entry.text))
        elif messages[-1].role == "user":
            messages[-1] = Message("user", messages[-1].content + "\n\n" + _labelled(entry.role, entry.text))
        else:
            messages.append(Message("user", _labelled(entry.role, entry.text)))
    return messages


def _labelled(role: str, text: str) -> str:
    return f"[{role.capitalize()}]\n{text}"


def evidence_block(query: str, evidence: Evidence) -> str:
    triples = render_facts(evidence.facts) or "(none)"
    relations = render_relation_map(evidence.relations) or "(none)"
    return f"Query: {query}\n\nTriples collected so far:\n{triples}\n\nRelations per entity:\n{relations}"


def supervisor_messages(prompts: PromptSet, query: str, evidence: Evidence) -> list[Message]:
    return [
        Message("system", prompts.supervisor_system()),
        Message("user", evidence_block(query, evidence)),
    ]


def single_answer_messages(prompts: PromptSet, query: str, evidence: Evidence, few_shot: int = 0) -> list[Message]:
    body = Template(prompts.single_answer).substitute(
        query=query,
        triples=render_facts(evidence.facts) or "(none)",
        relations=render_relation_map(evidence.relations) or "(none)",
    )
    return [Message("system", prompts.operator_system(few_shot)), Message("user", body)]


def paraphrase_messages(prompts: PromptSet, query: str, count: int) -> list[Message]:
    return [Message("user", Template(prompts.paraphrase).substitute(query=query, count=count))]


_NUMBERED = re.compile(r"^\s*(\d+)[.)]\s*(.+?)\s*$")


def parse_paraphrases(text: str) -> list[str]:
    """Numbered lines from a paraphrase reply, de-duplicated, in order."""
    out: dict[str, None] = {}
    for line in text.splitlines():
        m = _NUMBERED.match(line)
        if m:
            out.setdefault(m.group(2), None)
    return list(out)
