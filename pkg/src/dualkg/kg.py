"""In-memory knowledge graph with forward/inverse adjacency indexes.

Facts are stored in canonical direction only. Inverse traversal is a
query-time view: a stored fact ``(a, r, b)`` is visible from ``b`` as
``(b, ~r, a)``.
"""

from __future__ import annotations

import io
import unicodedata
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import BinaryIO, Iterable, Mapping

INVERSE_MARKER = "~"

TRIPLE_TSV = "triple-tsv"
QUINTUPLE_TSV = "quintuple-tsv"
FORMATS = {TRIPLE_TSV: 3, QUINTUPLE_TSV: 5}

OUT = "out"
IN = "in"


class GraphLoadError(ValueError):
    pass


class UsageError(ValueError):
    """A caller (usually the Operator, via the server) broke an operation's contract."""


def normalize_name(text: str) -> str:
    """NFC-normalize and trim an entity or relation name. Case is preserved."""
    return unicodedata.normalize("NFC", text).strip()


def invert_relation(relation: str) -> str:
    if relation.startswith(INVERSE_MARKER):
        return relation[len(INVERSE_MARKER):]
    return INVERSE_MARKER + relation


@dataclass(frozen=True)
class Fact:
    """A KG edge, or a view of one.

    ``start_time``/``end_time`` are both set (temporal quintuple) or both
    ``None`` (plain triple). A fact whose relation carries the ``~`` prefix
    is an inverse view produced by :meth:`KnowledgeGraph.explore`; it never
    lives in a graph's fact set.
    """

    head: str
    relation: str
    tail: str
    start_time: int | None = None
    end_time: int | None = None

    def __post_init__(self) -> None:
        for name in ("head", "relation", "tail"):
            value = getattr(self, name)
            if not isinstance(value, str):
                raise TypeError(f"{name} must be a string, got {type(value).__name__}")
            value = normalize_name(value)
            if not value:
                raise ValueError(f"{name} is empty")
            object.__setattr__(self, name, value)
        if self.relation == INVERSE_MARKER:
            raise ValueError("relation is only an inverse marker")
        if (self.start_time is None) != (self.end_time is None):
            raise ValueError("start_time and end_time must both be present or both absent")
        if self.start_time is not None and self.start_time > self.end_time:
            raise ValueError(f"start_time {self.start_time} > end_time {self.end_time}")

    @property
    def is_temporal(self) -> bool:
        return self.start_time is not None

    @property
    def is_inverse(self) -> bool:
        return self.relation.startswith(INVERSE_MARKER)

    def inverted(self) -> Fact:
        return Fact(self.tail, invert_relation(self.relation), self.head, self.start_time, self.end_time)

    def canonical(self) -> Fact:
        """The stored-direction form of this fact (identity for forward facts)."""
        return self.inverted() if self.is_inverse else self

    def fields(self) -> tuple:
        if self.is_temporal:
            return (self.head, self.relation, self.tail, self.start_time, self.end_time)
        return (self.head, self.relation, self.tail)

    def sort_key(self) -> tuple:
        # triples sort before quintuples with the same (h, r, t)
        times = (0, self.start_time, self.end_time) if self.is_temporal else (-1, 0, 0)
        return (self.head, self.relation, self.tail, *times)


class KnowledgeGraph:
    """Immutable fact set plus derived indexes.

    Lookups on unknown entities return empty results rather than raising.
    """

    def __init__(self, facts: Iterable[Fact] = ()):
        stored = set()
        for fact in facts:
            if fact.is_inverse:
                raise ValueError(f"stored facts may not use the inverse marker: {fact}")
            stored.add(fact)
        self._facts = frozenset(stored)

        fwd: dict[str, set[str]] = defaultdict(set)
        rev: dict[str, set[str]] = defaultdict(set)
        pairs: dict[tuple[str, str, str], set[Fact]] = defaultdict(set)
        for fact in self._facts:
            fwd[fact.head].add(fact.relation)
            rev[fact.tail].add(fact.relation)
            pairs[(fact.head, fact.relation, OUT)].add(fact)
            pairs[(fact.tail, fact.relation, IN)].add(fact)

        self.fwd_index: Mapping[str, frozenset[str]] = MappingProxyType(
            {k: frozenset(v) for k, v in fwd.items()}
        )
        self.rev_index: Mapping[str, frozenset[str]] = MappingProxyType(
            {k: frozenset(v) for k, v in rev.items()}
        )
        self.pair_index: Mapping[tuple[str, str, str], frozenset[Fact]] = MappingProxyType(
            {k: frozenset(v) for k, v in pairs.items()}
        )

    @property
    def facts(self) -> frozenset[Fact]:
        return self._facts

    def __len__(self) -> int:
        return len(self._facts)

    def __repr__(self) -> str:
        return f"KnowledgeGraph({len(self._facts)} facts, {len(self.entities())} entities)"

    def entities(self) -> frozenset[str]:
        return frozenset(self.fwd_index) | frozenset(self.rev_index)

    def relation_names(self) -> frozenset[str]:
        return frozenset(f.relation for f in self._facts)

    def has_entity(self, entity: str) -> bool:
        entity = normalize_name(entity)
        return entity in self.fwd_index or entity in self.rev_index

    @property
    def is_temporal(self) -> bool:
        return any(f.is_temporal for f in self._facts)

    def get_relations(self, entity: str) -> tuple[str, ...]:
        """All relations touching ``entity``, inbound ones ``~``-prefixed, sorted."""
        entity = normalize_name(entity)
        forward = self.fwd_index.get(entity, frozenset())
        inverse = {INVERSE_MARKER + r for r in self.rev_index.get(entity, frozenset())}
        return tuple(sorted(forward | inverse))

    def explore(self, entity: str, relations: Iterable[str]) -> list[Fact]:
        """Expand ``entity`` along ``relations``.

        Plain relations match stored facts ``(entity, r, ?)``; ``~r`` matches
        ``(?, r, entity)`` and yields the view ``(entity, ~r, head)``. Time
        fields pass through untouched. Result is de-duplicated and sorted.

        Raises:
            UsageError: if ``relations`` is empty.
        """
        entity = normalize_name(entity)
        rels = [normalize_name(r) for r in relations]
        if not rels:
            raise UsageError("ExploreKG needs at least one relation")
        found: set[Fact] = set()
        for rel in rels:
            if rel.startswith(INVERSE_MARKER):
                for fact in self.pair_index.get((entity, rel[len(INVERSE_MARKER):], IN), ()):
                    found.add(fact.inverted())
            else:
                found.update(self.pair_index.get((entity, rel, OUT), ()))
        return sorted(found, key=Fact.sort_key)


def _parse_time(raw: str, lineno: int, column: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise GraphLoadError(
            f"line {lineno}: {column} must be an integer year, got {raw!r}"
        ) from None


def load_graph(source: BinaryIO | bytes, fmt: str = TRIPLE_TSV) -> KnowledgeGraph:
    """Parse a TSV byte stream into a :class:`KnowledgeGraph`.

    Blank lines and ``#`` comment lines are skipped; duplicate facts collapse.
    """
    if fmt not in FORMATS:
        raise GraphLoadError(f"unknown graph format {fmt!r}; expected one of {sorted(FORMATS)}")
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    width = FORMATS[fmt]
    facts = []
    for lineno, raw in enumerate(source, start=1):
        try:
            line = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise GraphLoadError(f"line {lineno}: not valid UTF-8 ({exc.reason})") from None
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != width:
            raise GraphLoadError(
                f"line {lineno}: expected {width} tab-separated fields for {fmt}, got {len(cols)}"
            )
        head, rel, tail = cols[:3]
        if normalize_name(rel).startswith(INVERSE_MARKER):
            raise GraphLoadError(f"line {lineno}: relation {rel!r} starts with the inverse marker")
        start = end = None
        if width == 5:
            start = _parse_time(cols[3], lineno, "start time")
            end = _parse_time(cols[4], lineno, "end time")
        try:
            facts.append(Fact(head, rel, tail, start, end))
        except ValueError as exc:
            raise GraphLoadError(f"line {lineno}: {exc}") from None
    return KnowledgeGraph(facts)


def load_graph_file(path: str | Path, fmt: str | None = None) -> KnowledgeGraph:
    """Load from a path; ``fmt=None`` sniffs the column count of the first data line."""
    path = Path(path)
    if fmt is None:
        fmt = sniff_format(path)
    with path.open("rb") as fh:
        return load_graph(fh, fmt)


def sniff_format(path: str | Path) -> str:
    with Path(path).open("rb") as fh:
        for raw in fh:
            line = raw.decode("utf-8", errors="replace").rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            return QUINTUPLE_TSV if line.count("\t") == 4 else TRIPLE_TSV
    return TRIPLE_TSV


def dump_graph(graph: KnowledgeGraph, fmt: str | None = None) -> bytes:
    """Serialize ``graph`` to TSV bytes in sorted order.

    Round-trips through :func:`load_graph`.
    """
    if fmt is None:
        fmt = QUINTUPLE_TSV if graph.is_temporal else TRIPLE_TSV
    if fmt not in FORMATS:
        raise ValueError(f"unknown graph format {fmt!r}")
    lines = []
    for fact in sorted(graph.facts, key=Fact.sort_key):
        if fmt == QUINTUPLE_TSV and not fact.is_temporal:
            raise ValueError(f"{fact} has no time fields; cannot write {fmt}")
        if fmt == TRIPLE_TSV and fact.is_temporal:
            raise ValueError(f"{fact} has time fields; cannot write {fmt}")
        for text in (fact.head, fact.relation, fact.tail):
            if "\t" in text or "\n" in text:
                raise ValueError(f"field {text!r} contains a tab or newline")
        lines.append("\t".join(str(v) for v in fact.fields()))
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""
