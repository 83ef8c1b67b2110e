"""Dataset adapters: turn benchmark files into normalized :class:`DatasetSample` rows.

Adapters accept pre-extracted topic entities; no entity linking happens here.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

from .kg import QUINTUPLE_TSV, TRIPLE_TSV, normalize_name
from .llm import MAX_TOKENS_LONG, MAX_TOKENS_SHORT

log = logging.getLogger(__name__)

BOOLEAN = "boolean"
SINGLE_LABEL = "single_label"
MULTI_LABEL = "multi_label"
KINDS = (BOOLEAN, SINGLE_LABEL, MULTI_LABEL)

MAX_BAD_FRACTION = 0.10


class SampleError(ValueError):
    pass


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSample:
    id: str
    query: str
    topic_entities: tuple[str, ...]
    gold: frozenset[str]
    kind: str
    group: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SampleError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.query.strip():
            raise SampleError("empty query")
        if not self.topic_entities or not all(self.topic_entities):
            raise SampleError("no topic entities")
        if not self.gold:
            raise SampleError("no gold labels")
        if self.kind == BOOLEAN and not (len(self.gold) == 1 and self.gold <= {"True", "False"}):
            raise SampleError(f"boolean gold must be True or False, got {sorted(self.gold)}")

    def gold_row(self) -> dict:
        return {"id": self.id, "labels": sorted(self.gold), "kind": self.kind}


def _bool_label(value: Any) -> str:
    if isinstance(value, list) and len(value) == 1:
        value = value[0]
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, str) and value.strip().lower() in ("true", "false", "supported", "refuted"):
        return "True" if value.strip().lower() in ("true", "supported") else "False"
    raise SampleError(f"not a boolean label: {value!r}")


def _labels(values: Any) -> frozenset[str]:
    if not isinstance(values, list):
        values = [values]
    return frozenset(normalize_name(str(v)) for v in values if normalize_name(str(v)))


def _entities(values: Any) -> tuple[str, ...]:
    if isinstance(values, str):
        values = [values]
    if not isinstance(values, list):
        raise SampleError(f"entities must be a list, got {type(values).__name__}")
    return tuple(dict.fromkeys(normalize_name(str(v)) for v in values if normalize_name(str(v))))


def _require(row: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in row]
    if missing:
        raise SampleError(f"missing field(s): {', '.join(missing)}")


def _generic(row: dict, idx: int) -> DatasetSample:
    _require(row, "id", "question", "entities", "labels", "kind")
    kind = row["kind"]
    gold = frozenset({_bool_label(row["labels"])}) if kind == BOOLEAN else _labels(row["labels"])
    return DatasetSample(str(row["id"]), row["question"], _entities(row["entities"]), gold, kind, row.get("group"))


_BRACKETED = re.compile(r"\[([^\[\]]+)\]")


def _metaqa(line: str, idx: int, stem: str) -> DatasetSample:
    parts = line.split("\t")
    if len(parts) != 2:
        raise SampleError(f"expected 'question<TAB>answer|answer', got {len(parts)} field(s)")
    question, answers = parts
    entities = tuple(normalize_name(m) for m in _BRACKETED.findall(question))
    if not entities:
        raise SampleError("no [bracketed] topic entity in question")
    return DatasetSample(f"{stem}-{idx}", question.strip(), entities, _labels(answers.split("|")), MULTI_LABEL)


def _factkg(row: dict, idx: int) -> DatasetSample:
    claim = row.get("claim") or row.get("question")
    if not claim:
        raise SampleError("missing field: claim")
    label = row.get("label", row.get("Label"))
    if label is None:
        raise SampleError("missing field: label")
    entities = row.get("entities", row.get("Entity_set"))
    if entities is None:
        raise SampleError("missing field: entities")
    group = row.get("type")
    if group is None and isinstance(row.get("types"), list) and row["types"]:
        group = str(row["types"][0])
    return DatasetSample(
        str(row.get("id", f"factkg-{idx}")), claim, _entities(entities), frozenset({_bool_label(label)}), BOOLEAN, group
    )


def _cron(row: dict, idx: int) -> DatasetSample:
    _require(row, "question", "answers", "entities")
    gold = _labels(row["answers"])
    kind = SINGLE_LABEL if len(gold) == 1 else MULTI_LABEL
    sid = row.get("id", row.get("uniq_id", f"cron-{idx}"))
    return DatasetSample(str(sid), row["question"], _entities(row["entities"]), gold, kind, row.get("type"))


@dataclass(frozen=True)
class Adapter:
    id: str
    graph_format: str
    max_tokens: int
    reader: Callable[[Path], Iterator[tuple[int, Callable[[], DatasetSample]]]]


def _json_rows(path: Path) -> Iterator[tuple[int, Callable[[], DatasetSample]]]:
    """Yield (index, thunk) for JSONL files, JSON arrays, or FactKG-style claim maps."""
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = None  # JSON Lines
    if isinstance(data, list):
        for i, row in enumerate(data, start=1):
            yield i, (lambda row=row: row)
        return
    if isinstance(data, dict) and all(isinstance(v, dict) for v in data.values()):
        # {claim: {Label, Entity_set, types}}
        for i, (claim, meta) in enumerate(data.items(), start=1):
            yield i, (lambda claim=claim, meta=meta: {"claim": claim, **meta})
        return
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            yield i, (lambda line=line: json.loads(line))


def _json_reader(parse: Callable[[dict, int], DatasetSample]):
    def read(path: Path):
        for i, thunk in _json_rows(path):
            def build(thunk=thunk, i=i):
                try:
                    row = thunk()
                except json.JSONDecodeError as exc:
                    raise SampleError(f"invalid JSON: {exc.msg}") from None
                if not isinstance(row, dict):
                    raise SampleError("row is not a JSON object")
                return parse(row, i)
            yield i, build
    return read


def _metaqa_reader(path: Path):
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip():
            yield i, (lambda line=line, i=i: _metaqa(line.rstrip("\r"), i, path.stem))


ADAPTERS = {
    "generic-jsonl": Adapter("generic-jsonl", TRIPLE_TSV, MAX_TOKENS_LONG, _json_reader(_generic)),
    "metaqa-style": Adapter("metaqa-style", TRIPLE_TSV, MAX_TOKENS_LONG, _metaqa_reader),
    "factkg-style": Adapter("factkg-style", TRIPLE_TSV, MAX_TOKENS_SHORT, _json_reader(_factkg)),
    "cron-style": Adapter("cron-style", QUINTUPLE_TSV, MAX_TOKENS_SHORT, _json_reader(_cron)),
}


def get_adapter(adapter_id: str) -> Adapter:
    try:
        return ADAPTERS[adapter_id]
    except KeyError:
        raise DatasetError(f"unknown dataset adapter {adapter_id!r}; choose from {sorted(ADAPTERS)}") from None


@dataclass
class Ingested:
    samples: list[DatasetSample]
    errors: list[tuple[int, str]] = field(default_factory=list)
    adapter: Adapter | None = None

    def __iter__(self) -> Iterator[DatasetSample]:
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)


def ingest(adapter_id: str, path: str | Path) -> Ingested:
    """Read and validate every sample in ``path``.

    Bad rows are logged and skipped; more than 10% bad rows aborts with
    :class:`DatasetError`. Duplicate ids are errors.
    """
    adapter = get_adapter(adapter_id)
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    samples: list[DatasetSample] = []
    errors: list[tuple[int, str]] = []
    seen: set[str] = set()
    for idx, build in adapter.reader(path):
        try:
            sample = build()
            if sample.id in seen:
                raise SampleError(f"duplicate id {sample.id!r}")
        except (SampleError, TypeError, AttributeError) as exc:
            errors.append((idx, str(exc)))
            log.warning("%s row %d: %s", path.name, idx, exc)
            continue
        seen.add(sample.id)
        samples.append(sample)
    total = len(samples) + len(errors)
    if errors:
        log.warning("%s: %d of %d rows rejected", path.name, len(errors), total)
    if total and len(errors) / total > MAX_BAD_FRACTION:
        first = "; ".join(f"row {i}: {msg}" for i, msg in errors[:3])
        raise DatasetError(f"{path.name}: {len(errors)} of {total} rows invalid (> 10%): {first}")
    return Ingested(samples, errors, adapter)
