"""Abstention-aware evaluation: coverage, micro/samplewise F1 and hit rate.

Quality metrics are computed over answered samples only. When nothing was
answered they are undefined and returned as ``None`` (rendered "n/a"), never 0.
"""

from __future__ import annotations

import json
import logging
import unicodedata
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)


def normalize_label(label: str) -> str:
    return unicodedata.normalize("NFC", str(label)).strip().casefold()


@dataclass(frozen=True)
class EvalRecord:
    """Gold label set plus a predicted label set, or ``None`` for Abstain."""

    id: str
    gold: frozenset[str]
    prediction: frozenset[str] | None = None
    group: str | None = None

    def __post_init__(self) -> None:
        gold = frozenset(normalize_label(g) for g in self.gold) - {""}
        if not gold:
            raise ValueError(f"record {self.id!r}: gold label set is empty")
        object.__setattr__(self, "gold", gold)
        if self.prediction is not None:
            pred = frozenset(normalize_label(p) for p in self.prediction) - {""}
            object.__setattr__(self, "prediction", pred or None)

    @property
    def answered(self) -> bool:
        return self.prediction is not None

    @classmethod
    def make(cls, id: str, gold: Iterable[str], prediction: Iterable[str] | None, group: str | None = None) -> EvalRecord:
        return cls(id, frozenset(gold), None if prediction is None else frozenset(prediction), group)


@dataclass(frozen=True)
class Counts:
    n_total: int
    n_answered: int
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricReport:
    coverage: float
    micro_f1: float | None
    samplewise_f1: float | None
    hit_rate: float | None
    counts: Counts

    def to_dict(self) -> dict:
        return asdict(self)


def _answered(records: Sequence[EvalRecord]) -> list[EvalRecord]:
    if not records:
        raise ValueError("no records to evaluate")
    return [r for r in records if r.answered]


def _f1(tp: int, fp: int, fn: int) -> float:
    # 2PR/(P+R) rewritten over counts: one rounding step, 0 when P+R = 0
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def _sample_counts(r: EvalRecord) -> tuple[int, int, int]:
    tp = len(r.prediction & r.gold)
    return tp, len(r.prediction) - tp, len(r.gold) - tp


def coverage(records: Sequence[EvalRecord]) -> float:
    return len(_answered(records)) / len(records)


def counts(records: Sequence[EvalRecord]) -> Counts:
    answered = _answered(records)
    tp = fp = fn = 0
    for r in answered:
        a, b, c = _sample_counts(r)
        tp, fp, fn = tp + a, fp + b, fn + c
    return Counts(len(records), len(answered), tp, fp, fn)


def micro_f1(records: Sequence[EvalRecord]) -> float | None:
    c = counts(records)
    if c.n_answered == 0:
        return None
    return _f1(c.tp, c.fp, c.fn)


def samplewise_f1(records: Sequence[EvalRecord]) -> float | None:
    answered = _answered(records)
    if not answered:
        return None
    total = 0.0
    for r in answered:
        total += _f1(*_sample_counts(r))
    return total / len(answered)


def hit_rate(records: Sequence[EvalRecord]) -> float | None:
    answered = _answered(records)
    if not answered:
        return None
    return sum(1 for r in answered if r.prediction & r.gold) / len(answered)


def evaluate(records: Sequence[EvalRecord]) -> MetricReport:
    return MetricReport(
        coverage=coverage(records),
        micro_f1=micro_f1(records),
        samplewise_f1=samplewise_f1(records),
        hit_rate=hit_rate(records),
        counts=counts(records),
    )


def evaluate_grouped(records: Sequence[EvalRecord]) -> dict[str, MetricReport]:
    groups: dict[str, list[EvalRecord]] = defaultdict(list)
    for r in records:
        groups[r.group or "all"].append(r)
    return {name: evaluate(rows) for name, rows in sorted(groups.items())}


def _pct(value: float | None) -> str:
    return "n/a" if value is None else f"{100 * value:.1f}"


def format_table(reports: dict[str, MetricReport]) -> str:
    """Aligned text table: one row per report, columns N, Cvg, F1 (M), F1 (S), Hit."""
    header = ["", "N", "Cvg", "F1 (M)", "F1 (S)", "Hit"]
    rows = [
        [name, str(r.counts.n_total), _pct(r.coverage), _pct(r.micro_f1), _pct(r.samplewise_f1), _pct(r.hit_rate)]
        for name, r in reports.items()
    ]
    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
    lines = []
    for row in [header, *rows]:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def read_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def join_records(results: Iterable[dict], gold: Iterable[dict]) -> list[EvalRecord]:
    """Join result rows ``{id, verdict, labels?}`` with gold rows ``{id, labels, kind?}``.

    Gold rows without a result are skipped with a warning.
    """
    by_id = {str(row["id"]): row for row in results}
    records = []
    missing = 0
    for g in gold:
        gid = str(g["id"])
        row = by_id.get(gid)
        if row is None:
            missing += 1
            continue
        prediction = row.get("labels") if row.get("verdict") == "answered" else None
        records.append(EvalRecord.make(gid, g["labels"], prediction, g.get("kind")))
    if missing:
        log.warning("%d gold samples have no result row", missing)
    return records
