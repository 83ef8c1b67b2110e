"""Batch experiment runner with resumable persistence, metric reports and call statistics.

Run directory layout::

    manifest.json          resolved manifest
    samples.jsonl          samples actually run {id, query, topic_entities, kind}
    gold.jsonl             {id, labels, kind}
    skipped.jsonl          samples whose topic entities are not in the graph
    results.partial.jsonl  append-only completion log (resume source)
    results.jsonl          final per-sample results, in dataset order
    transcripts/<id>.jsonl
    report.json / report.txt
    stats.json / stats.txt
    usage.json             gateway counters for the latest invocation
"""

from __future__ import annotations

import json
import logging
import random
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .datasets import Adapter, DatasetSample, get_adapter, ingest
from .kg import FORMATS, KnowledgeGraph, load_graph_file
from .llm import BackendConfig, HTTPBackend, ScriptedBackend, SamplingParams, UsageMeter
from .metrics import MetricReport, evaluate, evaluate_grouped, format_table, join_records, read_jsonl
from .orchestrator import (
    DUAL,
    HARD_FAILURE,
    Abstained,
    Answered,
    ReasoningResult,
    RunConfig,
    RunStats,
    run_dual,
    run_single_sc,
)
from .prompts import PromptSet, load_prompt_set
from .server import OPERATOR, SUPERVISOR, save_transcript

log = logging.getLogger(__name__)

DEFAULT_CONCURRENCY = 4
GATE_KEYS = {"min_coverage": "coverage", "min_micro_f1": "micro_f1", "min_samplewise_f1": "samplewise_f1", "min_hit_rate": "hit_rate"}


class ManifestError(ValueError):
    pass


@dataclass
class ExperimentManifest:
    adapter: str
    dataset_path: Path
    graph_path: Path
    graph_format: str
    run: RunConfig
    operator: BackendConfig
    supervisor: BackendConfig | None
    output: Path
    script_path: Path | None = None
    concurrency: int = DEFAULT_CONCURRENCY
    seed: int = 0
    sample_limit: int | None = None
    gates: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        run = self.run
        return {
            "dataset": {"adapter": self.adapter, "path": str(self.dataset_path), "sample": self.sample_limit},
            "graph": {"path": str(self.graph_path), "format": self.graph_format},
            "run": {
                "mode": run.mode,
                "T": run.limit,
                "trials": run.trials,
                "strategy": run.strategy,
                "prompt_set": run.prompt_set,
                "sampling_variations": [[s.top_p, s.temperature] for s in run.sampling_variations],
                "max_tokens": run.max_tokens,
            },
            "backends": {
                "operator": _backend_dict(self.operator),
                "supervisor": _backend_dict(self.supervisor) if self.supervisor else None,
                "script": str(self.script_path) if self.script_path else None,
            },
            "output": str(self.output),
            "concurrency": self.concurrency,
            "seed": self.seed,
            "gates": self.gates,
        }


def _backend_dict(cfg: BackendConfig) -> dict[str, Any]:
    return {
        "kind": cfg.kind, "model": cfg.model, "endpoint": cfg.endpoint,
        "top_p": cfg.top_p, "temperature": cfg.temperature, "max_tokens": cfg.max_tokens,
    }


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value).expanduser()
    return p if p.is_absolute() else (base / p)


def parse_manifest(data: dict[str, Any], base: Path = Path(".")) -> ExperimentManifest:
    """Validate a manifest mapping; relative paths resolve against ``base``."""
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a mapping")
    try:
        dataset = data["dataset"]
        graph = data["graph"]
        adapter = get_adapter(dataset["adapter"])
        run = dict(data.get("run") or {})
        backends = data.get("backends") or {}
        operator = BackendConfig.from_dict(backends.get("operator") or {})
        sup_data = backends.get("supervisor")
        supervisor = BackendConfig.from_dict(sup_data) if sup_data else None
        mode = run.get("mode", DUAL)
        if mode == DUAL and supervisor is None:
            supervisor = BackendConfig()
        max_tokens = run.get("max_tokens") or operator.max_tokens or adapter.max_tokens
        variations = run.get("sampling_variations")
        cfg = RunConfig(
            mode=mode,
            limit=run.get("T"),
            trials=run.get("trials", 3),
            strategy=run.get("strategy"),
            prompt_set=run.get("prompt_set"),
            operator_sampling=operator.sampling,
            supervisor_sampling=supervisor.sampling if supervisor else SamplingParams(),
            max_tokens=max_tokens,
            **({"sampling_variations": tuple(tuple(v) for v in variations)} if variations else {}),
        )
        if cfg.prompt_set and cfg.prompt_set != "builtin":
            cfg.prompt_set = str(_resolve(base, cfg.prompt_set))
        graph_format = graph.get("format") or adapter.graph_format
        if graph_format not in FORMATS:
            raise ManifestError(f"unknown graph format {graph_format!r}")
        if adapter.graph_format != graph_format and adapter.id == "cron-style":
            raise ManifestError("cron-style datasets need a quintuple-tsv graph")
        output = data.get("output")
        if not output:
            raise ManifestError("manifest needs an output directory")
        gates = dict(data.get("gates") or {})
        unknown = set(gates) - set(GATE_KEYS)
        if unknown:
            raise ManifestError(f"unknown gate(s): {sorted(unknown)}")
        concurrency = int(data.get("concurrency", DEFAULT_CONCURRENCY))
        if concurrency < 1:
            raise ManifestError("concurrency must be >= 1")
        return ExperimentManifest(
            adapter=adapter.id,
            dataset_path=_resolve(base, dataset["path"]),
            graph_path=_resolve(base, graph["path"]),
            graph_format=graph_format,
            run=cfg,
            operator=operator,
            supervisor=supervisor,
            output=_resolve(base, output),
            script_path=_resolve(base, backends.get("script")),
            concurrency=concurrency,
            seed=int(data.get("seed", 0)),
            sample_limit=dataset.get("sample"),
            gates={k: float(v) for k, v in gates.items()},
        )
    except KeyError as exc:
        raise ManifestError(f"manifest is missing {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ManifestError):
            raise
        raise ManifestError(str(exc)) from None


def load_manifest(path: str | Path, **overrides: Any) -> ExperimentManifest:
    path = Path(path)
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    manifest = parse_manifest(data, path.parent)
    for key, value in overrides.items():
        if value is not None:
            setattr(manifest, key, Path(value) if key == "output" else value)
    return manifest


def safe_name(sample_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", sample_id)[:120] or "_"


def _write_jsonl(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _read_partial(path: Path) -> dict[str, dict]:
    done: dict[str, dict] = {}
    if not path.exists():
        return done
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                log.warning("ignoring truncated line in %s", path.name)
                continue
            done[str(row["id"])] = row
    return done


def result_row(sample_id: str, result: ReasoningResult, transcript_path: str) -> dict[str, Any]:
    row: dict[str, Any] = {
        "id": sample_id,
        "iterations": result.stats.iterations,
        "operator_calls": result.stats.operator_calls,
        "supervisor_calls": result.stats.supervisor_calls,
        "transcript_path": transcript_path,
    }
    if isinstance(result.verdict, Answered):
        row.update(verdict="answered", labels=list(result.verdict.labels))
    else:
        row.update(verdict="abstained", reason=result.verdict.reason)
    return row


class Runner:
    """Holds the loaded graph, prompts and shared gateway state for one run."""

    def __init__(self, manifest: ExperimentManifest, meter: UsageMeter | None = None):
        self.manifest = manifest
        self.meter = meter or UsageMeter()
        self.graph: KnowledgeGraph = load_graph_file(manifest.graph_path, manifest.graph_format)
        self.prompts: PromptSet = load_prompt_set(manifest.run.prompt_set)
        self.scripts: dict[str, Any] = {}
        if manifest.operator.kind == "scripted" or (manifest.supervisor and manifest.supervisor.kind == "scripted"):
            if manifest.script_path is None:
                raise ManifestError("scripted backends need backends.script")
            self.scripts = yaml.safe_load(manifest.script_path.read_text(encoding="utf-8")) or {}
        self._http: dict[str, HTTPBackend] = {}

    def _backend(self, cfg: BackendConfig, role: str, sample_id: str):
        if cfg.kind == "scripted":
            script = (self.scripts.get(sample_id) or {}).get(role, [])
            return ScriptedBackend(script, role=role, meter=self.meter, model_id=cfg.model)
        if role not in self._http:
            self._http[role] = HTTPBackend(cfg.endpoint, cfg.model, role=role, meter=self.meter, timeout=cfg.timeout)
        return self._http[role]

    def close(self) -> None:
        for backend in self._http.values():
            backend.close()

    def run_sample(self, sample: DatasetSample) -> ReasoningResult:
        m = self.manifest
        try:
            operator = self._backend(m.operator, OPERATOR, sample.id)
            if m.run.mode == DUAL:
                supervisor = self._backend(m.supervisor, SUPERVISOR, sample.id)
                return run_dual(sample.query, sample.topic_entities, self.graph, operator, supervisor, m.run, self.prompts)
            return run_single_sc(sample.query, sample.topic_entities, self.graph, operator, m.run, self.prompts)
        except Exception as exc:  # one bad sample must not sink the batch
            log.exception("sample %s failed", sample.id)
            error = f"{type(exc).__name__}: {exc}"
            return ReasoningResult(Abstained(HARD_FAILURE), [{"role": "error", "text": error, "iteration": 0}], RunStats(), error)


def select_samples(samples: list[DatasetSample], limit: int | None, seed: int) -> list[DatasetSample]:
    """Seeded subsample that keeps dataset order."""
    if limit is None or limit >= len(samples):
        return samples
    keep = set(random.Random(seed).sample(range(len(samples)), limit))
    return [s for i, s in enumerate(samples) if i in keep]


def resolve_topics(samples: list[DatasetSample], graph: KnowledgeGraph) -> tuple[list[DatasetSample], list[dict]]:
    """Drop topic entities missing from the graph; skip samples left with none."""
    kept, skipped = [], []
    for s in samples:
        present = tuple(e for e in s.topic_entities if graph.has_entity(e))
        if not present:
            log.warning("skipping %s: no topic entity found in graph (%s)", s.id, ", ".join(s.topic_entities))
            skipped.append({"id": s.id, "topic_entities": list(s.topic_entities)})
            continue
        if present != s.topic_entities:
            s = DatasetSample(s.id, s.query, present, s.gold, s.kind, s.group)
        kept.append(s)
    return kept, skipped


def run_experiment(manifest: ExperimentManifest, meter: UsageMeter | None = None) -> Path:
    """Execute every sample once; completed ids in an existing run directory are skipped."""
    ingested = ingest(manifest.adapter, manifest.dataset_path)
    runner = Runner(manifest, meter)
    samples = select_samples(ingested.samples, manifest.sample_limit, manifest.seed)
    samples, skipped = resolve_topics(samples, runner.graph)

    out = manifest.output
    (out / "transcripts").mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_jsonl(out / "samples.jsonl", (
        {"id": s.id, "query": s.query, "topic_entities": list(s.topic_entities), "kind": s.kind, "group": s.group}
        for s in samples
    ))
    _write_jsonl(out / "gold.jsonl", ({**s.gold_row(), "group": s.group} for s in samples))
    _write_jsonl(out / "skipped.jsonl", skipped)

    partial = out / "results.partial.jsonl"
    done = _read_partial(partial)
    todo = [s for s in samples if s.id not in done]
    log.info("%d samples, %d already complete, %d to run, %d skipped", len(samples), len(samples) - len(todo), len(todo), len(skipped))

    lock = threading.Lock()

    def work(sample: DatasetSample) -> None:
        result = runner.run_sample(sample)
        rel = f"transcripts/{safe_name(sample.id)}.jsonl"
        save_transcript(result.transcript, out / rel)
        row = result_row(sample.id, result, rel)
        with lock:
            with partial.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
            done[sample.id] = row

    try:
        if manifest.concurrency == 1 or len(todo) <= 1:
            for s in todo:
                work(s)
        else:
            with ThreadPoolExecutor(max_workers=manifest.concurrency) as pool:
                list(pool.map(work, todo))
    finally:
        runner.close()

    _write_jsonl(out / "results.jsonl", (done[s.id] for s in samples if s.id in done))
    (out / "usage.json").write_text(
        json.dumps({"resumed": len(samples) - len(todo), "roles": runner.meter.snapshot()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    rep = report(out, gates=manifest.gates)
    (out / "report.json").write_text(json.dumps(rep.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(rep.text, encoding="utf-8")
    st = call_stats(out)
    (out / "stats.json").write_text(json.dumps(st, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "stats.txt").write_text(format_stats(st), encoding="utf-8")
    return out


@dataclass
class ReportOutput:
    text: str
    data: dict[str, Any]
    passed: bool


def _report_dict(rep: MetricReport) -> dict[str, Any]:
    return rep.to_dict()


def report(run_dir: str | Path, group_by: str | None = None, gates: dict[str, float] | None = None) -> ReportOutput:
    """Metric table for a run directory, optionally split by ``kind`` or ``group``.

    Gates are minimum values keyed ``min_coverage``, ``min_micro_f1``,
    ``min_samplewise_f1``, ``min_hit_rate``; an undefined metric fails its gate.
    """
    run_dir = Path(run_dir)
    gold_path = run_dir / "gold.jsonl"
    results_path = run_dir / "results.jsonl"
    if not gold_path.exists():
        raise FileNotFoundError(f"no gold labels in {run_dir} (expected gold.jsonl)")
    if not results_path.exists():
        raise FileNotFoundError(f"no results in {run_dir} (expected results.jsonl)")
    gold = read_jsonl(gold_path)
    if group_by:
        if group_by not in ("kind", "group"):
            raise ValueError("group_by must be 'kind' or 'group'")
        for g in gold:
            g["kind"] = g.get(group_by) or "all"
    else:
        for g in gold:
            g["kind"] = None
    records = join_records(read_jsonl(results_path), gold)
    if not records:
        raise ValueError(f"no evaluable records in {run_dir}")
    overall = evaluate(records)
    tables = {"all": overall}
    if group_by:
        tables.update({f"{group_by}={k}": v for k, v in evaluate_grouped(records).items()})
    data: dict[str, Any] = {"overall": _report_dict(overall)}
    if group_by:
        data["groups"] = {k: _report_dict(v) for k, v in tables.items() if k != "all"}

    failures = []
    for key, minimum in sorted((gates or {}).items()):
        value = getattr(overall, GATE_KEYS[key])
        if value is None or value < minimum:
            failures.append(f"{key}: {value if value is not None else 'n/a'} < {minimum}")
    data["gates"] = {"thresholds": dict(gates or {}), "failures": failures}
    text = format_table(tables)
    if failures:
        text += "GATE FAILED: " + "; ".join(failures) + "\n"
    return ReportOutput(text, data, not failures)


def call_stats(run_dir: str | Path) -> dict[str, Any]:
    """Mean Operator/Supervisor calls per sample, plus abstention breakdown."""
    rows = read_jsonl(Path(run_dir) / "results.jsonl")
    n = len(rows)
    answered = [r for r in rows if r["verdict"] == "answered"]
    reasons: dict[str, int] = {}
    for r in rows:
        if r["verdict"] != "answered":
            reasons[r["reason"]] = reasons.get(r["reason"], 0) + 1

    def mean(values):
        values = list(values)
        return sum(values) / len(values) if values else None

    return {
        "samples": n,
        "answered": len(answered),
        "abstained": dict(sorted(reasons.items())),
        "operator_calls_total": sum(r["operator_calls"] for r in rows),
        "supervisor_calls_total": sum(r["supervisor_calls"] for r in rows),
        "mean_operator_calls": mean(r["operator_calls"] for r in rows),
        "mean_supervisor_calls": mean(r["supervisor_calls"] for r in rows),
        "mean_supervisor_calls_answered": mean(r["supervisor_calls"] for r in answered),
        "mean_iterations": mean(r["iterations"] for r in rows),
    }


def format_stats(st: dict[str, Any]) -> str:
    def num(v):
        return "n/a" if v is None else f"{v:.2f}"

    lines = [
        f"samples                      {st['samples']}",
        f"answered                     {st['answered']}",
        f"abstained                    {sum(st['abstained'].values())}"
        + (f" ({', '.join(f'{k}={v}' for k, v in st['abstained'].items())})" if st["abstained"] else ""),
        f"operator calls / sample      {num(st['mean_operator_calls'])}",
        f"supervisor calls / sample    {num(st['mean_supervisor_calls'])}",
        f"supervisor calls / answered  {num(st['mean_supervisor_calls_answered'])}",
        f"iterations / sample          {num(st['mean_iterations'])}",
    ]
    return "\n".join(lines) + "\n"


def load_adapter(manifest: ExperimentManifest) -> Adapter:
    return get_adapter(manifest.adapter)
