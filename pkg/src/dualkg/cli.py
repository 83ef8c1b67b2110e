"""Command-line entry point: ``dualkg {load-kg,run,report,replay,stats}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .datasets import DatasetError
from .harness import (
    GATE_KEYS,
    ManifestError,
    call_stats,
    format_stats,
    load_manifest,
    report,
    run_experiment,
)
from .kg import FORMATS, GraphLoadError, dump_graph, load_graph_file
from .metrics import read_jsonl
from .protocol import render_facts
from .server import SERVER, load_transcript, replay_session

log = logging.getLogger("dualkg")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _cmd_load_kg(args: argparse.Namespace) -> int:
    graph = load_graph_file(args.path, args.format)
    if args.entity and args.explore:
        print(render_facts(graph.explore(args.entity, args.explore)) or "NO RESULT")
    elif args.entity:
        print(", ".join(graph.get_relations(args.entity)) or "NO RESULT")
    else:
        kind = "temporal" if graph.is_temporal else "static"
        print(f"{len(graph)} facts, {len(graph.entities())} entities, {len(graph.relation_names())} relations ({kind})")
    if args.dump:
        Path(args.dump).write_bytes(dump_graph(graph, args.format))
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest, output=args.output, concurrency=args.concurrency)
    out = run_experiment(manifest)
    print((out / "report.txt").read_text(encoding="utf-8"), end="")
    print((out / "stats.txt").read_text(encoding="utf-8"), end="")
    print(f"results in {out}")
    data = json.loads((out / "report.json").read_text(encoding="utf-8"))
    return EXIT_FAIL if data["gates"]["failures"] else EXIT_OK


def _gates(args: argparse.Namespace, run_dir: Path) -> dict[str, float]:
    gates: dict[str, float] = {}
    manifest = run_dir / "manifest.json"
    if manifest.exists():
        gates.update(json.loads(manifest.read_text(encoding="utf-8")).get("gates") or {})
    for key in GATE_KEYS:
        value = getattr(args, key)
        if value is not None:
            gates[key] = value
    return gates


def _cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    rep = report(run_dir, group_by=args.group_by, gates=_gates(args, run_dir))
    print(json.dumps(rep.data, indent=2, sort_keys=True) if args.json else rep.text, end="\n" if args.json else "")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _cmd_stats(args: argparse.Namespace) -> int:
    st = call_stats(args.run_dir)
    print(json.dumps(st, indent=2, sort_keys=True) if args.json else format_stats(st), end="\n" if args.json else "")
    return EXIT_OK


def _render(rows: list[dict]) -> str:
    blocks = []
    for row in rows:
        trial = f" trial {row['trial']}" if "trial" in row else ""
        blocks.append(f"--- {row['role']} (iteration {row['iteration']}{trial}) ---\n{row['text']}")
    return "\n".join(blocks) + "\n"


def _locate(args: argparse.Namespace) -> tuple[Path, Path | None, dict | None]:
    """Return (transcript path, run dir, sample row) for a transcript file or run dir + id."""
    target = Path(args.target)
    if target.is_dir():
        if not args.id:
            raise SystemExit("replay: --id is required when TARGET is a run directory")
        results = {r["id"]: r for r in read_jsonl(target / "results.jsonl")}
        if args.id not in results:
            raise SystemExit(f"replay: no result for id {args.id!r} in {target}")
        samples = {s["id"]: s for s in read_jsonl(target / "samples.jsonl")}
        return target / results[args.id]["transcript_path"], target, samples.get(args.id)
    return target, None, None


def _cmd_replay(args: argparse.Namespace) -> int:
    path, run_dir, sample = _locate(args)
    rows = load_transcript(path)
    print(_render(rows), end="")
    if not args.check:
        return EXIT_OK
    if run_dir is None or sample is None:
        raise SystemExit("replay --check needs TARGET to be a run directory plus --id")
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    if manifest["run"]["mode"] != "dual":
        raise SystemExit("replay --check supports dual-mode transcripts only")
    graph = load_graph_file(manifest["graph"]["path"], manifest["graph"]["format"])
    chat = [r for r in rows if r["role"] != "error"]
    state = replay_session(graph, sample["query"], sample["topic_entities"], manifest["run"]["T"], chat)
    replayed = [e.to_dict() for e in state.chat_log]
    recorded = [{k: r[k] for k in ("role", "text", "iteration")} for r in chat]
    if replayed == recorded:
        print("replay check: OK (server replies reproduced)")
        return EXIT_OK
    for i, (a, b) in enumerate(zip(recorded, replayed)):
        if a != b:
            where = "server reply" if a["role"] == SERVER else a["role"]
            print(f"replay check: MISMATCH at entry {i} ({where}, iteration {a['iteration']})")
            break
    else:
        print(f"replay check: MISMATCH in length ({len(recorded)} recorded vs {len(replayed)} replayed)")
    return EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualkg", description="Dual-agent knowledge-graph reasoning with abstention.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    kg = sub.add_parser("load-kg", help="validate a graph file and query it")
    kg.add_argument("path", help="TSV graph file")
    kg.add_argument("--format", choices=sorted(FORMATS), help="default: sniffed from the column count")
    kg.add_argument("--entity", help="print the relations of this entity")
    kg.add_argument("--explore", nargs="+", metavar="REL", help="with --entity: print facts along these relations")
    kg.add_argument("--dump", metavar="OUT", help="write the normalized, sorted graph to OUT")
    kg.set_defaults(func=_cmd_load_kg)

    run = sub.add_parser("run", help="execute an experiment manifest (resumes a partial run)")
    run.add_argument("manifest", help="YAML or JSON manifest")
    run.add_argument("--output", help="override the manifest's output directory")
    run.add_argument("--concurrency", type=int, help="override the manifest's concurrency width")
    run.set_defaults(func=_cmd_run)

    rep = sub.add_parser("report", help="metric table for a run directory")
    rep.add_argument("run_dir")
    rep.add_argument("--group-by", choices=["kind", "group"], help="add one row per task kind or dataset group")
    rep.add_argument("--json", action="store_true", help="print the JSON report instead of the table")
    for key in GATE_KEYS:
        rep.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float, metavar="X",
                         help=f"exit 1 unless {GATE_KEYS[key]} >= X (fraction)")
    rep.set_defaults(func=_cmd_report)

    rp = sub.add_parser("replay", help="render a transcript; --check re-executes it against the graph")
    rp.add_argument("target", help="transcript .jsonl file, or a run directory with --id")
    rp.add_argument("--id", help="sample id inside a run directory")
    rp.add_argument("--check", action="store_true", help="regenerate server replies and compare")
    rp.set_defaults(func=_cmd_replay)

    st = sub.add_parser("stats", help="mean Operator/Supervisor calls per sample")
    st.add_argument("run_dir")
    st.add_argument("--json", action="store_true")
    st.set_defaults(func=_cmd_stats)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ManifestError, DatasetError, GraphLoadError, FileNotFoundError, ValueError) as exc:
        print(f"dualkg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
