from __future__ import annotations

import json
import subprocess
import sys

import pytest

from dualkg.cli import main


@pytest.fixture
def toy_run(fixtures_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", str(fixtures_dir / "toy_manifest.yaml"), "--output", str(out)]) == 0
    capsys.readouterr()
    return out


def test_load_kg(fixtures_dir, tmp_path, capsys):
    assert main(["load-kg", str(fixtures_dir / "movie.tsv")]) == 0
    assert capsys.readouterr().out == "31 facts, 30 entities, 6 relations (static)\n"
    main(["load-kg", str(fixtures_dir / "baggio.tsv"), "--entity", "A.C. Milan"])
    assert capsys.readouterr().out == "~member of sports team\n"
    main(["load-kg", str(fixtures_dir / "movie.tsv"), "--entity", "Alien", "--explore", "has_genre"])
    assert capsys.readouterr().out == "[Alien, has_genre, Horror]\n[Alien, has_genre, Science Fiction]\n"
    dump = tmp_path / "d.tsv"
    main(["load-kg", str(fixtures_dir / "movie.tsv"), "--dump", str(dump)])
    assert main(["load-kg", str(dump)]) == 0


def test_load_kg_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tb\n")
    assert main(["load-kg", str(bad), "--format", "triple-tsv"]) == 2
    assert "line 1" in capsys.readouterr().err


def test_report_and_stats(toy_run, capsys):
    assert main(["report", str(toy_run)]) == 0
    assert capsys.readouterr().out.splitlines()[1].split() == ["all", "12", "75.0", "84.6", "83.0", "88.9"]
    assert main(["report", str(toy_run), "--min-coverage", "0.9"]) == 1
    assert "GATE FAILED: min_coverage: 0.75 < 0.9" in capsys.readouterr().out
    assert main(["report", str(toy_run), "--json", "--group-by", "kind"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert "kind=boolean" in data["groups"]
    assert main(["stats", str(toy_run), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["operator_calls_total"] == 47
    assert main(["stats", str(toy_run)]) == 0
    assert "supervisor calls / answered  1.11" in capsys.readouterr().out


def test_report_missing_gold(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 2
    assert "gold" in capsys.readouterr().err


def test_replay_render_and_check(toy_run, capsys):
    assert main(["replay", str(toy_run / "transcripts" / "t03.jsonl")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("--- operator (iteration 1) ---\nGetRelation(Ridley Scott)")
    assert main(["replay", str(toy_run), "--id", "t01", "--check"]) == 0
    assert capsys.readouterr().out.endswith("replay check: OK (server replies reproduced)\n")


def test_replay_check_detects_tampering(toy_run, capsys):
    path = toy_run / "transcripts" / "t02.jsonl"
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    rows[1]["text"] = "Relations(Blade Runner): made_up"
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    assert main(["replay", str(toy_run), "--id", "t02", "--check"]) == 1
    assert "MISMATCH at entry 1 (server reply, iteration 1)" in capsys.readouterr().out


def test_module_entry_point(fixtures_dir):
    proc = subprocess.run([sys.executable, "-m", "dualkg", "load-kg", str(fixtures_dir / "contradiction.tsv")],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.startswith("6 facts")
