import json
import shutil
import subprocess
import sys

import pytest

from gridqa.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from conftest import FIXTURES


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def store(tmp_path, capsys):
    d = tmp_path / "store"
    code, _, _ = run(capsys, "ingest", FIXTURES / "case_a.json", FIXTURES / "case_b_mini.json", "--store", d)
    assert code == EXIT_OK
    return d


def test_ingest_reports_four_case_a_tables(tmp_path, capsys):
    code, out, _ = run(capsys, "ingest", FIXTURES / "case_a.json", "--store", tmp_path / "s")
    assert code == EXIT_OK
    assert "case_a.json: 4 segments" in out
    assert "4 tables ingested" in out


def test_parse_json(capsys):
    code, out, _ = run(capsys, "parse", FIXTURES / "case_a.json", "--json")
    assert code == EXIT_OK
    data = json.loads(out)
    assert len(data["segments"]) == 4


def test_ask_case_b(store, capsys):
    code, out, _ = run(capsys, "ask", "what is the total production volume of all products in the first quarter of 2025?",
                       "--store", store, "--json")
    assert code == EXIT_OK
    data = json.loads(out)
    assert data["numeric_value"] == 351 and "SUM(" in data["sql"]


def test_ask_writes_trace_and_records_reward(store, tmp_path, capsys):
    trace = tmp_path / "trace.json"
    code, out, _ = run(capsys, "ask", "What is the Stock of C01?", "--store", store, "--trace", trace, "--reward", "1")
    assert code == EXIT_OK and out.startswith("4444")
    assert json.loads(trace.read_text())["sql"]
    code, out, _ = run(capsys, "memory", "stats", "--store", store, "--json")
    assert json.loads(out)["cases"] == 1
    code, out, _ = run(capsys, "ask", "What is the Stock of C01?", "--store", store, "--use-memory", "--seed", "3", "--json")
    assert json.loads(out)["memory"]["case_id"]


def test_retrieve_modes(store, capsys):
    for mode in ("recall", "topdown", "bottomup", "hybrid"):
        code, out, _ = run(capsys, "retrieve", "Stock of C01", "--store", store, "--mode", mode, "-k", "3", "--json")
        assert code == EXIT_OK
        assert len(json.loads(out)["hits"]) <= 3


def test_eval_writes_report(store, tmp_path, capsys):
    report = tmp_path / "r.json"
    code, out, _ = run(capsys, "eval", "--cases", FIXTURES / "eval_cases.jsonl", "--store", store, "--report", report)
    assert code == EXIT_OK
    assert "5 cases, 0 errors, 0 flagged" in out
    assert json.loads(report.read_text())["aggregate"]["answer_correctness"] == 1.0


def test_usage_errors_exit_one(capsys, tmp_path):
    assert run(capsys, "frobnicate")[0] == EXIT_USAGE
    assert run(capsys, "ask", "q")[0] == EXIT_USAGE
    assert run(capsys, "retrieve", "q", "--store", tmp_path, "--mode", "sideways")[0] == EXIT_USAGE


def test_data_errors_exit_two(capsys, tmp_path):
    code, _, err = run(capsys, "ask", "q", "--store", tmp_path / "missing")
    assert code == EXIT_DATA and "error" in err
    assert run(capsys, "parse", tmp_path / "nope.json")[0] == EXIT_DATA
    bad = tmp_path / "c.toml"
    bad.write_text("tau = -1\n")
    assert run(capsys, "parse", FIXTURES / "case_a.json", "--config", bad)[0] == EXIT_DATA


def test_json_output_is_deterministic(store, capsys):
    outs = [run(capsys, "retrieve", "painted cover stock", "--store", store, "--json", "--seed", "5")[1] for _ in range(2)]
    assert outs[0] == outs[1]


def test_module_entry_point(tmp_path):
    exe = shutil.which("gridqa")
    cmd = [exe] if exe else [sys.executable, "-m", "gridqa.cli"]
    proc = subprocess.run(cmd + ["parse", str(FIXTURES / "case_b_mini.json")], capture_output=True, text=True)
    assert proc.returncode == 0 and "1 segments" in proc.stdout


def test_memory_text_output(store, capsys):
    run(capsys, "ask", "What is the Stock of C01?", "--store", store, "--reward", "0.5")
    code, out, _ = run(capsys, "memory", "stats", "--store", store)
    assert code == EXIT_OK and "cases: 1" in out
    code, out, _ = run(capsys, "memory", "top", "--store", store)
    assert code == EXIT_OK and "q=0.5000" in out
