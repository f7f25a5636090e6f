#!/usr/bin/env python3
"""Drive the CLI end to end and save every JSON output.

Builds a fresh store from the fixtures, asks the reference questions,
records rewards in the case bank, replays one question with memory
seeding, runs the evaluation and dumps the bank. Each command's stdout
goes to ``<out>/NN_<step>.json``. With the same ``--seed`` two runs
produce byte-identical files; the clock is pinned through
SOURCE_DATE_EPOCH unless the caller already set it.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
PINNED_EPOCH = "1748736000"

QUESTIONS = [
    ("case_b_q1", "what is the total production volume of all products in the first quarter of 2025?", 1.0),
    ("stock_c01", "What is the Stock of C01?", 1.0),
    ("high_stock", "Which products have stock greater than 100?", 1.0),
    ("note", "Describe the note about train and sea transport.", 0.5),
]


def steps(store: Path, seed: int) -> list[tuple[str, list[str]]]:
    s = ["--store", str(store)]
    seeded = ["--seed", str(seed), "--json"]
    out = [
        ("parse_case_a", ["parse", str(FIXTURES / "case_a.json"), "--json"]),
        ("ingest", ["ingest", str(FIXTURES / "case_a.json"), str(FIXTURES / "case_b_mini.json"), *s, *seeded]),
    ]
    for name, q, reward in QUESTIONS:
        out.append((f"ask_{name}", ["ask", q, *s, "--reward", str(reward), *seeded]))
    out += [
        ("ask_with_memory", ["ask", "total production in the first quarter of 2025", *s, "--use-memory", *seeded]),
        ("retrieve_hybrid", ["retrieve", "Stock of C01 painted cover", *s, "-k", "5", *seeded]),
        ("eval", ["eval", "--cases", str(FIXTURES / "eval_cases.jsonl"), *s, *seeded]),
        ("memory_stats", ["memory", "stats", *s, *seeded]),
        ("memory_export", ["memory", "export", *s, *seeded]),
    ]
    return out


def run_demo(out_dir: Path, seed: int) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    env = dict(os.environ)
    env.setdefault("SOURCE_DATE_EPOCH", PINNED_EPOCH)
    env["PYTHONHASHSEED"] = "0"
    written = []
    with tempfile.TemporaryDirectory() as tmp:
        store = Path(tmp) / "store"
        for i, (name, argv) in enumerate(steps(store, seed)):
            proc = subprocess.run(
                [sys.executable, "-m", "gridqa.cli", *argv], capture_output=True, text=True, env=env, cwd=ROOT
            )
            if proc.returncode != 0:
                raise SystemExit(f"step {name} failed ({proc.returncode}):\n{proc.stderr}")
            path = out_dir / f"{i:02d}_{name}.json"
            path.write_text(proc.stdout, encoding="utf-8")
            written.append(path)
    return written


def main() -> int:
    ap = argparse.ArgumentParser(description="Run the CLI demo and save JSON outputs.")
    ap.add_argument("--out", type=Path, required=True, help="directory for the JSON outputs")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    for p in run_demo(args.out, args.seed):
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
