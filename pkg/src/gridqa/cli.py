"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import Config, ConfigError, load_config
from .embed import get_embedder
from .grid import GridError, load_grid
from .memory import MemoryBank, SelectionPolicy
from .store import DualStore, StoreError, ingest_document
from .structure import EmptyDocument, segment_subtables

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("gridqa")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--config", type=Path, help="TOML file of key = value settings")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("-v", "--verbose", action="store_true", help="log diagnostics to stderr")

    p = _Parser(prog="gridqa", description="Structure-aware question answering over spreadsheet grids.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="parse grids and add their tables to a store")
    s.add_argument("grids", nargs="+", type=Path)
    s.add_argument("--store", required=True, type=Path)
    s.add_argument("--window", type=int, help="data rows per Markdown chunk")

    s = sub.add_parser("parse", parents=[common], help="print the parsed schema of a grid")
    s.add_argument("grid", type=Path)

    s = sub.add_parser("ask", parents=[common], help="answer a question")
    s.add_argument("question")
    s.add_argument("--store", required=True, type=Path)
    s.add_argument("--trace", type=Path, help="write the full trace JSON here")
    s.add_argument("--use-memory", action="store_true", help="seed planning from the case bank")
    s.add_argument("--reward", type=float, help="record this outcome reward in the case bank")
    s.add_argument("-k", type=int, help="retrieval depth")

    s = sub.add_parser("retrieve", parents=[common], help="show retrieval hits")
    s.add_argument("query")
    s.add_argument("--store", required=True, type=Path)
    s.add_argument("-k", type=int, default=10)
    s.add_argument("--mode", choices=["recall", "topdown", "bottomup", "hybrid"], default="hybrid")

    s = sub.add_parser("eval", parents=[common], help="score a case file")
    s.add_argument("--cases", required=True, type=Path)
    s.add_argument("--store", required=True, type=Path)
    s.add_argument("--report", type=Path)
    s.add_argument("--use-memory", action="store_true", help="insert evaluated cases into the case bank")

    s = sub.add_parser("memory", parents=[common], help="inspect the case bank")
    s.add_argument("action", choices=["stats", "top", "export"])
    s.add_argument("--store", required=True, type=Path)
    s.add_argument("-n", type=int, default=10)
    return p


def _config(args) -> Config:
    cfg = load_config(args.config)
    overrides = {"rng_seed": args.seed, "store_path": str(args.store) if getattr(args, "store", None) else None}
    if getattr(args, "window", None) is not None:
        overrides["chunk_window"] = args.window
    if getattr(args, "k", None) is not None and args.command == "ask":
        overrides["k"] = args.k
    return cfg.merged(**overrides)


def _policy(cfg: Config) -> SelectionPolicy:
    return SelectionPolicy(tau=cfg.tau, beta=cfg.beta, alpha=cfg.alpha)


def _bank(cfg: Config, store: DualStore) -> MemoryBank:
    return MemoryBank(store.memory_path, _policy(cfg), get_embedder(cfg.embedder))


def _retriever(cfg: Config, store: DualStore):
    from .retriever import Retriever

    return Retriever(store, get_embedder(cfg.embedder), theta_link=cfg.theta_link)


def cmd_ingest(args, cfg: Config) -> dict:
    store = DualStore.open(args.store, create=True)
    docs = []
    for path in args.grids:
        doc = load_grid(path)
        results = ingest_document(store, doc, cfg.chunk_window)
        docs.append({"document": doc.doc_id, "source": path.name, "tables": [r.to_dict() for r in results]})
    ingested = sum(1 for d in docs for t in d["tables"] if not t["skipped"])
    return {"documents": docs, "tables_ingested": ingested}


def _print_ingest(out: dict) -> None:
    for d in out["documents"]:
        print(f"{d['source']}: {len(d['tables'])} segments")
        for t in d["tables"]:
            note = f"  skipped: {t['skipped']}" if t["skipped"] else ""
            print(f"  {t['table_id']:<16} {t['kind']:<5} {t['rows']:>4} rows {t['columns']:>3} cols  {t['name']}{note}")
    print(f"{out['tables_ingested']} tables ingested")


def cmd_parse(args, cfg: Config) -> dict:
    doc = load_grid(args.grid)
    return segment_subtables(doc).to_dict()


def _print_parse(out: dict) -> None:
    print(f"{out['doc_id']}: {len(out['segments'])} segments")
    for s in out["segments"]:
        r = s["region"]
        print(f"  {s['table_id']} [{s['kind']}] rows {r['top']}-{r['top'] + r['height'] - 1} "
              f"cols {r['left']}-{r['left'] + r['width'] - 1}, header rows {s['header_rows']}")
        for c in s["columns"]:
            print(f"    {c['name']:<28} {c['col_type']:<12} {c['display_label']}")
        for n in s["notes"]:
            print(f"    note: {n[:72]}{'...' if len(n) > 72 else ''}")


def cmd_ask(args, cfg: Config) -> dict:
    from .query import AnswerOptions, answer, plan_template

    store = DualStore.open(args.store)
    retriever = _retriever(cfg, store)
    rng = np.random.default_rng(cfg.rng_seed)
    bank = _bank(cfg, store) if (args.use_memory or args.reward is not None) else None
    bundle = answer(
        args.question, store, retriever,
        memory=bank if args.use_memory else None,
        options=AnswerOptions(k=cfg.k, theta_link=cfg.theta_link),
        rng=rng,
    )
    if args.trace:
        args.trace.write_text(_dump(bundle.trace) + "\n", encoding="utf-8")
    if args.reward is not None and bank is not None:
        seeded = (bundle.trace.get("memory") or {}).get("case_id")
        if seeded:
            bank.update(seeded, args.reward)
        bank.insert(args.question, plan_template(bundle), args.reward)
    out = bundle.to_dict()
    out["memory"] = bundle.trace.get("memory")
    return out


def _print_ask(out: dict) -> None:
    print(out["answer"])
    if out["sql"]:
        print(f"SQL: {out['sql']}")
    if out["discrepancy"]:
        print(f"note: text evidence states {out['discrepancy']['text']}, SQL value kept")
    if out["degraded"]:
        print("note: degraded to retrieval-only answer")


def cmd_retrieve(args, cfg: Config) -> dict:
    store = DualStore.open(args.store)
    r = _retriever(cfg, store)
    hits = r.search(args.query, args.k, args.mode)
    out = {"query": args.query, "mode": args.mode, "hits": [h.to_dict() for h in hits]}
    if args.mode in ("topdown", "hybrid"):
        out["regions"] = [x.to_dict() for x in r.top_down(args.query)]
    if args.mode in ("bottomup", "hybrid"):
        out["traces"] = [x.to_dict() for x in r.bottom_up(args.query)]
    return out


def _print_retrieve(out: dict) -> None:
    for i, h in enumerate(out["hits"], start=1):
        anchors = ", ".join(f"{k}:{t}" for k, t in h["anchors"])
        print(f"{i:>2}. {h['chunk_id']:<22} recall {h['recall_score']:.4f}  rerank {h['rerank_score']:.4f}  {anchors}")


def cmd_eval(args, cfg: Config) -> dict:
    from .evaluator import EvalSettings, dumps_report, load_cases, run_eval

    store = DualStore.open(args.store)
    cases = load_cases(args.cases)
    settings = EvalSettings(
        flag_threshold=cfg.flag_threshold,
        dup_threshold=cfg.dup_threshold,
        uncertainty_temperature=cfg.uncertainty_temperature,
        horizon_days=cfg.horizon_days,
        k=cfg.k,
    )
    bank = _bank(cfg, store) if args.use_memory else None
    report = run_eval(cases, store, settings, _retriever(cfg, store), memory=bank,
                      rng=np.random.default_rng(cfg.rng_seed))
    if args.report:
        args.report.write_text(dumps_report(report), encoding="utf-8")
    return report


def _print_eval(out: dict) -> None:
    print(f"{out['n_cases']} cases, {len(out['errors'])} errors, {len(out['flagged'])} flagged")
    for m in out["metrics"]:
        v = out["aggregate"][m]
        print(f"  {m:<20} {'n/a' if v is None else f'{v:.4f}'}")
    for f in out["flagged"]:
        print(f"  flagged #{f['index']}: {', '.join(f['reasons'])}  {f['question']}")


def cmd_memory(args, cfg: Config) -> dict:
    store = DualStore.open(args.store)
    bank = _bank(cfg, store)
    if args.action == "stats":
        return bank.stats()
    if args.action == "top":
        return {"top": [c.to_dict() for c in bank.top(args.n)]}
    return {"cases": [c.to_dict() for c in bank.cases()]}


def _print_memory(out: dict) -> None:
    listing = out.get("top", out.get("cases"))
    if isinstance(listing, list):
        for c in listing:
            print(f"{c['case_id']}  q={c['q_value']:.4f}  visits={c['visit_count']}  {c['statement']}")
    else:
        for k in sorted(out):
            print(f"{k}: {out[k]}")


COMMANDS = {
    "ingest": (cmd_ingest, _print_ingest),
    "parse": (cmd_parse, _print_parse),
    "ask": (cmd_ask, _print_ask),
    "retrieve": (cmd_retrieve, _print_retrieve),
    "eval": (cmd_eval, _print_eval),
    "memory": (cmd_memory, _print_memory),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    run, show = COMMANDS[args.command]
    try:
        cfg = _config(args)
        out = run(args, cfg)
    except (StoreError, GridError, ConfigError, EmptyDocument, FileNotFoundError, ValueError, KeyError, LookupError) as exc:
        print(f"gridqa: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc(file=sys.stderr)
        return EXIT_INTERNAL
    if args.json:
        print(_dump(out))
    else:
        show(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
