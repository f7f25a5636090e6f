"""Automatic evaluation and grey-zone case mining.

Only metrics that can be computed from traces and text are scored here.
Judge-dependent ones are listed as unavailable unless a :class:`Judge` is
supplied. Scores are in [0, 1]. Raw trace costs (operation counts) are
reported separately because they are not bounded.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .clock import parse_iso, utcnow, utcnow_iso
from .embed import DEFAULT_EMBEDDER, EmbeddingProvider
from .store import DualStore
from .textutil import extract_numbers, numbers_equal, tokenize

log = logging.getLogger(__name__)

FLAG_THRESHOLD = 0.8
DUP_THRESHOLD = 0.95
# At temperature 1 a single perfect hit among nine zero scores still has
# normalised entropy ~0.97, which reads as "uncertain". 0.1 keeps that case
# calm while a flat list stays at 1.0. Scores are min-max rescaled first:
# hashed n-gram cosines sit in a narrow band, and raw entropy over them is
# near maximal for every query.
UNCERTAINTY_TEMPERATURE = 0.1
CONTEXT_RECALL_JACCARD = 0.5
# score spreads below this are treated as ties when rescaling
SCORE_RESOLUTION = 1e-9

COMPUTED_METRICS = (
    "context_precision",
    "context_recall",
    "context_relevancy",
    "reciprocal_rank",
    "answer_correctness",
    "faithfulness_proxy",
    "tool_correctness",
)
JUDGE_METRICS = (
    "context_sufficiency",
    "context_knowledge_conflict",
    "answer_relevancy",
    "answer_semantic_similarity",
    "llm_correctness",
    "llm_eq",
    "llm_faithfulness",
    "llm_intent",
    "llm_proactivity",
    "llm_significant_asking",
    "reasoning_accuracy",
    "reasoning_concise",
    "reasoning_coherence",
    "reasoning_thinking_ratio",
    "reasoning_self_rejection_ratio",
    "reasoning_context_consistency",
    "reasoning_thinking_consistency",
    "task_adherence",
    "goal_alignment",
    "parameter_correctness",
    "parameter_content",
    "context_utilization",
    "problem_decomposition",
    "reason_tool_interleaving",
    "knowledge_quality",
)


class Judge(Protocol):
    name: str

    def score(self, question: str, answer: str, contexts: Sequence[str], gold: str) -> float: ...


# --------------------------------------------------------------------------
# retrieval metrics


def context_precision(retrieved: Sequence[str], gold: Iterable[str]) -> float:
    gold = set(gold)
    hits = 0
    total = 0.0
    for k, cid in enumerate(retrieved, start=1):
        if cid in gold:
            hits += 1
            total += hits / k
    return total / hits if hits else 0.0


def split_sentences(text: str) -> list[str]:
    return [s for s in re.split(r"(?<=[.!?])\s+", text.strip()) if s.strip()]


def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def sentence_attributed(sentence: str, contexts: Sequence[str], threshold: float = CONTEXT_RECALL_JACCARD) -> bool:
    """True if some token window of some context has Jaccard >= threshold.

    Windows are as long as the sentence (in tokens); shorter contexts are
    compared whole.
    """
    s_toks = tokenize(sentence)
    if not s_toks:
        return False
    s_set = set(s_toks)
    n = len(s_toks)
    for ctx in contexts:
        toks = tokenize(ctx)
        if len(toks) <= n:
            if _jaccard(s_set, set(toks)) >= threshold:
                return True
            continue
        window = Counter(toks[:n])
        for i in range(len(toks) - n + 1):
            if i:
                old = toks[i - 1]
                window[old] -= 1
                if window[old] == 0:
                    del window[old]
                window[toks[i + n - 1]] += 1
            if _jaccard(s_set, set(window)) >= threshold:
                return True
    return False


def context_recall(contexts: Sequence[str], gold_answer: str) -> float:
    sentences = [s for s in split_sentences(gold_answer) if tokenize(s)]
    if not sentences:
        return 0.0
    return sum(sentence_attributed(s, contexts) for s in sentences) / len(sentences)


def context_relevancy(contexts: Sequence[str], question: str, embedder: Optional[EmbeddingProvider] = None) -> float:
    if not contexts:
        return 0.0
    emb = embedder or DEFAULT_EMBEDDER
    q = emb.embed(question)
    cos = [float(np.clip(q @ emb.embed(c), -1.0, 1.0)) for c in contexts]
    return float(np.mean([(c + 1.0) / 2.0 for c in cos]))


def reciprocal_rank(retrieved: Sequence[str], gold: Iterable[str]) -> float:
    gold = set(gold)
    for k, cid in enumerate(retrieved, start=1):
        if cid in gold:
            return 1.0 / k
    return 0.0


def mrr(batch: Iterable[tuple[Sequence[str], Iterable[str]]]) -> float:
    rr = [reciprocal_rank(r, g) for r, g in batch]
    return float(np.mean(rr)) if rr else 0.0


# --------------------------------------------------------------------------
# answer metrics


def token_f1(predicted: str, gold: str) -> float:
    p, g = Counter(tokenize(predicted)), Counter(tokenize(gold))
    common = sum((p & g).values())
    if common == 0:
        return 0.0
    precision = common / sum(p.values())
    recall = common / sum(g.values())
    return 2 * precision * recall / (precision + recall)


def answer_correctness(predicted, gold_answer: str) -> float:
    """Numeric match when both sides state a number, else token F1.

    ``predicted`` may be an :class:`AnswerBundle` or a plain string.
    """
    text = getattr(predicted, "answer", predicted) or ""
    value = getattr(predicted, "numeric_value", None)
    if isinstance(predicted, (int, float)) and not isinstance(predicted, bool):
        text, value = str(predicted), predicted
    if not str(text).strip() and value is None:
        return 0.0
    pred_nums = [value] if value is not None else extract_numbers(str(text))
    gold_nums = extract_numbers(gold_answer)
    if pred_nums and gold_nums:
        return 1.0 if any(numbers_equal(pred_nums[0], g) for g in gold_nums) else 0.0
    return token_f1(str(text), gold_answer)


_PROPER_RE = re.compile(r"\b(?:[A-Z][A-Za-z0-9]*|[A-Za-z]*\d[A-Za-z0-9]*[A-Za-z][A-Za-z0-9]*)\b")


def factual_items(answer: str) -> list[tuple[str, object]]:
    """Numbers and proper-noun or code tokens stated in ``answer``."""
    items: list[tuple[str, object]] = [("num", v) for v in extract_numbers(answer)]
    starts = {m.start() for m in re.finditer(r"(?:^|[.!?]\s+)(\S)", answer)}
    for m in _PROPER_RE.finditer(answer):
        tok = m.group(0)
        if tok.isdigit():
            continue
        # a capitalised sentence opener is not evidence of a name
        if m.start() in starts and tok[1:].islower():
            continue
        items.append(("tok", tok.lower()))
    return items


def faithfulness_proxy(answer: str, evidence: Sequence[str]) -> float:
    items = factual_items(answer or "")
    if not items:
        return 1.0
    ev_nums = [v for e in evidence for v in extract_numbers(e)]
    ev_toks = {t for e in evidence for t in tokenize(e)}
    supported = 0
    for kind, v in items:
        if kind == "num":
            supported += any(numbers_equal(v, x) for x in ev_nums)
        else:
            supported += all(t in ev_toks for t in tokenize(v))
    return supported / len(items)


def tool_correctness(trace: dict) -> float:
    """Share of tabular sub-queries that ran on the SQL path."""
    tabular = [e for e in trace.get("sub_queries", []) if e["sub_query"]["modality"] == "tabular"]
    if not tabular:
        return 1.0
    return sum(e["path"] == "sql" for e in tabular) / len(tabular)


def cost_per_task(trace: dict) -> dict:
    ops = dict(trace.get("ops", {}))
    ops["total"] = sum(ops.values())
    return ops


# --------------------------------------------------------------------------
# knowledge base health


def kb_health(
    store: DualStore,
    horizon_days: float = 365.0,
    dup_threshold: float = DUP_THRESHOLD,
    now: Optional[dt.datetime] = None,
    embedder: Optional[EmbeddingProvider] = None,
) -> dict:
    emb = embedder or DEFAULT_EMBEDDER
    chunks = sorted(store.chunks(), key=lambda c: c.chunk_id)
    n = len(chunks)
    if n:
        mat = np.vstack([emb.embed(c.text) for c in chunks])
        sims = mat @ mat.T
        np.fill_diagonal(sims, -np.inf)
        dup = int((sims.max(axis=1) >= dup_threshold).sum()) if n > 1 else 0
    else:
        dup = 0
    now = now or utcnow()
    horizon = dt.timedelta(days=horizon_days)
    stale = 0
    tables = store.tables()
    for t in tables:
        ts = t.source_meta.get("ingested_at") or t.source_meta.get("modified_at")
        if ts and now - parse_iso(ts) > horizon:
            stale += 1
    density = [len(tokenize(c.text)) for c in chunks]
    categories = {"free-text": 0, "note-text": 0, "table-render": 0}
    for c in chunks:
        categories[c.origin] = categories.get(c.origin, 0) + 1
    return {
        "chunks": n,
        "entries": len(tables),
        "duplication_rate": dup / n if n else 0.0,
        "obsolescence_rate": stale / len(tables) if tables else 0.0,
        "density": {
            "min": min(density) if density else 0,
            "max": max(density) if density else 0,
            "mean": float(np.mean(density)) if density else 0.0,
            "median": float(np.median(density)) if density else 0.0,
        },
        "categories": categories,
    }


# --------------------------------------------------------------------------
# uncertainty mining


def normalized_entropy(
    scores: Sequence[float],
    temperature: float = UNCERTAINTY_TEMPERATURE,
    top_n: int = 10,
    rescale: bool = True,
) -> float:
    """H(softmax(s / T)) / ln n over the top ``n`` scores; 0 when n < 2.

    With ``rescale`` the scores are first mapped onto [0, 1] by min-max, so
    a flat list is uniform (1.0) and only the relative spread matters.
    """
    s = sorted((float(x) for x in scores), reverse=True)[:top_n]
    n = len(s)
    if n < 2:
        return 0.0
    z = np.array(s)
    if rescale:
        span = z[0] - z[-1]
        if span <= SCORE_RESOLUTION:
            return 1.0
        z = (z - z[-1]) / span
    z = z / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    nz = p[p > 0]
    h = float(-(nz * np.log(nz)).sum())
    return min(1.0, max(0.0, h / math.log(n)))


@dataclass
class FlaggedCase:
    index: int
    question: str
    uncertainty: float
    reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "question": self.question,
            "uncertainty": round(self.uncertainty, 12),
            "reasons": list(self.reasons),
        }


def mine_uncertain(
    traces: Sequence[dict],
    k: int = 10,
    threshold: float = FLAG_THRESHOLD,
    temperature: float = UNCERTAINTY_TEMPERATURE,
    rescale: bool = True,
) -> list[FlaggedCase]:
    """Traces whose retrieval entropy exceeds ``threshold``, most uncertain first."""
    flagged = []
    for i, tr in enumerate(traces):
        scores = tr.get("recall_scores")
        if not scores:
            log.warning("trace %d has no recall scores; skipped", i)
            continue
        u = normalized_entropy(scores, temperature, rescale=rescale)
        if u > threshold:
            flagged.append(FlaggedCase(i, tr.get("question", ""), u, ["uncertainty"]))
    flagged.sort(key=lambda f: (-f.uncertainty, f.index))
    return flagged[:k]


# --------------------------------------------------------------------------
# batch run


@dataclass
class EvalCase:
    question: str
    gold_answer: str
    gold_relevant_chunk_ids: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalCase":
        missing = {"question", "gold_answer"} - set(d)
        if missing:
            raise ValueError(f"eval case missing {sorted(missing)}")
        return cls(d["question"], d["gold_answer"], list(d.get("gold_relevant_chunk_ids", [])))


def load_cases(path) -> list[EvalCase]:
    cases = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            cases.append(EvalCase.from_dict(json.loads(line)))
        except (json.JSONDecodeError, ValueError) as exc:
            raise ValueError(f"{path}:{n}: {exc}") from None
    return cases


@dataclass
class EvalSettings:
    flag_threshold: float = FLAG_THRESHOLD
    dup_threshold: float = DUP_THRESHOLD
    uncertainty_temperature: float = UNCERTAINTY_TEMPERATURE
    correctness_floor: float = 0.5
    horizon_days: float = 365.0
    mine_k: int = 10
    k: int = 5


def _r(x: float) -> float:
    return round(float(x), 12)


def run_eval(
    cases: Sequence[EvalCase],
    store: DualStore,
    settings: Optional[EvalSettings] = None,
    retriever=None,
    judges: Sequence[Judge] = (),
    memory=None,
    rng=None,
) -> dict:
    """Answer every case, score it, flag failures and grey-zone cases.

    Flagged cases are appended to the store's failure file, one line each.
    The returned report contains no timestamps, so equal inputs give equal
    bytes.
    """
    from .query import AnswerOptions, answer, plan_template
    from .retriever import Retriever

    settings = settings or EvalSettings()
    retriever = retriever or Retriever(store)
    known = {c.chunk_id for c in store.chunks()}
    per_case = []
    errors = []
    traces = []
    judge_names = [j.name for j in judges]
    for i, case in enumerate(cases):
        unknown = [g for g in case.gold_relevant_chunk_ids if g not in known]
        if unknown:
            errors.append({"index": i, "question": case.question, "error": f"unresolved gold ids {unknown}"})
            traces.append(None)
            continue
        bundle = answer(case.question, store, retriever, memory=memory,
                        options=AnswerOptions(k=settings.k, record_failures=False), rng=rng)
        tr = bundle.trace
        traces.append(tr)
        retrieved = tr["evidence_chunks"]
        contexts = [retriever.chunk(c).text for c in retrieved]
        result_text = json.dumps(tr["result"], sort_keys=True) if tr["sql"] else ""
        scores = {
            "context_precision": context_precision(retrieved, case.gold_relevant_chunk_ids),
            "context_recall": context_recall(contexts, case.gold_answer),
            "context_relevancy": context_relevancy(contexts, case.question, retriever.embedder),
            "reciprocal_rank": reciprocal_rank(retrieved, case.gold_relevant_chunk_ids),
            "answer_correctness": answer_correctness(bundle, case.gold_answer),
            "faithfulness_proxy": faithfulness_proxy(bundle.answer, contexts + [result_text]),
            "tool_correctness": tool_correctness(tr),
        }
        for j in judges:
            scores[j.name] = float(j.score(case.question, bundle.answer, contexts, case.gold_answer))
        for name, v in scores.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"metric {name} produced {v} outside [0,1]")
        if memory is not None:
            memory.insert(case.question, plan_template(bundle), scores["answer_correctness"])
        per_case.append({
            "index": i,
            "question": case.question,
            "answer": bundle.answer,
            "numeric_value": bundle.numeric_value,
            "sql": bundle.sql,
            "degraded": bundle.degraded,
            "discrepancy": bundle.discrepancy,
            "retrieved": retrieved,
            "scores": {k: _r(v) for k, v in scores.items()},
            "cost": cost_per_task(tr),
            "uncertainty": _r(normalized_entropy(tr["recall_scores"], settings.uncertainty_temperature))
            if tr["recall_scores"] else None,
        })

    metric_names = list(COMPUTED_METRICS) + judge_names
    aggregate = {
        m: _r(np.mean([c["scores"][m] for c in per_case])) if per_case else None for m in metric_names
    }
    aggregate["mrr"] = aggregate["reciprocal_rank"]

    grey = {f.index: f for f in mine_uncertain(
        [t or {} for t in traces], k=len(traces) or 1, threshold=settings.flag_threshold,
        temperature=settings.uncertainty_temperature,
    )}
    priority = sorted(grey.values(), key=lambda f: (-f.uncertainty, f.index))[:settings.mine_k]
    flagged = []
    for c in per_case:
        reasons = []
        if c["index"] in grey:
            reasons.append("uncertainty")
        if c["scores"]["answer_correctness"] < settings.correctness_floor:
            reasons.append("low_answer_correctness")
        if c["degraded"]:
            reasons.append("generation_failure")
        if reasons:
            flagged.append({
                "index": c["index"],
                "question": c["question"],
                "uncertainty": c["uncertainty"],
                "reasons": reasons,
            })
    for f in flagged:
        case = cases[f["index"]]
        pc = next(c for c in per_case if c["index"] == f["index"])
        store.append_failure({
            "kind": "eval_flag",
            "question": case.question,
            "gold_answer": case.gold_answer,
            "answer": pc["answer"],
            "sql": pc["sql"],
            "reasons": f["reasons"],
            "uncertainty": f["uncertainty"],
            "ts": utcnow_iso(),
        })

    return {
        "metrics": metric_names,
        "unavailable": [m for m in JUDGE_METRICS if m not in judge_names],
        "n_cases": len(cases),
        "cases": per_case,
        "errors": errors,
        "aggregate": aggregate,
        "flagged": flagged,
        "priority_lane": [f.to_dict() for f in priority],
        "kb_health": kb_health(store, settings.horizon_days, settings.dup_threshold, embedder=retriever.embedder),
        "settings": {
            "flag_threshold": settings.flag_threshold,
            "dup_threshold": settings.dup_threshold,
            "uncertainty_temperature": settings.uncertainty_temperature,
            "correctness_floor": settings.correctness_floor,
        },
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
