"""Two-phase retrieval over a dual store.

Phase one is exact cosine recall over every chunk. Phase two reranks with
schema awareness: hits whose header paths or cell values mention query
terms move up. Two structural traversals complement recall. One starts
from header labels named in the query (top-down) and the other from
literal values such as part numbers or quantities (bottom-up).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .embed import DEFAULT_EMBEDDER, EmbeddingProvider
from .store import Chunk, DualStore, RelationalTable, format_value
from .textutil import STOPWORDS, content_tokens, extract_numbers, numbers_equal, parse_number, tokenize

THETA_LINK = 0.55
W_HEADER = 0.5
W_VALUE = 0.25

Mode = Literal["recall", "topdown", "bottomup", "hybrid"]


class EmptyIndex(LookupError):
    pass


@dataclass
class RetrievalHit:
    chunk_id: str
    recall_score: float
    rerank_score: float
    anchors: list[tuple[str, str]] = field(default_factory=list)
    origin: str = "free-text"
    table_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "recall_score": round(self.recall_score, 12),
            "rerank_score": round(self.rerank_score, 12),
            "anchors": [list(a) for a in self.anchors],
            "origin": self.origin,
            "table_id": self.table_id,
        }


@dataclass
class CellRegion:
    """All body cells under one column, reached from a header label."""

    table_id: str
    column: str
    header_path: list[str]
    rows: tuple[int, int]
    score: float
    method: str
    anchors: list[tuple[str, str]]

    def to_dict(self) -> dict:
        return {
            "table_id": self.table_id,
            "column": self.column,
            "header_path": list(self.header_path),
            "rows": list(self.rows),
            "score": round(self.score, 12),
            "method": self.method,
            "anchors": [list(a) for a in self.anchors],
        }


@dataclass
class ValueTrace:
    table_id: str
    column: str
    header_path: list[str]
    row: int
    row_key: str
    value: object
    anchors: list[tuple[str, str]]

    def to_dict(self) -> dict:
        return {
            "table_id": self.table_id,
            "column": self.column,
            "header_path": list(self.header_path),
            "row": self.row,
            "row_key": self.row_key,
            "value": self.value,
            "anchors": [list(a) for a in self.anchors],
        }


# --------------------------------------------------------------------------
# query analysis


def query_terms(query: str) -> list[str]:
    """Unique content tokens in first-appearance order."""
    seen: dict[str, None] = {}
    for t in content_tokens(query):
        seen.setdefault(t, None)
    return list(seen)


def query_phrases(query: str, max_n: int = 4) -> list[str]:
    """Token n-grams that neither start nor end on a stopword."""
    toks = tokenize(query)
    out: dict[str, None] = {}
    for n in range(1, max_n + 1):
        for i in range(len(toks) - n + 1):
            gram = toks[i:i + n]
            if gram[0] in STOPWORDS or gram[-1] in STOPWORDS:
                continue
            out.setdefault(" ".join(gram), None)
    return list(out)


_QUOTED_RE = re.compile(r"""(?:^|(?<=[\s(]))["“']([^"”']+)["”']""")
_CAPS_RE = re.compile(r"\b[A-Z][A-Za-z0-9/\-]*(?:[ \t]+[A-Z][A-Za-z0-9/\-]*)*")
_CODE_RE = re.compile(r"(?<![A-Za-z0-9])(?=[A-Za-z0-9/\-]*\d)(?=[A-Za-z0-9/\-]*[A-Za-z])[A-Za-z0-9][A-Za-z0-9/\-]*")


def salient_literals(query: str) -> list[str]:
    """Numbers, quoted spans, capitalised spans and letter-digit codes."""
    found: dict[str, None] = {}
    for m in _QUOTED_RE.finditer(query):
        found.setdefault(m.group(1).strip(), None)
    for m in _CAPS_RE.finditer(query):
        words = m.group(0).split()
        while words and words[0].lower() in STOPWORDS:
            words.pop(0)
        if words:
            found.setdefault(" ".join(words), None)
    for m in _CODE_RE.finditer(query):
        found.setdefault(m.group(0), None)
    for v in extract_numbers(query):
        found.setdefault(str(v), None)
    return [f for f in found if f]


def _norm_label(label: str) -> str:
    return " ".join(tokenize(label))


# --------------------------------------------------------------------------


class Retriever:
    def __init__(
        self,
        store: DualStore,
        embedder: Optional[EmbeddingProvider] = None,
        theta_link: float = THETA_LINK,
        w_h: float = W_HEADER,
        w_v: float = W_VALUE,
    ):
        self.store = store
        self.embedder = embedder or DEFAULT_EMBEDDER
        self.theta_link = theta_link
        self.w_h = w_h
        self.w_v = w_v
        self._key: Optional[tuple] = None

    # -- index

    def _ensure_index(self) -> None:
        key = tuple(self.store.entry_ids())
        if key == self._key:
            return
        chunks = sorted(self.store.chunks(), key=lambda c: c.chunk_id)
        self._chunks = chunks
        self._by_id = {c.chunk_id: c for c in chunks}
        self._matrix = (
            np.vstack([self.embedder.embed(c.text) for c in chunks]) if chunks else np.zeros((0, self.embedder.dim))
        )
        self._header_tokens: dict[str, set[str]] = {}
        for m in self.store.map_entries():
            bucket = self._header_tokens.setdefault(m.chunk_id, set())
            for label in m.header_path:
                bucket.update(tokenize(label))
        self._value_tokens: dict[str, set[str]] = {}
        for c in chunks:
            toks: set[str] = set()
            if c.origin == "table-render" and c.row_range:
                table = self.store.table(c.table_id)
                for row in table.rows[c.row_range[0]:c.row_range[1]]:
                    for v in row:
                        toks.update(tokenize(format_value(v)))
            self._value_tokens[c.chunk_id] = toks
        self._key = key

    def chunk(self, chunk_id: str) -> Chunk:
        self._ensure_index()
        return self._by_id[chunk_id]

    # -- phase one

    def recall(self, query: str, k: int) -> list[RetrievalHit]:
        self._ensure_index()
        if not self._chunks:
            raise EmptyIndex("store has no chunks")
        scores = self._matrix @ self.embedder.embed(query)
        order = sorted(range(len(self._chunks)), key=lambda i: (-scores[i], self._chunks[i].chunk_id))
        return [self._hit(self._chunks[i], float(scores[i])) for i in order[:max(k, 0)]]

    def _hit(self, chunk: Chunk, score: float) -> RetrievalHit:
        score = float(np.clip(score, -1.0, 1.0))
        return RetrievalHit(chunk.chunk_id, score, score, [], chunk.origin, chunk.table_id)

    # -- phase two

    def rerank(self, terms: Sequence[str], hits: Sequence[RetrievalHit]) -> list[RetrievalHit]:
        self._ensure_index()
        terms = [t.lower() for t in terms]
        out = []
        for h in hits:
            header = self._header_tokens.get(h.chunk_id, set())
            values = self._value_tokens.get(h.chunk_id, set())
            fh = sum(t in header for t in terms) / len(terms) if terms else 0.0
            fv = sum(t in values for t in terms) / len(terms) if terms else 0.0
            out.append(
                RetrievalHit(
                    h.chunk_id,
                    h.recall_score,
                    h.recall_score + self.w_h * fh + self.w_v * fv,
                    list(h.anchors),
                    h.origin,
                    h.table_id,
                )
            )
        out.sort(key=lambda h: -h.rerank_score)
        return out

    # -- structural traversals

    def label_score(self, phrase: str, label: str) -> tuple[float, str]:
        norm = _norm_label(label)
        if not norm:
            return 0.0, "none"
        if phrase == norm:
            return 1.0, "exact"
        return max(0.0, float(self.embedder.embed(phrase) @ self.embedder.embed(norm))), "embedding"

    def top_down(self, query: str) -> list[CellRegion]:
        phrases = query_phrases(query)
        if not phrases:
            return []
        regions = []
        for table in self.store.tables():
            for k, column in enumerate(table.column_names):
                labels = list(dict.fromkeys(table.header_paths[k] + [table.display_labels[k]]))
                best = (0.0, "none", "")
                for label in labels:
                    for p in phrases:
                        s, how = self.label_score(p, label)
                        if s > best[0]:
                            best = (s, how, label)
                if best[0] >= self.theta_link:
                    regions.append(
                        CellRegion(
                            table.table_id,
                            column,
                            list(table.header_paths[k]),
                            (0, len(table.rows)),
                            best[0],
                            best[1],
                            [("header", best[2])],
                        )
                    )
        table_best: dict[str, float] = {}
        for r in regions:
            table_best[r.table_id] = max(table_best.get(r.table_id, 0.0), r.score)
        pos = {(t.table_id, c): i for t in self.store.tables() for i, c in enumerate(t.column_names)}
        regions.sort(key=lambda r: (-table_best[r.table_id], r.table_id, -r.score, pos[(r.table_id, r.column)]))
        return regions

    def bottom_up(self, query: str) -> list[ValueTrace]:
        literals = salient_literals(query)
        if not literals:
            return []
        traces = []
        for table in self.store.tables():
            key_col = _key_column(table)
            for i, row in enumerate(table.rows):
                for k, v in enumerate(row):
                    if v is None:
                        continue
                    for lit in literals:
                        if _value_matches(v, lit):
                            row_key = format_value(row[key_col]) if key_col is not None else str(i)
                            traces.append(
                                ValueTrace(
                                    table.table_id,
                                    table.column_names[k],
                                    list(table.header_paths[k]),
                                    i,
                                    row_key,
                                    v,
                                    [("value", lit)],
                                )
                            )
                            break
        return traces

    # -- fusion

    def search(self, query: str, k: int = 10, mode: Mode = "hybrid") -> list[RetrievalHit]:
        terms = query_terms(query)
        if mode == "recall":
            return self.recall(query, k)
        self._ensure_index()
        if not self._chunks:
            raise EmptyIndex("store has no chunks")
        scores = self._matrix @ self.embedder.embed(query)
        score_of = {c.chunk_id: float(scores[i]) for i, c in enumerate(self._chunks)}
        anchored: dict[str, list[tuple[str, str]]] = {}
        if mode in ("topdown", "hybrid"):
            for r in self.top_down(query):
                for c in self._table_chunks(r.table_id):
                    _add_anchor(anchored, c.chunk_id, r.anchors[0])
        if mode in ("bottomup", "hybrid"):
            for t in self.bottom_up(query):
                for c in self._table_chunks(t.table_id):
                    if c.row_range and c.row_range[0] <= t.row < c.row_range[1]:
                        _add_anchor(anchored, c.chunk_id, t.anchors[0])
        if mode == "hybrid":
            pool = [h.chunk_id for h in self.recall(query, k)]
        else:
            pool = []
        pool += [cid for cid in sorted(anchored) if cid not in pool]
        hits = []
        for cid in pool:
            h = self._hit(self._by_id[cid], score_of[cid])
            h.anchors = anchored.get(cid, [])
            hits.append(h)
        hits.sort(key=lambda h: (-h.recall_score, h.chunk_id))
        return self.rerank(terms, hits)[:k]

    def _table_chunks(self, table_id: str) -> list[Chunk]:
        return [c for c in self._chunks if c.table_id == table_id and c.origin == "table-render"]


def _add_anchor(bucket: dict, chunk_id: str, anchor: tuple[str, str]) -> None:
    lst = bucket.setdefault(chunk_id, [])
    if anchor not in lst:
        lst.append(anchor)


def _key_column(table: RelationalTable) -> Optional[int]:
    for k, (_, kind) in enumerate(table.columns):
        if kind != "continuous":
            return k
    return None


def _value_matches(value, literal: str) -> bool:
    num = parse_number(literal)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return num is not None and numbers_equal(value, num)
    text = str(value).strip()
    if text.lower() == literal.lower():
        return True
    if num is not None:
        cell_num = parse_number(text)
        return cell_num is not None and numbers_equal(cell_num, num)
    return False


# module-level conveniences


def recall(query: str, store: DualStore, k: int, embedder: Optional[EmbeddingProvider] = None) -> list[RetrievalHit]:
    return Retriever(store, embedder).recall(query, k)


def rerank(terms: Sequence[str], hits: Sequence[RetrievalHit], store: DualStore, **weights) -> list[RetrievalHit]:
    return Retriever(store, **weights).rerank(terms, hits)


def top_down(query: str, store: DualStore, theta_link: float = THETA_LINK) -> list[CellRegion]:
    return Retriever(store, theta_link=theta_link).top_down(query)


def bottom_up(query: str, store: DualStore) -> list[ValueTrace]:
    return Retriever(store).bottom_up(query)
