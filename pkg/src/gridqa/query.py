"""Question answering: decompose, link, generate SQL, execute, reconcile.

Decomposition is a deterministic pattern grammar. Anything implementing
:class:`Decomposer` (an LLM wrapper, for instance) can replace it.
"""

from __future__ import annotations

import calendar
import datetime as dt
import logging
import re
from dataclasses import dataclass, field
from typing import Literal, Mapping, Optional, Protocol, Sequence

from . import sql as sqlmod
from .clock import utcnow_iso
from .store import Chunk, DualStore, RelationalTable, format_value
from .retriever import THETA_LINK, RetrievalHit, Retriever, query_phrases, salient_literals
from .textutil import MONTH_ABBR, Number, content_tokens, extract_numbers, find_date, iter_dates, numbers_equal

log = logging.getLogger(__name__)

Modality = Literal["tabular", "textual"]
Intent = Literal["aggregate", "lookup", "rank", "join", "describe"]
AggOp = Literal["sum", "count", "avg", "min", "max"]
Comparator = Literal["=", "<", ">", "<=", ">=", "<>"]


class GenerationFailure(Exception):
    """No column could be resolved for ``term``."""

    def __init__(self, term: str, reason: str = "unresolved measure"):
        super().__init__(f"{reason}: {term!r}")
        self.term = term
        self.reason = reason


@dataclass
class SubQuery:
    sq_id: str
    modality: Modality
    intent: Intent
    raw_span: str
    measure: Optional[str] = None
    agg_op: Optional[AggOp] = None
    filters: list[tuple[str, str, object]] = field(default_factory=list)
    time_range: Optional[tuple[dt.date, dt.date]] = None
    time_phrase: Optional[str] = None
    top_k: Optional[int] = None
    order: Literal["asc", "desc"] = "desc"

    def __post_init__(self):
        if self.modality == "tabular" and self.intent == "describe":
            raise ValueError("tabular sub-queries cannot be describe")
        if self.intent == "aggregate" and (self.agg_op is None or not self.measure):
            raise ValueError("aggregate sub-queries need agg_op and measure")

    def to_dict(self) -> dict:
        return {
            "sq_id": self.sq_id,
            "modality": self.modality,
            "intent": self.intent,
            "measure": self.measure,
            "agg_op": self.agg_op,
            "filters": [list(f) for f in self.filters],
            "time_range": [d.isoformat() for d in self.time_range] if self.time_range else None,
            "time_phrase": self.time_phrase,
            "top_k": self.top_k,
            "order": self.order,
            "raw_span": self.raw_span,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubQuery":
        tr = d.get("time_range")
        return cls(
            sq_id=d["sq_id"],
            modality=d["modality"],
            intent=d["intent"],
            raw_span=d.get("raw_span", ""),
            measure=d.get("measure"),
            agg_op=d.get("agg_op"),
            filters=[tuple(f) for f in d.get("filters", [])],
            time_range=(dt.date.fromisoformat(tr[0]), dt.date.fromisoformat(tr[1])) if tr else None,
            time_phrase=d.get("time_phrase"),
            top_k=d.get("top_k"),
            order=d.get("order", "desc"),
        )


@dataclass(frozen=True)
class SchemaLink:
    term: str
    table_id: str
    column: Optional[str]
    score: float
    method: Literal["exact", "embedding", "type-tag"]
    role: Literal["measure", "filter", "time", "table"] = "measure"

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"link score {self.score} outside [0,1]")
        if self.method == "exact" and self.score != 1.0:
            raise ValueError("exact links score 1.0")

    @property
    def target(self) -> str:
        return f"{self.table_id}.{self.column}" if self.column else self.table_id

    def to_dict(self) -> dict:
        return {
            "term": self.term,
            "target": self.target,
            "table_id": self.table_id,
            "column": self.column,
            "score": round(self.score, 12),
            "method": self.method,
            "role": self.role,
        }


@dataclass
class Reconciliation:
    value: Optional[Number]
    status: Literal["confirmed", "confirmed-by-default", "discrepancy", "text-only", "empty"]
    discrepancy: Optional[dict] = None

    def to_dict(self) -> dict:
        return {"value": self.value, "status": self.status, "discrepancy": self.discrepancy}


@dataclass
class AnswerBundle:
    answer: str
    numeric_value: Optional[Number] = None
    sql: Optional[str] = None
    evidence_chunks: list[str] = field(default_factory=list)
    discrepancy: Optional[dict] = None
    plan: list[str] = field(default_factory=list)
    degraded: bool = False
    trace: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "numeric_value": self.numeric_value,
            "sql": self.sql,
            "evidence_chunks": list(self.evidence_chunks),
            "discrepancy": self.discrepancy,
            "plan": list(self.plan),
            "degraded": self.degraded,
        }


# --------------------------------------------------------------------------
# calendar phrases

_ORD = {"first": 1, "1st": 1, "second": 2, "2nd": 2, "third": 3, "3rd": 3, "fourth": 4, "4th": 4}
_MONTH_NAMES = {name.lower(): i for i, name in enumerate(calendar.month_name) if name}
_MONTH_NAMES.update({abbr.lower(): i for i, abbr in MONTH_ABBR.items()})
_MONTH_NAMES["sept"] = 9
_MONTH_WORD = "|".join(sorted(_MONTH_NAMES, key=len, reverse=True))


def _month_end(year: int, month: int) -> dt.date:
    return dt.date(year, month, calendar.monthrange(year, month)[1])


def quarter_range(year: int, q: int) -> tuple[dt.date, dt.date]:
    if not 1 <= q <= 4:
        raise ValueError(f"quarter {q}")
    return dt.date(year, 3 * q - 2, 1), _month_end(year, 3 * q)


def half_range(year: int, h: int) -> tuple[dt.date, dt.date]:
    return (dt.date(year, 1, 1), dt.date(year, 6, 30)) if h == 1 else (dt.date(year, 7, 1), dt.date(year, 12, 31))


_TIME_PATTERNS: list[tuple[re.Pattern, str]] = [
    (re.compile(r"\b(first|second|third|fourth|1st|2nd|3rd|4th)\s+quarter\s+(?:of\s+)?(\d{4})\b", re.I), "quarter-word"),
    (re.compile(r"\bq([1-4])\s*(?:of\s+)?(\d{4})\b", re.I), "quarter-q"),
    (re.compile(r"\b(\d{4})\s*q([1-4])\b", re.I), "quarter-yq"),
    (re.compile(r"\b(first|second|1st|2nd)\s+half\s+(?:of\s+)?(\d{4})\b", re.I), "half-word"),
    (re.compile(r"\bh([12])\s*(?:of\s+)?(\d{4})\b", re.I), "half-h"),
    (re.compile(rf"\b({_MONTH_WORD})\.?\s+(?:of\s+)?(\d{{4}})\b", re.I), "month"),
    (re.compile(r"\b(?:in|during|for|of|throughout)\s+(?:the\s+)?(?:year\s+)?(\d{4})\b", re.I), "year"),
]
_BETWEEN_RE = re.compile(r"\b(?:between|from)\s+(.+?)\s+(?:and|to|through|until)\s+(.+?)(?=$|[?;]|,\s|\s+(?:for|in|by)\b)", re.I)


def parse_time_range(text: str) -> Optional[tuple[tuple[dt.date, dt.date], str]]:
    """Expand a calendar phrase into an inclusive date range.

    >>> parse_time_range("in the first quarter of 2025")[0]
    (datetime.date(2025, 1, 1), datetime.date(2025, 3, 31))
    """
    m = _BETWEEN_RE.search(text)
    if m:
        a, b = find_date(m.group(1)), find_date(m.group(2))
        if a and b:
            return (min(a, b), max(a, b)), m.group(0)
    for pat, kind in _TIME_PATTERNS:
        m = pat.search(text)
        if not m:
            continue
        if kind == "quarter-word":
            return quarter_range(int(m.group(2)), _ORD[m.group(1).lower()]), m.group(0)
        if kind == "quarter-q":
            return quarter_range(int(m.group(2)), int(m.group(1))), m.group(0)
        if kind == "quarter-yq":
            return quarter_range(int(m.group(1)), int(m.group(2))), m.group(0)
        if kind == "half-word":
            return half_range(int(m.group(2)), _ORD[m.group(1).lower()]), m.group(0)
        if kind == "half-h":
            return half_range(int(m.group(2)), int(m.group(1))), m.group(0)
        if kind == "month":
            # "Dec 30, 2024" is a single date, not a month
            tail = text[m.end(1):m.start(2)]
            if re.search(r"\d", tail):
                continue
            year, month = int(m.group(2)), _MONTH_NAMES[m.group(1).lower()]
            return (dt.date(year, month, 1), _month_end(year, month)), m.group(0)
        if kind == "year":
            year = int(m.group(1))
            return (dt.date(year, 1, 1), dt.date(year, 12, 31)), m.group(0)
    return None


# --------------------------------------------------------------------------
# decomposition


class Decomposer(Protocol):
    def decompose(self, question: str, schemas: Sequence[RelationalTable]) -> tuple[list[SubQuery], list[str]]: ...


_CLAUSE_SPLIT = re.compile(
    r"\?\s*|;\s*|\.\s+|\s+and\s+(?=(?:why|how|what|which|who|when|where|describe|explain|summari[sz]e|tell)\b)",
    re.I,
)
_TEXTUAL_RE = re.compile(
    r"^\s*(?:please\s+)?(?:describe|explain|summari[sz]e|why|tell\s+me\s+about|what\s+does\b.*\bsay)\b", re.I
)
_RANK_RE = re.compile(r"\b(top|bottom|highest|lowest|largest|smallest|best|worst)\b(?:\s+(\d+))?", re.I)
_AGG_RE = re.compile(
    r"\b(total|sum\s+of|sum|count\s+of|number\s+of|how\s+many|average|mean|avg|maximum|max|minimum|min)\b\s*(.*)",
    re.I,
)
_AGG_OPS = {
    "total": "sum", "sum": "sum", "sum of": "sum",
    "count of": "count", "number of": "count", "how many": "count",
    "average": "avg", "mean": "avg", "avg": "avg",
    "maximum": "max", "max": "max", "minimum": "min", "min": "min",
}
_MEASURE_STOP = re.compile(
    r"\s+(?:of|in|for|during|by|between|from|across|over|within|per|on|at|where|with|whose|that|which)\b.*$", re.I
)
_LOOKUP_RE = re.compile(
    r"^\s*(?:what|which)\s+(?:is|are|was|were)\s+(?:the\s+)?(?P<measure>.+?)\s+(?:of|for)\s+(?P<lit>.+?)\s*$", re.I
)
_PLAIN_LOOKUP_RE = re.compile(r"^\s*(?:the\s+)?(?P<measure>[\w /-]+?)\s+(?:of|for)\s+(?P<lit>.+?)\s*$", re.I)
_COMPARATORS = [
    (r"greater\s+than|more\s+than|above|over|exceeding|>", ">"),
    (r"less\s+than|fewer\s+than|below|under|<", "<"),
    (r"at\s+least|>=", ">="),
    (r"at\s+most|<=", "<="),
    (r"equals|equal\s+to|is|=", "="),
]
_FILTER_RE = re.compile(
    r"\b(?:where|with|whose|having|have|has)\s+(?:the\s+|a\s+)?(?P<col>[\w /-]+?)\s+(?P<op>"
    + "|".join(p for p, _ in _COMPARATORS)
    + r")\s+(?P<lit>'[^']*'|\"[^\"]*\"|[^\s,;?]+)",
    re.I,
)


def _comparator(word: str) -> str:
    for pat, op in _COMPARATORS:
        if re.fullmatch(pat, word.strip(), re.I):
            return op
    return "="


def _literal(text: str):
    t = text.strip().strip("\"'“”").rstrip("?.!,")
    num = extract_numbers(t)
    if len(num) == 1 and re.fullmatch(r"[-+$\d,.\s]+", t):
        return num[0]
    return t


def _clean_measure(text: str) -> str:
    text = _MEASURE_STOP.sub("", text.strip().rstrip("?.!"))
    return " ".join(content_tokens(text))


def split_clauses(question: str) -> list[str]:
    return [c.strip() for c in _CLAUSE_SPLIT.split(question) if c and c.strip()]


class PatternDecomposer:
    """Interrogative templates plus calendar expansion."""

    def decompose(self, question: str, schemas: Sequence[RelationalTable] = ()) -> tuple[list[SubQuery], list[str]]:
        if not question or not question.strip():
            raise ValueError("empty question")
        subs: list[SubQuery] = []
        for clause in split_clauses(question) or [question.strip()]:
            subs.append(self._clause(clause, f"sq{len(subs) + 1}"))
        return subs, plan_for(subs)

    def _clause(self, clause: str, sq_id: str) -> SubQuery:
        if _TEXTUAL_RE.search(clause):
            return SubQuery(sq_id, "textual", "describe", clause)
        tr = parse_time_range(clause)
        time_range, time_phrase = (tr if tr else (None, None))
        filters = [
            (" ".join(content_tokens(m.group("col"))), _comparator(m.group("op")), _literal(m.group("lit")))
            for m in _FILTER_RE.finditer(clause)
        ]
        body = _FILTER_RE.sub("", clause)
        if time_phrase:
            body = body.replace(time_phrase, " ")

        m = _RANK_RE.search(body)
        if m:
            word = m.group(1).lower()
            k = int(m.group(2)) if m.group(2) else 1
            rest = body[m.end():]
            by = re.search(r"\bby\s+(.+)$", rest, re.I)
            measure = _clean_measure(by.group(1)) if by else _clean_measure(rest)
            order = "asc" if word in ("bottom", "lowest", "smallest", "worst") else "desc"
            if measure:
                return SubQuery(sq_id, "tabular", "rank", clause, measure=measure, top_k=k, order=order,
                                filters=filters, time_range=time_range, time_phrase=time_phrase)

        m = _AGG_RE.search(body)
        if m:
            op = _AGG_OPS[re.sub(r"\s+", " ", m.group(1).lower())]
            measure = _clean_measure(m.group(2))
            if not measure:
                measure = "*" if op == "count" else " ".join(content_tokens(body)) or "value"
            lit_filters = self._literal_filters(m.group(2))
            return SubQuery(sq_id, "tabular", "aggregate", clause, measure=measure, agg_op=op,
                            filters=filters + lit_filters, time_range=time_range, time_phrase=time_phrase)

        for pat in (_LOOKUP_RE, _PLAIN_LOOKUP_RE):
            m = pat.match(body.rstrip("?.! "))
            if m:
                measure = _clean_measure(m.group("measure"))
                lit = _literal(m.group("lit"))
                if measure and (isinstance(lit, (int, float)) or salient_literals(str(lit))):
                    return SubQuery(sq_id, "tabular", "lookup", clause, measure=measure,
                                    filters=filters + [("", "=", lit)], time_range=time_range,
                                    time_phrase=time_phrase)
        if filters:
            measure = _clean_measure(body) or filters[0][0]
            return SubQuery(sq_id, "tabular", "lookup", clause, measure=measure, filters=filters,
                            time_range=time_range, time_phrase=time_phrase)
        return SubQuery(sq_id, "textual", "describe", clause)

    @staticmethod
    def _literal_filters(tail: str) -> list[tuple[str, str, object]]:
        # "total stock of C01" -> value filter on C01
        m = re.search(r"\b(?:of|for)\s+(.+)$", tail, re.I)
        if not m:
            return []
        out = []
        for lit in salient_literals(m.group(1)):
            if not iter_dates_any(lit) and not re.fullmatch(r"\d{4}", lit):
                out.append(("", "=", _literal(lit)))
        return out


def iter_dates_any(text: str) -> bool:
    return any(True for _ in iter_dates(text))


def plan_for(subs: Sequence[SubQuery]) -> list[str]:
    steps = []
    for s in subs:
        if s.modality == "textual":
            steps.append(f"{s.sq_id}: retrieve passages relevant to '{s.raw_span}'")
            steps.append(f"{s.sq_id}: synthesize an answer from the top reranked passages")
            continue
        target = s.measure or "the requested values"
        steps.append(f"{s.sq_id}: locate the table holding {target}")
        if s.time_range:
            steps.append(
                f"{s.sq_id}: identify columns dated {s.time_range[0].isoformat()} to {s.time_range[1].isoformat()}"
            )
        elif s.filters:
            conds = ", ".join(f"{c or 'value'} {op} {lit}" for c, op, lit in s.filters)
            steps.append(f"{s.sq_id}: identify rows where {conds}")
        else:
            steps.append(f"{s.sq_id}: identify the rows and columns in scope")
        steps.append(f"{s.sq_id}: extract {target} values")
        if s.intent == "aggregate":
            steps.append(f"{s.sq_id}: combine with {s.agg_op.upper()} in one SQL statement")
        elif s.intent == "rank":
            steps.append(f"{s.sq_id}: order by {target} {s.order.upper()} and keep the top {s.top_k}")
        else:
            steps.append(f"{s.sq_id}: return the matching cell values")
    return steps


# --------------------------------------------------------------------------
# schema linking


def column_date(table: RelationalTable, k: int) -> Optional[dt.date]:
    for label in [table.display_labels[k]] + list(table.header_paths[k]):
        d = find_date(label)
        if d is not None:
            return d
    return None


def _link_sort_key(link: SchemaLink):
    return (-link.score, link.target, link.role, link.term)


def link_schema(sub: SubQuery, store: DualStore, retriever: Optional[Retriever] = None,
                theta_link: Optional[float] = None) -> list[SchemaLink]:
    """Align sub-query terms with tables and columns.

    Calendar ranges link only to date-named columns (type tags). Other
    terms compare against labels by exact match, then embedding cosine.
    """
    retriever = retriever or Retriever(store)
    theta = retriever.theta_link if theta_link is None else theta_link
    links: list[SchemaLink] = []
    measure_phrases = query_phrases(sub.measure) if sub.measure and sub.measure != "*" else []
    filter_terms = [(c, lit) for c, _, lit in sub.filters]
    single_dates = [d for _, d in iter_dates(sub.raw_span)] if sub.time_range is None else []

    for table in store.tables():
        for k, column in enumerate(table.column_names):
            labels = list(dict.fromkeys([table.display_labels[k]] + list(table.header_paths[k])))
            cdate = column_date(table, k)
            if sub.time_range and cdate is not None and sub.time_range[0] <= cdate <= sub.time_range[1]:
                links.append(SchemaLink(sub.time_phrase or "time range", table.table_id, column, 1.0, "type-tag", "time"))
            best = _best_label_match(retriever, measure_phrases, labels)
            if best and best[0] >= theta:
                links.append(SchemaLink(best[2], table.table_id, column, best[0], best[1], "measure"))
            for col_term, lit in filter_terms:
                if col_term:
                    fb = _best_label_match(retriever, query_phrases(col_term), labels)
                    if fb and fb[0] >= theta:
                        links.append(SchemaLink(col_term, table.table_id, column, fb[0], fb[1], "filter"))
                elif any(_cell_equals(v[k], lit) for v in table.rows):
                    links.append(SchemaLink(str(lit), table.table_id, column, 1.0, "exact", "filter"))
        for d in single_dates:
            if find_date(table.title) == d:
                links.append(SchemaLink(d.isoformat(), table.table_id, None, 1.0, "type-tag", "table"))
        title_best = _best_label_match(retriever, [p for p in query_phrases(sub.raw_span) if " " in p], [table.title])
        if title_best and title_best[0] >= theta:
            links.append(SchemaLink(title_best[2], table.table_id, None, title_best[0], title_best[1], "table"))
    links.sort(key=_link_sort_key)
    return links


def _best_label_match(retriever: Retriever, phrases: Sequence[str], labels: Sequence[str]):
    best = None
    for label in labels:
        for p in phrases:
            s, how = retriever.label_score(p, label)
            if best is None or s > best[0]:
                best = (min(s, 1.0), how, p)
    return best


def _cell_equals(value, lit) -> bool:
    if value is None:
        return False
    if isinstance(lit, (int, float)):
        return isinstance(value, (int, float)) and not isinstance(value, bool) and numbers_equal(value, lit)
    return str(value).strip().lower() == str(lit).strip().lower()


# --------------------------------------------------------------------------
# SQL generation


def _quote_ident(name: str) -> str:
    if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name) and name.upper() not in sqlmod.KEYWORDS | sqlmod.FOREIGN_KEYWORDS:
        return name
    return '"' + name.replace('"', '""') + '"'


def _sql_literal(v) -> str:
    if isinstance(v, bool):
        v = int(v)
    if isinstance(v, (int, float)):
        return repr(v) if isinstance(v, float) else str(v)
    return "'" + str(v).replace("'", "''") + "'"


def choose_table(sub: SubQuery, links: Sequence[SchemaLink], tables: Mapping[str, RelationalTable]) -> str:
    """Table whose links best cover the sub-query.

    Ties go to the most recent ingest, then the smaller table_id.
    """
    by_table: dict[str, list[SchemaLink]] = {}
    for l in links:
        by_table.setdefault(l.table_id, []).append(l)

    def usable(tid: str) -> bool:
        ls = by_table[tid]
        if not all(any(_resolves_filter(l, f) for l in ls) for f in sub.filters):
            return False
        if sub.time_range is not None:
            return any(l.role == "time" for l in ls)
        if sub.intent == "aggregate" and sub.agg_op == "count":
            return True
        if sub.intent == "lookup" and sub.filters:
            # "which products have ..." names rows, not a column
            return True
        return any(l.role == "measure" and _measure_ok(sub, tables[tid], l.column) for l in ls)

    candidates = [tid for tid in by_table if tid in tables and usable(tid)]
    if not candidates:
        raise GenerationFailure(sub.time_phrase or sub.measure or sub.raw_span)

    def key(tid: str):
        ingested = tables[tid].source_meta.get("ingested_at", "")
        return (-sum(l.score for l in by_table[tid]), _Desc(ingested), tid)

    return sorted(candidates, key=key)[0]


def _resolves_filter(link: SchemaLink, flt: tuple) -> bool:
    col_term, _, lit = flt
    if link.role != "filter" or not link.column:
        return False
    return link.term == col_term if col_term else link.term == str(lit)


class _Desc:
    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v

    def __lt__(self, other):
        return self.v > other.v

    def __eq__(self, other):
        return self.v == other.v


def _measure_ok(sub: SubQuery, table: RelationalTable, column: Optional[str]) -> bool:
    if column is None:
        return False
    kind = table.columns[table.column_index(column)][1]
    if sub.intent in ("aggregate", "rank") and sub.agg_op != "count":
        return kind == "continuous"
    return True


_ALIAS_PREFIX = {"sum": "total", "count": "count", "avg": "avg", "min": "min", "max": "max"}


def generate_sql(sub: SubQuery, links: Sequence[SchemaLink], tables: Mapping[str, RelationalTable]) -> str:
    """Compile a tabular sub-query into the dual-store SQL subset."""
    if sub.modality != "tabular":
        raise ValueError("only tabular sub-queries compile to SQL")
    tid = choose_table(sub, links, tables)
    table = tables[tid]
    mine = [l for l in links if l.table_id == tid]
    pos = {c: i for i, c in enumerate(table.column_names)}

    where = []
    for col_term, op, lit in sub.filters:
        role_links = [l for l in mine if _resolves_filter(l, (col_term, op, lit))]
        if not role_links:
            raise GenerationFailure(col_term or str(lit), "unresolved filter")
        col = role_links[0].column
        kind = table.columns[pos[col]][1]
        if kind == "continuous" and not isinstance(lit, (int, float)):
            raise GenerationFailure(str(lit), "non-numeric literal for numeric column")
        where.append(f"{_quote_ident(col)} {op} {_sql_literal(lit)}")
    filter_cols = {l.column for l in mine if l.role == "filter"}

    measure_links = [l for l in mine if l.role == "measure" and _measure_ok(sub, table, l.column)]
    measure_links = [l for l in measure_links if l.column not in filter_cols] or measure_links
    measure_col = measure_links[0].column if measure_links else None
    date_cols = sorted(
        {l.column for l in mine if l.role == "time"},
        key=lambda c: (column_date(table, pos[c]), pos[c]),
    )
    if sub.time_range is not None and table.columns and date_cols:
        date_cols = [c for c in date_cols if table.columns[pos[c]][1] == "continuous"] or date_cols

    alias_word = (sub.measure or "value").split()[0] if sub.measure and sub.measure != "*" else "rows"
    alias = re.sub(r"[^A-Za-z0-9_]", "_", f"{_ALIAS_PREFIX.get(sub.agg_op or '', 'value')}_{alias_word}")
    tail = f" WHERE {' AND '.join(where)}" if where else ""
    src = f" FROM {_quote_ident(table.name)}"

    if sub.intent == "aggregate":
        func = sub.agg_op.upper()
        if date_cols:
            expr = " + ".join(_quote_ident(c) for c in date_cols)
        elif func == "COUNT" and measure_col is None:
            expr = "*"
        elif measure_col is not None:
            expr = _quote_ident(measure_col)
        else:
            raise GenerationFailure(sub.measure or sub.raw_span)
        return f"SELECT {func}({expr}) AS {alias}{src}{tail}"

    if sub.intent == "rank":
        if measure_col is None:
            raise GenerationFailure(sub.measure or sub.raw_span)
        key = next((c for c, kind in table.columns if kind != "continuous"), None)
        cols = ([_quote_ident(key)] if key and key != measure_col else []) + [_quote_ident(measure_col)]
        return (f"SELECT {', '.join(cols)}{src}{tail} ORDER BY {_quote_ident(measure_col)} "
                f"{sub.order.upper()} LIMIT {int(sub.top_k or 1)}")

    if sub.intent == "lookup":
        cols = [_quote_ident(c) for c in date_cols] if date_cols else []
        if not cols and measure_col is None and where:
            key = next((c for c, kind in table.columns if kind != "continuous" and c not in filter_cols), None)
            measure_col = key or table.column_names[0]
        if not cols:
            if measure_col is None:
                raise GenerationFailure(sub.measure or sub.raw_span)
            cols = [_quote_ident(measure_col)]
        return f"SELECT {', '.join(cols)}{src}{tail}"

    raise GenerationFailure(sub.raw_span, f"intent {sub.intent} has no SQL template")


# --------------------------------------------------------------------------
# reconciliation


def reconcile(sql_value: Optional[Number], evidence: Sequence[Chunk]) -> Reconciliation:
    """Cross-check a SQL value against numbers stated in text chunks.

    SQL wins whenever it is present; disagreement is reported, not resolved.
    """
    found: list[Number] = []
    for ch in evidence:
        for v in extract_numbers(ch.text):
            if v not in found:
                found.append(v)
    if sql_value is None:
        if found:
            return Reconciliation(found[0], "text-only")
        return Reconciliation(None, "empty")
    if not found:
        return Reconciliation(sql_value, "confirmed-by-default")
    if any(numbers_equal(sql_value, v) for v in found):
        return Reconciliation(sql_value, "confirmed")
    return Reconciliation(sql_value, "discrepancy", {"sql": sql_value, "text": found})


# --------------------------------------------------------------------------
# end to end


@dataclass
class AnswerOptions:
    k: int = 5
    record_failures: bool = True
    theta_link: float = THETA_LINK


def _format_result(sub: SubQuery, rs: sqlmod.ResultSet) -> tuple[str, Optional[Number]]:
    if sub.intent == "aggregate" and len(rs.rows) == 1 and len(rs.columns) == 1:
        v = rs.rows[0][0]
        num = v if isinstance(v, (int, float)) and not isinstance(v, bool) else None
        return f"{rs.columns[0]} = {format_value(v) if v is not None else 'NULL'}", num
    if not rs.rows:
        return "no matching rows", None
    parts = []
    for row in rs.rows:
        parts.append(", ".join(format_value(v) for v in row))
    text = "; ".join(parts)
    num = None
    if len(rs.rows) == 1 and len(rs.columns) == 1:
        v = rs.rows[0][0]
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            num = v
    return text, num


def answer(
    question: str,
    store: DualStore,
    retriever: Optional[Retriever] = None,
    memory=None,
    decomposer: Optional[Decomposer] = None,
    options: Optional[AnswerOptions] = None,
    rng=None,
) -> AnswerBundle:
    """Answer ``question``; the returned bundle's ``trace`` records every step."""
    options = options or AnswerOptions()
    retriever = retriever or Retriever(store, theta_link=options.theta_link)
    decomposer = decomposer or PatternDecomposer()
    ops = {"decompose": 1, "link": 0, "sql_generate": 0, "sql_execute": 0, "retrieve": 0}
    schemas = store.tables()

    subs, plan = decomposer.decompose(question, schemas)
    memory_info = None
    if memory is not None:
        subs, plan, memory_info = _seed_from_memory(question, subs, plan, memory, retriever, rng)

    hits: list[RetrievalHit] = []
    recall_scores: list[float] = []
    if len(store.chunks()):
        hits = retriever.search(question, options.k, "hybrid")
        recall_scores = [h.recall_score for h in retriever.recall(question, 10)]
        ops["retrieve"] += 1

    sq_traces = []
    all_links = []
    statements = []
    answers = []
    numeric_value = None
    degraded = False
    failures = []
    queried_tables = []
    table_map = {t.table_id: t for t in schemas}

    for sub in subs:
        entry = {"sub_query": sub.to_dict(), "path": None, "sql": None, "result": None, "error": None}
        if sub.modality == "tabular":
            entry["path"] = "sql"
            try:
                links = link_schema(sub, store, retriever, options.theta_link)
                ops["link"] += 1
                all_links.extend(links)
                ops["sql_generate"] += 1
                statement = generate_sql(sub, links, table_map)
                entry["sql"] = statement
                rs = store.execute_sql(statement)
                ops["sql_execute"] += 1
                entry["result"] = rs.to_dict()
                statements.append(statement)
                text, num = _format_result(sub, rs)
                answers.append(text)
                if numeric_value is None and num is not None:
                    numeric_value = num
                queried_tables.append(choose_table(sub, links, table_map))
            except (GenerationFailure, sqlmod.SqlError) as exc:
                degraded = True
                term = getattr(exc, "term", None)
                entry["path"] = "retrieval-fallback"
                entry["error"] = {"type": type(exc).__name__, "message": str(exc), "term": term}
                failures.append({"kind": "generation_failure", "question": question, "sq_id": sub.sq_id,
                                 "term": term, "error": str(exc)})
                if hits:
                    answers.append(_synthesize(retriever, hits))
        else:
            entry["path"] = "retrieval"
            if hits:
                answers.append(_synthesize(retriever, hits))
        sq_traces.append(entry)

    evidence = [
        retriever.chunk(h.chunk_id) for h in hits
        if h.origin != "table-render" and h.table_id in queried_tables
    ]
    rec = None
    if numeric_value is not None:
        rec = reconcile(numeric_value, evidence)
        numeric_value = rec.value

    if options.record_failures:
        for f in failures:
            store.append_failure({**f, "ts": utcnow_iso()})

    routing = {
        "sql_path": [h.chunk_id for h in hits if h.origin == "table-render"],
        "synthesis": [h.chunk_id for h in hits if h.origin != "table-render"],
    }
    answer_text = " | ".join(a for a in answers if a) or "no answer found"
    trace = {
        "question": question,
        "plan": plan,
        "sub_queries": sq_traces,
        "links": [l.to_dict() for l in all_links],
        "sql": statements,
        "result": sq_traces[0]["result"] if len(sq_traces) == 1 else [e["result"] for e in sq_traces],
        "discrepancy": rec.discrepancy if rec else None,
        "reconciliation": rec.to_dict() if rec else None,
        "evidence_chunks": [h.chunk_id for h in hits],
        "hits": [h.to_dict() for h in hits],
        "recall_scores": [round(s, 12) for s in recall_scores],
        "routing": routing,
        "degraded": degraded,
        "failures": failures,
        "ops": ops,
        "memory": memory_info,
        "answer": answer_text,
        "numeric_value": numeric_value,
    }
    return AnswerBundle(
        answer=answer_text,
        numeric_value=numeric_value,
        sql="; ".join(statements) if statements else None,
        evidence_chunks=[h.chunk_id for h in hits],
        discrepancy=rec.discrepancy if rec else None,
        plan=plan,
        degraded=degraded,
        trace=trace,
    )


def _synthesize(retriever: Retriever, hits: Sequence[RetrievalHit], n: int = 2, limit: int = 400) -> str:
    # free-text hits feed synthesis; table renders only when nothing else came back
    textual = [h for h in hits if h.origin != "table-render"] or list(hits)
    texts = []
    for h in textual[:n]:
        t = retriever.chunk(h.chunk_id).text
        texts.append(t if len(t) <= limit else t[:limit].rstrip() + "...")
    return "\n\n".join(texts)


def _seed_from_memory(question, subs, plan, memory, retriever, rng):
    """Borrow a stored plan when the grammar found no tabular intent."""
    from .memory import NoCases

    try:
        case, dist = memory.select(retriever.embedder.embed(question), rng=rng)
    except NoCases:
        return subs, plan, {"case_id": None, "seeded": False}
    info = {"case_id": case.case_id, "seeded": False, "probability": round(dist[case.case_id], 12)}
    template = case.plan_template or {}
    if all(s.modality == "textual" for s in subs):
        for sk in template.get("sub_queries", []):
            if sk.get("modality") != "tabular":
                continue
            tr = parse_time_range(question)
            measure = sk.get("measure") or " ".join(content_tokens(question)) or "value"
            try:
                seeded = SubQuery(
                    "sq1", "tabular", sk["intent"], question, measure=measure, agg_op=sk.get("agg_op"),
                    time_range=tr[0] if tr else None, time_phrase=tr[1] if tr else None,
                    top_k=sk.get("top_k"), order=sk.get("order", "desc"),
                )
            except (ValueError, KeyError):
                continue
            subs = [seeded]
            plan = plan_for(subs)
            info["seeded"] = True
            break
    return subs, plan, info


def plan_template(bundle: AnswerBundle) -> dict:
    """Serializable skeleton of a bundle's plan, for the case bank."""
    skeletons = []
    for entry in bundle.trace.get("sub_queries", []):
        sq = entry["sub_query"]
        skeletons.append({k: sq[k] for k in ("modality", "intent", "agg_op", "measure", "top_k", "order")})
    return {"plan": list(bundle.plan), "sub_queries": skeletons}
