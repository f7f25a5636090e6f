"""A small SQL SELECT engine over in-memory relational tables.

Supported: column refs and arithmetic, SUM/COUNT/AVG/MIN/MAX, WHERE with
comparisons, AND, OR, IN and LIKE, GROUP BY, ORDER BY, LIMIT and INNER JOIN
on equality. Anything else raises :class:`UnsupportedSyntax`.

Semantics follow SQL three-valued logic with NULL as ``None``. Without
ORDER BY, rows come out in insertion order (left table outer, joined tables
inner; groups in order of first appearance). ORDER BY is stable, NULLs sort
first ascending and last descending, numbers sort before strings.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Protocol, Sequence, Union

Value = Union[None, int, float, str]


class SqlError(Exception):
    pass


class UnsupportedSyntax(SqlError):
    pass


class NameResolution(SqlError):
    pass


class SqlTypeError(SqlError):
    pass


class TableLike(Protocol):
    name: str
    rows: Sequence[Sequence[Value]]

    @property
    def column_names(self) -> list[str]: ...


@dataclass
class ResultSet:
    columns: list[str]
    rows: list[tuple]

    def scalar(self) -> Value:
        if len(self.rows) != 1 or len(self.columns) != 1:
            raise SqlError(f"expected a 1x1 result, got {len(self.rows)}x{len(self.columns)}")
        return self.rows[0][0]

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


# --------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d*|\.\d+|\d+)
  | (?P<str>'(?:[^']|'')*')
  | (?P<qid>"(?:[^"]|"")+")
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|<>|!=|[=<>+\-*/(),.;])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "LIMIT", "AS", "AND", "OR",
    "IN", "LIKE", "INNER", "JOIN", "ON", "ASC", "DESC", "NULL",
}
# recognised so that they produce a clear subset error instead of a name error
FOREIGN_KEYWORDS = {
    "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "ALTER", "LEFT", "RIGHT", "FULL",
    "OUTER", "CROSS", "UNION", "HAVING", "DISTINCT", "NOT", "IS", "BETWEEN", "CASE",
    "EXISTS", "OFFSET", "WITH", "INTERSECT", "EXCEPT", "NATURAL", "USING",
}
AGGREGATES = {"SUM", "COUNT", "AVG", "MIN", "MAX"}


@dataclass(frozen=True)
class Tok:
    kind: str  # num, str, id, kw, op, eof
    text: str
    pos: int


def tokenize(sql: str) -> list[Tok]:
    toks = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if m is None:
            raise UnsupportedSyntax(f"unexpected character {sql[pos]!r} at offset {pos}")
        kind = m.lastgroup
        text = m.group(0)
        if kind == "id":
            up = text.upper()
            if up in KEYWORDS:
                toks.append(Tok("kw", up, pos))
            elif up in FOREIGN_KEYWORDS:
                raise UnsupportedSyntax(f"{up} is outside the supported SQL subset")
            else:
                toks.append(Tok("id", text, pos))
        elif kind == "qid":
            toks.append(Tok("id", text[1:-1].replace('""', '"'), pos))
        elif kind == "str":
            toks.append(Tok("str", text[1:-1].replace("''", "'"), pos))
        elif kind != "ws":
            toks.append(Tok(kind, text, pos))
        pos = m.end()
    toks.append(Tok("eof", "", len(sql)))
    return toks


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Literal:
    value: Value


@dataclass(frozen=True)
class ColRef:
    table: Optional[str]
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class Neg:
    operand: Any


@dataclass(frozen=True)
class InList:
    operand: Any
    items: tuple


@dataclass(frozen=True)
class Like:
    operand: Any
    pattern: str


@dataclass(frozen=True)
class Agg:
    func: str
    arg: Any  # None for COUNT(*)


@dataclass(frozen=True)
class Star:
    pass


@dataclass
class SelectItem:
    expr: Any
    alias: Optional[str]
    text: str


@dataclass
class TableRef:
    name: str
    alias: str


@dataclass
class Join:
    table: TableRef
    left: ColRef
    right: ColRef


@dataclass
class Select:
    items: list[SelectItem]
    source: TableRef
    joins: list[Join] = field(default_factory=list)
    where: Any = None
    group_by: list[Any] = field(default_factory=list)
    order_by: list[tuple[Any, bool]] = field(default_factory=list)  # (expr, descending)
    limit: Optional[int] = None


# --------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, sql: str):
        self.sql = sql
        self.toks = tokenize(sql)
        self.i = 0

    @property
    def cur(self) -> Tok:
        return self.toks[self.i]

    def _error(self, what: str) -> UnsupportedSyntax:
        t = self.cur
        near = t.text or "end of input"
        return UnsupportedSyntax(f"{what} near {near!r} at offset {t.pos}")

    def accept_kw(self, *words: str) -> Optional[str]:
        t = self.cur
        if t.kind == "kw" and t.text in words:
            self.i += 1
            return t.text
        return None

    def expect_kw(self, word: str) -> None:
        if not self.accept_kw(word):
            raise self._error(f"expected {word}")

    def accept_op(self, *ops: str) -> Optional[str]:
        t = self.cur
        if t.kind == "op" and t.text in ops:
            self.i += 1
            return t.text
        return None

    def expect_op(self, op: str) -> None:
        if not self.accept_op(op):
            raise self._error(f"expected {op!r}")

    def ident(self) -> str:
        t = self.cur
        if t.kind != "id":
            raise self._error("expected identifier")
        self.i += 1
        return t.text

    def parse(self) -> Select:
        self.expect_kw("SELECT")
        items = self.select_list()
        self.expect_kw("FROM")
        source = self.table_ref()
        joins = []
        while True:
            if self.accept_kw("INNER"):
                self.expect_kw("JOIN")
            elif not self.accept_kw("JOIN"):
                break
            ref = self.table_ref()
            self.expect_kw("ON")
            left = self.colref()
            self.expect_op("=")
            right = self.colref()
            joins.append(Join(ref, left, right))
        sel = Select(items, source, joins)
        if self.accept_kw("WHERE"):
            sel.where = self.expr()
        if self.accept_kw("GROUP"):
            self.expect_kw("BY")
            sel.group_by.append(self.expr())
            while self.accept_op(","):
                sel.group_by.append(self.expr())
        if self.accept_kw("ORDER"):
            self.expect_kw("BY")
            sel.order_by.append(self.order_item())
            while self.accept_op(","):
                sel.order_by.append(self.order_item())
        if self.accept_kw("LIMIT"):
            t = self.cur
            if t.kind != "num" or not t.text.isdigit():
                raise self._error("LIMIT takes a non-negative integer")
            self.i += 1
            sel.limit = int(t.text)
        self.accept_op(";")
        if self.cur.kind != "eof":
            raise self._error("unexpected trailing input")
        return sel

    def select_list(self) -> list[SelectItem]:
        if self.accept_op("*"):
            return [SelectItem(Star(), None, "*")]
        items = [self.select_item()]
        while self.accept_op(","):
            items.append(self.select_item())
        return items

    def select_item(self) -> SelectItem:
        start = self.cur.pos
        expr = self.expr()
        text = self.sql[start:self.cur.pos].strip()
        alias = None
        if self.accept_kw("AS"):
            alias = self.ident()
        elif self.cur.kind == "id":
            alias = self.ident()
        return SelectItem(expr, alias, text)

    def table_ref(self) -> TableRef:
        name = self.ident()
        alias = name
        if self.accept_kw("AS"):
            alias = self.ident()
        elif self.cur.kind == "id":
            alias = self.ident()
        return TableRef(name, alias)

    def order_item(self) -> tuple[Any, bool]:
        e = self.expr()
        desc = self.accept_kw("ASC", "DESC") == "DESC"
        return e, desc

    def colref(self) -> ColRef:
        first = self.ident()
        if self.accept_op("."):
            return ColRef(first, self.ident())
        return ColRef(None, first)

    def expr(self):
        left = self.and_expr()
        while self.accept_kw("OR"):
            left = BinOp("OR", left, self.and_expr())
        return left

    def and_expr(self):
        left = self.comparison()
        while self.accept_kw("AND"):
            left = BinOp("AND", left, self.comparison())
        return left

    def comparison(self):
        left = self.additive()
        op = self.accept_op("=", "!=", "<>", "<", "<=", ">", ">=")
        if op:
            return BinOp("!=" if op == "<>" else op, left, self.additive())
        if self.accept_kw("IN"):
            self.expect_op("(")
            items = [self.literal()]
            while self.accept_op(","):
                items.append(self.literal())
            self.expect_op(")")
            return InList(left, tuple(items))
        if self.accept_kw("LIKE"):
            t = self.cur
            if t.kind != "str":
                raise self._error("LIKE needs a string pattern")
            self.i += 1
            return Like(left, t.text)
        return left

    def literal(self) -> Value:
        neg = self.accept_op("-")
        t = self.cur
        if t.kind == "num":
            self.i += 1
            v = float(t.text) if "." in t.text else int(t.text)
            return -v if neg else v
        if neg:
            raise self._error("expected number")
        if t.kind == "str":
            self.i += 1
            return t.text
        if self.accept_kw("NULL"):
            return None
        raise self._error("expected literal")

    def additive(self):
        left = self.multiplicative()
        while True:
            op = self.accept_op("+", "-")
            if not op:
                return left
            left = BinOp(op, left, self.multiplicative())

    def multiplicative(self):
        left = self.unary()
        while True:
            op = self.accept_op("*", "/")
            if not op:
                return left
            left = BinOp(op, left, self.unary())

    def unary(self):
        if self.accept_op("-"):
            return Neg(self.unary())
        return self.primary()

    def primary(self):
        t = self.cur
        if t.kind == "num":
            self.i += 1
            return Literal(float(t.text) if "." in t.text else int(t.text))
        if t.kind == "str":
            self.i += 1
            return Literal(t.text)
        if self.accept_kw("NULL"):
            return Literal(None)
        if self.accept_op("("):
            e = self.expr()
            self.expect_op(")")
            return e
        if t.kind == "id":
            nxt = self.toks[self.i + 1]
            if nxt.kind == "op" and nxt.text == "(":
                func = t.text.upper()
                if func not in AGGREGATES:
                    raise UnsupportedSyntax(f"function {t.text} is outside the supported SQL subset")
                self.i += 2
                if func == "COUNT" and self.accept_op("*"):
                    arg = None
                else:
                    arg = self.expr()
                    if _contains_agg(arg):
                        raise UnsupportedSyntax("nested aggregates are not supported")
                self.expect_op(")")
                return Agg(func, arg)
            return self.colref()
        raise self._error("expected expression")


def parse_sql(sql: str) -> Select:
    return _Parser(sql).parse()


def _contains_agg(e) -> bool:
    if isinstance(e, Agg):
        return True
    if isinstance(e, BinOp):
        return _contains_agg(e.left) or _contains_agg(e.right)
    if isinstance(e, (Neg,)):
        return _contains_agg(e.operand)
    if isinstance(e, (InList, Like)):
        return _contains_agg(e.operand)
    return False


# --------------------------------------------------------------------------
# evaluation


def _type_rank(v) -> int:
    return 0 if isinstance(v, (int, float)) else 1


def _compare(a, b) -> Optional[int]:
    if a is None or b is None:
        return None
    ra, rb = _type_rank(a), _type_rank(b)
    if ra != rb:
        return -1 if ra < rb else 1
    return (a > b) - (a < b)


def like_to_regex(pattern: str) -> re.Pattern:
    out = []
    for ch in pattern:
        if ch == "%":
            out.append(".*")
        elif ch == "_":
            out.append(".")
        else:
            out.append(re.escape(ch))
    return re.compile("".join(out), re.IGNORECASE | re.DOTALL)


def _truth(v) -> Optional[bool]:
    if v is None:
        return None
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)):
        return v != 0
    raise SqlTypeError("string used as a condition")


def _arith(op: str, a, b):
    if a is None or b is None:
        return None
    if isinstance(a, bool):
        a = int(a)
    if isinstance(b, bool):
        b = int(b)
    if isinstance(a, str) or isinstance(b, str):
        raise SqlTypeError(f"arithmetic {op!r} on a string value")
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        return None
    return a / b


class _Scope:
    """Column resolution for one FROM/JOIN chain."""

    def __init__(self, bindings: list[tuple[str, TableLike]]):
        self.bindings = bindings
        self.offsets = []
        off = 0
        for _, t in bindings:
            self.offsets.append(off)
            off += len(t.column_names)
        self.width = off

    def resolve(self, ref: ColRef) -> int:
        hits = []
        for (alias, table), off in zip(self.bindings, self.offsets):
            if ref.table is not None and ref.table.lower() != alias.lower():
                continue
            for k, name in enumerate(table.column_names):
                if name.lower() == ref.name.lower():
                    hits.append(off + k)
        if ref.table is not None and not any(a.lower() == ref.table.lower() for a, _ in self.bindings):
            raise NameResolution(f"unknown table or alias {ref.table!r}")
        if not hits:
            raise NameResolution(f"unknown column {ref.name!r}")
        if len(hits) > 1:
            raise NameResolution(f"ambiguous column {ref.name!r}")
        return hits[0]

    def all_names(self) -> list[str]:
        return [n for _, t in self.bindings for n in t.column_names]


class _Compiled:
    """Expression tree with column refs resolved to row offsets."""

    def __init__(self, scope: _Scope):
        self.scope = scope

    def bind(self, e):
        if isinstance(e, ColRef):
            return ("col", self.scope.resolve(e))
        if isinstance(e, Literal):
            return ("lit", e.value)
        if isinstance(e, BinOp):
            return ("bin", e.op, self.bind(e.left), self.bind(e.right))
        if isinstance(e, Neg):
            return ("neg", self.bind(e.operand))
        if isinstance(e, InList):
            return ("in", self.bind(e.operand), list(e.items))
        if isinstance(e, Like):
            return ("like", self.bind(e.operand), like_to_regex(e.pattern))
        if isinstance(e, Agg):
            return ("agg", e.func, None if e.arg is None else self.bind(e.arg))
        raise UnsupportedSyntax(f"unsupported expression {e!r}")


def _eval(node, row, group=None):
    kind = node[0]
    if kind == "col":
        return row[node[1]]
    if kind == "lit":
        return node[1]
    if kind == "neg":
        v = _eval(node[1], row, group)
        if v is None:
            return None
        if isinstance(v, str):
            raise SqlTypeError("negation of a string value")
        return -v
    if kind == "bin":
        op = node[1]
        if op in ("AND", "OR"):
            a = _truth(_eval(node[2], row, group))
            b = _truth(_eval(node[3], row, group))
            if op == "AND":
                if a is False or b is False:
                    return False
                return None if a is None or b is None else True
            if a is True or b is True:
                return True
            return None if a is None or b is None else False
        a = _eval(node[2], row, group)
        b = _eval(node[3], row, group)
        if op in ("+", "-", "*", "/"):
            return _arith(op, a, b)
        c = _compare(a, b)
        if c is None:
            return None
        return {"=": c == 0, "!=": c != 0, "<": c < 0, "<=": c <= 0, ">": c > 0, ">=": c >= 0}[op]
    if kind == "in":
        v = _eval(node[1], row, group)
        if v is None:
            return None
        if any(_compare(v, item) == 0 for item in node[2] if item is not None):
            return True
        return None if any(item is None for item in node[2]) else False
    if kind == "like":
        v = _eval(node[1], row, group)
        if v is None:
            return None
        return node[2].fullmatch(v if isinstance(v, str) else str(v)) is not None
    if kind == "agg":
        if group is None:
            raise UnsupportedSyntax("aggregate used outside of an aggregate context")
        return _aggregate(node[1], node[2], group)
    raise AssertionError(kind)


def _aggregate(func: str, arg, rows: list) -> Value:
    if arg is None:
        return len(rows)
    vals = [_eval(arg, r) for r in rows]
    vals = [v for v in vals if v is not None]
    if func == "COUNT":
        return len(vals)
    if not vals:
        return None
    if func in ("SUM", "AVG"):
        if any(isinstance(v, str) for v in vals):
            raise SqlTypeError(f"{func} over string values")
        if func == "SUM":
            total = vals[0]
            for v in vals[1:]:
                total = total + v
            return total
        return math.fsum(vals) / len(vals)
    best = vals[0]
    for v in vals[1:]:
        c = _compare(v, best)
        if (func == "MIN" and c < 0) or (func == "MAX" and c > 0):
            best = v
    return best


def _uses_agg(node) -> bool:
    if node[0] == "agg":
        return True
    return any(isinstance(ch, tuple) and _uses_agg(ch) for ch in node[1:])


def _bare_columns(node) -> list[int]:
    """Column offsets referenced outside of aggregates."""
    if node[0] == "col":
        return [node[1]]
    if node[0] == "agg":
        return []
    out = []
    for ch in node[1:]:
        if isinstance(ch, tuple) and ch and isinstance(ch[0], str):
            out.extend(_bare_columns(ch))
    return out


def _py(v):
    return int(v) if isinstance(v, bool) else v


def execute(sql: str, tables: Mapping[str, TableLike]) -> ResultSet:
    """Parse and evaluate one SELECT against ``tables`` (keyed by name)."""
    sel = parse_sql(sql)
    by_lower = {name.lower(): t for name, t in tables.items()}

    def lookup(ref: TableRef) -> TableLike:
        t = by_lower.get(ref.name.lower())
        if t is None:
            raise NameResolution(f"unknown table {ref.name!r}")
        return t

    bindings = [(sel.source.alias, lookup(sel.source))]
    aliases = {sel.source.alias.lower()}
    for j in sel.joins:
        if j.table.alias.lower() in aliases:
            raise NameResolution(f"duplicate table alias {j.table.alias!r}")
        aliases.add(j.table.alias.lower())
        bindings.append((j.table.alias, lookup(j.table)))

    # rows of the join, left-deep nested loops in insertion order
    rows: list[tuple] = [tuple(r) for r in bindings[0][1].rows]
    for k, j in enumerate(sel.joins, start=1):
        partial = _Scope(bindings[: k + 1])
        li, ri = partial.resolve(j.left), partial.resolve(j.right)
        right_rows = [tuple(r) for r in bindings[k][1].rows]
        joined = []
        for lrow in rows:
            for rrow in right_rows:
                full = lrow + rrow
                c = _compare(full[li], full[ri])
                if c == 0:
                    joined.append(full)
        rows = joined

    scope = _Scope(bindings)
    comp = _Compiled(scope)

    if sel.where is not None:
        where = comp.bind(sel.where)
        if _uses_agg(where):
            raise UnsupportedSyntax("aggregates are not allowed in WHERE")
        rows = [r for r in rows if _truth(_eval(where, r)) is True]

    if len(sel.items) == 1 and isinstance(sel.items[0].expr, Star):
        items = [("col", k) for k in range(scope.width)]
        names = scope.all_names()
    else:
        items = [comp.bind(it.expr) for it in sel.items]
        names = [it.alias or _default_name(it) for it in sel.items]
    aliases_map = {it.alias.lower(): k for k, it in enumerate(sel.items) if it.alias}

    def bind_order(e):
        # select-list aliases take precedence over table columns
        if isinstance(e, ColRef) and e.table is None and e.name.lower() in aliases_map:
            return ("item", aliases_map[e.name.lower()])
        return comp.bind(e)

    order = [(bind_order(e), desc) for e, desc in sel.order_by]
    group_nodes = [comp.bind(g) for g in sel.group_by]
    aggregated = bool(group_nodes) or any(_uses_agg(n) for n in items) or any(
        n[0] != "item" and _uses_agg(n) for n, _ in order
    )

    out: list[tuple[tuple, list]]  # (result row, order keys)
    if aggregated:
        group_cols = set()
        for g in group_nodes:
            if _uses_agg(g):
                raise UnsupportedSyntax("aggregates are not allowed in GROUP BY")
            if g[0] == "col":
                group_cols.add(g[1])
        for n in items + [n for n, _ in order if n[0] != "item"]:
            for col in _bare_columns(n):
                if col not in group_cols:
                    raise UnsupportedSyntax("non-aggregated column outside GROUP BY")
        groups: dict[tuple, list] = {}
        if group_nodes:
            for r in rows:
                key = tuple(_eval(g, r) for g in group_nodes)
                groups.setdefault(key, []).append(r)
        else:
            groups[()] = rows
        out = []
        for members in groups.values():
            rep = members[0] if members else (None,) * scope.width
            values = tuple(_py(_eval(n, rep, members)) for n in items)
            keys = [values[n[1]] if n[0] == "item" else _py(_eval(n, rep, members)) for n, _ in order]
            out.append((values, keys))
    else:
        out = []
        for r in rows:
            values = tuple(_py(_eval(n, r)) for n in items)
            keys = [values[n[1]] if n[0] == "item" else _py(_eval(n, r)) for n, _ in order]
            out.append((values, keys))

    for k in range(len(order) - 1, -1, -1):
        desc = order[k][1]
        present = [o for o in out if o[1][k] is not None]
        missing = [o for o in out if o[1][k] is None]
        if desc:
            present.sort(key=lambda o: _Reversed((_type_rank(o[1][k]), o[1][k])))
            out = present + missing
        else:
            present.sort(key=lambda o: (_type_rank(o[1][k]), o[1][k]))
            out = missing + present

    result = [o[0] for o in out]
    if sel.limit is not None:
        result = result[: sel.limit]
    return ResultSet(names, result)


class _Reversed:
    """Sort key wrapper giving a stable descending order."""

    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v

    def __lt__(self, other):
        return other.v < self.v


def _default_name(item: SelectItem) -> str:
    if isinstance(item.expr, ColRef):
        return item.expr.name
    return item.text


def referenced_names(sql: str) -> Iterable[str]:
    """Identifiers appearing in a statement (for diagnostics)."""
    return [t.text for t in tokenize(sql) if t.kind == "id"]
