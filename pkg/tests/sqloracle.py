"""Brute-force reference for the SQL subset.

Queries are generated as small Python structures, rendered to SQL text
for the engine, and evaluated here directly by nested iteration. Nothing
in this module touches the engine's parser or evaluator.
"""

from __future__ import annotations

import functools
import math
import random
from dataclasses import dataclass, field

WORDS = ["alpha", "beta", "gamma", "delta", "Alpha", "omega", "beta max", "zeta"]


@dataclass
class Table:
    name: str
    column_names: list
    kinds: list  # "int" | "float" | "str"
    rows: list


def random_table(rng: random.Random, name: str, n_rows: int | None = None) -> Table:
    n_rows = rng.randint(0, 50) if n_rows is None else n_rows
    cols = [("k", "int")]
    for i in range(rng.randint(1, 4)):
        cols.append((f"c{i}", rng.choice(["int", "int", "float", "str", "str"])))
    rows = []
    for _ in range(n_rows):
        row = []
        for cname, kind in cols:
            if cname == "k":
                row.append(rng.randint(0, 6))
            elif rng.random() < 0.12:
                row.append(None)
            elif kind == "int":
                row.append(rng.randint(-20, 20))
            elif kind == "float":
                row.append(round(rng.uniform(-50, 50), 2))
            else:
                row.append(rng.choice(WORDS))
        rows.append(tuple(row))
    return Table(name, [c for c, _ in cols], [k for _, k in cols], rows)


# -- expression and condition nodes (tuples) --------------------------------


def _num_cols(scope):
    return [(a, c) for a, t in scope for c, k in zip(t.column_names, t.kinds) if k != "str"]


def _str_cols(scope):
    return [(a, c) for a, t in scope for c, k in zip(t.column_names, t.kinds) if k == "str"]


def gen_num_expr(rng, scope, depth=0):
    cols = _num_cols(scope)
    r = rng.random()
    if depth < 2 and r < 0.3:
        op = rng.choice(["+", "-", "*", "/"])
        return ("bin", op, gen_num_expr(rng, scope, depth + 1), gen_num_expr(rng, scope, depth + 1))
    if r < 0.4:
        return ("lit", rng.randint(-5, 5))
    a, c = rng.choice(cols)
    return ("col", a, c)


def gen_cond(rng, scope, depth=0):
    r = rng.random()
    if depth < 2 and r < 0.25:
        return (rng.choice(["AND", "OR"]), gen_cond(rng, scope, depth + 1), gen_cond(rng, scope, depth + 1))
    strs = _str_cols(scope)
    if strs and r < 0.45:
        a, c = rng.choice(strs)
        kind = rng.choice(["eq", "in", "like", "cmp"])
        if kind == "eq":
            return ("cmp", rng.choice(["=", "!="]), ("col", a, c), ("lit", rng.choice(WORDS)))
        if kind == "in":
            return ("in", ("col", a, c), rng.sample(WORDS, rng.randint(1, 3)))
        if kind == "like":
            return ("like", ("col", a, c), rng.choice(["a%", "%ta", "%e%", "_eta", "BETA%", "%"]))
        return ("cmp", rng.choice(["<", "<=", ">", ">="]), ("col", a, c), ("lit", rng.choice(WORDS)))
    if r < 0.55:
        a, c = rng.choice(_num_cols(scope))
        return ("in", ("col", a, c), [rng.randint(-5, 5) for _ in range(rng.randint(1, 4))])
    op = rng.choice(["=", "!=", "<", "<=", ">", ">="])
    return ("cmp", op, gen_num_expr(rng, scope, 1), ("lit", rng.randint(-10, 10)))


# -- rendering ---------------------------------------------------------------


def _q(v):
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    return repr(v) if isinstance(v, float) else str(v)


def render_expr(e, qualify):
    kind = e[0]
    if kind == "col":
        return f"{e[1]}.{e[2]}" if qualify else e[2]
    if kind == "lit":
        v = e[1]
        return f"({v})" if isinstance(v, (int, float)) and v < 0 else _q(v)
    if kind == "bin":
        return f"({render_expr(e[2], qualify)} {e[1]} {render_expr(e[3], qualify)})"
    if kind == "agg":
        return f"{e[1]}(*)" if e[2] is None else f"{e[1]}({render_expr(e[2], qualify)})"
    raise AssertionError(e)


def render_cond(c, qualify):
    kind = c[0]
    if kind in ("AND", "OR"):
        return f"({render_cond(c[1], qualify)} {kind} {render_cond(c[2], qualify)})"
    if kind == "cmp":
        return f"{render_expr(c[2], qualify)} {c[1]} {render_expr(c[3], qualify)}"
    if kind == "in":
        items = ", ".join(_q(v) for v in c[2])
        return f"{render_expr(c[1], qualify)} IN ({items})"
    if kind == "like":
        return f"{render_expr(c[1], qualify)} LIKE {_q(c[2])}"
    raise AssertionError(c)


@dataclass
class Query:
    tables: list  # [(alias, Table)]
    joins: list = field(default_factory=list)  # [((la, lc), (ra, rc))]
    items: list = field(default_factory=list)  # [(expr, alias)]
    where: object = None
    group_by: list = field(default_factory=list)  # [expr]
    order_by: list = field(default_factory=list)  # [(item index, desc)]
    limit: int | None = None

    @property
    def qualify(self):
        return bool(self.joins)

    def sql(self) -> str:
        q = self.qualify
        sel = ", ".join(f"{render_expr(e, q)} AS {a}" for e, a in self.items)
        a0, t0 = self.tables[0]
        src = f"{t0.name} {a0}" if q else t0.name
        parts = [f"SELECT {sel} FROM {src}"]
        for ((la, lc), (ra, rc)), (alias, t) in zip(self.joins, self.tables[1:]):
            parts.append(f"INNER JOIN {t.name} {alias} ON {la}.{lc} = {ra}.{rc}")
        if self.where is not None:
            parts.append("WHERE " + render_cond(self.where, q))
        if self.group_by:
            parts.append("GROUP BY " + ", ".join(render_expr(g, q) for g in self.group_by))
        if self.order_by:
            parts.append("ORDER BY " + ", ".join(f"{self.items[i][1]} {'DESC' if d else 'ASC'}" for i, d in self.order_by))
        if self.limit is not None:
            parts.append(f"LIMIT {self.limit}")
        return " ".join(parts)


# -- brute-force evaluation ------------------------------------------------


def _val(e, env):
    kind = e[0]
    if kind == "col":
        return env[(e[1], e[2])]
    if kind == "lit":
        return e[1]
    if kind == "bin":
        a, b = _val(e[2], env), _val(e[3], env)
        if a is None or b is None:
            return None
        if e[1] == "+":
            return a + b
        if e[1] == "-":
            return a - b
        if e[1] == "*":
            return a * b
        return None if b == 0 else a / b
    raise AssertionError(e)


def _like(value: str, pattern: str) -> bool:
    # dynamic programming match, case-insensitive
    s, p = value.lower(), pattern.lower()

    @functools.lru_cache(maxsize=None)
    def m(i, j):
        if j == len(p):
            return i == len(s)
        if p[j] == "%":
            return m(i, j + 1) or (i < len(s) and m(i + 1, j))
        if i < len(s) and (p[j] == "_" or p[j] == s[i]):
            return m(i + 1, j + 1)
        return False

    return m(0, 0)


def _cond(c, env):
    """Three-valued: True, False or None."""
    kind = c[0]
    if kind == "AND":
        a, b = _cond(c[1], env), _cond(c[2], env)
        if a is False or b is False:
            return False
        return None if None in (a, b) else True
    if kind == "OR":
        a, b = _cond(c[1], env), _cond(c[2], env)
        if a is True or b is True:
            return True
        return None if None in (a, b) else False
    if kind == "cmp":
        a, b = _val(c[2], env), _val(c[3], env)
        if a is None or b is None:
            return None
        return {"=": a == b, "!=": a != b, "<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[c[1]]
    if kind == "in":
        v = _val(c[1], env)
        if v is None:
            return None
        return v in c[2]
    if kind == "like":
        v = _val(c[1], env)
        return None if v is None else _like(v, c[2])
    raise AssertionError(c)


def _agg(func, arg, envs):
    if arg is None:
        return len(envs)
    vals = [v for v in (_val(arg, e) for e in envs) if v is not None]
    if func == "COUNT":
        return len(vals)
    if not vals:
        return None
    if func == "SUM":
        total = vals[0]
        for v in vals[1:]:
            total += v
        return total
    if func == "AVG":
        return math.fsum(vals) / len(vals)
    return min(vals) if func == "MIN" else max(vals)


def _item(e, env, envs):
    if e[0] == "agg":
        return _agg(e[1], e[2], envs)
    return _val(e, env)


def _order_cmp(a, b, desc):
    # NULL first ascending, last descending
    if a is None and b is None:
        return 0
    if a is None:
        return 1 if desc else -1
    if b is None:
        return -1 if desc else 1
    c = (a > b) - (a < b)
    return -c if desc else c


def evaluate(q: Query) -> list[tuple]:
    envs = []
    a0, t0 = q.tables[0]

    def bind(alias, table, row, env):
        env = dict(env)
        for name, v in zip(table.column_names, row):
            env[(alias, name)] = v
        return env

    envs = [bind(a0, t0, r, {}) for r in t0.rows]
    for ((la, lc), (ra, rc)), (alias, t) in zip(q.joins, q.tables[1:]):
        nxt = []
        for env in envs:
            for r in t.rows:
                e2 = bind(alias, t, r, env)
                if e2[(la, lc)] is not None and e2[(la, lc)] == e2[(ra, rc)]:
                    nxt.append(e2)
        envs = nxt
    if q.where is not None:
        envs = [e for e in envs if _cond(q.where, e) is True]

    aggregated = bool(q.group_by) or any(e[0] == "agg" for e, _ in q.items)
    if aggregated:
        groups: dict = {}
        if q.group_by:
            for e in envs:
                groups.setdefault(tuple(_val(g, e) for g in q.group_by), []).append(e)
        else:
            groups[()] = envs
        out = [tuple(_item(e, members[0] if members else {}, members) for e, _ in q.items) for members in groups.values()]
    else:
        out = [tuple(_item(e, env, [env]) for e, _ in q.items) for env in envs]

    if q.order_by:
        def cmp(r1, r2):
            for i, desc in q.order_by:
                c = _order_cmp(r1[i], r2[i], desc)
                if c:
                    return c
            return 0

        out = sorted(out, key=functools.cmp_to_key(cmp))
    if q.limit is not None:
        out = out[: q.limit]
    return out


# -- query generation --------------------------------------------------------


def gen_query(rng: random.Random, tables: list[Table]) -> Query:
    shape = rng.choice(["project", "project", "aggregate", "group", "join", "join_group"])
    if shape.startswith("join") and len(tables) >= 2:
        t1, t2 = rng.sample(tables, 2)
        scope = [("a", t1), ("b", t2)]
        q = Query(scope, joins=[(("a", "k"), ("b", "k"))])
    else:
        shape = shape.replace("join_group", "group").replace("join", "project")
        scope = [("t", rng.choice(tables))]
        q = Query(scope)

    if rng.random() < 0.6:
        q.where = gen_cond(rng, scope)

    if shape == "project" or shape == "join":
        n = rng.randint(1, 3)
        for i in range(n):
            if rng.random() < 0.3 and _str_cols(scope):
                a, c = rng.choice(_str_cols(scope))
                q.items.append((("col", a, c), f"x{i}"))
            else:
                q.items.append((gen_num_expr(rng, scope), f"x{i}"))
    else:
        if shape in ("group", "join_group"):
            cands = [(a, c) for a, t in scope for c in t.column_names if c == "k"] + _str_cols(scope)
            a, c = rng.choice(cands)
            g = ("col", a, c)
            q.group_by = [g]
            q.items.append((g, "g"))
        for i in range(rng.randint(1, 3)):
            func = rng.choice(["SUM", "COUNT", "AVG", "MIN", "MAX", "COUNT*"])
            if func == "COUNT*":
                q.items.append((("agg", "COUNT", None), f"a{i}"))
            elif func in ("MIN", "MAX", "COUNT") and _str_cols(scope) and rng.random() < 0.3:
                a, c = rng.choice(_str_cols(scope))
                q.items.append((("agg", func, ("col", a, c)), f"a{i}"))
            else:
                q.items.append((("agg", func, gen_num_expr(rng, scope, 1)), f"a{i}"))

    if shape != "aggregate" and rng.random() < 0.6:
        idx = list(range(len(q.items)))
        rng.shuffle(idx)
        q.order_by = [(i, rng.random() < 0.5) for i in idx[: rng.randint(1, len(idx))]]
    if shape != "aggregate" and rng.random() < 0.4:
        q.limit = rng.randint(0, 10)
    return q


def results_equal(a: list[tuple], b: list[tuple]) -> bool:
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if len(ra) != len(rb):
            return False
        for x, y in zip(ra, rb):
            if x is None or y is None:
                if x is not y:
                    return False
            elif isinstance(x, str) or isinstance(y, str):
                if x != y:
                    return False
            elif not math.isclose(x, y, rel_tol=1e-9, abs_tol=1e-9):
                return False
    return True


def differential(n_queries: int, seed: int, engine) -> tuple[int, list]:
    """Run ``n_queries`` random queries; return (agreements, mismatches)."""
    rng = random.Random(seed)
    agree = 0
    bad = []
    for i in range(n_queries):
        tables = [random_table(rng, f"tbl{j}") for j in range(rng.randint(1, 5))]
        q = gen_query(rng, tables)
        expected = evaluate(q)
        got = engine(q.sql(), {t.name: t for t in tables})
        if results_equal(expected, got):
            agree += 1
        else:
            bad.append((i, q.sql(), expected[:5], got[:5]))
    return agree, bad
