import json
import os
import random
import warnings

import pytest
from hypothesis import given, strategies as st

from gridqa.grid import build_grid
from gridqa.sql import NameResolution, UnsupportedSyntax
from gridqa.store import (
    Chunk,
    DualStore,
    EmptyTable,
    NameCollision,
    RelationalTable,
    StoreNotFound,
    build_map,
    ingest_document,
    render_markdown,
    standardize,
)
from gridqa.structure import segment_subtables
from tablegen import random_table_grid


def plain_number(text):
    """Independent parser for the fixture's integer strings with grouping commas."""
    digits = text.replace(",", "")
    assert digits.lstrip("-").isdigit()
    return int(digits)


def table(n_rows, n_cols=3, name="t_demo"):
    cols = [(f"t_c{k}", "continuous") for k in range(n_cols)]
    rows = [tuple(r * n_cols + k for k in range(n_cols)) for r in range(n_rows)]
    labels = [f"c{k}" for k in range(n_cols)]
    return RelationalTable(name.lower(), name, cols, rows, labels, [[l] for l in labels])


def entry(t, window=40):
    chunks = render_markdown(t, window)
    return t, chunks, build_map(t, chunks)


# standardize


def test_case_a_section_one(case_a):
    seg = segment_subtables(case_a).segments[0]
    t = standardize(seg, case_a)
    assert t.column_names == ["t_P_N", "t_Description", "t_Stock"]
    assert t.rows[0] == ("C01", "Painted Upper Back Cover", 4444)
    assert [r[2] for r in t.rows[1:]] == [None] * 4


def test_continuous_strings_become_numbers():
    doc = build_grid([["Qty", "Label"], ["600", "a"], ["600", "b"], ["4,444", "c"]])
    t = standardize(segment_subtables(doc).segments[0], doc)
    assert [r[0] for r in t.rows] == [600, 600, plain_number("4,444")]
    assert all(isinstance(r[0], int) for r in t.rows)


def test_unparseable_continuous_becomes_null(caplog):
    doc = build_grid([["Qty"], ["1"], ["2"], ["3"], ["4"], ["n/a"]])
    with caplog.at_level("WARNING"):
        t = standardize(segment_subtables(doc).segments[0], doc)
    assert [r[0] for r in t.rows] == [1, 2, 3, 4, None]
    assert "not a number" in caplog.text


def test_no_body_rows():
    doc = build_grid([["Only", "Header"]])
    with pytest.raises(EmptyTable):
        standardize(segment_subtables(doc).segments[0], doc)


# render


def test_render_one_row():
    chunks = render_markdown(table(1))
    assert len(chunks) == 1
    lines = chunks[0].text.splitlines()
    assert lines == ["| c0 | c1 | c2 |", "| --- | --- | --- |", "| 0 | 1 | 2 |"]


def test_render_windowing():
    chunks = render_markdown(table(100), 40)
    sizes = [len(c.text.splitlines()) - 2 for c in chunks]
    assert sizes == [40, 40, 20]
    assert [c.row_range for c in chunks] == [(0, 40), (40, 80), (80, 100)]
    assert all(c.text.startswith("| c0 | c1 | c2 |\n") for c in chunks)


def test_render_spans_locate_rows_in_full_rendering():
    t = table(25)
    full = render_markdown(t, 1000)[0].text
    for c in render_markdown(t, 10):
        start, end = c.char_span
        assert full[start:end] == "\n".join(c.text.splitlines()[2:])


def test_render_nulls_and_floats():
    t = RelationalTable("x", "t_x", [("t_a", "continuous"), ("t_b", "discrete")],
                        [(1234567, None), (0.5, "p|q")], ["a", "b"], [["a"], ["b"]])
    lines = render_markdown(t)[0].text.splitlines()
    assert lines[2] == "| 1234567 |  |"
    assert lines[3] == "| 0.5 | p\\|q |"


def test_render_is_deterministic(case_a):
    seg = segment_subtables(case_a).segments[1]
    a = [c.to_dict() for c in render_markdown(standardize(seg, case_a))]
    b = [c.to_dict() for c in render_markdown(standardize(seg, case_a))]
    assert json.dumps(a) == json.dumps(b)


def test_table_render_chunk_needs_table():
    with pytest.raises(ValueError):
        Chunk("c", "text", "table-render")


# persistence


def test_put_get_round_trip(tmp_path):
    store = DualStore.open(tmp_path / "s", create=True)
    t, chunks, smap = entry(table(5))
    eid = store.put_entry(t, chunks, smap)
    reopened = DualStore.open(tmp_path / "s")
    got = reopened.get(eid)
    assert got.table == t
    assert got.chunks == chunks
    assert got.map == smap


def test_name_collision(tmp_path):
    store = DualStore.open(tmp_path / "s", create=True)
    store.put_entry(*entry(table(2, name="t_inv")))
    other = table(3, name="T_INV")
    other.table_id = "other"
    with pytest.raises(NameCollision):
        store.put_entry(*entry(other))


def test_open_missing_store(tmp_path):
    with pytest.raises(StoreNotFound):
        DualStore.open(tmp_path / "nothing")


def test_inconsistent_entry_rejected(tmp_path):
    store = DualStore.open(tmp_path / "s", create=True)
    t, chunks, smap = entry(table(2))
    smap.entries.clear()
    with pytest.raises(ValueError):
        store.put_entry(t, chunks, smap)


@pytest.mark.parametrize("kill_at", range(6))
def test_crash_leaves_old_or_new_state(tmp_path, monkeypatch, kill_at):
    root = tmp_path / "s"
    store = DualStore.open(root, create=True)
    first = entry(table(3, name="t_first"))
    store.put_entry(*first)
    before = sorted(DualStore.open(root).entry_ids())

    calls = {"n": 0}
    real_replace = os.replace

    def flaky_replace(src, dst):
        if calls["n"] == kill_at:
            raise OSError("simulated crash")
        calls["n"] += 1
        return real_replace(src, dst)

    second = table(4, name="t_second")
    monkeypatch.setattr("gridqa.store.os.replace", flaky_replace)
    try:
        store.put_entry(*entry(second))
        crashed = False
    except OSError:
        crashed = True
    monkeypatch.setattr("gridqa.store.os.replace", real_replace)

    after = DualStore.open(root)
    ids = sorted(after.entry_ids())
    assert ids in (before, sorted(before + [second.table_id]))
    if second.table_id in ids:
        assert after.get(second.table_id).table == second
    else:
        assert crashed
    assert after.get(first[0].table_id).table == first[0]
    # temp files never become visible entries
    assert not [p for p in root.rglob(".*") if p.is_file() and p.name != ".lock"]


def test_ingest_case_a(make_store):
    store = make_store("case_a")
    assert len(store) == 4
    assert {c.origin for c in store.chunks()} == {"table-render", "note-text"}
    notes = [c for c in store.chunks() if c.origin == "note-text"]
    assert any("sailing date" in c.text for c in notes)


def test_store_consistency_invariant(make_store):
    store = make_store("case_a", "case_b_mini", "case_b_note")
    chunk_ids = {c.chunk_id for c in store.chunks()}
    table_ids = {t.table_id for t in store.tables()}
    for tid in table_ids:
        assert any(c.origin == "table-render" and c.table_id == tid for c in store.chunks())
        assert any(m.table_id == tid for m in store.map_entries())
    for m in store.map_entries():
        assert m.chunk_id in chunk_ids and m.table_id in table_ids


# SQL over the store


def test_sum_single_row(tmp_path):
    store = DualStore.open(tmp_path / "s", create=True)
    t = RelationalTable("inv", "t_inv", [("t_P_N", "discrete"), ("t_Stock", "continuous")],
                        [("C01", 4444)], ["P/N", "Stock"], [["P/N"], ["Stock"]])
    store.put_entry(*entry(t))
    assert store.execute_sql("SELECT SUM(t_Stock) FROM t_inv").scalar() == 4444
    assert store.execute_sql("SELECT SUM(t_Stock) FROM t_inv WHERE t_P_N = 'none'").scalar() is None
    assert store.execute_sql("SELECT COUNT(*) FROM t_inv WHERE t_P_N = 'none'").scalar() == 0


def test_thirteen_column_sum(tmp_path):
    rng = random.Random(7)
    cols = [(f"t_w{k}", "continuous") for k in range(13)]
    rows = [tuple(rng.randint(0, 500) for _ in range(13)) for _ in range(2)]
    t = RelationalTable("wk", "t_wk", cols, rows, [c for c, _ in cols], [[c] for c, _ in cols])
    store = DualStore.open(tmp_path / "s", create=True)
    store.put_entry(*entry(t))
    expr = " + ".join(c for c, _ in cols)
    got = store.execute_sql(f"SELECT SUM({expr}) AS total FROM t_wk").scalar()
    brute = 0
    for row in rows:
        for v in row:
            brute += v
    assert got == brute


def test_sql_errors(make_store):
    store = make_store("case_a")
    with pytest.raises(NameResolution):
        store.execute_sql("SELECT t_nope FROM t_C01_Painted_Upper_Back_Cover_Supply_Plan_1")
    with pytest.raises(NameResolution):
        store.execute_sql("SELECT * FROM t_missing")
    with pytest.raises(UnsupportedSyntax):
        store.execute_sql("DELETE FROM t_C01_Painted_Upper_Back_Cover_Supply_Plan_1")


# failure file


def test_failure_file_skips_torn_line(tmp_path):
    store = DualStore.open(tmp_path / "s", create=True)
    store.append_failure({"kind": "x", "n": 1})
    with open(store.failures_path, "a", encoding="utf-8") as fh:
        fh.write('{"kind": "torn"')
    assert store.read_failures() == [{"kind": "x", "n": 1}]


@given(st.integers(0, 10_000))
def test_chunks_anchor_to_their_table(seed):
    doc = random_table_grid(random.Random(seed), f"g{seed}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        seg = segment_subtables(doc).segments[0]
    if not seg.body_rows:
        return
    t = standardize(seg, doc)
    chunks = render_markdown(t, 17)
    assert all(c.table_id == t.table_id for c in chunks)
    assert sum(c.row_range[1] - c.row_range[0] for c in chunks) == len(t.rows)
    smap = build_map(t, chunks)
    assert {e.chunk_id for e in smap.entries} == {c.chunk_id for c in chunks}
