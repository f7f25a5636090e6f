"""Dual store: relational tables for SQL plus Markdown chunks for retrieval.

On disk a store is a directory::

    manifest.json          committed entries (sorted keys), written last
    tables/<id>.json       columnar table data
    schemas/<id>.json      parsed TableSchema
    chunks/<id>.jsonl      Markdown and note chunks
    maps/<id>.json         schema-chunk map entries

Entry files are immutable once the manifest references them, so a crash at
any point leaves either the previous manifest or the new one.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Optional, Sequence

from filelock import FileLock

from . import sql as sqlmod
from .clock import utcnow_iso
from .grid import GridDocument, cell_at
from .structure import TableSchema, segment_subtables
from .textutil import parse_number

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 40
STORE_FORMAT = "gridqa-store/1"


class StoreError(Exception):
    pass


class StoreNotFound(StoreError):
    pass


class NameCollision(StoreError):
    pass


class EmptyTable(ValueError):
    pass


@dataclass
class RelationalTable:
    table_id: str
    name: str
    columns: list[tuple[str, str]]  # (identifier, col_type)
    rows: list[tuple]
    display_labels: list[str] = field(default_factory=list)
    header_paths: list[list[str]] = field(default_factory=list)
    title: str = ""
    doc_id: str = ""
    source_meta: dict = field(default_factory=dict)

    @property
    def column_names(self) -> list[str]:
        return [c for c, _ in self.columns]

    def column_index(self, name: str) -> int:
        for k, (c, _) in enumerate(self.columns):
            if c.lower() == name.lower():
                return k
        raise KeyError(name)

    def to_dict(self) -> dict:
        # columnar layout
        return {
            "table_id": self.table_id,
            "name": self.name,
            "title": self.title,
            "doc_id": self.doc_id,
            "source_meta": dict(self.source_meta),
            "n_rows": len(self.rows),
            "columns": [
                {"name": c, "col_type": t, "display_label": d, "header_path": list(p)}
                for (c, t), d, p in zip(self.columns, self.display_labels, self.header_paths)
            ],
            "data": [[row[k] for row in self.rows] for k in range(len(self.columns))],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RelationalTable":
        cols = d["columns"]
        data = d["data"]
        rows = [tuple(data[k][i] for k in range(len(cols))) for i in range(d["n_rows"])]
        return cls(
            table_id=d["table_id"],
            name=d["name"],
            columns=[(c["name"], c["col_type"]) for c in cols],
            rows=rows,
            display_labels=[c["display_label"] for c in cols],
            header_paths=[list(c["header_path"]) for c in cols],
            title=d.get("title", ""),
            doc_id=d.get("doc_id", ""),
            source_meta=dict(d.get("source_meta", {})),
        )


Origin = Literal["table-render", "note-text", "free-text"]


@dataclass
class Chunk:
    chunk_id: str
    text: str
    origin: Origin
    table_id: Optional[str] = None
    char_span: Optional[tuple[int, int]] = None
    row_range: Optional[tuple[int, int]] = None  # data rows held, end exclusive

    def __post_init__(self):
        if self.origin == "table-render" and not self.table_id:
            raise ValueError("table-render chunks must name their table")

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "text": self.text,
            "origin": self.origin,
            "table_id": self.table_id,
            "char_span": list(self.char_span) if self.char_span else None,
            "row_range": list(self.row_range) if self.row_range else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        span = d.get("char_span")
        rows = d.get("row_range")
        return cls(
            d["chunk_id"],
            d["text"],
            d["origin"],
            d.get("table_id"),
            tuple(span) if span else None,
            tuple(rows) if rows else None,
        )


@dataclass(frozen=True)
class MapEntry:
    chunk_id: str
    table_id: str
    header_path: tuple[str, ...]


@dataclass
class SchemaChunkMap:
    entries: list[MapEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"chunk_id": e.chunk_id, "table_id": e.table_id, "header_path": list(e.header_path)}
                for e in self.entries
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaChunkMap":
        return cls([MapEntry(e["chunk_id"], e["table_id"], tuple(e["header_path"])) for e in d["entries"]])


@dataclass
class DualStoreEntry:
    table: RelationalTable
    chunks: list[Chunk]
    map: SchemaChunkMap
    schema: Optional[TableSchema] = None


# --------------------------------------------------------------------------
# standardisation and rendering


def standardize(schema: TableSchema, doc: GridDocument) -> RelationalTable:
    """One relational row per body row; continuous columns become numbers."""
    if not schema.body_rows:
        raise EmptyTable(f"{schema.table_id}: no body rows")
    rows = []
    for r in schema.body_rows:
        values = []
        for col in schema.columns:
            raw = cell_at(doc, r, col.grid_col)
            if raw is None:
                values.append(None)
                continue
            if col.col_type == "continuous":
                num = parse_number(raw)
                if num is None:
                    log.warning("%s: %s row %d: %r is not a number, stored as null",
                                schema.table_id, col.name, r, raw)
                values.append(num)
            else:
                values.append(raw.strip())
        rows.append(tuple(values))
    meta = dict(doc.source_meta)
    meta.setdefault("ingested_at", utcnow_iso())
    return RelationalTable(
        table_id=schema.table_id,
        name=schema.name,
        columns=[(c.name, c.col_type) for c in schema.columns],
        rows=rows,
        display_labels=[c.display_label for c in schema.columns],
        header_paths=[list(c.header_path) for c in schema.columns],
        title=schema.title,
        doc_id=schema.doc_id,
        source_meta=meta,
    )


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _md_cell(text: str) -> str:
    return text.replace("\\", "\\\\").replace("|", "\\|").replace("\r", " ").replace("\n", " ")


def _md_line(cells: Sequence[str]) -> str:
    return "| " + " | ".join(_md_cell(c) for c in cells) + " |"


def render_markdown(table: RelationalTable, window: int = DEFAULT_WINDOW) -> list[Chunk]:
    """GitHub pipe-table chunks of at most ``window`` data rows each.

    ``char_span`` locates a chunk's data lines within the single-chunk
    rendering of the whole table.
    """
    if window < 1:
        raise ValueError("window must be positive")
    labels = table.display_labels or table.column_names
    head = [_md_line(labels), _md_line(["---"] * len(labels))]
    lines = [_md_line([format_value(v) for v in row]) for row in table.rows]
    offsets = []
    pos = sum(len(h) + 1 for h in head)
    for line in lines:
        offsets.append(pos)
        pos += len(line) + 1
    chunks = []
    starts = range(0, len(lines), window) if lines else [0]
    for j, s in enumerate(starts):
        part = lines[s:s + window]
        text = "\n".join(head + part)
        span = (offsets[s], offsets[s] + len("\n".join(part))) if part else None
        chunks.append(
            Chunk(f"{table.table_id}.md{j + 1}", text, "table-render", table.table_id, span, (s, s + len(part)))
        )
    return chunks


def note_chunks(schema: TableSchema) -> list[Chunk]:
    return [
        Chunk(f"{schema.table_id}.note{k + 1}", text, "note-text", schema.table_id)
        for k, text in enumerate(schema.notes)
    ]


def build_map(table: RelationalTable, chunks: Sequence[Chunk]) -> SchemaChunkMap:
    entries = []
    for ch in chunks:
        if ch.origin == "table-render":
            for path in table.header_paths:
                entries.append(MapEntry(ch.chunk_id, table.table_id, tuple(path)))
        else:
            entries.append(MapEntry(ch.chunk_id, ch.table_id or table.table_id, ()))
    return SchemaChunkMap(entries)


def check_entry(table: RelationalTable, chunks: Sequence[Chunk], smap: SchemaChunkMap) -> None:
    width = len(table.columns)
    for i, row in enumerate(table.rows):
        if len(row) != width:
            raise ValueError(f"{table.table_id}: row {i} has {len(row)} values, expected {width}")
    for k, (_, kind) in enumerate(table.columns):
        if kind == "continuous":
            for row in table.rows:
                v = row[k]
                if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                    raise ValueError(f"{table.table_id}: non-numeric value {v!r} in continuous column")
    ids = {c.chunk_id for c in chunks}
    if len(ids) != len(chunks):
        raise ValueError("duplicate chunk ids")
    mapped = {e.chunk_id for e in smap.entries}
    for c in chunks:
        if c.origin == "table-render" and c.chunk_id not in mapped:
            raise ValueError(f"chunk {c.chunk_id} missing from schema map")
    for e in smap.entries:
        if e.chunk_id not in ids or e.table_id != table.table_id:
            raise ValueError(f"map entry {e} does not resolve")
    if not any(c.origin == "table-render" for c in chunks):
        raise ValueError(f"{table.table_id}: no table-render chunk")


# --------------------------------------------------------------------------
# persistence


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _safe_name(entry_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in entry_id)


class DualStore:
    def __init__(self, root: Path, manifest: dict):
        self.root = root
        self._manifest = manifest
        self._entries: dict[str, DualStoreEntry] = {}
        for entry_id in sorted(manifest["entries"]):
            self._entries[entry_id] = self._read_entry(manifest["entries"][entry_id])
        self._index = None

    # -- opening

    @classmethod
    def open(cls, root, create: bool = False) -> "DualStore":
        root = Path(root)
        mpath = root / "manifest.json"
        if not mpath.exists():
            if not create:
                raise StoreNotFound(f"no store at {root}")
            root.mkdir(parents=True, exist_ok=True)
            with FileLock(str(root / ".lock")):
                if not mpath.exists():
                    _atomic_write(mpath, _dump({"format": STORE_FORMAT, "entries": {}}))
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        if manifest.get("format") != STORE_FORMAT:
            raise StoreError(f"{mpath}: unrecognised store format")
        return cls(root, manifest)

    def _read_entry(self, rec: dict) -> DualStoreEntry:
        table = RelationalTable.from_dict(json.loads((self.root / rec["table"]).read_text(encoding="utf-8")))
        chunks = [
            Chunk.from_dict(json.loads(line))
            for line in (self.root / rec["chunks"]).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        smap = SchemaChunkMap.from_dict(json.loads((self.root / rec["map"]).read_text(encoding="utf-8")))
        schema = None
        if rec.get("schema"):
            schema = TableSchema.from_dict(json.loads((self.root / rec["schema"]).read_text(encoding="utf-8")))
        return DualStoreEntry(table, chunks, smap, schema)

    def lock(self) -> FileLock:
        return FileLock(str(self.root / ".lock"))

    # -- reads

    def __len__(self) -> int:
        return len(self._entries)

    def entry_ids(self) -> list[str]:
        return list(self._entries)

    def get(self, entry_id: str) -> DualStoreEntry:
        return self._entries[entry_id]

    def tables(self) -> list[RelationalTable]:
        return [e.table for e in self._entries.values()]

    def table(self, table_id: str) -> RelationalTable:
        return self._entries[table_id].table

    def table_by_name(self, name: str) -> RelationalTable:
        for e in self._entries.values():
            if e.table.name.lower() == name.lower():
                return e.table
        raise KeyError(name)

    def chunks(self) -> list[Chunk]:
        return [c for e in self._entries.values() for c in e.chunks]

    def chunk(self, chunk_id: str) -> Chunk:
        for c in self.iter_chunks():
            if c.chunk_id == chunk_id:
                return c
        raise KeyError(chunk_id)

    def iter_chunks(self) -> Iterator[Chunk]:
        for e in self._entries.values():
            yield from e.chunks

    def map_entries(self) -> list[MapEntry]:
        return [m for e in self._entries.values() for m in e.map.entries]

    def header_paths_for(self, chunk_id: str) -> list[tuple[str, ...]]:
        return [m.header_path for m in self.map_entries() if m.chunk_id == chunk_id and m.header_path]

    def execute_sql(self, statement: str) -> sqlmod.ResultSet:
        return sqlmod.execute(statement, {t.name: t for t in self.tables()})

    @property
    def memory_path(self) -> Path:
        return self.root / "memory.jsonl"

    @property
    def failures_path(self) -> Path:
        return self.root / "failures.jsonl"

    # -- writes

    def append_failure(self, record: dict) -> None:
        """Append one JSON line to the shared failure-case file."""
        line = _dump(record) + "\n"
        with self.lock():
            with open(self.failures_path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def read_failures(self) -> list[dict]:
        if not self.failures_path.exists():
            return []
        out = []
        for line in self.failures_path.read_text(encoding="utf-8").splitlines():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                log.warning("ignoring torn line in %s", self.failures_path.name)
        return out

    def put_entry(
        self,
        table: RelationalTable,
        chunks: Sequence[Chunk],
        smap: SchemaChunkMap,
        schema: Optional[TableSchema] = None,
    ) -> str:
        check_entry(table, chunks, smap)
        entry_id = table.table_id
        with self.lock():
            # another writer may have committed since we opened
            current = json.loads((self.root / "manifest.json").read_text(encoding="utf-8"))
            for eid, rec in current["entries"].items():
                if eid == entry_id:
                    raise NameCollision(f"entry {entry_id!r} already stored")
                if rec["name"].lower() == table.name.lower():
                    raise NameCollision(f"table name {table.name!r} already used by {eid}")
            base = _safe_name(entry_id)
            rec = {
                "name": table.name,
                "table": f"tables/{base}.json",
                "chunks": f"chunks/{base}.jsonl",
                "map": f"maps/{base}.json",
            }
            _atomic_write(self.root / rec["table"], _dump(table.to_dict()))
            _atomic_write(self.root / rec["chunks"], "".join(_dump(c.to_dict()) + "\n" for c in chunks))
            _atomic_write(self.root / rec["map"], _dump(smap.to_dict()))
            if schema is not None:
                rec["schema"] = f"schemas/{base}.json"
                _atomic_write(self.root / rec["schema"], _dump(schema.to_dict()))
            current["entries"][entry_id] = rec
            _atomic_write(self.root / "manifest.json", _dump(current))
        self._manifest = current
        for eid in sorted(current["entries"]):
            if eid not in self._entries:
                self._entries[eid] = self._read_entry(current["entries"][eid])
        self._entries = dict(sorted(self._entries.items()))
        self._index = None
        return entry_id


@dataclass
class IngestResult:
    table_id: str
    name: str
    kind: str
    n_rows: int
    n_columns: int
    n_chunks: int
    skipped: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "table_id": self.table_id,
            "name": self.name,
            "kind": self.kind,
            "rows": self.n_rows,
            "columns": self.n_columns,
            "chunks": self.n_chunks,
            "skipped": self.skipped,
        }


def ingest_document(store: DualStore, doc: GridDocument, window: int = DEFAULT_WINDOW) -> list[IngestResult]:
    """segment -> parse -> standardize -> render -> put, per segment."""
    results = []
    for schema in segment_subtables(doc).segments:
        try:
            table = standardize(schema, doc)
        except EmptyTable as exc:
            log.warning("skipping %s: %s", schema.table_id, exc)
            results.append(IngestResult(schema.table_id, schema.name, schema.kind, 0, len(schema.columns), 0, str(exc)))
            continue
        chunks = render_markdown(table, window) + note_chunks(schema)
        store.put_entry(table, chunks, build_map(table, chunks), schema)
        results.append(
            IngestResult(schema.table_id, table.name, schema.kind, len(table.rows), len(table.columns), len(chunks))
        )
    return results
