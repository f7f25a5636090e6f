"""Raw grid documents: cells, merge regions, canonical JSON and CSV I/O."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence


class GridError(ValueError):
    pass


class GridParseError(GridError):
    """Input file does not parse; carries the offending row/column when known."""

    def __init__(self, message: str, row: Optional[int] = None, col: Optional[int] = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"column {col}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.col = col


class GridValidationError(GridError):
    pass


@dataclass(frozen=True)
class MergeRegion:
    top: int
    left: int
    height: int
    width: int

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def right(self) -> int:
        return self.left + self.width

    def contains(self, r: int, c: int) -> bool:
        return self.top <= r < self.bottom and self.left <= c < self.right

    def intersects(self, other: "MergeRegion") -> bool:
        return (
            self.top < other.bottom
            and other.top < self.bottom
            and self.left < other.right
            and other.left < self.right
        )

    def to_dict(self) -> dict:
        return {"top": self.top, "left": self.left, "height": self.height, "width": self.width}


@dataclass(frozen=True)
class Cell:
    value: Optional[str] = None
    covered_by: Optional[MergeRegion] = None

    @property
    def is_covered(self) -> bool:
        return self.covered_by is not None


@dataclass(frozen=True)
class GridDocument:
    doc_id: str
    title: str
    n_rows: int
    n_cols: int
    cells: tuple[Cell, ...]
    merges: tuple[MergeRegion, ...] = ()
    source_meta: dict = field(default_factory=dict)

    def cell(self, r: int, c: int) -> Cell:
        return self.cells[r * self.n_cols + c]

    def row_values(self, r: int) -> list[Optional[str]]:
        return [cell_at(self, r, c) for c in range(self.n_cols)]

    def merge_at(self, r: int, c: int) -> Optional[MergeRegion]:
        """Merge region containing (r, c), anchor included."""
        cell = self.cell(r, c)
        if cell.covered_by is not None:
            return cell.covered_by
        for m in self.merges:
            if m.top == r and m.left == c:
                return m
        return None


def _normalize(value) -> Optional[str]:
    if value is None:
        return None
    if not isinstance(value, str):
        raise TypeError(f"cell values must be strings or null, got {type(value).__name__}")
    return value if value.strip() else None


def validate_merges(n_rows: int, n_cols: int, merges: Sequence[MergeRegion]) -> None:
    for i, m in enumerate(merges):
        if m.height < 1 or m.width < 1:
            raise GridValidationError(f"merge {i} has non-positive size")
        if m.height * m.width < 2:
            raise GridValidationError(f"merge {i} is 1x1; single cells are not recorded as merges")
        if m.top < 0 or m.left < 0 or m.bottom > n_rows or m.right > n_cols:
            raise GridValidationError(f"merge {i} {m.to_dict()} lies outside the {n_rows}x{n_cols} grid")
    for i in range(len(merges)):
        for j in range(i + 1, len(merges)):
            if merges[i].intersects(merges[j]):
                raise GridValidationError(f"merges {i} and {j} overlap")


def build_grid(
    rows: Sequence[Sequence[Optional[str]]],
    merges: Sequence[MergeRegion] = (),
    *,
    doc_id: str = "grid",
    title: str = "",
    n_cols: Optional[int] = None,
    source_meta: Optional[dict] = None,
) -> GridDocument:
    """Assemble a validated GridDocument from row lists.

    Values stored in covered (non-anchor) merge cells are rejected.
    """
    n_rows = len(rows)
    if n_cols is None:
        n_cols = max((len(r) for r in rows), default=0)
    for r, row in enumerate(rows):
        if len(row) != n_cols:
            raise GridValidationError(f"row {r} has {len(row)} cells, expected {n_cols}")
    merges = tuple(merges)
    validate_merges(n_rows, n_cols, merges)
    cover: dict[tuple[int, int], MergeRegion] = {}
    for m in merges:
        for r in range(m.top, m.bottom):
            for c in range(m.left, m.right):
                if (r, c) != (m.top, m.left):
                    cover[(r, c)] = m
    cells = []
    for r, row in enumerate(rows):
        for c, raw in enumerate(row):
            try:
                value = _normalize(raw)
            except TypeError as exc:
                raise GridParseError(str(exc), r, c) from None
            m = cover.get((r, c))
            if m is not None and value is not None:
                raise GridValidationError(f"covered cell ({r},{c}) carries its own value")
            cells.append(Cell(value, m))
    return GridDocument(
        doc_id=doc_id,
        title=title,
        n_rows=n_rows,
        n_cols=n_cols,
        cells=tuple(cells),
        merges=merges,
        source_meta=dict(source_meta or {}),
    )


def cell_at(doc: GridDocument, r: int, c: int) -> Optional[str]:
    """Effective value at (r, c): the anchor's value for merged cells."""
    if not (0 <= r < doc.n_rows and 0 <= c < doc.n_cols):
        raise IndexError(f"cell ({r},{c}) outside {doc.n_rows}x{doc.n_cols} grid")
    cell = doc.cells[r * doc.n_cols + c]
    if cell.covered_by is not None:
        m = cell.covered_by
        return doc.cells[m.top * doc.n_cols + m.left].value
    return cell.value


def grid_from_dict(data: dict) -> GridDocument:
    try:
        rows = data["rows"]
        merges = [
            MergeRegion(int(m["top"]), int(m["left"]), int(m["height"]), int(m["width"]))
            for m in data.get("merges", [])
        ]
        n_rows = int(data.get("n_rows", len(rows)))
        n_cols = int(data.get("n_cols", max((len(r) for r in rows), default=0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise GridParseError(f"bad canonical grid: {exc}") from None
    if len(rows) != n_rows:
        raise GridParseError(f"n_rows={n_rows} but {len(rows)} rows present", row=len(rows))
    for r, row in enumerate(rows):
        if not isinstance(row, list):
            raise GridParseError("row is not a list", row=r)
        if len(row) != n_cols:
            raise GridParseError(f"expected {n_cols} cells, found {len(row)}", row=r, col=len(row))
    meta = data.get("source_meta", {}) or {}
    return build_grid(
        rows,
        merges,
        doc_id=str(data.get("doc_id", "grid")),
        title=str(data.get("title", "")),
        n_cols=n_cols,
        source_meta={str(k): str(v) for k, v in meta.items()},
    )


def grid_to_dict(doc: GridDocument) -> dict:
    rows = [
        [doc.cells[r * doc.n_cols + c].value for c in range(doc.n_cols)]
        for r in range(doc.n_rows)
    ]
    return {
        "doc_id": doc.doc_id,
        "title": doc.title,
        "n_rows": doc.n_rows,
        "n_cols": doc.n_cols,
        "rows": rows,
        "merges": [m.to_dict() for m in doc.merges],
        "source_meta": dict(doc.source_meta),
    }


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def save_grid(doc: GridDocument, path) -> None:
    Path(path).write_text(dumps_canonical(grid_to_dict(doc)), encoding="utf-8")


def _load_csv(path: Path) -> GridDocument:
    text = path.read_text(encoding="utf-8-sig")
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    rows: list[list[Optional[str]]] = []
    try:
        for rec in reader:
            rows.append(list(rec))
    except csv.Error as exc:
        raise GridParseError(f"malformed CSV: {exc}", row=reader.line_num - 1) from None
    width = max((len(r) for r in rows), default=0)
    padded = [r + [None] * (width - len(r)) for r in rows]
    return build_grid(
        padded,
        doc_id=path.stem,
        title=path.stem,
        n_cols=width,
        source_meta={"filename": path.name, "format": "csv"},
    )


def load_grid(path, format: Optional[str] = None) -> GridDocument:
    """Load a grid from ``canonical-json``, ``csv`` or ``markdown``.

    The format defaults from the suffix (.csv, .md, anything else is JSON).
    """
    path = Path(path)
    if format is None:
        format = {".csv": "csv", ".md": "markdown", ".markdown": "markdown"}.get(path.suffix.lower(), "canonical-json")
    if format == "csv":
        return _load_csv(path)
    if format == "markdown":
        return grid_from_markdown(path.read_text(encoding="utf-8"), doc_id=path.stem, title=path.stem)
    if format != "canonical-json":
        raise GridError(f"unknown grid format {format!r}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GridParseError(f"invalid JSON: {exc.msg}", row=exc.lineno, col=exc.colno) from None
    if not isinstance(data, dict):
        raise GridParseError("canonical grid must be a JSON object")
    return grid_from_dict(data)


def grid_from_markdown(text: str, *, doc_id: str = "markdown", title: str = "") -> GridDocument:
    """Read a GitHub pipe table back into a merge-free grid.

    The ``| --- |`` delimiter line is dropped; escaped pipes are restored.
    """
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line.startswith("|"):
            continue
        cells = _split_pipe_row(line)
        if all(set(c.strip()) <= set("-:") and c.strip() for c in cells):
            continue
        rows.append([c.strip() or None for c in cells])
    width = max((len(r) for r in rows), default=0)
    rows = [r + [None] * (width - len(r)) for r in rows]
    return build_grid(rows, doc_id=doc_id, title=title, n_cols=width)


def _split_pipe_row(line: str) -> list[str]:
    body = line[1:-1] if line.endswith("|") and not line.endswith("\\|") else line[1:]
    cells, cur, i = [], [], 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body) and body[i + 1] in "|\\":
            cur.append(body[i + 1])
            i += 2
            continue
        if ch == "|":
            cells.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
        i += 1
    cells.append("".join(cur))
    return cells
