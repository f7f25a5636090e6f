"""Structural parsing: subtable segmentation, header trees and column typing.

Everything here is a pure function of an immutable :class:`GridDocument`.
Header detection goes through a :class:`HeaderClassifier` so a learned
model can replace the default heuristic.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Optional, Protocol, Sequence

import numpy as np

from .grid import GridDocument, cell_at
from .textutil import normalize_dates, parse_number

ColType = Literal["discrete", "continuous", "unstructured"]

NUMERIC_HEADER_MAX = 0.3
DOMINANCE_JUMP = 0.5
CONTINUOUS_MIN = 0.8
DISCRETE_MAX_DISTINCT = 0.8
LONG_TEXT_CHARS = 120
NOTE_SHARE = 0.6
PATH_SEP = "·"


class EmptyDocument(ValueError):
    pass


class SynthesizedHeader(UserWarning):
    """No plausible header row was found; labels col_1..col_n were made up."""


@dataclass(frozen=True)
class Region:
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

    def intersects(self, other: "Region") -> bool:
        return (
            self.top < other.bottom
            and other.top < self.bottom
            and self.left < other.right
            and other.left < self.right
        )

    def to_dict(self) -> dict:
        return {"top": self.top, "left": self.left, "height": self.height, "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        return cls(d["top"], d["left"], d["height"], d["width"])


@dataclass
class HeaderNode:
    label: str
    col_span: tuple[int, int]  # absolute grid columns, end exclusive
    children: list["HeaderNode"] = field(default_factory=list)

    def leaves(self) -> list[tuple[list[str], "HeaderNode"]]:
        if not self.children:
            return [([self.label], self)]
        out = []
        for ch in self.children:
            for path, leaf in ch.leaves():
                out.append(([self.label] + path, leaf))
        return out

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "col_span": list(self.col_span),
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeaderNode":
        return cls(d["label"], tuple(d["col_span"]), [cls.from_dict(c) for c in d["children"]])


@dataclass
class ColumnDescriptor:
    name: str
    display_label: str
    col_type: ColType
    distinct_ratio: float
    numeric_ratio: float
    header_path: list[str] = field(default_factory=list)
    grid_col: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "display_label": self.display_label,
            "col_type": self.col_type,
            "distinct_ratio": self.distinct_ratio,
            "numeric_ratio": self.numeric_ratio,
            "header_path": list(self.header_path),
            "grid_col": self.grid_col,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnDescriptor":
        return cls(**{**d, "header_path": list(d["header_path"])})


@dataclass
class TableSchema:
    table_id: str
    doc_id: str
    name: str
    title: str
    region: Region
    header_rows: int
    header_tree: list[HeaderNode]
    columns: list[ColumnDescriptor]
    notes: list[str] = field(default_factory=list)
    body_rows: list[int] = field(default_factory=list)
    synthesized_header: bool = False
    kind: Literal["table", "note"] = "table"

    def leaf_paths(self) -> list[list[str]]:
        out = []
        for node in self.header_tree:
            out.extend(path for path, _ in node.leaves())
        return out

    def to_dict(self) -> dict:
        return {
            "table_id": self.table_id,
            "doc_id": self.doc_id,
            "name": self.name,
            "title": self.title,
            "region": self.region.to_dict(),
            "header_rows": self.header_rows,
            "header_tree": [n.to_dict() for n in self.header_tree],
            "columns": [c.to_dict() for c in self.columns],
            "notes": list(self.notes),
            "body_rows": list(self.body_rows),
            "synthesized_header": self.synthesized_header,
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TableSchema":
        return cls(
            table_id=d["table_id"],
            doc_id=d["doc_id"],
            name=d["name"],
            title=d["title"],
            region=Region.from_dict(d["region"]),
            header_rows=d["header_rows"],
            header_tree=[HeaderNode.from_dict(n) for n in d["header_tree"]],
            columns=[ColumnDescriptor.from_dict(c) for c in d["columns"]],
            notes=list(d["notes"]),
            body_rows=list(d["body_rows"]),
            synthesized_header=d["synthesized_header"],
            kind=d.get("kind", "table"),
        )


@dataclass
class SubtableSegmentation:
    doc_id: str
    segments: list[TableSchema]

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "segments": [s.to_dict() for s in self.segments]}


# --------------------------------------------------------------------------
# identifiers

_NON_ALNUM = re.compile(r"[^A-Za-z0-9]+")


def sanitize_identifier(label: str, kind: Literal["table", "column"] = "column") -> str:
    """Map a label to a SQL-safe ``t_``-prefixed identifier.

    Date-like substrings become ``Mon_DD_YYYY`` first, so ``14-Apr-2025``
    turns into ``t_Apr_14_2025``. Idempotent.
    """
    body = _NON_ALNUM.sub("_", normalize_dates(label)).strip("_")
    if not body:
        body = "table" if kind == "table" else "col"
    if body.startswith("t_"):
        return body
    return "t_" + body


def unique_identifiers(labels: Sequence[str], kind: Literal["table", "column"] = "column") -> list[str]:
    """Sanitize a batch; collisions (case-insensitive) get ``_2``, ``_3``, ..."""
    taken: set[str] = set()
    out = []
    for label in labels:
        base = sanitize_identifier(label, kind)
        name, k = base, 1
        while name.lower() in taken:
            k += 1
            name = f"{base}_{k}"
        taken.add(name.lower())
        out.append(name)
    return out


# --------------------------------------------------------------------------
# column typing


class ColumnTyping(NamedTuple):
    col_type: ColType
    numeric_ratio: float
    distinct_ratio: float


def infer_column_type(values: Sequence[Optional[str]]) -> ColumnTyping:
    present = [v.strip() for v in values if v is not None and v.strip()]
    if not present:
        return ColumnTyping("unstructured", 0.0, 0.0)
    n = len(present)
    numeric_ratio = sum(parse_number(v) is not None for v in present) / n
    distinct_ratio = len(set(present)) / n
    if numeric_ratio >= CONTINUOUS_MIN:
        kind: ColType = "continuous"
    elif distinct_ratio <= DISCRETE_MAX_DISTINCT:
        kind = "discrete"
    else:
        kind = "unstructured"
    return ColumnTyping(kind, numeric_ratio, distinct_ratio)


# --------------------------------------------------------------------------
# header detection


def _anchor_values(doc: GridDocument, r: int, region: Region) -> list[str]:
    """Non-empty values of row r inside region, one per merge."""
    vals = []
    for c in range(region.left, region.right):
        cell = doc.cell(r, c)
        if cell.covered_by is not None:
            m = cell.covered_by
            # count a merge once, at its first visible column in this region
            if not (m.top == r and c == max(m.left, region.left)):
                continue
        v = cell_at(doc, r, c)
        if v is not None:
            vals.append(v)
    return vals


def numeric_ratio_row(doc: GridDocument, r: int, region: Region) -> float:
    vals = _anchor_values(doc, r, region)
    if not vals:
        return 0.0
    return sum(parse_number(v) is not None for v in vals) / len(vals)


def _has_horizontal_merge(doc: GridDocument, r: int, region: Region) -> bool:
    for m in doc.merges:
        if m.top == r and m.width >= 2 and m.left < region.right and region.left < m.right:
            return True
    return False


class HeaderClassifier(Protocol):
    def header_rows(self, doc: GridDocument, region: Region) -> int:
        """Number of header rows at the top of region; 0 means none plausible."""
        ...


class HeuristicHeaderClassifier:
    """Text-dominant prefix ending where the data turns numeric (or at a merge).

    A text row (< 30 % numeric) is a header candidate when it carries a
    horizontal merge or the next row is at least 0.5 more numeric. Below the
    first header row, a candidate prefix is only accepted while every
    continuous body column has a text label in each of its rows.
    """

    def header_rows(self, doc: GridDocument, region: Region) -> int:
        rows = range(region.top, region.bottom)
        ratios = [numeric_ratio_row(doc, r, region) for r in rows]
        if not ratios or ratios[0] >= NUMERIC_HEADER_MAX:
            return 0
        textual = 0
        while textual < len(ratios) and ratios[textual] < NUMERIC_HEADER_MAX:
            textual += 1
        candidates = []
        for i in range(textual):
            r = region.top + i
            jump = i + 1 < len(ratios) and ratios[i + 1] - ratios[i] >= DOMINANCE_JUMP
            if _has_horizontal_merge(doc, r, region) or jump:
                candidates.append(i + 1)
        for h in sorted(candidates, reverse=True):
            if h >= region.height:
                continue
            h = self._extend_vertical(doc, region, h, textual)
            if h < region.height and (h == 1 or self._labels_cover_body(doc, region, h)):
                return h
        return 1

    @staticmethod
    def _extend_vertical(doc: GridDocument, region: Region, h: int, textual: int) -> int:
        # a header merge must not straddle the header/body boundary
        changed = True
        while changed:
            changed = False
            for m in doc.merges:
                if region.top <= m.top < region.top + h < m.bottom and m.left < region.right and region.left < m.right:
                    new_h = m.bottom - region.top
                    if new_h <= textual:
                        h, changed = new_h, True
        return h

    @staticmethod
    def _labels_cover_body(doc: GridDocument, region: Region, h: int) -> bool:
        body = range(region.top + h, region.bottom)
        for c in range(region.left, region.right):
            typing = infer_column_type([cell_at(doc, r, c) for r in body])
            if typing.col_type != "continuous":
                continue
            for r in range(region.top + 1, region.top + h):
                v = cell_at(doc, r, c)
                if v is None or parse_number(v) is not None:
                    return False
        return True


class HeaderInfo(NamedTuple):
    header_rows: int
    header_tree: list[HeaderNode]
    synthesized: bool


def _build_level(doc: GridDocument, region: Region, level: int, h: int, s: int, e: int) -> list[HeaderNode]:
    nodes: list[HeaderNode] = []
    r = region.top + level
    c = s
    while c < e:
        m = doc.merge_at(r, c)
        if m is not None and m.top == r:
            end = min(m.right, e)
            label = (cell_at(doc, r, c) or "").strip()
            nxt = level + m.height
        else:
            end = c + 1
            label = "" if m is not None else (cell_at(doc, r, c) or "").strip()
            nxt = level + 1
        children = _build_level(doc, region, nxt, h, c, end) if nxt < h else []
        if all(not ch.label and not ch.children for ch in children):
            children = []
        if not label and children:
            nodes.extend(children)
        else:
            nodes.append(HeaderNode(label, (c, end), children))
        c = end
    return nodes


def _finish_leaves(nodes: list[HeaderNode], region: Region) -> None:
    for node in nodes:
        if node.children:
            _finish_leaves(node.children, region)
            continue
        start, end = node.col_span
        if end - start > 1:
            node.children = [HeaderNode(str(k + 1), (start + k, start + k + 1)) for k in range(end - start)]
        elif not node.label:
            node.label = f"col_{start - region.left + 1}"


def detect_headers(
    doc: GridDocument,
    region: Region,
    classifier: Optional[HeaderClassifier] = None,
) -> HeaderInfo:
    """Header row count and header tree for a rectangular region.

    A wide leaf (a merge with nothing under it) is split into unit children
    labelled ``1..k`` so that every grid column has its own leaf.
    """
    if region.height < 1 or region.width < 1:
        raise ValueError("empty region")
    classifier = classifier or HeuristicHeaderClassifier()
    h = classifier.header_rows(doc, region)
    if h <= 0:
        warnings.warn(
            f"{doc.doc_id}: no plausible header in rows {region.top}..{region.bottom - 1}",
            SynthesizedHeader,
            stacklevel=2,
        )
        tree = [
            HeaderNode(f"col_{k + 1}", (region.left + k, region.left + k + 1))
            for k in range(region.width)
        ]
        return HeaderInfo(1, tree, True)
    tree = _build_level(doc, region, 0, h, region.left, region.right)
    _finish_leaves(tree, region)
    return HeaderInfo(h, tree, False)


def classify_header_ambiguity(
    label: str,
    column_values: Sequence[Optional[str]],
    row: Optional[int] = None,
    first_numeric_row: Optional[int] = None,
) -> Literal["header", "content"]:
    """Decide whether one occurrence of ``label`` in a column is a header.

    ``row`` selects the occurrence (default: the first). Occurrences above
    the first numeric-dominant row are headers. Without any numeric row,
    only a top-of-column occurrence counts as header; repeats further down
    are content because they belong to the body's value set.
    """
    target = label.strip()
    if row is None:
        row = next(
            (i for i, v in enumerate(column_values) if v is not None and v.strip() == target),
            0,
        )
    if first_numeric_row is None:
        first_numeric_row = next(
            (i for i, v in enumerate(column_values) if parse_number(v) is not None),
            None,
        )
    if first_numeric_row is not None:
        return "header" if row < first_numeric_row else "content"
    return "header" if row == 0 else "content"


# --------------------------------------------------------------------------
# segmentation


def occupancy(doc: GridDocument) -> np.ndarray:
    occ = np.zeros((doc.n_rows, doc.n_cols), dtype=bool)
    for r in range(doc.n_rows):
        for c in range(doc.n_cols):
            occ[r, c] = cell_at(doc, r, c) is not None
    return occ


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    runs, start = [], None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def xy_cut(occ: np.ndarray, top: int = 0, left: int = 0) -> list[Region]:
    """Recursively split on fully blank rows, then fully blank columns."""
    if occ.size == 0 or not occ.any():
        return []
    row_runs = _runs(occ.any(axis=1))
    if len(row_runs) > 1:
        out = []
        for a, b in row_runs:
            out.extend(xy_cut(occ[a:b], top + a, left))
        return out
    a, b = row_runs[0]
    occ, top = occ[a:b], top + a
    col_runs = _runs(occ.any(axis=0))
    if len(col_runs) > 1:
        out = []
        for a2, b2 in col_runs:
            out.extend(xy_cut(occ[:, a2:b2], top, left + a2))
        return out
    a2, b2 = col_runs[0]
    occ, left = occ[:, a2:b2], left + a2
    return [Region(top, left, occ.shape[0], occ.shape[1])]


def _long_text_share(values: Sequence[str]) -> float:
    total = sum(len(v) for v in values)
    if total == 0:
        return 0.0
    return sum(len(v) for v in values if len(v) > LONG_TEXT_CHARS) / total


def _region_values(doc: GridDocument, region: Region) -> list[str]:
    vals = []
    for r in range(region.top, region.bottom):
        vals.extend(_anchor_values(doc, r, region))
    return vals


def is_note_block(doc: GridDocument, region: Region) -> bool:
    return _long_text_share(_region_values(doc, region)) >= NOTE_SHARE


def _is_note_row(doc: GridDocument, r: int, region: Region) -> bool:
    return _long_text_share(_anchor_values(doc, r, region)) >= NOTE_SHARE


def parse_region(
    doc: GridDocument,
    region: Region,
    *,
    table_id: str,
    name: str,
    title: str,
    classifier: Optional[HeaderClassifier] = None,
) -> TableSchema:
    info = detect_headers(doc, region, classifier)
    body_start = region.top + (0 if info.synthesized else info.header_rows)
    body_rows, notes = [], []
    for r in range(body_start, region.bottom):
        if _is_note_row(doc, r, region):
            notes.extend(_anchor_values(doc, r, region))
        else:
            body_rows.append(r)
    paths = []
    leaves = []
    for node in info.header_tree:
        for path, leaf in node.leaves():
            paths.append([p for p in path if p])
            leaves.append(leaf)
    displays = [PATH_SEP.join(p) for p in paths]
    names = unique_identifiers(displays, "column")
    columns = []
    for leaf, path, display, ident in zip(leaves, paths, displays, names):
        c = leaf.col_span[0]
        typing = infer_column_type([cell_at(doc, r, c) for r in body_rows])
        columns.append(
            ColumnDescriptor(
                name=ident,
                display_label=display,
                col_type=typing.col_type,
                distinct_ratio=typing.distinct_ratio,
                numeric_ratio=typing.numeric_ratio,
                header_path=path,
                grid_col=c,
            )
        )
    return TableSchema(
        table_id=table_id,
        doc_id=doc.doc_id,
        name=name,
        title=title,
        region=region,
        header_rows=info.header_rows,
        header_tree=info.header_tree,
        columns=columns,
        notes=notes,
        body_rows=body_rows,
        synthesized_header=info.synthesized,
    )


def segment_subtables(
    doc: GridDocument,
    classifier: Optional[HeaderClassifier] = None,
) -> SubtableSegmentation:
    """Split a grid into independently schematised subtables.

    Blank rows/columns separate blocks. Long free-text rows become notes of
    their segment; a block made only of such rows is attached to the nearest
    preceding segment (or the next one when it comes first).
    """
    regions = sorted(xy_cut(occupancy(doc)), key=lambda g: (g.top, g.left))
    if not regions:
        raise EmptyDocument(f"{doc.doc_id}: grid has no non-empty cells")
    pure_notes = [
        all(_is_note_row(doc, r, g) for r in range(g.top, g.bottom)) for g in regions
    ]
    if all(pure_notes):
        pure_notes[0] = False
    table_regions = [g for g, is_note in zip(regions, pure_notes) if not is_note]
    base_title = doc.title or doc.doc_id
    if len(table_regions) == 1:
        titles = [base_title]
    else:
        titles = [f"{base_title} {k + 1}" for k in range(len(table_regions))]
    table_names = unique_identifiers(titles, "table")
    segments = []
    for k, g in enumerate(table_regions):
        seg = parse_region(
            doc,
            g,
            table_id=f"{doc.doc_id}.s{k + 1}",
            name=table_names[k],
            title=titles[k],
            classifier=classifier,
        )
        seg.kind = "note" if is_note_block(doc, g) else "table"
        segments.append(seg)
    seg_index = {g: k for k, g in enumerate(table_regions)}
    last = None
    pending: list[str] = []
    for g, is_note in zip(regions, pure_notes):
        if not is_note:
            last = seg_index[g]
            if pending:
                segments[last].notes[:0] = pending
                pending = []
            continue
        text = _region_values(doc, g)
        if last is None:
            pending.extend(text)
        else:
            segments[last].notes.extend(text)
    return SubtableSegmentation(doc.doc_id, segments)
