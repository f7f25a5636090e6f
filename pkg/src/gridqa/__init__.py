"""Structure-aware question answering over semi-structured spreadsheet grids."""

from .grid import GridDocument, MergeRegion, build_grid, load_grid
from .store import DualStore, ingest_document
from .structure import detect_headers, segment_subtables

__version__ = "0.1.0"

__all__ = [
    "DualStore",
    "GridDocument",
    "MergeRegion",
    "build_grid",
    "detect_headers",
    "ingest_document",
    "load_grid",
    "segment_subtables",
]
