"""Small text helpers shared across modules: number/date parsing, tokens."""

from __future__ import annotations

import datetime as _dt
import re
from typing import Iterator, Optional, Union

Number = Union[int, float]

_NUMBER_RE = re.compile(
    r"""^(?P<s1>[+-])?\s*(?P<cur>[$€£¥])?\s*(?P<s2>[+-])?
        (?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?|\.\d+)$""",
    re.VERBOSE,
)


def parse_number(text: Optional[str]) -> Optional[Number]:
    """Parse a cell string as a number, or return None.

    Accepts thousands separators (``4,444``), a leading currency symbol
    and accounting-style parenthesised negatives (``(12)`` is -12).
    Integral inputs without a decimal point come back as ``int``.
    """
    if text is None:
        return None
    s = text.strip()
    if not s:
        return None
    negative = False
    if s.startswith("(") and s.endswith(")"):
        negative = True
        s = s[1:-1].strip()
    m = _NUMBER_RE.match(s)
    if m is None:
        return None
    if m.group("s1") and m.group("s2"):
        return None
    if "-" in (m.group("s1") or "", m.group("s2") or ""):
        if negative:
            return None
        negative = True
    digits = m.group("num").replace(",", "")
    value: Number = float(digits) if "." in digits else int(digits)
    return -value if negative else value


def is_number(text: Optional[str]) -> bool:
    return parse_number(text) is not None


_MONTHS = {
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "may": 5, "jun": 6,
    "jul": 7, "aug": 8, "sep": 9, "oct": 10, "nov": 11, "dec": 12,
}
MONTH_ABBR = {v: k.capitalize() for k, v in _MONTHS.items()}
_MONTH = (
    r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?"
    r"|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)"
)
# Separators are any non-alphanumeric run so that sanitized output re-parses.
_SEP = r"[^A-Za-z0-9]+"
_L = r"(?<![A-Za-z0-9])"
_R = r"(?![A-Za-z0-9])"
_DATE_RE = re.compile(
    rf"{_L}(?:"
    rf"(?P<iy>\d{{4}}){_SEP}(?P<im>\d{{1,2}}){_SEP}(?P<id>\d{{1,2}})"
    rf"|(?P<dd>\d{{1,2}}){_SEP}(?P<dm>{_MONTH}){_SEP}(?P<dy>\d{{4}})"
    rf"|(?P<mm>{_MONTH}){_SEP}(?P<md>\d{{1,2}}){_SEP}(?P<my>\d{{4}})"
    rf"){_R}",
    re.IGNORECASE,
)


def _match_to_date(m: re.Match) -> Optional[_dt.date]:
    try:
        if m.group("iy"):
            return _dt.date(int(m.group("iy")), int(m.group("im")), int(m.group("id")))
        if m.group("dd"):
            month = _MONTHS[m.group("dm")[:3].lower()]
            return _dt.date(int(m.group("dy")), month, int(m.group("dd")))
        month = _MONTHS[m.group("mm")[:3].lower()]
        return _dt.date(int(m.group("my")), month, int(m.group("md")))
    except ValueError:
        return None


def iter_dates(text: str) -> Iterator[tuple[re.Match, _dt.date]]:
    for m in _DATE_RE.finditer(text):
        d = _match_to_date(m)
        if d is not None:
            yield m, d


def find_date(text: Optional[str]) -> Optional[_dt.date]:
    """First recognisable calendar date inside ``text``."""
    if not text:
        return None
    for _, d in iter_dates(text):
        return d
    return None


def format_date(d: _dt.date) -> str:
    """Render as ``Mon_DD_YYYY`` (zero-padded day)."""
    return f"{MONTH_ABBR[d.month]}_{d.day:02d}_{d.year}"


def normalize_dates(text: str) -> str:
    out = []
    pos = 0
    for m, d in iter_dates(text):
        out.append(text[pos:m.start()])
        out.append(format_date(d))
        pos = m.end()
    out.append(text[pos:])
    return "".join(out)


_NUM_IN_TEXT_RE = re.compile(r"(?<![A-Za-z0-9.,])[-+]?\$?\d{1,3}(?:,\d{3})+(?:\.\d+)?|(?<![A-Za-z0-9.,])[-+]?\d+(?:\.\d+)?(?![A-Za-z0-9])")

STOPWORDS = frozenset(
    """a an the of in on for to from by with and or is are was were be been what which
    who whom whose how why when where does do did all any each every this that these those
    it its as at into than then there their our your my me we you i please tell give show
    list find get about based dated much many number total sum""".split()
)


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens."""
    return [t.lower() for t in re.findall(r"[A-Za-z0-9]+", text or "")]


def content_tokens(text: str) -> list[str]:
    return [t for t in tokenize(text) if t not in STOPWORDS]


def extract_numbers(text: str) -> list[Number]:
    """All numeric literals in free text, thousands separators honoured."""
    found = []
    for m in _NUM_IN_TEXT_RE.finditer(text or ""):
        v = parse_number(m.group(0))
        if v is not None:
            found.append(v)
    return found


def numbers_equal(a: Number, b: Number, rel: float = 1e-9) -> bool:
    if a == b:
        return True
    return abs(a - b) <= rel * max(abs(a), abs(b))
