"""UTC timestamps; ``SOURCE_DATE_EPOCH`` pins the clock for reproducible runs."""

from __future__ import annotations

import datetime as dt
import os


def utcnow() -> dt.datetime:
    pinned = os.environ.get("SOURCE_DATE_EPOCH")
    if pinned:
        return dt.datetime.fromtimestamp(int(pinned), tz=dt.timezone.utc)
    return dt.datetime.now(tz=dt.timezone.utc)


def utcnow_iso() -> str:
    return utcnow().strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso(ts: str) -> dt.datetime:
    t = dt.datetime.fromisoformat(ts.replace("Z", "+00:00"))
    if t.tzinfo is None:
        t = t.replace(tzinfo=dt.timezone.utc)
    return t
