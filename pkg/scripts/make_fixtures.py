#!/usr/bin/env python3
"""Regenerate the grid fixtures under fixtures/.

case_a.json        four-section supply-chain sheet (inventory, weekly forecast,
                   shipment plan, lead-time note)
case_b_mini.json   2 products x 15 weekly columns, 13 of them inside Q1 2025
case_b_note.json   case_b_mini plus a note whose stated total disagrees
"""

from __future__ import annotations

import argparse
import datetime as dt
from pathlib import Path

from gridqa.grid import MergeRegion, build_grid, save_grid

ENGLISH_NOTE = (
    "Note about train and sea transport. When we inform forwarder about pick up date "
    "he needs time to book sailing date. It can be from 1 to 3 weeks from when we "
    "schedule pick till actual sailing date. This is not always certain so it is "
    "important to know delivery date to our warehouse on time."
)
CHINESE_NOTE = (
    "关于火车和海运的说明。当我们通知货运代理提货日期时，他需要时间预订航行日期。"
    "这并不总是确定的，因此及时知道交货日期到我们的仓库非常重要。"
)
CASE_B_TITLE = "YF Seat Weekly Production Statistics on Dec 30, 2024"


def case_a():
    width = 8
    rows: list[list] = []

    def add(*cells):
        rows.append(list(cells) + [None] * (width - len(cells)))

    # Block 1: inventory and primary supply sources
    add("P/N", "Description", "Stock")
    add("C01", "Painted Upper Back Cover", "4444")
    add("C02", "Urgent Air freight arrival", None)
    add("C03", "Train arrival", None)
    add("C04", "Sea freight arrival", None)
    add("C05", "Covarage", None)
    add()
    # Block 2: weekly inventory and logistics forecast
    add("Item", "W16", "W17", "W18", "W19")
    add(None, "14-Apr-2025", "21-Apr-2025", "28-Apr-2025", "5-May-2025")
    add("STOCK", "4444", "4444", "4444", "4444")
    add("Weekly Demand", None, None, None, None)
    add("Inbound Logistics", "0", "3434", None, "2323")
    add("Coverage", "0", "-1010", "-5454", "-7575")
    add()
    # Block 3: sea and rail shipment plan
    add("W09", "W10", "W11", "W12", "W13", "W16", "W18")
    add("23-Feb-2021", "3-Mar-2025", "17-Mar-2025", "24-Mar-2025", "24-Mar-2025", "14-Apr-2025", "28-Apr-2025")
    add("600", "600", "600", "600", "600", "600", "600")
    add(
        "Delivered",
        "Plan to be delivered",
        "Confirmed departure",
        "Confirmed Milsped",
        "Confirmed Milsped",
        "Pick up ongoing materials are in the warehouse",
        "Not delivered Train",
    )
    add()
    # Block 4: logistics lead-time note
    note_top = len(rows)
    add("SHIPPING PLAN SEA AND TRAIN", None, None)
    add("GYGUYB-9", "Painted Upper Back Cover", "Sea order")
    add(ENGLISH_NOTE, CHINESE_NOTE, None)
    merges = [MergeRegion(note_top, 0, 1, 3)]
    return build_grid(
        rows,
        merges,
        doc_id="case_a",
        title="C01 Painted Upper Back Cover Supply Plan",
        n_cols=width,
        source_meta={"filename": "case_a.xlsx", "sheet": "Sheet1", "ingested_at": "2025-04-10T08:00:00Z"},
    )


def q1_mondays() -> list[dt.date]:
    first = dt.date(2025, 1, 6)
    return [first + dt.timedelta(weeks=k) for k in range(13)]


def case_b_rows():
    weeks = q1_mondays()
    labels = ["Product", "30-Dec-2024"] + [d.strftime("%d-%b-%Y") for d in weeks] + ["07-Apr-2025"]
    my = ["MY", "1000"] + [str(v) for v in range(1, 14)] + ["2000"]
    hld = ["HLD", "3000"] + [str(v) for v in range(14, 27)] + ["4000"]
    return [labels, my, hld]


def case_b_mini():
    return build_grid(
        case_b_rows(),
        doc_id="case_b_mini",
        title=CASE_B_TITLE,
        source_meta={"filename": "yf_seat_weekly.xlsx", "sheet": "Forecast", "ingested_at": "2024-12-30T09:00:00Z"},
    )


def case_b_note():
    rows = case_b_rows()
    width = len(rows[0])
    note = (
        "Planning remark for the first quarter of 2025: the total production volume of all "
        "products in the first quarter of 2025 was reported as 300 units by the plant office, "
        "pending reconciliation with the weekly figures above."
    )
    rows = rows + [[None] * width, [note] + [None] * (width - 1)]
    return build_grid(
        rows,
        doc_id="case_b_note",
        title="Seat Production Forecast With Remark",
        n_cols=width,
        source_meta={"filename": "yf_seat_weekly_note.xlsx", "sheet": "Forecast", "ingested_at": "2024-12-30T09:00:00Z"},
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "fixtures")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, doc in [("case_a", case_a()), ("case_b_mini", case_b_mini()), ("case_b_note", case_b_note())]:
        save_grid(doc, args.out / f"{name}.json")
        print(f"wrote {args.out / name}.json  ({doc.n_rows}x{doc.n_cols}, {len(doc.merges)} merges)")


if __name__ == "__main__":
    main()
