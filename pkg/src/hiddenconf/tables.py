"""CSV serialization of the verification tables and comparison with golden copies."""

from __future__ import annotations

import csv
import io
from importlib import resources
from pathlib import Path

from .graph import (
    DEGENERACY_COLUMNS,
    verify_degenerate_table,
    verify_theorem1_table,
    verify_theorem2_table,
)

SLOTS1 = ["X-T", "X-Y", "T-Y", "U-T", "U-Y", "U-X"]
SLOTS2 = ["T-Y", "U-T", "U-Y"]

HEADERS = {
    "table1": ["id", *SLOTS1, "T_j _||_ Y_i | T_i,X_i,X_j", "U is confounder"],
    "table2": ["id", *SLOTS2, "T_j _||_ Y_i | T_i", "T_j _||_ Y_i | Y_j",
               "U is confounder", "Y ancestor of T"],
    "table3": ["id", *SLOTS1, "U is confounder", *("Deg. " + ",".join(c) for c in DEGENERACY_COLUMNS)],
}


def _v(b: bool) -> str:
    return "dsep" if b else "dep"


def _yn(b: bool) -> str:
    return "yes" if b else "no"


def table_rows(name: str) -> list[list[str]]:
    if name == "table1":
        return [[str(r.id), *r.arrows, _v(r.dsep), _yn(r.confounder)] for r in verify_theorem1_table()]
    if name == "table2":
        return [[str(r.id), *r.arrows, _v(r.dsep_given_ti), _v(r.dsep_given_yj),
                 _yn(r.confounder), _yn(r.y_ancestor_of_t)] for r in verify_theorem2_table()]
    if name == "table3":
        return [[str(r.id), *r.arrows, _yn(r.confounder), *map(_v, r.dsep)] for r in verify_degenerate_table()]
    raise KeyError(name)


def to_csv(name: str, rows: list[list[str]] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADERS[name])
    w.writerows(table_rows(name) if rows is None else rows)
    return buf.getvalue()


def read_csv(text: str) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


def golden_text(name: str) -> str:
    return resources.files("hiddenconf").joinpath("golden", f"{name}.csv").read_text(encoding="utf-8")


def compare(name: str, computed: list[list[str]], golden: str | Path | None = None) -> list[str]:
    """Human-readable mismatches between computed rows and a golden CSV (empty when equal)."""
    text = golden_text(name) if golden is None else Path(golden).read_text(encoding="utf-8")
    header, expected = read_csv(text)
    problems = []
    if header != HEADERS[name]:
        problems.append(f"{name}: header differs from golden")
    if len(expected) != len(computed):
        problems.append(f"{name}: {len(computed)} rows computed, golden has {len(expected)}")
    for got, want in zip(computed, expected):
        if got != want:
            cols = [header[k] for k in range(min(len(got), len(want))) if got[k] != want[k]]
            problems.append(f"{name} row {want[0]}: mismatch in {', '.join(cols) or 'row length'}")
    return problems
