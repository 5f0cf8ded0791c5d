"""Tabular rendering of rankings, sampling plans and part-error reports."""

from __future__ import annotations

import csv
import io
import math
from typing import Sequence

from ..benchmark import RankingTable
from ..metrics import PartErrorReport
from ..sampling import SamplingPlan
from ..errors import ValidationError

FORMATS = ("text", "csv")
PRECISIONS = ("1", "full")


def _num(value, precision: str) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    if isinstance(value, int):
        return str(value)
    return repr(float(value)) if precision == "full" else f"{value:.1f}"


def ranking_table(ranking: RankingTable, precision: str = "1") -> tuple[list[str], list[list[str]]]:
    header = ["rank", "dataset", *ranking.benchmarks, "MPE"]
    rows = [[str(r.rank), r.dataset, *(_num(r.errors.get(b), precision) for b in ranking.benchmarks),
             _num(r.mpe, precision)] for r in ranking.rows]
    return header, rows


def plan_table(plan: SamplingPlan, precision: str = "1") -> tuple[list[str], list[list[str]]]:
    header = ["rank", "dataset", "native_length", "target_length"]
    rows = [[str(e.rank), e.name, str(e.native_length), str(e.target_length)] for e in plan.entries]
    return header, rows


def part_table(report: PartErrorReport, precision: str = "1") -> tuple[list[str], list[list[str]]]:
    header = ["part", "pa_error_mm", "error_mm"]
    rows = [[part, _num(pa, precision), _num(raw, precision)] for part, pa, raw in report.rows()]
    return header, rows


def render(header: Sequence[str], rows: Sequence[Sequence[str]], fmt: str = "text") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = []
    for row in [header, *rows]:
        cells = []
        for i, (c, wd) in enumerate(zip(row, widths)):
            # names left, numbers right
            cells.append(str(c).ljust(wd) if i == 0 or not _looks_numeric(c) else str(c).rjust(wd))
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def _looks_numeric(cell: str) -> bool:
    if cell == "-":
        return True
    try:
        float(cell)
    except ValueError:
        return False
    return True


def emit_report(obj, fmt: str = "text", precision: str = "1") -> str:
    """Render a ranking, a sampling plan or a part-error report.

    Numbers print at one decimal unless ``precision="full"``.
    """
    if fmt not in FORMATS:
        raise ValidationError(f"format must be one of {FORMATS}", code="bad_format")
    if precision not in PRECISIONS:
        raise ValidationError(f"precision must be one of {PRECISIONS}", code="bad_format")
    if isinstance(obj, RankingTable):
        header, rows = ranking_table(obj, precision)
    elif isinstance(obj, SamplingPlan):
        header, rows = plan_table(obj, precision)
    elif isinstance(obj, PartErrorReport):
        header, rows = part_table(obj, precision)
    else:
        raise ValidationError(f"cannot render {type(obj).__name__}", code="bad_report")
    return render(header, rows, fmt)
