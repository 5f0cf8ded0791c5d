"""Dataset benchmarking: mean primary error, rankings and top-N selection.

A :class:`ResultsMatrix` holds, for each training dataset, the primary error
(mm) of a model trained on it and evaluated on each benchmark.  Cells where
the training set and the benchmark come from the same source are excluded
from the mean via an :class:`InDomainMask`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

ABSENT_TOKENS = ("", "-", "\u2014", "nan", "NaN")


@dataclass(frozen=True)
class ResultsMatrix:
    datasets: tuple[str, ...]
    benchmarks: tuple[str, ...]
    values: np.ndarray  # (rows, cols); NaN marks an absent cell

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "benchmarks", tuple(self.benchmarks))
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.shape != (len(self.datasets), len(self.benchmarks)):
            raise ValidationError(
                f"values {vals.shape} do not match {len(self.datasets)} rows x "
                f"{len(self.benchmarks)} columns", code="shape")
        for kind, names in (("dataset", self.datasets), ("benchmark", self.benchmarks)):
            if len(set(names)) != len(names):
                raise ValidationError(f"duplicate {kind} names", code="duplicate_name")
        present = vals[~np.isnan(vals)]
        if np.any(~np.isfinite(present)) or np.any(present <= 0):
            raise ValidationError("present cells must be positive and finite", code="bad_cell")

    def row(self, dataset: str) -> dict[str, float | None]:
        i = self.datasets.index(dataset)
        return {b: (None if math.isnan(v) else float(v))
                for b, v in zip(self.benchmarks, self.values[i])}

    @classmethod
    def from_rows(cls, rows: Mapping[str, Sequence[float | None]],
                  benchmarks: Sequence[str]) -> "ResultsMatrix":
        vals = [[math.nan if v is None else float(v) for v in r] for r in rows.values()]
        return cls(tuple(rows), tuple(benchmarks), np.array(vals, dtype=np.float64).reshape(
            len(rows), len(benchmarks)))

    @classmethod
    def from_csv_text(cls, text: str) -> "ResultsMatrix":
        reader = csv.reader(io.StringIO(text))
        rows = [r for r in reader if r and any(c.strip() for c in r)]
        if not rows:
            raise ValidationError("results CSV is empty", code="empty")
        header = [c.strip() for c in rows[0]]
        if header[0] != "dataset" or len(header) < 2:
            raise ValidationError("results CSV header must be 'dataset,<benchmark>...'",
                                  code="bad_header")
        names, vals = [], []
        for lineno, r in enumerate(rows[1:], start=2):
            if len(r) != len(header):
                raise ValidationError(f"line {lineno}: expected {len(header)} fields, got {len(r)}",
                                      code="bad_row")
            names.append(r[0].strip())
            cells = []
            for c in r[1:]:
                c = c.strip()
                if c in ABSENT_TOKENS:
                    cells.append(math.nan)
                    continue
                try:
                    cells.append(float(c))
                except ValueError:
                    raise ValidationError(f"line {lineno}: bad number {c!r}", code="bad_cell") from None
            vals.append(cells)
        return cls(tuple(names), tuple(header[1:]),
                   np.array(vals, dtype=np.float64).reshape(len(names), len(header) - 1))

    @classmethod
    def from_csv(cls, path: str | Path) -> "ResultsMatrix":
        return cls.from_csv_text(Path(path).read_text())

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", *self.benchmarks])
        for name, row in zip(self.datasets, self.values):
            w.writerow([name, *("" if math.isnan(v) else repr(float(v)) for v in row)])
        return buf.getvalue()


@dataclass(frozen=True)
class InDomainMask:
    pairs: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "pairs", frozenset((str(a), str(b)) for a, b in self.pairs))

    def excludes(self, dataset: str, benchmark: str) -> bool:
        return (dataset, benchmark) in self.pairs

    def validate(self, matrix: ResultsMatrix) -> None:
        rows, cols = set(matrix.datasets), set(matrix.benchmarks)
        for d, b in sorted(self.pairs):
            if d not in rows or b not in cols:
                raise ValidationError(f"mask pair ({d}, {b}) is not in the results matrix",
                                      code="unknown_pair")

    def restricted_to(self, matrix: ResultsMatrix) -> "InDomainMask":
        rows, cols = set(matrix.datasets), set(matrix.benchmarks)
        return InDomainMask(frozenset(p for p in self.pairs if p[0] in rows and p[1] in cols))

    def with_pair(self, dataset: str, benchmark: str) -> "InDomainMask":
        return InDomainMask(self.pairs | {(dataset, benchmark)})

    @classmethod
    def from_json_text(cls, text: str) -> "InDomainMask":
        try:
            doc = json.loads(text)
            pairs = doc["exclude"]
            if not all(isinstance(p, list) and len(p) == 2 for p in pairs):
                raise TypeError("each entry must be a [dataset, benchmark] pair")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"malformed mask JSON: {exc}", code="bad_mask") from exc
        return cls(frozenset(tuple(p) for p in pairs))

    @classmethod
    def from_json(cls, path: str | Path) -> "InDomainMask":
        return cls.from_json_text(Path(path).read_text())

    def to_json_text(self) -> str:
        return json.dumps({"exclude": [list(p) for p in sorted(self.pairs)]})


DEFAULT_MASK = InDomainMask(frozenset({
    ("AGORA", "AGORA"),
    ("UBody", "UBody"),
    ("EgoBody-EgoSet", "EgoBody"),
    ("3DPW", "3DPW"),
}))


def compute_mpe(row: Mapping[str, float | None], dataset: str | None = None,
                mask: InDomainMask = InDomainMask()) -> float:
    """Mean of the benchmark errors that survive in-domain exclusion.

    Absent cells (``None`` or NaN) count as excluded, never as zero.
    """
    kept = []
    for bench, value in row.items():
        if value is None or (isinstance(value, float) and math.isnan(value)):
            continue
        if dataset is not None and mask.excludes(dataset, bench):
            continue
        kept.append(float(value))
    if not kept:
        raise ValidationError(f"no benchmark cells left for {dataset or 'row'} after exclusion",
                              code="all_excluded")
    return math.fsum(kept) / len(kept)


def _min_ranks(values: Sequence[float]) -> list[int]:
    """1-based competition ranks (ties share the smallest rank); NaN gets 0."""
    ranks = []
    present = sorted(v for v in values if not math.isnan(v))
    for v in values:
        ranks.append(0 if math.isnan(v) else 1 + sum(1 for p in present if p < v))
    return ranks


@dataclass
class RankingRow:
    dataset: str
    mpe: float
    rank: int
    column_ranks: dict[str, int] = field(default_factory=dict)
    errors: dict[str, float | None] = field(default_factory=dict)


@dataclass
class RankingTable:
    rows: list[RankingRow]
    benchmarks: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)

    def mpe(self, dataset: str) -> float:
        return self.lookup(dataset).mpe

    def rank(self, dataset: str) -> int:
        return self.lookup(dataset).rank

    def lookup(self, dataset: str) -> RankingRow:
        for r in self.rows:
            if r.dataset == dataset:
                return r
        raise KeyError(dataset)

    def names(self) -> list[str]:
        return [r.dataset for r in self.rows]


def rank_datasets(matrix: ResultsMatrix, mask: InDomainMask = DEFAULT_MASK, *,
                  strict_mask: bool = False) -> RankingTable:
    """Rank training datasets by MPE, ascending; ties share the minimum rank.

    Rows with equal MPE are listed alphabetically.  Per-benchmark ranks over
    every present cell (in-domain cells included) are attached to each row.
    """
    if not matrix.datasets:
        raise ValidationError("results matrix is empty", code="empty")
    if strict_mask:
        mask.validate(matrix)
    mpes = {d: compute_mpe(matrix.row(d), d, mask) for d in matrix.datasets}
    col_ranks = {b: dict(zip(matrix.datasets, _min_ranks(list(matrix.values[:, j]))))
                 for j, b in enumerate(matrix.benchmarks)}
    order = sorted(matrix.datasets, key=lambda d: (mpes[d], d))
    overall = dict(zip(matrix.datasets, _min_ranks([mpes[d] for d in matrix.datasets])))
    rows = [RankingRow(d, mpes[d], overall[d],
                       {b: col_ranks[b][d] for b in matrix.benchmarks},
                       matrix.row(d)) for d in order]
    return RankingTable(rows, matrix.benchmarks)


def select_top_n(ranking: RankingTable, n: int) -> list[str]:
    """First ``n`` datasets of a ranking (already ordered by MPE, then name)."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= len(ranking):
        raise ValidationError(f"n must be in [1, {len(ranking)}], got {n}", code="out_of_range")
    return [r.dataset for r in sorted(ranking.rows, key=lambda r: (r.mpe, r.dataset))[:n]]


FINETUNE_SCOPES = ("full", "neck+head", "head")

# trainable parameters of the ViT-Huge reference configuration
REFERENCE_PARAM_COUNTS = {"full": 662_000_000, "neck+head": 31_000_000, "head": 5_000_000}


@dataclass(frozen=True)
class FinetunePlan:
    scope: str
    trainable_params: int | None
    modules: tuple[str, ...]


def plan_finetune(scope: str, reference: bool = True) -> FinetunePlan:
    """Trainable modules for a finetuning scope, with reference parameter counts."""
    key = scope.strip().lower().replace(" ", "")
    aliases = {"full": "full", "fullnetwork": "full", "neck+head": "neck+head",
               "neck_head": "neck+head", "head": "head"}
    if key not in aliases:
        raise ValidationError(f"unknown finetune scope {scope!r}; choose from {FINETUNE_SCOPES}",
                              code="unknown_scope")
    key = aliases[key]
    modules = {"full": ("backbone", "neck", "head"), "neck+head": ("neck", "head"),
               "head": ("head",)}[key]
    return FinetunePlan(key, REFERENCE_PARAM_COUNTS[key] if reference else None, modules)


def exclusion_effect(matrix: ResultsMatrix, mask: InDomainMask) -> dict[str, float]:
    """MPE of every row, as a plain mapping (handy for comparisons)."""
    return {d: compute_mpe(matrix.row(d), d, mask) for d in matrix.datasets}

