"""Per-dataset instance quotas for multi-dataset training.

Three strategies:

* balanced -- every dataset gets the same share of a fixed total;
* weighted -- shares follow an arithmetic sequence over the ranking, the
  best-ranked dataset getting four times the share of the worst;
* concat -- every dataset keeps its native length.

Integer rounding uses largest-remainder apportionment so that balanced and
weighted plans always hit the requested total exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError

TOP_TO_BOTTOM_RATIO = 4
STRATEGIES = ("balanced", "weighted", "concat")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    native_length: int
    rank: int

    def __post_init__(self):
        if int(self.native_length) < 1:
            raise ValidationError(f"{self.name}: native_length must be >= 1", code="bad_length")
        if int(self.rank) < 1:
            raise ValidationError(f"{self.name}: rank must be >= 1", code="bad_rank")
        object.__setattr__(self, "native_length", int(self.native_length))
        object.__setattr__(self, "rank", int(self.rank))


@dataclass(frozen=True)
class PlanEntry:
    name: str
    native_length: int
    rank: int
    target_length: int


@dataclass
class SamplingPlan:
    strategy: str
    entries: list[PlanEntry]
    total: int
    status: str = "ok"
    notes: list[str] = field(default_factory=list)

    def quotas(self) -> dict[str, int]:
        return {e.name: e.target_length for e in self.entries}

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "total": self.total, "status": self.status,
                "notes": list(self.notes), "entries": [asdict(e) for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def load_specs(path: str | Path) -> list[DatasetSpec]:
    """Read ``[{"name", "native_length", "rank"}, ...]``."""
    try:
        doc = json.loads(Path(path).read_text())
        return specs_from_json(doc)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed spec JSON: {exc}", code="bad_json") from exc


def specs_from_json(doc) -> list[DatasetSpec]:
    if not isinstance(doc, list):
        raise ValidationError("dataset spec document must be a list", code="schema")
    out = []
    for i, item in enumerate(doc):
        try:
            out.append(DatasetSpec(str(item["name"]), int(item["native_length"]), int(item["rank"])))
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"entry {i}: {exc}", code="schema") from exc
    return out


def _ordered(specs: Sequence[DatasetSpec]) -> list[DatasetSpec]:
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValidationError("dataset names must be unique", code="duplicate_name")
    ranks = [s.rank for s in specs]
    if len(set(ranks)) != len(ranks):
        raise ValidationError("dataset ranks must be unique", code="duplicate_rank")
    return sorted(specs, key=lambda s: s.rank)


def largest_remainder(weights: Sequence[int], total: int) -> list[int]:
    """Split ``total`` proportionally to integer ``weights``.

    Exact integer arithmetic; leftover units go to the largest remainders,
    earlier positions winning ties.
    """
    weights = [int(w) for w in weights]
    if any(w < 0 for w in weights) or sum(weights) == 0:
        raise ValidationError("weights must be nonnegative with a positive sum", code="bad_weights")
    wsum = sum(weights)
    floors, rems = [], []
    for w in weights:
        q, r = divmod(total * w, wsum)
        floors.append(q)
        rems.append(r)
    short = total - sum(floors)
    order = sorted(range(len(weights)), key=lambda i: (-rems[i], i))
    for i in order[:short]:
        floors[i] += 1
    return floors


def _check_total(specs, total):
    if not specs:
        raise ValidationError("no datasets to plan", code="empty")
    if int(total) < len(specs):
        raise ValidationError(f"total {total} is smaller than the dataset count {len(specs)}",
                              code="total_too_small")


def _plan(strategy, ordered, quotas, status="ok", notes=()):
    entries = [PlanEntry(s.name, s.native_length, s.rank, int(q)) for s, q in zip(ordered, quotas)]
    return SamplingPlan(strategy, entries, int(sum(quotas)), status, list(notes))


def plan_balanced(specs: Sequence[DatasetSpec], total: int) -> SamplingPlan:
    ordered = _ordered(specs)
    _check_total(ordered, total)
    return _plan("balanced", ordered, largest_remainder([1] * len(ordered), int(total)))


def weighted_weights(n: int) -> list[int]:
    """Integer weights, ``n - 1`` times the arithmetic sequence from 4 down to 1."""
    # w_k = 4 - 3k/(n-1), scaled by (n-1) to stay integral
    return [TOP_TO_BOTTOM_RATIO * (n - 1) - (TOP_TO_BOTTOM_RATIO - 1) * k for k in range(n)]


def plan_weighted(specs: Sequence[DatasetSpec], total: int) -> SamplingPlan:
    """Arithmetic-sequence quotas over rank order (rank index, not rank value)."""
    ordered = _ordered(specs)
    _check_total(ordered, total)
    if len(ordered) == 1:
        msg = "weighted sampling needs at least two datasets; fell back to balanced"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        plan = plan_balanced(ordered, total)
        plan.strategy = "weighted"
        plan.status = "fallback_balanced"
        plan.notes.append(msg)
        return plan
    quotas = largest_remainder(weighted_weights(len(ordered)), int(total))
    if min(quotas) == 0:
        # the bottom share is total / (2.5 n); below one instance a dataset would vanish
        raise ValidationError(f"total {total} leaves some of {len(ordered)} datasets empty",
                              code="total_too_small")
    return _plan("weighted", ordered, quotas)


def plan_concat(specs: Sequence[DatasetSpec]) -> SamplingPlan:
    ordered = _ordered(specs) if specs else []
    return _plan("concat", ordered, [s.native_length for s in ordered])


def make_plan(strategy: str, specs: Sequence[DatasetSpec], total: int | None = None) -> SamplingPlan:
    if strategy == "concat":
        return plan_concat(specs)
    if total is None:
        raise ValidationError(f"strategy {strategy!r} needs a total", code="missing_total")
    if strategy == "balanced":
        return plan_balanced(specs, total)
    if strategy == "weighted":
        return plan_weighted(specs, total)
    raise ValidationError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}",
                          code="unknown_strategy")


def realize_schedule(plan: SamplingPlan, seed: int = 0) -> dict[str, np.ndarray]:
    """Concrete index lists: whole shuffled passes plus a seeded partial pass."""
    root = np.random.default_rng(seed)
    rngs = root.spawn(len(plan.entries))
    out = {}
    for e, rng in zip(plan.entries, rngs):
        n, q = e.native_length, e.target_length
        passes, rest = divmod(q, n)
        parts = [rng.permutation(n) for _ in range(passes)]
        if rest:
            parts.append(rng.choice(n, size=rest, replace=False))
        out[e.name] = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return out
