"""File-level localization scoring.

Per-task confusion counts and precision/recall/F1 over normalized path
sets, macro aggregation (mean of per-task metrics, not metrics of means),
and paired base-vs-aug deltas. All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .canonical import write_canonical
from .errors import ArmMismatch, EmptyOutcomeSet


@dataclass(frozen=True)
class ConfusionCounts:
    """File-set confusion counts; tp+fn = |truth| and tp+fp = |prediction|."""

    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricTriple:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class OutcomeFlags:
    """Exact-state flags used by the task-level distributional analysis."""

    prec_zero: bool
    rec_zero: bool
    rec_one: bool
    f1_one: bool


@dataclass(frozen=True)
class TaskOutcome:
    task_id: str
    condition: str
    counts: ConfusionCounts
    triple: MetricTriple
    flags: OutcomeFlags
    failed: bool = False


@dataclass(frozen=True)
class AggregateScore:
    mean_precision: float
    mean_recall: float
    mean_f1: float
    n_tasks: int


@dataclass(frozen=True)
class DeltaRow:
    task_id: str
    f1_base: float
    f1_aug: float
    delta: float
    flagged: bool


@dataclass(frozen=True)
class PairedDelta:
    per_task: tuple[DeltaRow, ...]
    mean_delta: float


def confusion_counts(pred: Iterable[str], truth: Iterable[str]) -> ConfusionCounts:
    """Count tp/fp/fn by exact string equality of normalized paths."""
    p, t = set(pred), set(truth)
    tp = len(p & t)
    return ConfusionCounts(tp=tp, fp=len(p) - tp, fn=len(t) - tp)


def metric_triple(c: ConfusionCounts) -> MetricTriple:
    """Precision/recall/F1 with the 0/0 -> 0 convention for every ratio."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricTriple(precision=precision, recall=recall, f1=f1)


def task_outcome(
    task_id: str,
    condition: str,
    pred: Iterable[str],
    truth: Iterable[str],
    failed: bool = False,
) -> TaskOutcome:
    """Score one task; failed runs are scored as empty predictions and flagged."""
    counts = confusion_counts(() if failed else pred, truth)
    triple = metric_triple(counts)
    flags = OutcomeFlags(
        prec_zero=triple.precision == 0.0,
        rec_zero=triple.recall == 0.0,
        rec_one=triple.recall == 1.0,
        f1_one=triple.f1 == 1.0,
    )
    return TaskOutcome(
        task_id=task_id,
        condition=condition,
        counts=counts,
        triple=triple,
        flags=flags,
        failed=failed,
    )


def aggregate_score(
    outcomes: Sequence[TaskOutcome], f1_from_means: bool = False
) -> AggregateScore:
    """Macro aggregate: arithmetic mean of each per-task metric.

    ``f1_from_means`` swaps in the harmonic mean of the averaged precision
    and recall, exposed only for sensitivity analysis against the default
    mean-of-F1 convention.
    """
    if not outcomes:
        raise EmptyOutcomeSet("aggregate_score needs at least one outcome")
    n = len(outcomes)
    mean_p = sum(o.triple.precision for o in outcomes) / n
    mean_r = sum(o.triple.recall for o in outcomes) / n
    if f1_from_means:
        mean_f1 = 2 * mean_p * mean_r / (mean_p + mean_r) if mean_p + mean_r else 0.0
    else:
        mean_f1 = sum(o.triple.f1 for o in outcomes) / n
    return AggregateScore(
        mean_precision=mean_p, mean_recall=mean_r, mean_f1=mean_f1, n_tasks=n
    )


def paired_deltas(
    base: Sequence[TaskOutcome], aug: Sequence[TaskOutcome]
) -> PairedDelta:
    """Per-task F1 deltas (aug minus base) over task-id-aligned arms.

    Failed tasks contribute F1 = 0 and a flag; a task present in only one
    arm is an :class:`ArmMismatch`.
    """
    base_by_id = {o.task_id: o for o in base}
    aug_by_id = {o.task_id: o for o in aug}
    if set(base_by_id) != set(aug_by_id) or len(base_by_id) != len(base) or len(aug_by_id) != len(aug):
        raise ArmMismatch(
            f"base arm has {sorted(base_by_id)}, aug arm has {sorted(aug_by_id)}"
        )
    rows = []
    for task_id in sorted(base_by_id):
        b, a = base_by_id[task_id], aug_by_id[task_id]
        f1_b = 0.0 if b.failed else b.triple.f1
        f1_a = 0.0 if a.failed else a.triple.f1
        rows.append(
            DeltaRow(
                task_id=task_id,
                f1_base=f1_b,
                f1_aug=f1_a,
                delta=f1_a - f1_b,
                flagged=b.failed or a.failed,
            )
        )
    mean_delta = sum(r.delta for r in rows) / len(rows) if rows else 0.0
    return PairedDelta(per_task=tuple(rows), mean_delta=mean_delta)


# --- serialization for outcomes/{condition}.json and score.json ---

def outcome_to_dict(o: TaskOutcome) -> dict:
    return {
        "task_id": o.task_id,
        "condition": o.condition,
        "counts": {"tp": o.counts.tp, "fp": o.counts.fp, "fn": o.counts.fn},
        "triple": {
            "precision": o.triple.precision,
            "recall": o.triple.recall,
            "f1": o.triple.f1,
        },
        "flags": {
            "prec_zero": o.flags.prec_zero,
            "rec_zero": o.flags.rec_zero,
            "rec_one": o.flags.rec_one,
            "f1_one": o.flags.f1_one,
        },
        "failed": o.failed,
    }


def outcome_from_dict(d: dict) -> TaskOutcome:
    return TaskOutcome(
        task_id=d["task_id"],
        condition=d["condition"],
        counts=ConfusionCounts(**d["counts"]),
        triple=MetricTriple(**d["triple"]),
        flags=OutcomeFlags(**d["flags"]),
        failed=d.get("failed", False),
    )


def aggregate_to_dict(a: AggregateScore) -> dict:
    return {
        "mean_precision": a.mean_precision,
        "mean_recall": a.mean_recall,
        "mean_f1": a.mean_f1,
        "n_tasks": a.n_tasks,
    }


def paired_to_dict(pd: PairedDelta) -> dict:
    return {
        "per_task": [
            {
                "task_id": r.task_id,
                "f1_base": r.f1_base,
                "f1_aug": r.f1_aug,
                "delta": r.delta,
                "flagged": r.flagged,
            }
            for r in pd.per_task
        ],
        "mean_delta": pd.mean_delta,
    }


def write_outcomes(outcomes: Sequence[TaskOutcome], path: str | Path) -> Path:
    return write_canonical(path, [outcome_to_dict(o) for o in outcomes])


def load_outcomes(path: str | Path) -> list[TaskOutcome]:
    from .canonical import read_json

    return [outcome_from_dict(d) for d in read_json(path)]
