"""Segmentation metrics and their aggregation.

Conventions (fixed here because the reporting format assumes them):
  dice(A, B) = 2|A∩B| / (|A|+|B|), both-empty -> 1.0, one-empty -> 0.0
  iou(A, B)  = |A∩B| / |A∪B|,      both-empty -> 1.0
  gIoU = arithmetic mean of per-sample IoU
  cIoU = sum of intersections / sum of unions over the whole sample set
Overall rows pool every round of every conversation.
"""

from __future__ import annotations

import math

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimMismatch, EmptyResults
from ..core.types import BinaryMask

REPORT_SCHEMA = 1


def _counts(pred: BinaryMask, gt: BinaryMask) -> tuple[int, int, int]:
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise DimMismatch(f"{pred.width}x{pred.height} vs {gt.width}x{gt.height}")
    inter = int(np.count_nonzero(pred.bits & gt.bits))
    a = pred.area()
    b = gt.area()
    return inter, a, b


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    inter, a, b = _counts(pred, gt)
    if a + b == 0:
        return 1.0
    return 2.0 * inter / (a + b)


def iou(pred: BinaryMask, gt: BinaryMask) -> float:
    inter, a, b = _counts(pred, gt)
    union = a + b - inter
    if union == 0:
        return 1.0
    return inter / union


@dataclass(frozen=True)
class ResultItem:
    pred: BinaryMask
    gt: BinaryMask
    round_index: int
    scenario: str = ""
    difficulty: str = ""


@dataclass
class MetricsReport:
    overall: dict[str, float]
    per_round: dict[int, dict[str, float]]
    per_scenario: dict[str, dict[str, float]]
    per_difficulty: dict[str, dict[str, float]]
    n: int
    jcm: bool = False
    beta: float = 0.0
    reference_mode: str = ""
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "overall": self.overall,
            "per_round": {str(k): v for k, v in sorted(self.per_round.items())},
            "per_scenario": dict(sorted(self.per_scenario.items())),
            "per_difficulty": dict(sorted(self.per_difficulty.items())),
            "n": self.n,
            "jcm": self.jcm,
            "beta": self.beta,
            "reference_mode": self.reference_mode,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        if obj.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {obj.get('schema')!r}")
        return cls(
            overall=obj["overall"],
            per_round={int(k): v for k, v in obj["per_round"].items()},
            per_scenario=obj["per_scenario"],
            per_difficulty=obj["per_difficulty"],
            n=obj["n"],
            jcm=obj["jcm"],
            beta=obj["beta"],
            reference_mode=obj["reference_mode"],
            notes=obj.get("notes", {}),
        )


def _summarize(items: list[ResultItem]) -> dict[str, float]:
    dices, ious, inters, unions = [], [], 0, 0
    for it in items:
        inter, a, b = _counts(it.pred, it.gt)
        union = a + b - inter
        dices.append(1.0 if a + b == 0 else 2.0 * inter / (a + b))
        ious.append(1.0 if union == 0 else inter / union)
        inters += inter
        unions += union
    # math.fsum is exactly rounded, which keeps aggregation order-independent
    return {
        "dice": math.fsum(dices) / len(items),
        "giou": math.fsum(ious) / len(items),
        "ciou": 1.0 if unions == 0 else inters / unions,
        "n": len(items),
    }


def aggregate(
    results: list[ResultItem], jcm: bool = False, beta: float = 0.0, reference_mode: str = ""
) -> MetricsReport:
    """Pool per-sample results into overall / per-round / per-tag summaries."""
    if not results:
        raise EmptyResults("nothing to aggregate")
    rounds = sorted({it.round_index for it in results})
    scenarios = sorted({it.scenario for it in results if it.scenario})
    difficulties = sorted({it.difficulty for it in results if it.difficulty})
    report = MetricsReport(
        overall=_summarize(results),
        per_round={k: _summarize([it for it in results if it.round_index == k]) for k in rounds},
        per_scenario={s: _summarize([it for it in results if it.scenario == s]) for s in scenarios},
        per_difficulty={
            d: _summarize([it for it in results if it.difficulty == d]) for d in difficulties
        },
        n=len(results),
        jcm=jcm,
        beta=beta,
        reference_mode=reference_mode,
    )
    assert sum(v["n"] for v in report.per_round.values()) == report.n
    return report
