"""Split evaluation, error-propagation diagnostics, and the beta sweep."""

from __future__ import annotations

import math
from pathlib import Path

from ..core.types import Conversation, ImageGrid
from ..core.serial import load_image_png
from ..datagen import load_split
from ..inference.rollout import run_conversations_batched
from ..inference.session import JcmConfig
from ..model.network import SegModel
from .metrics import MetricsReport, ResultItem, aggregate

EARLY_ROUNDS = (2, 3)
LATE_ROUNDS = (5, 6, 7, 8)


def load_eval_set(root: str | Path, split: str, limit: int | None = None):
    root = Path(root)
    convs = load_split(root, split)
    if limit is not None:
        convs = convs[:limit]
    images = [load_image_png(root / c.image_ref) for c in convs]
    return convs, images


def results_to_items(convs: list[Conversation], results) -> list[ResultItem]:
    items = []
    for conv, rounds in zip(convs, results):
        for rec, res in zip(conv.rounds, rounds):
            items.append(
                ResultItem(
                    pred=res.mask,
                    gt=rec.gt_mask,
                    round_index=rec.index,
                    scenario=rec.scenario_type,
                    difficulty=conv.difficulty,
                )
            )
    return items


def evaluate_conversations(
    convs: list[Conversation],
    images: list[ImageGrid],
    model: SegModel,
    cfg: JcmConfig,
    reference_mode: str,
    chunk: int = 48,
) -> MetricsReport:
    results = run_conversations_batched(convs, images, model, cfg, reference_mode, chunk=chunk)
    return aggregate(
        results_to_items(convs, results),
        jcm=cfg.enabled,
        beta=cfg.beta if cfg.enabled else 0.0,
        reference_mode=reference_mode,
    )


def evaluate_split(
    model: SegModel,
    root: str | Path,
    split: str,
    cfg: JcmConfig,
    reference_mode: str = "autoregressive",
    limit: int | None = None,
    chunk: int = 48,
) -> MetricsReport:
    convs, images = load_eval_set(root, split, limit)
    return evaluate_conversations(convs, images, model, cfg, reference_mode, chunk=chunk)


def _mean_gap(gaps: dict[int, float], rounds) -> float:
    vals = [gaps[r] for r in rounds if r in gaps]
    return math.fsum(vals) / len(vals) if vals else float("nan")


def error_propagation_report(
    model: SegModel,
    root: str | Path,
    split: str,
    cfg: JcmConfig = JcmConfig(enabled=False),
    limit: int | None = None,
    chunk: int = 48,
) -> dict:
    """Teacher-forced vs autoregressive evaluation and the per-round Dice gap.

    The gap (teacher minus autoregressive) quantifies how much chained
    references cost; its growth across rounds is the propagation trend.
    """
    convs, images = load_eval_set(root, split, limit)
    teacher = evaluate_conversations(convs, images, model, cfg, "teacher_forced", chunk)
    auto = evaluate_conversations(convs, images, model, cfg, "autoregressive", chunk)
    gaps = {
        r: teacher.per_round[r]["dice"] - auto.per_round[r]["dice"]
        for r in teacher.per_round
        if r in auto.per_round
    }
    return {
        "teacher_forced": teacher.to_dict(),
        "autoregressive": auto.to_dict(),
        "per_round_gap": {str(k): v for k, v in sorted(gaps.items())},
        "gap_early_rounds": _mean_gap(gaps, EARLY_ROUNDS),
        "gap_late_rounds": _mean_gap(gaps, LATE_ROUNDS),
        "mean_dice_teacher": teacher.overall["dice"],
        "mean_dice_autoregressive": auto.overall["dice"],
    }


def beta_sweep(
    model: SegModel,
    judge,
    corrector,
    root: str | Path,
    split: str,
    betas: list[float],
    limit: int | None = None,
    chunk: int = 48,
) -> list[MetricsReport]:
    """Autoregressive evaluation at each beta; beta=0 reproduces gate-off."""
    convs, images = load_eval_set(root, split, limit)
    out = []
    for beta in betas:
        cfg = JcmConfig(enabled=True, beta=beta, judge=judge, corrector=corrector)
        out.append(evaluate_conversations(convs, images, model, cfg, "autoregressive", chunk))
    return out
