"""Turn round plans into concrete query/answer records via the template bank."""

from __future__ import annotations

import numpy as np

from ..core.types import RoundRecord, SceneGraph
from .planner import RoundPlan
from .templates import ANSWER_TEMPLATE, ATTRIBUTE_WORDS, DIRECTION_PHRASES, TemplateBank


def answer_for(category: str) -> str:
    return ANSWER_TEMPLATE.format(CATEGORY=category)


def render_round(
    plan: RoundPlan, scene: SceneGraph, bank: TemplateBank, rng: np.random.Generator
) -> RoundRecord:
    """Sample a matching template uniformly and fill its slots."""
    group = bank.group(plan.scenario_type, plan.relation_kind)
    template = group[int(rng.integers(len(group)))]
    direction = ""
    if plan.scenario_type == "spatial":
        phrases = DIRECTION_PHRASES[plan.relation_kind]
        direction = phrases[int(rng.integers(len(phrases)))]
    query = template.format(
        REF_ROUND=plan.ref_round,
        CATEGORY=plan.category_text,
        ATTRIBUTE=ATTRIBUTE_WORDS.get(plan.relation_kind, ""),
        DIRECTION=direction,
    )
    target = scene.entity(plan.target_entity)
    return RoundRecord(
        index=plan.index,
        query_text=query,
        ref_round=plan.ref_round,
        scenario_type=plan.scenario_type,
        target_entity=plan.target_entity,
        gt_mask=target.mask,
        answer_text=answer_for(target.category),
    )
