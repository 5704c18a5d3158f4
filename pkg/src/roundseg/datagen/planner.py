"""Round planning: pick scenarios, reference rounds, and unique targets.

Every relational round is constructed so that resolving its relation from the
referenced round's target yields exactly one entity; ambiguity is rejected at
planning time, never tolerated in emitted data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UnplannableScene
from ..core.types import SceneGraph
from .templates import class_word

_SCENARIO_KINDS = {
    "organ_lesion": ("contains",),
    "hierarchy": ("contains",),
    "attribute": ("same_intensity", "same_size"),
    "spatial": ("left_of", "right_of", "above", "below"),
    "inferential": ("largest_within",),
}

_TARGET_CLASSES = ("organ", "lesion", "subregion", "strand")


@dataclass(frozen=True)
class RoundPlan:
    index: int
    scenario_type: str
    relation_kind: str
    ref_round: int
    target_entity: int
    category_text: str  # CATEGORY slot value ("" when the template has none)


def resolve_targets(
    scene: SceneGraph,
    scenario_type: str,
    relation_kind: str,
    ref_entity: int,
    target_class: str = "",
) -> list[int]:
    """All entities satisfying (scenario, kind, class) against `ref_entity`."""
    if scenario_type == "organ_lesion":
        return [e.entity_id for e in scene.entities if e.parent_id == ref_entity and e.category == "lesion"]
    if scenario_type == "hierarchy":
        return [
            e.entity_id for e in scene.entities if e.parent_id == ref_entity and e.category == "subregion"
        ]
    if scenario_type == "inferential":
        return [r.src for r in scene.relations if r.kind == "largest_within" and r.dst == ref_entity]
    if scenario_type in ("attribute", "spatial"):
        related = {r.src for r in scene.relations if r.kind == relation_kind and r.dst == ref_entity}
        return [
            e.entity_id
            for e in scene.entities
            if e.entity_id in related and e.entity_id != ref_entity and class_word(e.category) == target_class
        ]
    raise ValueError(f"not a referential scenario: {scenario_type}")


def _direct_candidates(scene: SceneGraph) -> list[int]:
    counts: dict[str, int] = {}
    for e in scene.entities:
        counts[e.category] = counts.get(e.category, 0) + 1
    return [e.entity_id for e in scene.entities if counts[e.category] == 1]


def _relational_options(scene, targets_by_round, used, scenario):
    opts = []
    for r, ref_entity in targets_by_round.items():
        for kind in _SCENARIO_KINDS[scenario]:
            if scenario in ("attribute", "spatial"):
                classes = _TARGET_CLASSES
            else:
                classes = ("",)
            for cls in classes:
                found = resolve_targets(scene, scenario, kind, ref_entity, cls)
                if len(found) == 1 and (found[0], scenario, r) not in used:
                    opts.append((kind, r, found[0], cls))
    return opts


def plan_conversation(
    scene: SceneGraph,
    rng: np.random.Generator,
    round_count: int,
    scenario_mix: dict[str, float],
    require_inferential: bool = False,
) -> list[RoundPlan]:
    """Plan `round_count` rounds over `scene`.

    Round 1 is always a direct category query; later rounds sample a scenario
    per `scenario_mix` among scenarios that still have a uniquely resolvable
    (reference, target) option, falling back to another direct query when no
    relation supports a further round.
    """
    direct_pool = _direct_candidates(scene)
    if not direct_pool:
        raise UnplannableScene("no entity has a unique category for the opening round")

    plans: list[RoundPlan] = []
    used: set[tuple[int, str, int]] = set()
    targets_by_round: dict[int, int] = {}

    first = int(direct_pool[rng.integers(len(direct_pool))])
    plans.append(RoundPlan(1, "direct", "none", 0, first, scene.entity(first).category))
    used.add((first, "direct", 0))
    targets_by_round[1] = first
    have_inferential = False

    for t in range(2, round_count + 1):
        names = [s for s, w in scenario_mix.items() if w > 0]
        options = {s: _relational_options(scene, targets_by_round, used, s) for s in names}
        available = [s for s in names if options[s]]

        must_place_inferential = (
            require_inferential and not have_inferential and round_count < 6
        )
        if must_place_inferential and options.get("inferential"):
            chosen = "inferential"
        elif must_place_inferential and t == round_count:
            raise UnplannableScene("cannot satisfy the inferential-round requirement")
        elif available:
            weights = np.array([scenario_mix[s] for s in available], dtype=np.float64)
            chosen = available[int(rng.choice(len(available), p=weights / weights.sum()))]
        else:
            # Fall back to a fresh direct query; regenerate the scene if even
            # that is exhausted.
            fresh = [e for e in direct_pool if (e, "direct", 0) not in used]
            if not fresh:
                raise UnplannableScene(f"no relation or direct query supports round {t}")
            tgt = int(fresh[rng.integers(len(fresh))])
            plans.append(RoundPlan(t, "direct", "none", 0, tgt, scene.entity(tgt).category))
            used.add((tgt, "direct", 0))
            targets_by_round[t] = tgt
            continue

        kind, ref_r, tgt, cls = options[chosen][int(rng.integers(len(options[chosen])))]
        plans.append(RoundPlan(t, chosen, kind, ref_r, tgt, cls))
        used.add((tgt, chosen, ref_r))
        targets_by_round[t] = tgt
        have_inferential = have_inferential or chosen == "inferential"

    if require_inferential and round_count < 6 and not have_inferential:
        raise UnplannableScene("inferential round required but never placed")
    return plans
