"""Authored query templates, keyed by (scenario_type, relation_kind).

The bank is versioned in-repo and fully deterministic. Templates carry the
slots {REF_ROUND}, {CATEGORY}, {ATTRIBUTE}, {DIRECTION}; every template that
points at an earlier round spells it as the literal phrase "round {REF_ROUND}"
so rendered queries always contain "round <k>".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..errors import SchemaViolation

BANK_VERSION = 1

# Class words: the generic noun used when a query must be resolved through a
# reference instead of a globally unique category name.
_CLASS_WORDS = {"lesion": "lesion", "subregion": "subregion", "tissue-strand": "strand"}


def class_word(category: str) -> str:
    if category.startswith("organ"):
        return "organ"
    return _CLASS_WORDS.get(category, category)


DIRECTION_PHRASES = {
    "left_of": ("to the left of", "left of", "on the left side of"),
    "right_of": ("to the right of", "right of", "on the right side of"),
    "above": ("above", "over", "upward of"),
    "below": ("below", "beneath", "under"),
}

ATTRIBUTE_WORDS = {"same_intensity": "intensity", "same_size": "size"}

_DIRECT = (
    "Please segment the {CATEGORY}.",
    "Segment the {CATEGORY} in this image.",
    "Show me the mask of the {CATEGORY}.",
    "Outline the {CATEGORY}.",
    "Find and segment the {CATEGORY}.",
    "Produce a mask for the {CATEGORY}.",
    "Where is the {CATEGORY}? Segment it.",
    "Mark the {CATEGORY} region.",
    "I need a segmentation of the {CATEGORY}.",
    "Highlight the {CATEGORY} area.",
)

_ORGAN_LESION = (
    "Segment the {CATEGORY} inside the entity from round {REF_ROUND}.",
    "Find the {CATEGORY} within the round {REF_ROUND} result.",
    "Outline the {CATEGORY} contained in the region from round {REF_ROUND}.",
    "Mask the {CATEGORY} located in the round {REF_ROUND} entity.",
    "Show the {CATEGORY} that lies inside the round {REF_ROUND} mask.",
    "Segment the {CATEGORY} sitting in the entity of round {REF_ROUND}.",
    "There is a {CATEGORY} in the round {REF_ROUND} region; segment it.",
    "Please mark the {CATEGORY} inside the round {REF_ROUND} target.",
    "Extract the {CATEGORY} found within the round {REF_ROUND} entity.",
    "Produce the mask of the {CATEGORY} in the round {REF_ROUND} area.",
)

_HIERARCHY = (
    "Segment the {CATEGORY} of the entity from round {REF_ROUND}.",
    "Outline the {CATEGORY} belonging to the round {REF_ROUND} entity.",
    "Find the {CATEGORY} nested in the round {REF_ROUND} result.",
    "Mask the {CATEGORY} that is part of the round {REF_ROUND} entity.",
    "Show the inner {CATEGORY} of the round {REF_ROUND} target.",
    "Segment the {CATEGORY} within the structure from round {REF_ROUND}.",
    "Mark the {CATEGORY} component of the round {REF_ROUND} region.",
    "Extract the {CATEGORY} inside the round {REF_ROUND} mask.",
    "Delineate the {CATEGORY} of the round {REF_ROUND} entity.",
    "I want the {CATEGORY} contained by the round {REF_ROUND} result.",
)

_ATTRIBUTE = (
    "Segment the {CATEGORY} with the same {ATTRIBUTE} as the round {REF_ROUND} entity.",
    "Find the {CATEGORY} that matches the {ATTRIBUTE} of the round {REF_ROUND} result.",
    "Outline the {CATEGORY} sharing the {ATTRIBUTE} of the round {REF_ROUND} entity.",
    "Mask the other {CATEGORY} of equal {ATTRIBUTE} to the round {REF_ROUND} target.",
    "Show the {CATEGORY} whose {ATTRIBUTE} equals that of the round {REF_ROUND} entity.",
    "Segment the {CATEGORY} of matching {ATTRIBUTE} with the round {REF_ROUND} region.",
    "Mark the {CATEGORY} that has the same {ATTRIBUTE} as the round {REF_ROUND} mask.",
    "Locate the {CATEGORY} identical in {ATTRIBUTE} to the round {REF_ROUND} entity.",
    "Give me the {CATEGORY} with {ATTRIBUTE} equal to the round {REF_ROUND} target.",
    "Extract the {CATEGORY} agreeing in {ATTRIBUTE} with the round {REF_ROUND} entity.",
)

_SPATIAL = (
    "Segment the {CATEGORY} {DIRECTION} the entity from round {REF_ROUND}.",
    "Find the {CATEGORY} {DIRECTION} the round {REF_ROUND} result.",
    "Outline the {CATEGORY} {DIRECTION} the round {REF_ROUND} entity.",
    "Mask the {CATEGORY} lying {DIRECTION} the round {REF_ROUND} target.",
    "Show the {CATEGORY} situated {DIRECTION} the round {REF_ROUND} mask.",
    "Segment whatever {CATEGORY} sits {DIRECTION} the round {REF_ROUND} entity.",
    "Mark the {CATEGORY} positioned {DIRECTION} the round {REF_ROUND} region.",
    "Locate the {CATEGORY} {DIRECTION} the entity of round {REF_ROUND}.",
    "Extract the {CATEGORY} found {DIRECTION} the round {REF_ROUND} entity.",
    "Please segment the {CATEGORY} {DIRECTION} the round {REF_ROUND} result.",
)

_INFERENTIAL = (
    "Segment the largest entity inside the round {REF_ROUND} result.",
    "Find the biggest entity within the round {REF_ROUND} entity.",
    "Outline the largest structure contained in the round {REF_ROUND} mask.",
    "Mask the biggest region inside the round {REF_ROUND} target.",
    "Show the largest entity housed by the round {REF_ROUND} entity.",
    "Identify and segment the largest entity in the round {REF_ROUND} region.",
    "Mark the biggest structure within the round {REF_ROUND} result.",
    "Extract the largest entity found inside the round {REF_ROUND} entity.",
    "Which entity inside the round {REF_ROUND} mask is largest? Segment it.",
    "Give me the largest entity within the round {REF_ROUND} area.",
)

_SLOT_RE = re.compile(r"\{(REF_ROUND|CATEGORY|ATTRIBUTE|DIRECTION)\}")

ANSWER_TEMPLATE = "The {CATEGORY} is [SEG]."

# Slot values the bank can ever produce; used for validation and vocabulary.
CATEGORY_VALUES = (
    "organ-a",
    "organ-b",
    "organ-c",
    "organ-d",
    "lesion",
    "subregion",
    "tissue-strand",
    "strand",
    "organ",
    "entity",
)


@dataclass(frozen=True)
class TemplateBank:
    """Paraphrase templates per (scenario_type, relation_kind)."""

    version: int = BANK_VERSION
    templates: dict[tuple[str, str], tuple[str, ...]] = field(
        default_factory=lambda: {
            ("direct", "none"): _DIRECT,
            ("organ_lesion", "contains"): _ORGAN_LESION,
            ("hierarchy", "contains"): _HIERARCHY,
            ("attribute", "same_intensity"): _ATTRIBUTE,
            ("attribute", "same_size"): _ATTRIBUTE,
            ("spatial", "left_of"): _SPATIAL,
            ("spatial", "right_of"): _SPATIAL,
            ("spatial", "above"): _SPATIAL,
            ("spatial", "below"): _SPATIAL,
            ("inferential", "largest_within"): _INFERENTIAL,
        }
    )

    def __post_init__(self):
        for key, group in self.templates.items():
            if len(group) < 10:
                raise SchemaViolation(f"template group {key} has fewer than 10 entries")
            for t in group:
                if key[0] != "direct" and "round {REF_ROUND}" not in t:
                    raise SchemaViolation(f"referencing template lacks 'round {{REF_ROUND}}': {t!r}")
                leftovers = _SLOT_RE.sub("", t)
                if "{" in leftovers or "}" in leftovers:
                    raise SchemaViolation(f"template has unknown slots: {t!r}")

    def group(self, scenario_type: str, relation_kind: str) -> tuple[str, ...]:
        return self.templates[(scenario_type, relation_kind)]

    def all_surface_strings(self) -> list[str]:
        """Every string the bank can emit, for vocabulary construction."""
        out: list[str] = [ANSWER_TEMPLATE]
        for group in self.templates.values():
            out.extend(group)
        out.extend(CATEGORY_VALUES)
        out.extend(ATTRIBUTE_WORDS.values())
        for phrases in DIRECTION_PHRASES.values():
            out.extend(phrases)
        out.extend(str(k) for k in range(1, 9))
        return out


def default_bank() -> TemplateBank:
    return TemplateBank()
