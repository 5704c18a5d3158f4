"""Shared domain types for scenes, masks, and conversations.

All types are immutable after construction and validate their invariants
eagerly, raising SchemaViolation on the first broken one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import SchemaViolation

MIN_IMAGE_SIDE = 32
MAX_ROUNDS = 8
MIN_ROUNDS = 2

# "direct" marks non-referential rounds (always round 1, optionally later).
SCENARIO_TYPES = ("direct", "organ_lesion", "hierarchy", "attribute", "spatial", "inferential")

RELATION_KINDS = (
    "contains",
    "left_of",
    "right_of",
    "above",
    "below",
    "same_intensity",
    "same_size",
    "largest_within",
)

SHAPE_CLASSES = ("ellipse", "rounded-rect", "triangle", "blob", "strand")
INTENSITY_CLASSES = ("bright", "mid", "dark")
SIZE_CLASSES = ("small", "large")
DIFFICULTIES = ("regular", "hard")

SEG_TOKEN = "[SEG]"


class ImageGrid:
    """Grayscale image, row-major float pixels in [0, 1]."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels, dtype=np.float32)
        if arr.ndim != 2:
            raise SchemaViolation(f"ImageGrid expects a 2-D array, got shape {arr.shape}")
        if arr.shape[0] < MIN_IMAGE_SIDE or arr.shape[1] < MIN_IMAGE_SIDE:
            raise SchemaViolation(f"image sides must be >= {MIN_IMAGE_SIDE}, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise SchemaViolation("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise SchemaViolation("image intensities must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ImageGrid is immutable")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageGrid) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"ImageGrid({self.width}x{self.height})"


class BinaryMask:
    """Boolean occupancy raster paired with an image of equal dimensions."""

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray):
        arr = np.asarray(bits)
        if arr.dtype != np.bool_:
            if not np.isin(np.unique(arr), (0, 1, 255)).all():
                raise SchemaViolation("mask values must be boolean or {0,1,255}")
            arr = arr != 0
        if arr.ndim != 2:
            raise SchemaViolation(f"BinaryMask expects a 2-D array, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryMask is immutable")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def area(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryMask) and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, area={self.area()})"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized corner coordinates, exclusive max edge."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (0.0 <= self.x_min < self.x_max <= 1.0):
            raise SchemaViolation(f"invalid x extent: [{self.x_min}, {self.x_max}]")
        if not (0.0 <= self.y_min < self.y_max <= 1.0):
            raise SchemaViolation(f"invalid y extent: [{self.y_min}, {self.y_max}]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class EntitySpec:
    """One synthetic entity: a shape with attributes and its full-image mask."""

    entity_id: int
    category: str
    shape_class: str
    intensity_class: str
    size_class: str
    mask: BinaryMask
    parent_id: Optional[int] = None

    def __post_init__(self):
        if self.shape_class not in SHAPE_CLASSES:
            raise SchemaViolation(f"unknown shape_class {self.shape_class!r}")
        if self.intensity_class not in INTENSITY_CLASSES:
            raise SchemaViolation(f"unknown intensity_class {self.intensity_class!r}")
        if self.size_class not in SIZE_CLASSES:
            raise SchemaViolation(f"unknown size_class {self.size_class!r}")
        if self.mask.is_empty():
            raise SchemaViolation(f"entity {self.entity_id} has an empty mask")


@dataclass(frozen=True)
class RelationEdge:
    kind: str
    src: int
    dst: int

    def __post_init__(self):
        if self.kind not in RELATION_KINDS:
            raise SchemaViolation(f"unknown relation kind {self.kind!r}")
        if self.src == self.dst:
            raise SchemaViolation("relation endpoints must differ")


@dataclass(frozen=True)
class SceneGraph:
    """Ground-truth world: entities, derived relations, rendered image."""

    entities: tuple[EntitySpec, ...]
    relations: tuple[RelationEdge, ...]
    image: ImageGrid

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "relations", tuple(self.relations))
        ids = {e.entity_id for e in self.entities}
        if len(ids) != len(self.entities):
            raise SchemaViolation("duplicate entity ids")
        for e in self.entities:
            if e.parent_id is not None and e.parent_id not in ids:
                raise SchemaViolation(f"entity {e.entity_id} has unknown parent {e.parent_id}")
            if e.mask.height != self.image.height or e.mask.width != self.image.width:
                raise SchemaViolation(f"entity {e.entity_id} mask dims differ from image")
        for r in self.relations:
            if r.src not in ids or r.dst not in ids:
                raise SchemaViolation(f"relation {r} references a missing entity")
        contains = {(r.src, r.dst) for r in self.relations if r.kind == "contains"}
        parented = {(e.parent_id, e.entity_id) for e in self.entities if e.parent_id is not None}
        if contains != parented:
            raise SchemaViolation("contains edges do not match parent_id structure")

    def entity(self, entity_id: int) -> EntitySpec:
        for e in self.entities:
            if e.entity_id == entity_id:
                return e
        raise KeyError(entity_id)

    def children(self, entity_id: int) -> list[EntitySpec]:
        return [e for e in self.entities if e.parent_id == entity_id]


@dataclass(frozen=True)
class RoundRecord:
    """One dialogue round: query, reference bookkeeping, and the gold mask."""

    index: int
    query_text: str
    ref_round: int
    scenario_type: str
    target_entity: int
    gt_mask: BinaryMask
    answer_text: str
    mask_ref: str = ""  # relative path of the mask file once persisted

    def __post_init__(self):
        if self.index < 1:
            raise SchemaViolation("round index must be >= 1")
        if self.scenario_type not in SCENARIO_TYPES:
            raise SchemaViolation(f"unknown scenario_type {self.scenario_type!r}")
        if not (0 <= self.ref_round < self.index):
            raise SchemaViolation(
                f"ref_round {self.ref_round} must be 0 or an earlier round than {self.index}"
            )
        if self.index == 1 and (self.ref_round != 0 or self.scenario_type != "direct"):
            raise SchemaViolation("round 1 must be a direct query with ref_round 0")
        if self.scenario_type == "direct" and self.ref_round != 0:
            raise SchemaViolation("direct rounds cannot carry a reference")
        if self.scenario_type != "direct" and self.ref_round == 0:
            raise SchemaViolation(f"{self.scenario_type} round needs a reference round")
        if self.answer_text.count(SEG_TOKEN) != 1:
            raise SchemaViolation("answer_text must contain exactly one [SEG]")
        if self.gt_mask.is_empty():
            raise SchemaViolation("gt_mask must be nonempty")


@dataclass(frozen=True)
class Conversation:
    conv_id: str
    image_ref: str
    scene_ref: str
    rounds: tuple[RoundRecord, ...]
    difficulty: str

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        n = len(self.rounds)
        if not (MIN_ROUNDS <= n <= MAX_ROUNDS):
            raise SchemaViolation(f"conversations need {MIN_ROUNDS}..{MAX_ROUNDS} rounds, got {n}")
        if [r.index for r in self.rounds] != list(range(1, n + 1)):
            raise SchemaViolation("round indices must be contiguous from 1")
        if self.difficulty not in DIFFICULTIES:
            raise SchemaViolation(f"unknown difficulty {self.difficulty!r}")
