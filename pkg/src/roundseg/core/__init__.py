from .types import (
    SCENARIO_TYPES,
    RELATION_KINDS,
    ImageGrid,
    BinaryMask,
    BoundingBox,
    EntitySpec,
    RelationEdge,
    SceneGraph,
    RoundRecord,
    Conversation,
)
from .geometry import bbox_from_mask, crop_to_box, mask_centroid, CROP_SIZE
from .serial import (
    serialize_conversation,
    parse_conversation,
    serialize_scene,
    parse_scene,
    load_image_png,
    save_image_png,
    load_mask_png,
    save_mask_png,
)

__all__ = [
    "SCENARIO_TYPES",
    "RELATION_KINDS",
    "ImageGrid",
    "BinaryMask",
    "BoundingBox",
    "EntitySpec",
    "RelationEdge",
    "SceneGraph",
    "RoundRecord",
    "Conversation",
    "bbox_from_mask",
    "crop_to_box",
    "mask_centroid",
    "CROP_SIZE",
    "serialize_conversation",
    "parse_conversation",
    "serialize_scene",
    "parse_scene",
    "load_image_png",
    "save_image_png",
    "load_mask_png",
    "save_mask_png",
]
