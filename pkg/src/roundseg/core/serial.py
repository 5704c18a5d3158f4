"""Serialization: one-line JSON conversation records, scene JSON, PNG rasters.

Conversations serialize to a single JSON line each; masks and images live in
sibling PNG files and records carry their relative paths. Serialization is
byte-stable (sorted keys, fixed separators) so identical values re-serialize
identically.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from ..errors import SchemaViolation
from .types import BinaryMask, Conversation, EntitySpec, ImageGrid, RelationEdge, RoundRecord, SceneGraph

MaskLoader = Callable[[str], BinaryMask]
ImageLoader = Callable[[str], ImageGrid]


def quantize_intensities(arr: np.ndarray) -> np.ndarray:
    """Snap float intensities to the 8-bit grid used by the PNG interchange format."""
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    return u8.astype(np.float32) / np.float32(255.0)


def save_image_png(image: ImageGrid, path: str | Path) -> None:
    u8 = np.round(image.pixels * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(str(path), format="PNG")


def load_image_png(path: str | Path) -> ImageGrid:
    u8 = np.asarray(Image.open(str(path)).convert("L"), dtype=np.uint8)
    return ImageGrid(u8.astype(np.float32) / np.float32(255.0))


def save_mask_png(mask: BinaryMask, path: str | Path) -> None:
    u8 = mask.bits.astype(np.uint8) * 255
    Image.fromarray(u8, mode="L").save(str(path), format="PNG")


def load_mask_png(path: str | Path) -> BinaryMask:
    u8 = np.asarray(Image.open(str(path)).convert("L"), dtype=np.uint8)
    if not np.isin(np.unique(u8), (0, 255)).all():
        raise SchemaViolation(f"mask PNG {path} is not a clean 0/255 raster")
    return BinaryMask(u8 == 255)


def _round_to_obj(r: RoundRecord) -> dict:
    if not r.mask_ref:
        raise SchemaViolation(f"round {r.index} has no mask_ref; cannot serialize")
    return {
        "index": r.index,
        "query_text": r.query_text,
        "ref_round": r.ref_round,
        "scenario_type": r.scenario_type,
        "target_entity": r.target_entity,
        "gt_mask": r.mask_ref,
        "answer_text": r.answer_text,
    }


def serialize_conversation(conv: Conversation) -> str:
    """One-line JSON record for a conversation; masks referenced by path."""
    obj = {
        "conv_id": conv.conv_id,
        "image_ref": conv.image_ref,
        "scene_ref": conv.scene_ref,
        "difficulty": conv.difficulty,
        "rounds": [_round_to_obj(r) for r in conv.rounds],
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def parse_conversation(line: str, mask_loader: MaskLoader) -> Conversation:
    """Parse one serialized record, resolving mask paths through `mask_loader`.

    Raises SchemaViolation when any declared invariant fails.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise SchemaViolation(f"not valid JSON: {e}") from e
    try:
        rounds = tuple(
            RoundRecord(
                index=int(r["index"]),
                query_text=r["query_text"],
                ref_round=int(r["ref_round"]),
                scenario_type=r["scenario_type"],
                target_entity=int(r["target_entity"]),
                gt_mask=mask_loader(r["gt_mask"]),
                answer_text=r["answer_text"],
                mask_ref=r["gt_mask"],
            )
            for r in obj["rounds"]
        )
        return Conversation(
            conv_id=obj["conv_id"],
            image_ref=obj["image_ref"],
            scene_ref=obj["scene_ref"],
            rounds=rounds,
            difficulty=obj["difficulty"],
        )
    except KeyError as e:
        raise SchemaViolation(f"missing field {e}") from e


def serialize_scene(scene: SceneGraph, image_ref: str, mask_refs: dict[int, str]) -> str:
    """JSON for a scene graph; the image and entity masks referenced by path."""
    obj = {
        "image": image_ref,
        "entities": [
            {
                "entity_id": e.entity_id,
                "category": e.category,
                "shape_class": e.shape_class,
                "intensity_class": e.intensity_class,
                "size_class": e.size_class,
                "mask": mask_refs[e.entity_id],
                "parent_id": e.parent_id,
            }
            for e in scene.entities
        ],
        "relations": [{"kind": r.kind, "src": r.src, "dst": r.dst} for r in scene.relations],
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def parse_scene(text: str, mask_loader: MaskLoader, image_loader: ImageLoader) -> SceneGraph:
    obj = json.loads(text)
    entities = tuple(
        EntitySpec(
            entity_id=int(e["entity_id"]),
            category=e["category"],
            shape_class=e["shape_class"],
            intensity_class=e["intensity_class"],
            size_class=e["size_class"],
            mask=mask_loader(e["mask"]),
            parent_id=None if e["parent_id"] is None else int(e["parent_id"]),
        )
        for e in obj["entities"]
    )
    relations = tuple(RelationEdge(r["kind"], int(r["src"]), int(r["dst"])) for r in obj["relations"])
    return SceneGraph(entities=entities, relations=relations, image=image_loader(obj["image"]))
