"""Dataset emission: scenes, conversations, images, masks, manifest.

Output layout:
    <out>/{train,val,test}/conversations.jsonl
    <out>/images/*.png      <out>/masks/*.png      <out>/scenes/*.json
    <out>/manifest.json

Every conversation derives its randomness from (master seed, split, index), so
generation is order-independent and byte-deterministic. The directory is
written to a temp sibling and atomically renamed into place.
"""

from __future__ import annotations

import dataclasses
import json
import os
import shutil
from pathlib import Path

import numpy as np

from ..errors import PlacementFailure, UnplannableScene
from ..core.types import Conversation, SceneGraph
from ..core.serial import (
    load_mask_png,
    parse_conversation,
    save_image_png,
    save_mask_png,
    serialize_conversation,
    serialize_scene,
)
from .config import ROUND_COUNTS, GenConfig
from .planner import plan_conversation
from .render import render_round
from .scene import generate_scene
from .templates import default_bank

SPLITS = ("train", "val", "test")
MANIFEST_SCHEMA = 1
_MAX_SCENE_RETRIES = 50


def _sample_round_count(rng: np.random.Generator, weights, hard: bool) -> int:
    w = np.array(weights, dtype=np.float64)
    if not hard:
        w = w * (np.array(ROUND_COUNTS) < 6)
        if w.sum() <= 0:
            raise UnplannableScene("round weights leave no regular-tier count")
    return int(np.array(ROUND_COUNTS)[rng.choice(len(ROUND_COUNTS), p=w / w.sum())])


def build_conversation(config: GenConfig, split: str, index: int) -> tuple[Conversation, SceneGraph]:
    """Deterministically build the `index`-th conversation of a split."""
    split_code = SPLITS.index(split)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, split_code, index]))
    bank = default_bank()
    want_hard = bool(rng.random() < config.hard_fraction)
    last_err: Exception | None = None
    for _ in range(_MAX_SCENE_RETRIES):
        rc = _sample_round_count(rng, config.round_count_weights, want_hard)
        scene_seed = int(rng.integers(0, 2**62))
        mix = dict(config.scenario_mix)
        if not want_hard:
            mix["inferential"] = 0.0
            if sum(mix.values()) <= 0:
                raise UnplannableScene("scenario mix leaves no regular-tier scenario")
        try:
            scene = generate_scene(scene_seed, config)
            plans = plan_conversation(
                scene, rng, rc, mix, require_inferential=want_hard and rc < 6
            )
        except (PlacementFailure, UnplannableScene) as e:
            last_err = e
            continue
        rounds = [render_round(p, scene, bank, rng) for p in plans]
        hard = rc >= 6 or any(p.scenario_type == "inferential" for p in plans)
        assert hard == want_hard, "difficulty rule drifted from the planner contract"
        scene_id = f"{split}_{index:06d}"
        rounds = [
            dataclasses.replace(r, mask_ref=f"masks/{scene_id}_e{r.target_entity:02d}.png")
            for r in rounds
        ]
        conv = Conversation(
            conv_id=scene_id,
            image_ref=f"images/{scene_id}.png",
            scene_ref=f"scenes/{scene_id}.json",
            rounds=tuple(rounds),
            difficulty="hard" if hard else "regular",
        )
        return conv, scene
    raise UnplannableScene(f"gave up on {split}[{index}] after {_MAX_SCENE_RETRIES} scenes: {last_err}")


def _write_conversation_assets(root: Path, conv: Conversation, scene: SceneGraph) -> None:
    scene_id = conv.conv_id
    save_image_png(scene.image, root / conv.image_ref)
    mask_refs = {}
    for e in scene.entities:
        ref = f"masks/{scene_id}_e{e.entity_id:02d}.png"
        save_mask_png(e.mask, root / ref)
        mask_refs[e.entity_id] = ref
    (root / conv.scene_ref).write_text(
        serialize_scene(scene, conv.image_ref, mask_refs), encoding="utf-8"
    )


def emit_dataset(config: GenConfig, out_dir: str | Path) -> dict:
    """Generate all splits under `out_dir` and return the manifest."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"output directory {out} exists and is not empty")
    tmp = out.parent / (out.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    for sub in ("images", "masks", "scenes", *SPLITS):
        (tmp / sub).mkdir(parents=True)

    counts, hard_counts = {}, {}
    for split in SPLITS:
        n = {"train": config.n_train, "val": config.n_val, "test": config.n_test}[split]
        lines = []
        hard = 0
        for i in range(n):
            conv, scene = build_conversation(config, split, i)
            _write_conversation_assets(tmp, conv, scene)
            lines.append(serialize_conversation(conv))
            hard += conv.difficulty == "hard"
        (tmp / split / "conversations.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        counts[split] = n
        hard_counts[split] = hard

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "seed": config.seed,
        "counts": counts,
        "hard_counts": hard_counts,
        "config": dataclasses.asdict(config),
    }
    (tmp / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    os.replace(tmp, out)
    return manifest


def load_split(root: str | Path, split: str) -> list[Conversation]:
    """Parse every conversation record of a split, loading its masks."""
    root = Path(root)
    out = []
    with open(root / split / "conversations.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(parse_conversation(line, lambda ref: load_mask_png(root / ref)))
    return out
