"""Checkpoint archive: weights keyed by module path plus the model config."""

from __future__ import annotations

from pathlib import Path

import torch

from .config import ModelConfig
from .network import SegModel

CHECKPOINT_SCHEMA = 1


def save_model(model: SegModel, path: str | Path) -> None:
    torch.save(
        {
            "schema": CHECKPOINT_SCHEMA,
            "config": model.config.to_dict(),
            "state": model.state_dict(),
        },
        str(path),
    )


def load_model(path: str | Path) -> SegModel:
    obj = torch.load(str(path), map_location="cpu", weights_only=True)
    if obj.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {obj.get('schema')!r}")
    model = SegModel(ModelConfig.from_dict(obj["config"]))
    model.load_state_dict(obj["state"])
    model.eval()
    return model
