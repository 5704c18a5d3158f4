import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from roundseg.datagen import GenConfig, emit_dataset
from roundseg.model import ModelConfig, SegModel, save_model


def small_model_config(**kw) -> ModelConfig:
    base = dict(d_seg=32, backbone_channels=16, depth=2, heads=2, context_cap=320)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small 64px dataset shared by integration tests."""
    root = tmp_path_factory.mktemp("ds") / "data"
    emit_dataset(GenConfig(seed=77, image_size=64, n_train=12, n_val=4, n_test=3), root)
    return root


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """An untrained but fixed-seed tiny checkpoint."""
    torch.manual_seed(1234)
    model = SegModel(small_model_config()).eval()
    path = tmp_path_factory.mktemp("ck") / "model.pt"
    save_model(model, path)
    return path
