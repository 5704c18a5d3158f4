"""Model hyperparameters and the derived token layout."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import SchemaViolation
from .vocab import Vocabulary, build_vocabulary


@dataclass(frozen=True)
class ModelConfig:
    d_seg: int = 256          # hidden width; also the [SEG] feature dimension
    stride: int = 8           # vision backbone downsampling factor
    backbone_channels: int = 64
    crop_tokens: int = 4
    context_cap: int = 512
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 2
    crop_size: int = 32
    max_answer_tokens: int = 16
    token_pool: int = 2       # extra pooling from feature grid to image tokens
    vocab: Vocabulary = field(default_factory=build_vocabulary)

    def __post_init__(self):
        if self.d_seg % self.heads != 0:
            raise SchemaViolation("d_seg must be divisible by the head count")
        if self.vocab.tokens.count("[SEG]") != 1:
            raise SchemaViolation("vocabulary must contain [SEG] exactly once")

    def image_token_hw(self, image_h: int, image_w: int) -> tuple[int, int]:
        if image_h % (self.stride * self.token_pool) or image_w % (self.stride * self.token_pool):
            raise SchemaViolation("image dims must be divisible by stride * token_pool")
        return image_h // self.stride // self.token_pool, image_w // self.stride // self.token_pool

    def to_dict(self) -> dict:
        return {
            "d_seg": self.d_seg,
            "stride": self.stride,
            "backbone_channels": self.backbone_channels,
            "crop_tokens": self.crop_tokens,
            "context_cap": self.context_cap,
            "depth": self.depth,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "crop_size": self.crop_size,
            "max_answer_tokens": self.max_answer_tokens,
            "token_pool": self.token_pool,
            "vocab": list(self.vocab.tokens),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        obj["vocab"] = Vocabulary(tuple(obj["vocab"]))
        return cls(**obj)
