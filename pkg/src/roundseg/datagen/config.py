"""Generation configuration for the synthetic corpus."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import SchemaViolation

ROUND_COUNTS = (2, 3, 4, 5, 6, 7, 8)

DEFAULT_ROUND_WEIGHTS = (0.30, 0.22, 0.16, 0.12, 0.09, 0.06, 0.05)

REFERENTIAL_SCENARIOS = ("organ_lesion", "hierarchy", "attribute", "spatial", "inferential")


@dataclass(frozen=True)
class GenConfig:
    seed: int
    image_size: int = 128
    n_train: int = 100
    n_val: int = 20
    n_test: int = 20
    round_count_weights: tuple[float, ...] = DEFAULT_ROUND_WEIGHTS
    scenario_mix: dict[str, float] = field(
        default_factory=lambda: {name: 1.0 for name in REFERENTIAL_SCENARIOS}
    )
    hard_fraction: float = 0.3

    def __post_init__(self):
        if self.image_size < 32 or self.image_size % 8 != 0:
            raise SchemaViolation("image_size must be >= 32 and divisible by 8")
        if len(self.round_count_weights) != len(ROUND_COUNTS):
            raise SchemaViolation("round_count_weights must cover counts 2..8")
        for w in self.round_count_weights:
            if w < 0:
                raise SchemaViolation("round count weights must be nonnegative")
        if sum(self.round_count_weights) <= 0:
            raise SchemaViolation("at least one round count weight must be positive")
        for name, w in self.scenario_mix.items():
            if name not in REFERENTIAL_SCENARIOS:
                raise SchemaViolation(f"unknown scenario {name!r} in mix")
            if w < 0:
                raise SchemaViolation("scenario weights must be nonnegative")
        if sum(self.scenario_mix.values()) <= 0:
            raise SchemaViolation("at least one scenario weight must be positive")
        if not (0.0 <= self.hard_fraction <= 1.0):
            raise SchemaViolation("hard_fraction must lie in [0, 1]")
