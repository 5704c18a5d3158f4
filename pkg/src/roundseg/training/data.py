"""Compact in-RAM dataset representation and deterministic batching.

Images are held as uint8 and masks as packed bits; both are expanded only
inside the batch being assembled, which keeps a 10k-conversation split within
a few hundred MB.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core.types import BinaryMask, Conversation, ImageGrid
from ..core.serial import load_image_png
from ..datagen import load_split
from ..model.assembly import PromptAssembly, build_assembly, masked_reference_crop
from ..model.config import ModelConfig
from ..model.vocab import tokenize


@dataclass
class ConvData:
    conv_id: str
    image_u8: np.ndarray           # (H, W) uint8
    queries: list[str]
    answers: list[str]
    ref_rounds: list[int]
    scenarios: list[str]
    mask_packs: list[np.ndarray]   # packed gt bits per round
    mask_shape: tuple[int, int]
    difficulty: str

    def image(self) -> ImageGrid:
        return ImageGrid(self.image_u8.astype(np.float32) / np.float32(255.0))

    def gt_mask(self, round_index: int) -> BinaryMask:
        bits = np.unpackbits(self.mask_packs[round_index - 1])[: self.mask_shape[0] * self.mask_shape[1]]
        return BinaryMask(bits.reshape(self.mask_shape).astype(bool))

    def history(self, upto_round: int) -> list[tuple[int, str, str]]:
        return [(k + 1, self.queries[k], self.answers[k]) for k in range(upto_round - 1)]


@dataclass(frozen=True)
class RoundSample:
    conv: int
    round_index: int
    text_len: int


def _pack(mask: BinaryMask) -> np.ndarray:
    return np.packbits(mask.bits)


def conv_data_from(conv: Conversation, image: ImageGrid) -> ConvData:
    return ConvData(
        conv_id=conv.conv_id,
        image_u8=np.round(image.pixels * 255.0).astype(np.uint8),
        queries=[r.query_text for r in conv.rounds],
        answers=[r.answer_text for r in conv.rounds],
        ref_rounds=[r.ref_round for r in conv.rounds],
        scenarios=[r.scenario_type for r in conv.rounds],
        mask_packs=[_pack(r.gt_mask) for r in conv.rounds],
        mask_shape=(image.height, image.width),
        difficulty=conv.difficulty,
    )


def load_round_samples(root: str | Path, split: str) -> tuple[list[ConvData], list[RoundSample]]:
    root = Path(root)
    convs: list[ConvData] = []
    samples: list[RoundSample] = []
    for conv in load_split(root, split):
        image = load_image_png(root / conv.image_ref)
        data = conv_data_from(conv, image)
        ci = len(convs)
        convs.append(data)
        running = 0
        for r in conv.rounds:
            running += len(tokenize(r.query_text)) + len(tokenize(r.answer_text)) + 4
            samples.append(RoundSample(ci, r.index, running))
    return convs, samples


def teacher_assembly(
    cfg: ModelConfig, conv: ConvData, round_index: int, with_answer: bool = True
) -> PromptAssembly:
    """Training-time assembly: gold history, ground-truth reference mask."""
    image = conv.image()
    ref_crop = ref_box = None
    ref = conv.ref_rounds[round_index - 1]
    if ref > 0:
        ref_crop, ref_box = masked_reference_crop(image, conv.gt_mask(ref), cfg.crop_size)
    return build_assembly(
        cfg,
        image,
        conv.queries[round_index - 1],
        round_index,
        conv.history(round_index),
        ref_crop=ref_crop,
        ref_box=ref_box,
        answer_text=conv.answers[round_index - 1] if with_answer else None,
    )


def batches_for_epoch(
    samples: list[RoundSample], batch_size: int, seed: int, epoch: int
) -> list[list[RoundSample]]:
    """Length-bucketed batches in a deterministic per-epoch order."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA7C4, epoch]))
    order = rng.permutation(len(samples))
    ordered = sorted((samples[i] for i in order), key=lambda s: s.text_len)
    batches = [ordered[i : i + batch_size] for i in range(0, len(ordered), batch_size)]
    rng.shuffle(batches)
    return batches
