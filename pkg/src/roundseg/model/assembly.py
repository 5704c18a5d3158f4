"""Prompt assembly: fixed segment order, history encoding, overflow policy.

Sequence layout (always in this order):
    [image tokens][crop tokens | NULLREF][box token | NULLREF][history][query]
and, when teacher forcing, the gold answer tokens plus [EOS].

History renders each prior round as "[ROUND] <i> [USER] <query> [ASSISTANT]
<answer>", giving the model an addressable notion of round indices. When the
total would exceed the context cap, whole (query, answer) pairs are dropped
oldest-first; the current query and reference slots are never dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ContextOverflow, EmptyMask
from ..core.types import BinaryMask, ImageGrid
from ..core.geometry import bbox_from_mask, crop_mask_to_box, crop_to_box
from .config import ModelConfig
from .vocab import Vocabulary


@dataclass
class PromptAssembly:
    image: np.ndarray            # (H, W) float32
    crop: Optional[np.ndarray]   # (S, S) float32 masked crop, None -> [NULLREF]
    box: Optional[np.ndarray]    # (4,) float32, None -> [NULLREF]
    text_ids: list[int]          # history + query (+ answer when teacher forcing)
    spans: dict[str, tuple[int, int]]  # absolute token spans per segment
    n_prefix: int                # image + crop + box token count

    @property
    def length(self) -> int:
        return self.n_prefix + len(self.text_ids)

    def seg_position(self, seg_id: int) -> int:
        """Absolute position of the first [SEG] in the teacher-forced answer."""
        lo, hi = self.spans["answer"]
        for p in range(lo, hi):
            if self.text_ids[p - self.n_prefix] == seg_id:
                return p
        raise ValueError("teacher-forced answer contains no [SEG]")


def masked_reference_crop(
    image: ImageGrid, ref_mask: BinaryMask, crop_size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Crop the reference entity and zero pixels outside its mask.

    Returns (crop, box4) where box4 is the normalized bounding box.
    """
    if ref_mask.is_empty():
        raise EmptyMask("reference mask is empty")
    box = bbox_from_mask(ref_mask)
    crop = crop_to_box(image, box, crop_size).pixels
    keep = crop_mask_to_box(ref_mask, box, crop_size)
    return (crop * keep).astype(np.float32), np.array(box.as_tuple(), dtype=np.float32)


def history_token_ids(vocab: Vocabulary, history: list[tuple[int, str, str]]) -> list[list[int]]:
    """Per-round token runs for (round_index, query, answer) triples."""
    runs = []
    for idx, query, answer in history:
        run = [vocab.id_of("[ROUND]"), *vocab.encode(str(idx)), vocab.id_of("[USER]")]
        run += vocab.encode(query)
        run += [vocab.id_of("[ASSISTANT]"), *vocab.encode(answer)]
        runs.append(run)
    return runs


def build_assembly(
    config: ModelConfig,
    image: ImageGrid,
    query_text: str,
    round_index: int,
    history: list[tuple[int, str, str]],
    ref_crop: Optional[np.ndarray] = None,
    ref_box: Optional[np.ndarray] = None,
    answer_text: Optional[str] = None,
) -> PromptAssembly:
    """Assemble one prompt; raises ContextOverflow only when even an empty
    history cannot fit."""
    vocab = config.vocab
    th, tw = config.image_token_hw(image.height, image.width)
    n_prefix = th * tw + config.crop_tokens + 1
    if (ref_crop is None) != (ref_box is None):
        raise ValueError("reference crop and box must be provided together")

    runs = history_token_ids(vocab, history)
    query_run = [vocab.id_of("[ROUND]"), *vocab.encode(str(round_index)), vocab.id_of("[USER]")]
    query_run += vocab.encode(query_text)
    query_run += [vocab.id_of("[ASSISTANT]")]
    answer_ids: list[int] = []
    if answer_text is not None:
        answer_ids = vocab.encode(answer_text) + [vocab.id_of("[EOS]")]

    budget = config.context_cap
    if answer_text is None:
        budget -= config.max_answer_tokens  # leave room to generate
    while True:
        total = n_prefix + sum(len(r) for r in runs) + len(query_run) + len(answer_ids)
        if total <= budget:
            break
        if not runs:
            raise ContextOverflow(f"prompt needs {total} tokens, cap is {config.context_cap}")
        runs.pop(0)  # drop the oldest (query, answer) pair

    hist_flat = [t for r in runs for t in r]
    text_ids = hist_flat + query_run + answer_ids
    img_end = th * tw
    crop_end = img_end + config.crop_tokens
    box_end = crop_end + 1
    hist_end = box_end + len(hist_flat)
    query_end = hist_end + len(query_run)
    spans = {
        "image": (0, img_end),
        "crop": (img_end, crop_end),
        "box": (crop_end, box_end),
        "history": (box_end, hist_end),
        "query": (hist_end, query_end),
        "answer": (query_end, query_end + len(answer_ids)),
    }
    return PromptAssembly(
        image=image.pixels,
        crop=None if ref_crop is None else ref_crop,
        box=None if ref_box is None else ref_box,
        text_ids=text_ids,
        spans=spans,
        n_prefix=n_prefix,
    )
