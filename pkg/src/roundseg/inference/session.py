"""Multi-round inference sessions.

Each round: assemble the prompt from the referenced round's mask (predicted
in autoregressive mode, ground truth in teacher-forced mode), decode the
answer, take the [SEG] hidden state, optionally gate it through the quality
judge / feature corrector, and decode the mask. Rounds within a session are
strictly sequential; the dense feature map f is computed once per session.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from ..errors import EmptyReference, NoSegToken, SchemaViolation
from ..core.types import BinaryMask, Conversation, ImageGrid
from ..model.assembly import PromptAssembly, build_assembly, masked_reference_crop
from ..model.jcm import FeatureCorrector, QualityJudge
from ..model.network import SegModel, binarize

# Tripwire: counts every use of a *predicted* mask as reference information.
# Teacher-forced training asserts this never moves.
PREDICTED_REFERENCE_USES = 0


@dataclass
class JcmConfig:
    enabled: bool = False
    beta: float = 0.6
    judge: Optional[QualityJudge] = None
    corrector: Optional[FeatureCorrector] = None

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0):
            raise SchemaViolation("beta must lie in [0, 1]")
        if self.enabled and (self.judge is None or self.corrector is None):
            raise SchemaViolation("enabled JCM needs judge and corrector parameters")


@dataclass
class RoundResult:
    round_index: int
    query_text: str
    answer_text: str
    mask: BinaryMask
    q: Optional[float] = None
    corrected: bool = False
    seg_emitted: bool = True
    ref_empty: bool = False
    ref_round: int = 0


@dataclass
class SessionState:
    image: ImageGrid
    f: torch.Tensor                      # cached dense features, computed once
    rounds: list[RoundResult] = field(default_factory=list)
    history: list[tuple[int, str, str]] = field(default_factory=list)


def start_session(image: ImageGrid, model: SegModel) -> SessionState:
    with torch.no_grad():
        f = model.encode_image(image)
    return SessionState(image=image, f=f)


def integrate_mask_info(
    query_text: str,
    ref_round: int,
    state: SessionState,
    model: SegModel,
    teacher_ref: Optional[BinaryMask] = None,
) -> PromptAssembly:
    """Build the prompt for the next round.

    With ref_round > 0 the referenced mask (teacher-forced override or the
    stored prediction) becomes crop + box tokens; raises EmptyReference when
    the referenced prediction is empty, in which case the caller degrades to
    [NULLREF] and still runs the round.
    """
    global PREDICTED_REFERENCE_USES
    cfg = model.config
    ref_crop = ref_box = None
    if ref_round > 0:
        if not (1 <= ref_round <= len(state.rounds) or teacher_ref is not None):
            raise SchemaViolation(f"ref_round {ref_round} has no completed round")
        if teacher_ref is not None:
            mask = teacher_ref
        else:
            mask = state.rounds[ref_round - 1].mask
            PREDICTED_REFERENCE_USES += 1
        if mask.is_empty():
            raise EmptyReference(f"round {ref_round} produced an empty mask")
        ref_crop, ref_box = masked_reference_crop(state.image, mask, cfg.crop_size)
    return build_assembly(
        cfg,
        state.image,
        query_text,
        round_index=len(state.rounds) + 1,
        history=list(state.history),
        ref_crop=ref_crop,
        ref_box=ref_box,
    )


def judge(h: torch.Tensor, cfg: JcmConfig) -> float:
    """Quality score of a [SEG] feature, deterministic scalar in [0, 1]."""
    with torch.no_grad():
        return float(cfg.judge(h[None])[0])


def correct(h: torch.Tensor, cfg: JcmConfig) -> torch.Tensor:
    """Residually refined feature; same dimension, finite."""
    with torch.no_grad():
        return cfg.corrector(h[None])[0]


def run_round(
    state: SessionState,
    query_text: str,
    ref_round: int,
    model: SegModel,
    cfg: JcmConfig,
    teacher_ref: Optional[BinaryMask] = None,
    gold_answer: Optional[str] = None,
) -> RoundResult:
    """Execute one round and append it to the session.

    `gold_answer`, when given, is what later rounds see as this round's
    answer in the history (teacher-forced evaluation); the returned result
    always reports what the model actually said.
    """
    ref_empty = False
    try:
        asm = integrate_mask_info(query_text, ref_round, state, model, teacher_ref)
    except EmptyReference:
        ref_empty = True
        asm = build_assembly(
            model.config,
            state.image,
            query_text,
            round_index=len(state.rounds) + 1,
            history=list(state.history),
        )
    ids, h, _ = model.generate_with_features(asm, state.f)
    answer_text = model.config.vocab.decode(ids)
    index = len(state.rounds) + 1

    if h is None:
        result = RoundResult(
            index,
            query_text,
            answer_text,
            BinaryMask(np.zeros((state.image.height, state.image.width), dtype=bool)),
            q=None,
            corrected=False,
            seg_emitted=False,
            ref_empty=ref_empty,
            ref_round=ref_round,
        )
    else:
        q: Optional[float] = None
        corrected = False
        h_use = h
        if cfg.enabled:
            q = judge(h, cfg)
            if not q > cfg.beta:
                h_use = correct(h, cfg)
                corrected = True
        with torch.no_grad():
            probs = model.decode_mask(state.f, h_use)
        result = RoundResult(
            index,
            query_text,
            answer_text,
            binarize(probs),
            q=q,
            corrected=corrected,
            seg_emitted=True,
            ref_empty=ref_empty,
            ref_round=ref_round,
        )

    state.rounds.append(result)
    state.history.append((index, query_text, gold_answer if gold_answer is not None else answer_text))
    return result


def run_conversation(
    conv: Conversation,
    image: ImageGrid,
    model: SegModel,
    cfg: JcmConfig,
    reference_mode: str = "autoregressive",
) -> list[RoundResult]:
    """Run every round of a scripted conversation.

    autoregressive: references come from the model's own earlier masks.
    teacher_forced: references and history answers come from the gold rounds,
    isolating per-round quality from error propagation.
    """
    if reference_mode not in ("autoregressive", "teacher_forced"):
        raise SchemaViolation(f"unknown reference mode {reference_mode!r}")
    teacher = reference_mode == "teacher_forced"
    state = start_session(image, model)
    for r in conv.rounds:
        teacher_ref = conv.rounds[r.ref_round - 1].gt_mask if teacher and r.ref_round > 0 else None
        run_round(
            state,
            r.query_text,
            r.ref_round,
            model,
            cfg,
            teacher_ref=teacher_ref,
            gold_answer=r.answer_text if teacher else None,
        )
    return state.rounds
