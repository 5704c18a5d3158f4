"""Lockstep batched rollouts for evaluation and feature collection.

Conversations advance round-by-round in parallel; each conversation's own
earlier predictions (or gold masks in teacher-forced mode) feed its next
round. Numerically this matches the sequential session path to float
precision; the sequential path stays the bit-exact reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from ..errors import EmptyMask
from ..core.types import BinaryMask, Conversation, ImageGrid
from ..model.assembly import build_assembly, masked_reference_crop
from ..model.network import SegModel, binarize
from . import session as _session
from .session import JcmConfig, RoundResult

# Called once per executed round when collecting features:
# collector(conv_pos, round_index, h_or_None, prob_map_or_None, result)
Collector = Callable[[int, int, Optional[torch.Tensor], Optional[torch.Tensor], RoundResult], None]


@dataclass
class _ConvState:
    conv: Conversation
    image: ImageGrid
    results: list[RoundResult]
    history: list[tuple[int, str, str]]


def _reference_mask(st: _ConvState, r, teacher: bool) -> Optional[BinaryMask]:
    if r.ref_round <= 0:
        return None
    if teacher:
        return st.conv.rounds[r.ref_round - 1].gt_mask
    _session.PREDICTED_REFERENCE_USES += 1
    return st.results[r.ref_round - 1].mask


def run_conversations_batched(
    convs: list[Conversation],
    images: list[ImageGrid],
    model: SegModel,
    cfg: JcmConfig,
    reference_mode: str = "autoregressive",
    chunk: int = 48,
    collector: Optional[Collector] = None,
) -> list[list[RoundResult]]:
    teacher = reference_mode == "teacher_forced"
    out: list[list[RoundResult]] = [None] * len(convs)  # type: ignore[list-item]
    for lo in range(0, len(convs), chunk):
        part = list(range(lo, min(lo + chunk, len(convs))))
        states = [_ConvState(convs[i], images[i], [], []) for i in part]
        with torch.no_grad():
            f_all = model.image_encoder(
                torch.stack([torch.from_numpy(np.array(s.image.pixels)) for s in states]).to(
                    model.dtype
                )[:, None]
            )
        max_rounds = max(len(s.conv.rounds) for s in states)
        for t in range(1, max_rounds + 1):
            active = [k for k, s in enumerate(states) if len(s.conv.rounds) >= t]
            if not active:
                break
            assemblies = []
            flags = []
            for k in active:
                st = states[k]
                r = st.conv.rounds[t - 1]
                ref_crop = ref_box = None
                ref_empty = False
                mask = _reference_mask(st, r, teacher)
                if r.ref_round > 0:
                    if mask is None or mask.is_empty():
                        ref_empty = mask is not None  # empty prediction degraded to NULLREF
                    else:
                        ref_crop, ref_box = masked_reference_crop(
                            st.image, mask, model.config.crop_size
                        )
                flags.append(ref_empty)
                assemblies.append(
                    build_assembly(
                        model.config,
                        st.image,
                        r.query_text,
                        round_index=t,
                        history=list(st.history),
                        ref_crop=ref_crop,
                        ref_box=ref_box,
                    )
                )
            idx = torch.tensor(active)
            answers, h_seg, seg_found, _ = model.generate_batch(assemblies, f=f_all[idx])

            qs: Optional[torch.Tensor] = None
            corrected_rows = torch.zeros(len(active), dtype=torch.bool)
            h_use = h_seg
            if cfg.enabled and bool(seg_found.any()):
                with torch.no_grad():
                    qs = cfg.judge(h_seg)
                    corrected_rows = seg_found & ~(qs > cfg.beta)
                    if bool(corrected_rows.any()):
                        h_use = h_seg.clone()
                        h_use[corrected_rows] = cfg.corrector(h_seg[corrected_rows])
            probs = None
            if bool(seg_found.any()):
                with torch.no_grad():
                    probs = model.decode_mask(f_all[idx], h_use)

            for j, k in enumerate(active):
                st = states[k]
                r = st.conv.rounds[t - 1]
                answer_text = model.config.vocab.decode(answers[j])
                if bool(seg_found[j]):
                    result = RoundResult(
                        t,
                        r.query_text,
                        answer_text,
                        binarize(probs[j]),
                        q=float(qs[j]) if qs is not None else None,
                        corrected=bool(corrected_rows[j]),
                        seg_emitted=True,
                        ref_empty=flags[j],
                        ref_round=r.ref_round,
                    )
                else:
                    result = RoundResult(
                        t,
                        r.query_text,
                        answer_text,
                        BinaryMask(np.zeros((st.image.height, st.image.width), dtype=bool)),
                        q=None,
                        corrected=False,
                        seg_emitted=False,
                        ref_empty=flags[j],
                        ref_round=r.ref_round,
                    )
                st.results.append(result)
                st.history.append(
                    (t, r.query_text, r.answer_text if teacher else answer_text)
                )
                if collector is not None:
                    collector(
                        part[k],
                        t,
                        h_seg[j] if bool(seg_found[j]) else None,
                        probs[j] if bool(seg_found[j]) else None,
                        result,
                    )
        for k, s in enumerate(states):
            out[part[k]] = s.results
    return out
