"""Judgment/correction training on frozen main-model rollouts.

Samples come from autoregressive inference (the distribution the gate sees at
evaluation time): for every round that produced a [SEG] feature we record the
feature, the decoded mask quality against ground truth, and the binary label
quality >= tau_q. The judge trains as a class-balanced classifier; the
corrector trains only on negative samples, through the frozen decoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import DegenerateLabels
from ..core.types import BinaryMask, Conversation, ImageGrid
from ..evalharness.metrics import dice as dice_metric
from ..inference.rollout import run_conversations_batched
from ..inference.session import JcmConfig
from ..model.jcm import FeatureCorrector, QualityJudge
from ..model.network import SegModel, binarize
from .losses import LossWeights, soft_dice_loss

DEFAULT_TAU_Q = 0.7


def model_digest(model: torch.nn.Module) -> str:
    """sha256 over all parameter bytes, for freeze-contract checks."""
    import hashlib

    digest = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


@dataclass
class JcmSample:
    h: np.ndarray            # (D,) float32 [SEG] feature from the rollout
    image_key: str
    gt_pack: np.ndarray      # packed gt mask bits
    mask_shape: tuple[int, int]
    dice_of_decoded: float
    label: bool

    def gt_mask(self) -> BinaryMask:
        bits = np.unpackbits(self.gt_pack)[: self.mask_shape[0] * self.mask_shape[1]]
        return BinaryMask(bits.reshape(self.mask_shape).astype(bool))


def collect_jcm_samples(
    model: SegModel,
    convs: list[Conversation],
    images: list[ImageGrid],
    tau_q: float = DEFAULT_TAU_Q,
    chunk: int = 48,
) -> tuple[list[JcmSample], int]:
    """Autoregressive rollout with the gate disabled; returns (samples, skipped).

    `skipped` counts rounds that emitted no [SEG] token.
    """
    samples: list[JcmSample] = []
    skipped = 0

    def collector(conv_pos, round_index, h, probs, result):
        nonlocal skipped
        if h is None:
            skipped += 1
            return
        gt = convs[conv_pos].rounds[round_index - 1].gt_mask
        d = dice_metric(result.mask, gt)
        samples.append(
            JcmSample(
                h=h.detach().cpu().numpy().astype(np.float32),
                image_key=convs[conv_pos].image_ref,
                gt_pack=np.packbits(gt.bits),
                mask_shape=(gt.height, gt.width),
                dice_of_decoded=d,
                label=d >= tau_q,
            )
        )

    run_conversations_batched(
        convs,
        images,
        model,
        JcmConfig(enabled=False),
        reference_mode="autoregressive",
        chunk=chunk,
        collector=collector,
    )
    return samples, skipped


def _split(samples: list[JcmSample], seed: int, val_frac: float = 0.2):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1C91]))
    order = rng.permutation(len(samples))
    n_val = max(1, int(len(samples) * val_frac))
    val_idx = set(int(i) for i in order[:n_val])
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


def rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC from ranks."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    ranks[order] = np.arange(1, len(scores) + 1)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs both classes")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def train_judgment(
    samples: list[JcmSample], seed: int = 0, epochs: int = 60, lr: float = 1e-3, batch: int = 256
) -> tuple[QualityJudge, dict]:
    """Class-balanced binary classifier over [SEG] features."""
    labels = np.array([s.label for s in samples])
    if labels.all() or not labels.any():
        raise DegenerateLabels("judgment training needs both label classes")
    train, val = _split(samples, seed)
    d = len(samples[0].h)
    torch.manual_seed(seed)
    judge = QualityJudge(d)
    opt = torch.optim.AdamW(judge.parameters(), lr=lr)
    h_tr = torch.from_numpy(np.stack([s.h for s in train]))
    y_tr = torch.tensor([float(s.label) for s in train])
    n_pos = float(y_tr.sum())
    n_neg = float(len(y_tr) - n_pos)
    w_pos = len(y_tr) / (2.0 * max(n_pos, 1.0))
    w_neg = len(y_tr) / (2.0 * max(n_neg, 1.0))
    rng = np.random.default_rng(seed)
    judge.train()
    for _ in range(epochs):
        order = rng.permutation(len(train))
        for i in range(0, len(order), batch):
            idx = torch.from_numpy(order[i : i + batch].copy())
            p = judge(h_tr[idx]).clamp(1e-6, 1 - 1e-6)
            y = y_tr[idx]
            w = torch.where(y > 0.5, torch.tensor(w_pos), torch.tensor(w_neg))
            loss = -(w * (y * p.log() + (1 - y) * (1 - p).log())).mean()
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    judge.eval()
    with torch.no_grad():
        h_val = torch.from_numpy(np.stack([s.h for s in val]))
        scores = judge(h_val).numpy()
    y_val = np.array([s.label for s in val])
    metrics = {
        "auc": rank_auc(scores, y_val) if (y_val.any() and not y_val.all()) else float("nan"),
        "val_acc": float(((scores > 0.5) == y_val).mean()),
        "n_train": len(train),
        "n_val": len(val),
        "pos_rate": float(labels.mean()),
    }
    return judge, metrics


def train_correction(
    samples: list[JcmSample],
    model: SegModel,
    images: dict[str, ImageGrid],
    seed: int = 0,
    epochs: int = 8,
    lr: float = 1e-3,
    batch: int = 16,
    weights: LossWeights = LossWeights(),
) -> tuple[FeatureCorrector, dict]:
    """Train h' = h + mlp(h) on negative samples through the frozen decoder."""
    negatives = [s for s in samples if not s.label]
    if not negatives:
        raise DegenerateLabels("correction training needs negative samples")
    train, val = _split(negatives, seed)
    if not train:
        raise DegenerateLabels("not enough negative samples to split")

    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    f_cache: dict[str, torch.Tensor] = {}

    def f_of(key: str) -> torch.Tensor:
        if key not in f_cache:
            with torch.no_grad():
                f_cache[key] = model.encode_image(images[key])
        return f_cache[key]

    d = len(samples[0].h)
    torch.manual_seed(seed + 1)
    corrector = FeatureCorrector(d)
    opt = torch.optim.AdamW(corrector.parameters(), lr=lr)
    rng = np.random.default_rng(seed + 2)
    corrector.train()
    for _ in range(epochs):
        order = rng.permutation(len(train))
        for i in range(0, len(order), batch):
            part = [train[j] for j in order[i : i + batch]]
            h = torch.from_numpy(np.stack([s.h for s in part]))
            f = torch.stack([f_of(s.image_key) for s in part])
            gt = torch.from_numpy(
                np.stack([s.gt_mask().bits for s in part]).astype(np.float32)
            )
            probs = model.decode_mask(f, corrector(h))
            loss = weights.bce * torch.nn.functional.binary_cross_entropy(
                probs, gt
            ) + weights.dice * soft_dice_loss(probs, gt)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    corrector.eval()

    def _mean_dice(hs: torch.Tensor, items: list[JcmSample]) -> float:
        vals = []
        with torch.no_grad():
            for row, s in zip(hs, items):
                probs = model.decode_mask(f_of(s.image_key), row)
                vals.append(dice_metric(binarize(probs), s.gt_mask()))
        return float(np.mean(vals))

    h_val = torch.from_numpy(np.stack([s.h for s in val])) if val else torch.zeros(0, d)
    metrics = {"n_train": len(train), "n_val": len(val)}
    if val:
        with torch.no_grad():
            h_fixed = corrector(h_val)
        metrics["pre_dice"] = _mean_dice(h_val, val)
        metrics["post_dice"] = _mean_dice(h_fixed, val)
    return corrector, metrics
