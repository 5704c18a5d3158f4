"""Training loss: token cross-entropy + per-pixel BCE + soft Dice."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ..errors import ShapeError

_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    text: float = 1.0
    bce: float = 2.0
    dice: float = 0.5


def soft_dice_loss(probs: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """1 - soft Dice, averaged over the batch. probs/gt: (B, H, W)."""
    p = probs.flatten(1)
    g = gt.flatten(1)
    num = 2.0 * (p * g).sum(dim=1) + _EPS
    den = p.sum(dim=1) + g.sum(dim=1) + _EPS
    return (1.0 - num / den).mean()


def compute_losses(
    logits: torch.Tensor,
    target: torch.Tensor,
    probs: torch.Tensor,
    gt: torch.Tensor,
    weights: LossWeights = LossWeights(),
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of the three components.

    logits: (B, L, V); target: (B, L) with -100 outside supervised positions;
    probs/gt: (B, H, W). Predictions at position p-1 are scored against the
    target token at p.
    """
    if logits.shape[:2] != target.shape or probs.shape != gt.shape:
        raise ShapeError(
            f"loss shapes disagree: logits {tuple(logits.shape)}, target {tuple(target.shape)}, "
            f"probs {tuple(probs.shape)}, gt {tuple(gt.shape)}"
        )
    ce = F.cross_entropy(
        logits[:, :-1].reshape(-1, logits.shape[-1]), target[:, 1:].reshape(-1), ignore_index=-100
    )
    bce = F.binary_cross_entropy(probs, gt)
    dice = soft_dice_loss(probs, gt)
    total = weights.text * ce + weights.bce * bce + weights.dice * dice
    parts = {
        "text_ce": float(ce.detach()),
        "bce": float(bce.detach()),
        "dice": float(dice.detach()),
        "total": float(total.detach()),
    }
    return total, parts
