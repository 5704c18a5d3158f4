"""Teacher-forced end-to-end training of the main model."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from ..errors import DivergenceError, SchemaViolation
from ..model import ModelConfig, SegModel, save_model
from .data import ConvData, RoundSample, batches_for_epoch, load_round_samples, teacher_assembly
from .losses import LossWeights, compute_losses


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 0.01
    warmup_steps: int = 100
    batch_size: int = 24
    epochs: int = 2
    seed: int = 0
    grad_clip: float = 1.0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    log_every: int = 50

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise SchemaViolation("learning rate, batch size, and epochs must be positive")
        for w in (self.loss_weights.text, self.loss_weights.bce, self.loss_weights.dice):
            if w < 0:
                raise SchemaViolation("loss weights must be nonnegative")


def _gt_tensor(convs: list[ConvData], batch: list[RoundSample], dtype) -> torch.Tensor:
    gts = [convs[s.conv].gt_mask(s.round_index).bits for s in batch]
    return torch.from_numpy(np.stack(gts).astype(np.float32)).to(dtype)


def train_main(
    data_root: str | Path,
    out_dir: str | Path,
    train_cfg: TrainConfig,
    model_cfg: Optional[ModelConfig] = None,
    val_hook: Optional[Callable[[SegModel, int], bool]] = None,
    val_every: int = 0,
) -> Path:
    """Train on the 'train' split with teacher forcing; returns the checkpoint path.

    `val_hook(model, step)` runs every `val_every` steps when given and may
    return True to stop early (the checkpoint still reflects the final state).
    """
    from ..inference import session as _session  # tripwire only

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(train_cfg.seed)
    model_cfg = model_cfg or ModelConfig()
    model = SegModel(model_cfg)
    model.train()

    convs, samples = load_round_samples(data_root, "train")
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    steps_per_epoch = math.ceil(len(samples) / train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs

    def lr_lambda(step: int) -> float:
        if step < train_cfg.warmup_steps:
            return (step + 1) / train_cfg.warmup_steps
        frac = (step - train_cfg.warmup_steps) / max(1, total_steps - train_cfg.warmup_steps)
        return max(0.05, 1.0 - frac)

    sched = torch.optim.lr_scheduler.LambdaLR(opt, lr_lambda)
    tripwire_before = _session.PREDICTED_REFERENCE_USES

    log_path = out / "train_log.jsonl"
    step = 0
    stop = False
    t0 = time.time()
    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(train_cfg.epochs):
            epoch_losses = []
            for batch_samples in batches_for_epoch(samples, train_cfg.batch_size, train_cfg.seed, epoch):
                assemblies = [
                    teacher_assembly(model_cfg, convs[s.conv], s.round_index) for s in batch_samples
                ]
                batch = model.collate(assemblies, teacher_forcing=True)
                logits, h_seg, f = model.forward_teacher(batch)
                probs = model.decode_mask(f, h_seg)
                gt = _gt_tensor(convs, batch_samples, probs.dtype)
                loss, parts = compute_losses(
                    logits, batch["target"], probs, gt, train_cfg.loss_weights
                )
                if not torch.isfinite(loss):
                    dump = out / "diverged_state.pt"
                    save_model(model, dump)
                    raise DivergenceError(f"non-finite loss at step {step}; state dumped to {dump}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
                opt.step()
                sched.step()
                epoch_losses.append(parts["total"])
                step += 1
                if step % train_cfg.log_every == 0:
                    log.write(
                        json.dumps(
                            {
                                "step": step,
                                "epoch": epoch,
                                **parts,
                                "lr": sched.get_last_lr()[0],
                                "elapsed_s": round(time.time() - t0, 1),
                            }
                        )
                        + "\n"
                    )
                    log.flush()
                if val_hook is not None and val_every > 0 and step % val_every == 0:
                    model.eval()
                    stop = bool(val_hook(model, step))
                    model.train()
                    if stop:
                        break
            log.write(
                json.dumps(
                    {"epoch": epoch, "mean_loss": float(np.mean(epoch_losses)), "steps": step}
                )
                + "\n"
            )
            log.flush()
            if stop:
                break

    assert (
        _session.PREDICTED_REFERENCE_USES == tripwire_before
    ), "teacher forcing must never consume predicted reference masks"
    model.eval()
    ckpt = out / "model.pt"
    save_model(model, ckpt)
    return ckpt
