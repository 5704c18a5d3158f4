"""Judgment & correction heads: a quality judge over the [SEG] feature and a
residual feature corrector, both three-layer MLPs."""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn as nn

JCM_SCHEMA = 1


class QualityJudge(nn.Module):
    """Scores a [SEG] feature; squashed scalar output in [0, 1].

    Layer widths: [d, 512, 512, 1].
    """

    def __init__(self, d: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d, 512), nn.GELU(), nn.Linear(512, 512), nn.GELU(), nn.Linear(512, 1)
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(h)).squeeze(-1)


class FeatureCorrector(nn.Module):
    """Residual refinement h' = h + mlp(h); zero-initialized last layer so the
    untrained corrector is the identity.

    Layer widths: [d, 512, 512, d].
    """

    def __init__(self, d: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d, 512), nn.GELU(), nn.Linear(512, 512), nn.GELU(), nn.Linear(512, d)
        )
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return h + self.net(h)


def save_jcm(judge: QualityJudge, corrector: FeatureCorrector, d: int, tau_q: float, path: str | Path):
    torch.save(
        {
            "schema": JCM_SCHEMA,
            "d": d,
            "tau_q": tau_q,
            "judge": judge.state_dict(),
            "corrector": corrector.state_dict(),
        },
        str(path),
    )


def load_jcm(path: str | Path) -> tuple[QualityJudge, FeatureCorrector, dict]:
    obj = torch.load(str(path), map_location="cpu", weights_only=True)
    if obj.get("schema") != JCM_SCHEMA:
        raise ValueError(f"unsupported jcm schema {obj.get('schema')!r}")
    judge = QualityJudge(obj["d"])
    judge.load_state_dict(obj["judge"])
    corrector = FeatureCorrector(obj["d"])
    corrector.load_state_dict(obj["corrector"])
    judge.eval()
    corrector.eval()
    return judge, corrector, {"d": obj["d"], "tau_q": obj["tau_q"]}
