from __future__ import annotations

import torch
from torch import nn

from .weights import resolve_hub_dir


def build_wav2vec2(pretrained: bool, overrides: dict | None = None, name: str = "wav2vec2-base") -> nn.Module:
    from transformers import Wav2Vec2Config, Wav2Vec2Model

    if pretrained:
        return Wav2Vec2Model.from_pretrained(resolve_hub_dir(name), local_files_only=True)
    cfg = Wav2Vec2Config(**(overrides or {}))
    return Wav2Vec2Model(cfg)


def standardize(wav: torch.Tensor) -> torch.Tensor:
    # per-utterance zero mean / unit variance, as the wav2vec2 feature extractor does
    mean = wav.mean(dim=-1, keepdim=True)
    var = wav.var(dim=-1, keepdim=True, unbiased=False)
    return (wav - mean) / torch.sqrt(var + 1e-7)


class Wav2Vec2Detector(nn.Module):
    """Frozen wav2vec2 encoder, time-mean pooled, with a small trainable head."""

    def __init__(self, pretrained: bool = False, overrides: dict | None = None):
        super().__init__()
        self.backbone = build_wav2vec2(pretrained, overrides)
        for p in self.backbone.parameters():
            p.requires_grad_(False)
        dim = self.backbone.config.hidden_size
        self.head = nn.Sequential(nn.Linear(dim, 256), nn.ReLU(), nn.Linear(256, 2))

    def train(self, mode: bool = True):
        super().train(mode)
        self.backbone.eval()  # frozen: no dropout, no time masking
        return self

    def forward(self, wav):
        with torch.no_grad():
            hidden = self.backbone(standardize(wav)).last_hidden_state
        return self.head(hidden.mean(dim=1)), None
