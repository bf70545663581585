"""Light CNN detectors on single-channel mel spectrograms."""

from __future__ import annotations

import torch
from torch import nn

# (kind, in_channels, out_channels_before_mfm, kernel) for the trunk; "pool"
# rows are 2x2 max pools and "bn" rows batch norms over the given width.
LAYER_TABLE = [
    ("conv", 1, 64, 5), ("mfm",), ("pool",),
    ("conv", 32, 64, 1), ("mfm",), ("bn", 32),
    ("conv", 32, 96, 3), ("mfm",), ("pool",), ("bn", 48),
    ("conv", 48, 96, 1), ("mfm",), ("bn", 48),
    ("conv", 48, 128, 3), ("mfm",), ("pool",),
    ("conv", 64, 128, 1), ("mfm",), ("bn", 64),
    ("conv", 64, 192, 3), ("mfm",), ("pool",),
]
TRUNK_CHANNELS = 96


class MaxFeatureMap(nn.Module):
    """Split ``dim`` into halves and keep their elementwise maximum."""

    def __init__(self, dim: int = 1):
        super().__init__()
        self.dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[self.dim]
        if n % 2:
            raise ValueError(f"MFM needs an even size along dim {self.dim}, got {n}")
        a, b = torch.split(x, n // 2, dim=self.dim)
        return torch.maximum(a, b)


def lcnn_trunk() -> nn.Sequential:
    layers: list[nn.Module] = []
    for row in LAYER_TABLE:
        if row[0] == "conv":
            _, cin, cout, k = row
            layers.append(nn.Conv2d(cin, cout, k, padding=k // 2))
        elif row[0] == "mfm":
            layers.append(MaxFeatureMap(1))
        elif row[0] == "pool":
            layers.append(nn.MaxPool2d(2, 2))
        else:
            layers.append(nn.BatchNorm2d(row[1]))
    return nn.Sequential(*layers)


class LCNN(nn.Module):
    """[B, 1, n_mels, T] -> trunk -> global average pool -> 2 logits."""

    def __init__(self):
        super().__init__()
        self.trunk = lcnn_trunk()
        self.fc = nn.Linear(TRUNK_CHANNELS, 2)

    def forward(self, x):
        h = self.trunk(x).mean(dim=(2, 3))
        return self.fc(h), None


class TemporalAttention(nn.Module):
    """Additive attention: one softmax weight per time step."""

    def __init__(self, dim: int, attention_dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, attention_dim)
        self.score = nn.Linear(attention_dim, 1, bias=False)

    def forward(self, h):  # h: [B, T, C]
        w = torch.softmax(self.score(torch.tanh(self.proj(h))).squeeze(-1), dim=1)
        return torch.bmm(w.unsqueeze(1), h).squeeze(1), w


class LCNNAttention(nn.Module):
    def __init__(self, attention_dim: int = 64):
        super().__init__()
        self.trunk = lcnn_trunk()
        self.attention = TemporalAttention(TRUNK_CHANNELS, attention_dim)
        self.head = nn.Sequential(nn.Linear(TRUNK_CHANNELS, 64), nn.ReLU(), nn.Linear(64, 2))

    def forward(self, x):
        h = self.trunk(x).mean(dim=2).transpose(1, 2)  # frequency pooled: [B, T', C]
        ctx, w = self.attention(h)
        return self.head(ctx), w
