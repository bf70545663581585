"""Image-input detectors built on torchvision backbones."""

from __future__ import annotations

import torch
import torchvision
from torch import nn

from .weights import load_torch_state

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ImageNorm(nn.Module):
    def __init__(self, enabled: bool):
        super().__init__()
        self.enabled = enabled
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)

    def forward(self, x):
        return (x - self.mean) / self.std if self.enabled else x


def resnet18_trunk(pretrained: bool) -> nn.Module:
    net = torchvision.models.resnet18(weights=None)
    if pretrained:
        net.load_state_dict(load_torch_state("resnet18"))
    net.fc = nn.Identity()
    return net


class ResNet18Detector(nn.Module):
    def __init__(self, pretrained: bool = False, imagenet_norm: bool = False):
        super().__init__()
        self.norm = ImageNorm(imagenet_norm)
        self.backbone = resnet18_trunk(pretrained)
        self.fc = nn.Linear(512, 1)

    def forward(self, x):
        return self.fc(self.backbone(self.norm(x))), None


class ViTB16Detector(nn.Module):
    def __init__(self, pretrained: bool = False, imagenet_norm: bool = False):
        super().__init__()
        self.norm = ImageNorm(imagenet_norm)
        net = torchvision.models.vit_b_16(weights=None)
        if pretrained:
            net.load_state_dict(load_torch_state("vit_b_16"))
        net.heads = nn.Identity()
        self.backbone = net
        self.head = nn.Linear(768, 2)

    def forward(self, x):
        return self.head(self.backbone(self.norm(x))), None


class CNNBiLSTM(nn.Module):
    """Per-window ResNet18 features -> bidirectional LSTM -> FAKE logit.

    Input is [B, W, 3, 224, 224]; the last forward and backward hidden states
    are concatenated before the fully connected layers.
    """

    def __init__(self, pretrained: bool = False, hidden: int = 128, imagenet_norm: bool = False):
        super().__init__()
        self.norm = ImageNorm(imagenet_norm)
        self.backbone = resnet18_trunk(pretrained)
        self.lstm = nn.LSTM(512, hidden, batch_first=True, bidirectional=True)
        self.head = nn.Sequential(nn.Linear(2 * hidden, 64), nn.ReLU(), nn.Linear(64, 1))

    def forward(self, x):
        b, w = x.shape[:2]
        feats = self.backbone(self.norm(x.flatten(0, 1))).view(b, w, -1)
        _, (h_n, _) = self.lstm(feats)
        return self.head(torch.cat([h_n[0], h_n[1]], dim=1)), None
