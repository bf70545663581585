from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import torch
from torch import nn

from .lcnn import LCNN, LCNNAttention
from .spec import Architecture, Head, InputKind, ModelSpec
from .vision import CNNBiLSTM, ResNet18Detector, ViTB16Detector
from .wav2vec import Wav2Vec2Detector

CHECKPOINT_FORMAT = "spoofbench-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class BatchOutput:
    logits: torch.Tensor  # [B, 1] or [B, 2]
    attention_weights: torch.Tensor | None = None  # [B, T], rows on the simplex


class Detector(nn.Module):
    """A spoofing detector: one of the six networks plus the spec that built it."""

    def __init__(self, spec: ModelSpec, seed: int, net: nn.Module):
        super().__init__()
        self.spec = spec
        self.seed = seed
        self.net = net

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)[0]

    def infer(self, x: torch.Tensor) -> BatchOutput:
        logits, attn = self.net(x)
        return BatchOutput(logits, attn)

    def backbone_parameters(self) -> list[nn.Parameter]:
        bb = getattr(self.net, "backbone", None)
        return list(bb.parameters()) if bb is not None else []

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def fake_probability(self, logits: torch.Tensor) -> torch.Tensor:
        if self.spec.head is Head.ONE_LOGIT:
            return torch.sigmoid(logits[:, 0])
        return torch.softmax(logits, dim=1)[:, 1]


def _make_net(spec: ModelSpec) -> nn.Module:
    a = spec.architecture
    if a is Architecture.LCNN:
        return LCNN()
    if a is Architecture.LCNN_ATTENTION:
        return LCNNAttention(spec.attention_dim)
    if a is Architecture.RESNET18:
        return ResNet18Detector(spec.pretrained_backbone, spec.imagenet_norm)
    if a is Architecture.VIT_B16:
        return ViTB16Detector(spec.pretrained_backbone, spec.imagenet_norm)
    if a is Architecture.CNN_BILSTM:
        return CNNBiLSTM(spec.pretrained_backbone, spec.lstm_hidden, spec.imagenet_norm)
    if a is Architecture.WAV2VEC2_BASE:
        return Wav2Vec2Detector(spec.pretrained_backbone, spec.backbone_overrides)
    raise ValueError(f"unsupported architecture {a}")


def build_model(spec: ModelSpec, seed: int = 0) -> Detector:
    """Construct a detector with deterministic initialisation.

    Raises PretrainedWeightsUnavailable when ``spec.pretrained_backbone`` is
    set and the weights are not on disk.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = _make_net(spec)
    model = Detector(spec, seed, net)
    if spec.frozen_backbone:
        for p in model.backbone_parameters():
            p.requires_grad_(False)
    return model


def expected_shape(spec: ModelSpec) -> str:
    return {
        InputKind.MEL_1CH: f"[B, 1, {spec.n_mels}, T]",
        InputKind.IMAGE_3CH: "[B, 3, 224, 224]",
        InputKind.IMAGE_SEQUENCE: "[B, W, 3, 224, 224]",
        InputKind.RAW_WAVEFORM: "[B, N]",
    }[spec.input_kind]


def check_batch(spec: ModelSpec, batch: torch.Tensor) -> None:
    s = tuple(batch.shape)
    kind = spec.input_kind
    ok = {
        InputKind.MEL_1CH: len(s) == 4 and s[1] == 1 and s[2] == spec.n_mels,
        InputKind.IMAGE_3CH: len(s) == 4 and s[1:] == (3, 224, 224),
        InputKind.IMAGE_SEQUENCE: len(s) == 5 and s[2:] == (3, 224, 224),
        InputKind.RAW_WAVEFORM: len(s) == 2,
    }[kind]
    if not ok:
        raise ValueError(f"{spec.architecture.value}: expected input {expected_shape(spec)}, got {list(s)}")


def forward(model: Detector, batch: torch.Tensor) -> BatchOutput:
    check_batch(model.spec, batch)
    return model.infer(batch)


def save_checkpoint(model: Detector, path: str | Path) -> None:
    """Single safetensors file: header metadata (format, version, architecture,
    spec, seed) plus every named parameter and buffer."""
    from safetensors.torch import save_file

    path = Path(path)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "format_version": str(CHECKPOINT_VERSION),
        "architecture": model.spec.architecture.value,
        "spec": json.dumps(model.spec.to_dict(), sort_keys=True),
        "seed": str(model.seed),
    }
    tensors = {k: v.detach().contiguous().clone() for k, v in model.state_dict().items()}
    tmp = path.with_name(path.name + ".tmp")
    save_file(tensors, str(tmp), metadata=meta)
    os.replace(tmp, path)


def read_checkpoint_header(path: str | Path) -> dict:
    from safetensors import safe_open

    try:
        with safe_open(str(path), framework="pt") as f:
            meta = f.metadata() or {}
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a spoofbench checkpoint")
    if meta.get("format_version") != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"{path}: checkpoint version {meta.get('format_version')}, expected {CHECKPOINT_VERSION}")
    return meta


def load_checkpoint(path: str | Path, architecture: Architecture | str | None = None) -> Detector:
    from safetensors.torch import load_file

    meta = read_checkpoint_header(path)
    arch = Architecture(meta["architecture"])
    if architecture is not None:
        want = Architecture.parse(architecture) if isinstance(architecture, str) else architecture
        if want is not arch:
            raise CheckpointError(f"architecture mismatch: checkpoint holds {arch.value}, requested {want.value}")
    try:
        state = load_file(str(path))
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    spec = ModelSpec.from_dict(json.loads(meta["spec"]))
    # every tensor comes from the file, so skip the pretrained lookup
    model = build_model(replace(spec, pretrained_backbone=False), int(meta["seed"]))
    model.spec = spec
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match {arch.value} ({exc})") from exc
    model.eval()
    return model
