"""Lookup of pretrained weights on local disk. Nothing is downloaded here."""

from __future__ import annotations

import os
from pathlib import Path

WEIGHTS_ENV = "SPOOFBENCH_WEIGHTS"

# backbone name -> file or hub identifier expected under the weights directory
WEIGHT_IDS = {
    "resnet18": "resnet18-f37072fd.pth",
    "vit_b_16": "vit_b_16-c867db91.pth",
    "wav2vec2-base": "facebook/wav2vec2-base",
    "wav2vec2-xlsr-53": "facebook/wav2vec2-large-xlsr-53",
    "whisper-small": "openai/whisper-small",
    "whisper-medium": "openai/whisper-medium",
    "wavlm-base-plus": "microsoft/wavlm-base-plus",
    "ast": "MIT/ast-finetuned-audioset-10-10-0.4593",
    "panns-cnn14": "Cnn14_16k_mAP=0.438.pth",
}


class PretrainedWeightsUnavailable(RuntimeError):
    def __init__(self, backbone: str, searched: list[Path] | None = None):
        where = ", ".join(str(p) for p in searched or [])
        super().__init__(f"pretrained weights for {backbone} not found" + (f" (searched: {where})" if where else ""))
        self.backbone = backbone


def weights_dir() -> Path:
    return Path(os.environ.get(WEIGHTS_ENV, Path.home() / ".cache" / "spoofbench"))


def _candidates(name: str) -> list[Path]:
    ident = WEIGHT_IDS.get(name, name)
    out = [weights_dir() / ident]
    torch_home = Path(os.environ.get("TORCH_HOME", Path.home() / ".cache" / "torch"))
    out.append(torch_home / "hub" / "checkpoints" / ident)
    return out


def resolve_file(name: str) -> Path:
    cands = _candidates(name)
    for p in cands:
        if p.is_file():
            return p
    raise PretrainedWeightsUnavailable(name, cands)


def resolve_hub_dir(name: str) -> Path | str:
    """Local directory with a ``config.json``, else the hub id if it is in the HF cache."""
    for p in _candidates(name):
        if (p / "config.json").is_file():
            return p
    ident = WEIGHT_IDS.get(name, name)
    try:
        from huggingface_hub import try_to_load_from_cache

        hit = try_to_load_from_cache(ident, "config.json")
        if isinstance(hit, str):
            return ident
    except Exception:
        pass
    raise PretrainedWeightsUnavailable(name, _candidates(name))


def load_torch_state(name: str) -> dict:
    import torch

    return torch.load(resolve_file(name), map_location="cpu", weights_only=True)
