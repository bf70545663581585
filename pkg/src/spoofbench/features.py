"""Clip records -> model input tensors, per input kind, with memoisation."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import frontend as fe
from .corpus import ClipRecord
from .models.spec import InputKind


class FeatureStore:
    """Computes and caches per-clip frontend outputs.

    Mel matrices (and waveforms for raw-audio models) are kept in memory;
    images are rendered on demand since resizing is cheap. With ``cache_dir``
    the normalized mel matrices are also persisted in the binary cache format.
    """

    def __init__(self, cfg: fe.FrontendConfig = fe.FrontendConfig(), cache_dir: str | Path | None = None):
        self.cfg = cfg
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._mel: dict[Path, fe.MelSpectrogram] = {}
        self._wav: dict[Path, np.ndarray] = {}

    def waveform(self, path: Path) -> np.ndarray:
        if path not in self._wav:
            clip = fe.fix_duration(fe.load_and_resample(path, self.cfg.target_hz), self.cfg.duration_s)
            self._wav[path] = clip.samples.astype(np.float32)
        return self._wav[path]

    def mel(self, path: Path) -> fe.MelSpectrogram:
        if path in self._mel:
            return self._mel[path]
        cached = None
        if self.cache_dir is not None:
            cached = self.cache_dir / f"{path.stem}.{self.cfg.n_mels}x{self.cfg.hop}.mel"
            if cached.is_file():
                self._mel[path] = fe.load_mel_cache(cached, self.cfg.target_hz)
                return self._mel[path]
        clip = fe.AudioClip(self.waveform(path).astype(np.float64), self.cfg.target_hz)
        mel = fe.to_db_and_normalize(fe.mel_spectrogram(clip, self.cfg.n_mels, self.cfg.n_fft, self.cfg.hop))
        if cached is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            fe.save_mel_cache(cached, mel, self.cfg.hop)
        self._mel[path] = mel
        return mel

    def clip_input(self, path: str | Path, kind: InputKind) -> np.ndarray:
        path = Path(path)
        if kind is InputKind.RAW_WAVEFORM:
            return self.waveform(path)
        mel = self.mel(path)
        if kind is InputKind.MEL_1CH:
            return mel.values[None].astype(np.float32)
        if kind is InputKind.IMAGE_3CH:
            return fe.to_image(mel)
        if kind is InputKind.IMAGE_SEQUENCE:
            return np.stack(fe.window_sequence(mel, self.cfg.win_frames, self.cfg.stride_frames))
        raise ValueError(kind)

    def batch(self, records: Sequence[ClipRecord], kind: InputKind) -> torch.Tensor:
        return torch.from_numpy(np.stack([self.clip_input(r.audio_path, kind) for r in records]))


def labels_tensor(records: Sequence[ClipRecord]) -> torch.Tensor:
    return torch.tensor([int(r.label) for r in records], dtype=torch.long)
