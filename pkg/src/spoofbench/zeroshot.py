"""Zero-shot real/fake scoring with pretrained audio backbones.

None of these backbones was trained to tell real from fake speech, so two
fixed rules turn their outputs into a FAKE score:

PROJECTION
    embeddings of the whole batch are centred and projected on their first
    principal axis; the sign is chosen so that the batch median lands at or
    below zero.
CLASS_PRIOR
    for AudioSet taggers, 1 minus the share of (sigmoid) probability mass
    that falls on speech classes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import frontend as fe
from .corpus import ClipRecord, Split, SplitAssignment
from .evalkit import MetricsReport, ScoreSet, ThresholdPolicy, report_from_scores
from .models.weights import PretrainedWeightsUnavailable, resolve_file, resolve_hub_dir

SAMPLE_RATE = 16000


class BackendId(enum.Enum):
    WAV2VEC2_XLSR_53 = "wav2vec2-xlsr-53"
    WHISPER_SMALL = "whisper-small"
    WHISPER_MEDIUM = "whisper-medium"
    PANNS_CNN14 = "panns-cnn14"
    WAVLM_BASE_PLUS = "wavlm-base-plus"
    AST = "ast"


class ScoringRule(enum.Enum):
    PROJECTION = "projection"
    CLASS_PRIOR = "class_prior"


EMBEDDING_DIM = {
    BackendId.WAV2VEC2_XLSR_53: 1024,
    BackendId.WHISPER_SMALL: 768,
    BackendId.WHISPER_MEDIUM: 1024,
    BackendId.PANNS_CNN14: 2048,
    BackendId.WAVLM_BASE_PLUS: 768,
    BackendId.AST: 768,
}

SCORING = {b: ScoringRule.PROJECTION for b in BackendId}
SCORING[BackendId.PANNS_CNN14] = ScoringRule.CLASS_PRIOR
SCORING[BackendId.AST] = ScoringRule.CLASS_PRIOR

# AudioSet ontology names counted as speech; the first six AudioSet indices
SPEECH_CLASSES = (
    "Speech",
    "Male speech, man speaking",
    "Female speech, woman speaking",
    "Child speech, kid speaking",
    "Conversation",
    "Narration, monologue",
)
AUDIOSET_CLASSES = 527

_RANDOM_CONFIGS = {
    BackendId.WAV2VEC2_XLSR_53: dict(
        hidden_size=1024, num_hidden_layers=24, num_attention_heads=16, intermediate_size=4096,
        feat_extract_norm="layer", do_stable_layer_norm=True, conv_bias=True,
    ),
    BackendId.WHISPER_SMALL: dict(d_model=768, encoder_layers=12, encoder_attention_heads=12,
                                  encoder_ffn_dim=3072, decoder_layers=1),
    BackendId.WHISPER_MEDIUM: dict(d_model=1024, encoder_layers=24, encoder_attention_heads=16,
                                   encoder_ffn_dim=4096, decoder_layers=1),
    BackendId.WAVLM_BASE_PLUS: dict(),
    BackendId.AST: dict(num_labels=AUDIOSET_CLASSES),
    BackendId.PANNS_CNN14: dict(),
}


class BackendUnavailable(PretrainedWeightsUnavailable):
    pass


@dataclass
class ZeroShotBackend:
    backend_id: BackendId
    embedding_dim: int
    scoring_rule: ScoringRule
    model: nn.Module = field(repr=False)
    extractor: object = field(default=None, repr=False)
    speech_index: tuple[int, ...] = ()
    random_init: bool = False

    @property
    def name(self) -> str:
        return self.backend_id.value


# ---------------------------------------------------------------------------
# PANNs CNN14 (16 kHz variant: 512-point FFT, hop 160, 64 mels, 50-8000 Hz)


class _ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.bn2 = nn.BatchNorm2d(cout)

    def forward(self, x, pool: int):
        x = torch.relu(self.bn1(self.conv1(x)))
        x = torch.relu(self.bn2(self.conv2(x)))
        return nn.functional.avg_pool2d(x, pool) if pool > 1 else x


class Cnn14(nn.Module):
    """CNN14 audio tagger; parameter names match the released checkpoints."""

    n_fft, hop, n_mels, fmin, fmax = 512, 160, 64, 50.0, 8000.0

    def __init__(self, classes: int = AUDIOSET_CLASSES):
        super().__init__()
        from transformers.audio_utils import mel_filter_bank

        fb = mel_filter_bank(num_frequency_bins=self.n_fft // 2 + 1, num_mel_filters=self.n_mels,
                             min_frequency=self.fmin, max_frequency=self.fmax, sampling_rate=SAMPLE_RATE,
                             norm="slaney", mel_scale="slaney")
        self.register_buffer("melW", torch.tensor(fb, dtype=torch.float32), persistent=False)
        self.register_buffer("window", torch.hann_window(self.n_fft), persistent=False)
        self.bn0 = nn.BatchNorm2d(self.n_mels)
        widths = [1, 64, 128, 256, 512, 1024, 2048]
        for i in range(6):
            setattr(self, f"conv_block{i + 1}", _ConvBlock(widths[i], widths[i + 1]))
        self.fc1 = nn.Linear(2048, 2048)
        self.fc_audioset = nn.Linear(2048, classes)

    def logmel(self, wav):
        spec = torch.stft(wav, self.n_fft, self.hop, window=self.window, center=True, pad_mode="reflect",
                          return_complex=True).abs() ** 2
        mel = torch.matmul(spec.transpose(1, 2), self.melW)  # [B, T, mels]
        return 10.0 * torch.log10(torch.clamp(mel, min=1e-10))

    def forward(self, wav):
        x = self.logmel(wav).unsqueeze(1)  # [B, 1, T, mels]
        x = self.bn0(x.transpose(1, 3)).transpose(1, 3)
        for i in range(6):
            x = getattr(self, f"conv_block{i + 1}")(x, 2 if i < 5 else 1)
        x = x.mean(dim=3)
        x = x.max(dim=2).values + x.mean(dim=2)
        emb = torch.relu(self.fc1(x))
        return emb, self.fc_audioset(emb)


# ---------------------------------------------------------------------------
# loading


def _speech_index_from_labels(id2label: dict) -> tuple[int, ...]:
    names = {str(v): int(k) for k, v in id2label.items()}
    hits = tuple(sorted(names[n] for n in SPEECH_CLASSES if n in names))
    return hits or tuple(range(len(SPEECH_CLASSES)))


def load_backend(
    backend_id: BackendId | str,
    random_init: bool = False,
    config_overrides: dict | None = None,
) -> ZeroShotBackend:
    """Load a backbone from the local weights directory.

    Missing weights raise :class:`BackendUnavailable`. ``random_init=True``
    builds the same architecture with random weights instead; this is for
    exercising the pipeline offline and is never a substitute for a real
    zero-shot evaluation.
    """
    bid = BackendId(backend_id) if not isinstance(backend_id, BackendId) else backend_id
    cfg = {**_RANDOM_CONFIGS[bid], **(config_overrides or {})}
    name = bid.value
    extractor = None
    speech = ()
    try:
        if bid is BackendId.PANNS_CNN14:
            model = Cnn14()
            if not random_init:
                state = torch.load(resolve_file(name), map_location="cpu", weights_only=True)
                state = state.get("model", state)
                missing, _ = model.load_state_dict(state, strict=False)
                if missing:
                    raise BackendUnavailable(f"{name} (checkpoint lacks {len(missing)} tensors)")
            speech = tuple(range(len(SPEECH_CLASSES)))
        elif bid in (BackendId.WAV2VEC2_XLSR_53, BackendId.WAVLM_BASE_PLUS):
            from transformers import Wav2Vec2Config, Wav2Vec2Model, WavLMConfig, WavLMModel

            cls, ccls = (Wav2Vec2Model, Wav2Vec2Config) if bid is BackendId.WAV2VEC2_XLSR_53 else (WavLMModel, WavLMConfig)
            model = cls(ccls(**cfg)) if random_init else cls.from_pretrained(resolve_hub_dir(name), local_files_only=True)
        elif bid in (BackendId.WHISPER_SMALL, BackendId.WHISPER_MEDIUM):
            from transformers import WhisperConfig, WhisperFeatureExtractor, WhisperModel

            if random_init:
                model = WhisperModel(WhisperConfig(**cfg)).get_encoder()
                extractor = WhisperFeatureExtractor()
            else:
                src = resolve_hub_dir(name)
                model = WhisperModel.from_pretrained(src, local_files_only=True).get_encoder()
                extractor = WhisperFeatureExtractor.from_pretrained(src, local_files_only=True)
        else:
            from transformers import ASTConfig, ASTFeatureExtractor, ASTForAudioClassification

            if random_init:
                model = ASTForAudioClassification(ASTConfig(**cfg))
                extractor = ASTFeatureExtractor()
                speech = tuple(range(len(SPEECH_CLASSES)))
            else:
                src = resolve_hub_dir(name)
                model = ASTForAudioClassification.from_pretrained(src, local_files_only=True)
                extractor = ASTFeatureExtractor.from_pretrained(src, local_files_only=True)
                speech = _speech_index_from_labels(model.config.id2label)
    except PretrainedWeightsUnavailable as exc:
        raise BackendUnavailable(exc.backbone if hasattr(exc, "backbone") else name) from exc
    except OSError as exc:
        raise BackendUnavailable(name) from exc
    model.eval()
    dim = EMBEDDING_DIM[bid] if not random_init else _embedding_dim(model, bid)
    return ZeroShotBackend(bid, dim, SCORING[bid], model, extractor, speech, random_init)


def _embedding_dim(model, bid: BackendId) -> int:
    if bid is BackendId.PANNS_CNN14:
        return 2048
    cfg = model.config
    return getattr(cfg, "hidden_size", None) or cfg.d_model


# ---------------------------------------------------------------------------
# inference


def _standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / np.sqrt(x.var() + 1e-7)


@torch.no_grad()
def _forward(backend: ZeroShotBackend, clip: fe.AudioClip) -> tuple[np.ndarray, np.ndarray | None]:
    if clip.sample_rate_hz != SAMPLE_RATE:
        raise ValueError(f"{backend.name} expects {SAMPLE_RATE} Hz audio, got {clip.sample_rate_hz}")
    x = np.asarray(clip.samples, dtype=np.float32)
    bid = backend.backend_id
    logits = None
    if bid in (BackendId.WAV2VEC2_XLSR_53, BackendId.WAVLM_BASE_PLUS):
        h = backend.model(torch.from_numpy(_standardize(x))[None]).last_hidden_state[0]
        emb = h.mean(0)
    elif bid in (BackendId.WHISPER_SMALL, BackendId.WHISPER_MEDIUM):
        feats = backend.extractor(x, sampling_rate=SAMPLE_RATE, return_tensors="pt").input_features
        h = backend.model(feats).last_hidden_state[0]
        # 30 s padded input; pool only the 20 ms frames that carry audio
        valid = max(1, min(h.shape[0], int(np.ceil(len(x) / (SAMPLE_RATE * 0.02)))))
        emb = h[:valid].mean(0)
    elif bid is BackendId.AST:
        feats = backend.extractor(x, sampling_rate=SAMPLE_RATE, return_tensors="pt").input_values
        pooled = backend.model.audio_spectrogram_transformer(feats).pooler_output
        emb, logits = pooled[0], backend.model.classifier(pooled)[0]
    else:
        e, lg = backend.model(torch.from_numpy(x)[None])
        emb, logits = e[0], lg[0]
    emb = emb.double().numpy()
    return emb, (logits.double().numpy() if logits is not None else None)


def embed(backend: ZeroShotBackend, clip: fe.AudioClip) -> np.ndarray:
    return _forward(backend, clip)[0]


def project_scores(embeddings: np.ndarray) -> np.ndarray:
    """First-principal-axis projection with the median-at-or-below-zero sign rule."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 2:
        raise ValueError("projection scoring needs at least 2 embeddings")
    centred = e - e.mean(axis=0)
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    if s.size == 0 or s[0] <= 1e-12 * max(1.0, np.abs(e).max()):
        return np.zeros(e.shape[0])
    axis = vt[0]
    axis = axis * np.sign(axis[np.argmax(np.abs(axis))])
    scores = centred @ axis
    if np.median(scores) > 0:
        scores = -scores
    return scores


def class_prior_scores(logits: np.ndarray, speech_index: Sequence[int]) -> np.ndarray:
    p = 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=np.float64)))
    mass = p[:, list(speech_index)].sum(axis=1) / p.sum(axis=1)
    return 1.0 - mass


def zero_shot_score(backend: ZeroShotBackend, clips: Sequence[fe.AudioClip]) -> np.ndarray:
    """One FAKE score per clip (higher = more FAKE)."""
    if backend.scoring_rule is ScoringRule.PROJECTION and len(clips) < 2:
        raise ValueError("projection scoring needs at least 2 clips")
    outs = [_forward(backend, c) for c in clips]
    if backend.scoring_rule is ScoringRule.PROJECTION:
        return project_scores(np.stack([o[0] for o in outs]))
    return class_prior_scores(np.stack([o[1] for o in outs]), backend.speech_index)


def load_clips(records: Sequence[ClipRecord], cfg: fe.FrontendConfig = fe.FrontendConfig()) -> list[fe.AudioClip]:
    return [fe.fix_duration(fe.load_and_resample(r.audio_path, SAMPLE_RATE), cfg.duration_s) for r in records]


def score_records(backend: ZeroShotBackend, records: Sequence[ClipRecord]) -> ScoreSet:
    scores = zero_shot_score(backend, load_clips(records))
    return ScoreSet(scores, np.array([int(r.label) for r in records]), tuple(r.clip_id for r in records))


def evaluate_zero_shot(
    backend: ZeroShotBackend,
    records: Sequence[ClipRecord],
    splits: SplitAssignment,
) -> tuple[MetricsReport, ScoreSet]:
    """Score the TEST split and report metrics at the batch-median threshold."""
    test = splits.select(records, Split.TEST)
    if not test:
        raise ValueError("TEST split is empty")
    ss = score_records(backend, test)
    meta = {"backend": backend.name, "scoring_rule": backend.scoring_rule.value, "random_init": backend.random_init}
    return report_from_scores(ss, policy=ThresholdPolicy.MEDIAN, metadata=meta), ss
