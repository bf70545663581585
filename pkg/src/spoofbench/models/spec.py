from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field


class Architecture(enum.Enum):
    LCNN = "lcnn"
    LCNN_ATTENTION = "lcnn_attention"
    RESNET18 = "resnet18"
    VIT_B16 = "vit_b16"
    CNN_BILSTM = "cnn_bilstm"
    WAV2VEC2_BASE = "wav2vec2_base"

    @classmethod
    def parse(cls, name: str) -> "Architecture":
        key = name.strip().lower().replace("-", "_")
        aliases = {"lcnn_attn": "lcnn_attention", "vit": "vit_b16", "vit_b_16": "vit_b16",
                   "wav2vec2": "wav2vec2_base", "cnn_lstm": "cnn_bilstm"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown architecture {name!r}; valid: {valid}") from None


class InputKind(enum.Enum):
    MEL_1CH = "mel_1ch"
    IMAGE_3CH = "image_3ch"
    IMAGE_SEQUENCE = "image_sequence"
    RAW_WAVEFORM = "raw_waveform"


class Head(enum.Enum):
    TWO_LOGIT = "two_logit"
    ONE_LOGIT = "one_logit"


INPUT_KIND = {
    Architecture.LCNN: InputKind.MEL_1CH,
    Architecture.LCNN_ATTENTION: InputKind.MEL_1CH,
    Architecture.RESNET18: InputKind.IMAGE_3CH,
    Architecture.VIT_B16: InputKind.IMAGE_3CH,
    Architecture.CNN_BILSTM: InputKind.IMAGE_SEQUENCE,
    Architecture.WAV2VEC2_BASE: InputKind.RAW_WAVEFORM,
}

# the two binary-cross-entropy models emit a single FAKE logit
HEAD = {a: Head.TWO_LOGIT for a in Architecture}
HEAD[Architecture.RESNET18] = Head.ONE_LOGIT
HEAD[Architecture.CNN_BILSTM] = Head.ONE_LOGIT

USES_PRETRAINED = {Architecture.RESNET18, Architecture.VIT_B16, Architecture.CNN_BILSTM, Architecture.WAV2VEC2_BASE}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture choice plus the knobs the architectures leave open.

    Use :meth:`for_architecture` to get the fixed input kind / head pairing.
    ``backbone_overrides`` patches the Wav2Vec2 encoder config (layer count etc.)
    and only applies when the backbone is randomly initialised.
    """

    architecture: Architecture
    input_kind: InputKind
    head: Head
    pretrained_backbone: bool = False
    frozen_backbone: bool = False
    n_mels: int = 64
    attention_dim: int = 64
    lstm_hidden: int = 128
    imagenet_norm: bool = False
    backbone_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if INPUT_KIND[self.architecture] is not self.input_kind:
            raise ValueError(
                f"{self.architecture.value} takes {INPUT_KIND[self.architecture].value}, not {self.input_kind.value}"
            )
        if HEAD[self.architecture] is not self.head:
            raise ValueError(f"{self.architecture.value} uses a {HEAD[self.architecture].value} head")
        if self.architecture is Architecture.WAV2VEC2_BASE and not self.frozen_backbone:
            raise ValueError("wav2vec2_base requires frozen_backbone=True")

    @classmethod
    def for_architecture(cls, arch: Architecture | str, pretrained: bool | None = None, **kw) -> "ModelSpec":
        if isinstance(arch, str):
            arch = Architecture.parse(arch)
        if pretrained is None:
            pretrained = arch in USES_PRETRAINED
        return cls(
            architecture=arch,
            input_kind=INPUT_KIND[arch],
            head=HEAD[arch],
            pretrained_backbone=pretrained,
            frozen_backbone=arch is Architecture.WAV2VEC2_BASE,
            **kw,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("architecture", "input_kind", "head"):
            d[k] = d[k].value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["architecture"] = Architecture(d["architecture"])
        d["input_kind"] = InputKind(d["input_kind"])
        d["head"] = Head(d["head"])
        return cls(**d)
