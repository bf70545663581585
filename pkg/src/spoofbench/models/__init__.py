"""The six fine-tunable detector architectures behind one interface."""

from .core import (
    BatchOutput,
    CheckpointError,
    Detector,
    build_model,
    check_batch,
    forward,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)
from .lcnn import LAYER_TABLE, LCNN, LCNNAttention, MaxFeatureMap
from .spec import Architecture, Head, InputKind, ModelSpec
from .weights import PretrainedWeightsUnavailable, weights_dir

__all__ = [
    "Architecture", "BatchOutput", "CheckpointError", "Detector", "Head", "InputKind",
    "LAYER_TABLE", "LCNN", "LCNNAttention", "MaxFeatureMap", "ModelSpec",
    "PretrainedWeightsUnavailable", "build_model", "check_batch", "forward",
    "load_checkpoint", "read_checkpoint_header", "save_checkpoint", "weights_dir",
]
