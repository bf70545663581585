"""Fine-tuning harness: per-architecture defaults, losses, the epoch loop,
early stopping and best-checkpoint retention."""

from __future__ import annotations

import copy
import csv
import enum
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import ClipRecord, Split, SplitAssignment
from .features import FeatureStore, labels_tensor
from .models.core import Detector, save_checkpoint
from .models.spec import Architecture, Head

log = logging.getLogger(__name__)


class Optimizer(enum.Enum):
    ADAM = "adam"
    ADAMW = "adamw"


class Loss(enum.Enum):
    CROSS_ENTROPY = "cross_entropy"
    BCE = "bce"
    WEIGHTED_BCE = "weighted_bce"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    optimizer: Optimizer
    learning_rate: float
    batch_size: int
    max_epochs: int
    loss: Loss
    early_stop_patience: int = 3
    seed: int = 0
    class_weights: tuple[float, float] | None = None
    min_delta: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    # re-estimate batch-norm statistics on (up to) this many training clips
    # before each validation pass; 0 disables it
    bn_recalibration_clips: int = 256

    def __post_init__(self):
        self.optimizer = Optimizer(self.optimizer)
        self.loss = Loss(self.loss)
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 0:
            raise ValueError(f"invalid training config: {self}")
        if self.class_weights is not None:
            self.class_weights = tuple(float(w) for w in self.class_weights)
            if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
                raise ValueError("class_weights must be two positive floats (REAL, FAKE)")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value
        d["loss"] = self.loss.value
        d["monitor"] = "val_acc"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = {k: v for k, v in d.items() if k != "monitor"}
        return cls(**d)


# (optimizer, lr, batch, epochs, loss)
TABLE = {
    Architecture.LCNN: (Optimizer.ADAM, 1e-4, 32, 2, Loss.CROSS_ENTROPY),
    Architecture.LCNN_ATTENTION: (Optimizer.ADAM, 1e-4, 16, 14, Loss.CROSS_ENTROPY),
    Architecture.RESNET18: (Optimizer.ADAM, 1e-4, 32, 3, Loss.BCE),
    Architecture.VIT_B16: (Optimizer.ADAM, 1e-4, 8, 3, Loss.CROSS_ENTROPY),
    Architecture.CNN_BILSTM: (Optimizer.ADAM, 1e-4, 8, 10, Loss.WEIGHTED_BCE),
    Architecture.WAV2VEC2_BASE: (Optimizer.ADAMW, 5e-5, 4, 1, Loss.CROSS_ENTROPY),
}


def default_config(architecture: Architecture | str, **overrides) -> TrainConfig:
    if isinstance(architecture, str):
        architecture = Architecture.parse(architecture)
    if architecture not in TABLE:
        raise ValueError(f"unknown architecture {architecture}")
    opt, lr, bs, epochs, loss = TABLE[architecture]
    cfg = dict(optimizer=opt, learning_rate=lr, batch_size=bs, max_epochs=epochs, loss=loss,
               weight_decay=0.01 if opt is Optimizer.ADAMW else 0.0)
    cfg.update(overrides)
    return TrainConfig(**cfg)


def class_weights_from_labels(labels) -> tuple[float, float]:
    """Inverse-frequency weights w_c = N / (2 N_c), ordered (REAL, FAKE)."""
    y = np.asarray(labels)
    n = y.size
    counts = [int(np.sum(y == 0)), int(np.sum(y == 1))]
    if min(counts) == 0:
        raise ValueError("both classes are needed to derive class weights")
    return n / (2.0 * counts[0]), n / (2.0 * counts[1])


def compute_loss(kind: Loss | str, logits: torch.Tensor, labels: torch.Tensor, class_weights=None) -> torch.Tensor:
    kind = Loss(kind)
    labels = labels.long()
    if kind is Loss.CROSS_ENTROPY:
        if logits.ndim != 2 or logits.shape[1] != 2:
            raise ValueError(f"cross-entropy needs [B, 2] logits, got {list(logits.shape)}")
        return F.cross_entropy(logits, labels)
    if logits.ndim != 2 or logits.shape[1] != 1:
        raise ValueError(f"{kind.value} needs [B, 1] logits, got {list(logits.shape)}")
    z = logits[:, 0]
    if kind is Loss.BCE:
        return F.binary_cross_entropy_with_logits(z, labels.to(z.dtype))
    if class_weights is None:
        raise ValueError("weighted BCE needs class weights")
    w = torch.as_tensor(class_weights, dtype=z.dtype)[labels]
    return F.binary_cross_entropy_with_logits(z, labels.to(z.dtype), weight=w)


def check_loss_head(loss: Loss, head: Head) -> None:
    want = Head.TWO_LOGIT if loss is Loss.CROSS_ENTROPY else Head.ONE_LOGIT
    if head is not want:
        raise ValueError(f"loss {loss.value} does not fit a {head.value} head")


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    cls = torch.optim.Adam if cfg.optimizer is Optimizer.ADAM else torch.optim.AdamW
    return cls(params, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)


class EarlyStopping:
    """Monitor validation accuracy; stop after ``patience`` epochs without
    an improvement larger than ``min_delta``. Ties keep the earlier epoch."""

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = -np.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if value > self.best + self.min_delta:
            self.best, self.best_epoch, self.wait = value, epoch, 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    # running accuracy over the epoch's training batches (not written to csv)
    train_acc: float = float("nan")


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.epochs)

    def __getitem__(self, epoch: int) -> EpochRecord:
        # 1-based, matching best_epoch
        return self.epochs[epoch - 1]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc)])


def _batchnorms(model):
    return [m for m in model.modules() if isinstance(m, torch.nn.modules.batchnorm._BatchNorm)]


def recalibrate_batchnorm(model: Detector, inputs: torch.Tensor, batch_size: int = 16) -> None:
    """Replace running BN statistics by cumulative batch averages over ``inputs``."""
    bns = [b for b in _batchnorms(model) if b.track_running_stats]
    if not bns or len(inputs) == 0:
        return
    momenta = [b.momentum for b in bns]
    for b in bns:
        b.reset_running_stats()
        b.momentum = None
    was_training = model.training
    model.train()
    with torch.no_grad():
        for i in range(0, len(inputs), batch_size):
            model(inputs[i : i + batch_size])
    for b, m in zip(bns, momenta):
        b.momentum = m
    model.train(was_training)


def evaluate_split(model: Detector, inputs, labels, cfg: TrainConfig, class_weights=None, batch_size: int = 16):
    """(mean loss, accuracy at P(FAKE) >= 0.5, P(FAKE)) in evaluation mode."""
    model.eval()
    losses, probs = [], []
    with torch.no_grad():
        for i in range(0, len(inputs), batch_size):
            logits = model(inputs[i : i + batch_size])
            y = labels[i : i + batch_size]
            losses.append(compute_loss(cfg.loss, logits, y, class_weights).item() * len(y))
            probs.append(model.fake_probability(logits))
    p = torch.cat(probs)
    acc = ((p >= 0.5).long() == labels).double().mean().item()
    return sum(losses) / len(labels), acc, p


def _recal_subset(inputs: torch.Tensor, n: int, seed: int) -> torch.Tensor:
    if n <= 0:
        return inputs[:0]
    if len(inputs) <= n:
        return inputs
    g = torch.Generator().manual_seed(seed)
    return inputs[torch.randperm(len(inputs), generator=g)[:n].sort().values]


def train(
    model: Detector,
    records: Sequence[ClipRecord],
    splits: SplitAssignment,
    config: TrainConfig,
    store: FeatureStore | None = None,
    run_dir: str | Path | None = None,
) -> tuple[Detector, TrainHistory]:
    """Train on the TRAIN split, select on VAL accuracy, return the best epoch.

    Batches are reshuffled every epoch from a generator seeded by
    ``config.seed``; the last short batch is kept. If ``run_dir`` is given,
    ``history.csv`` and ``best.ckpt`` are written there.
    """
    check_loss_head(config.loss, model.spec.head)
    store = store or FeatureStore()
    train_recs = splits.select(records, Split.TRAIN)
    val_recs = splits.select(records, Split.VAL)
    if not train_recs or not val_recs:
        raise ValueError("TRAIN and VAL splits must be non-empty")
    x_tr, y_tr = store.batch(train_recs, model.spec.input_kind), labels_tensor(train_recs)
    x_va, y_va = store.batch(val_recs, model.spec.input_kind), labels_tensor(val_recs)
    weights = None
    if config.loss is Loss.WEIGHTED_BCE:
        weights = config.class_weights or class_weights_from_labels(y_tr.numpy())

    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    opt = make_optimizer(model.trainable_parameters(), config)
    stopper = EarlyStopping(config.early_stop_patience, config.min_delta)
    history = TrainHistory()
    best_state = copy.deepcopy(model.state_dict())
    recal = _recal_subset(x_tr, config.bn_recalibration_clips, config.seed)

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        perm = torch.randperm(len(x_tr), generator=gen)
        total, correct = 0.0, 0
        for b, start in enumerate(range(0, len(perm), config.batch_size)):
            idx = perm[start : start + config.batch_size]
            logits = model(x_tr[idx])
            loss = compute_loss(config.loss, logits, y_tr[idx], weights)
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch, b, loss.item())
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            with torch.no_grad():
                correct += int(((model.fake_probability(logits) >= 0.5).long() == y_tr[idx]).sum())
        recalibrate_batchnorm(model, recal)
        val_loss, val_acc, _ = evaluate_split(model, x_va, y_va, config, weights)
        history.epochs.append(EpochRecord(epoch, total / len(x_tr), val_loss, val_acc, correct / len(x_tr)))
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", epoch, total / len(x_tr), val_loss, val_acc)
        improved, stop = stopper.update(epoch, val_acc)
        if improved:
            best_state = copy.deepcopy(model.state_dict())
        if stop and epoch < config.max_epochs:
            history.stopped_early = True
            break

    history.best_epoch = stopper.best_epoch
    model.load_state_dict(best_state)
    model.eval()
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        history.write_csv(run_dir / "history.csv")
        save_checkpoint(model, run_dir / "best.ckpt")
    return model, history


def capacity_check(
    model: Detector,
    inputs: torch.Tensor,
    labels: torch.Tensor,
    loss: Loss,
    learning_rate: float = 1e-4,
    batch_size: int = 16,
    max_steps: int = 200,
    target: float = 0.95,
    check_every: int = 5,
    seed: int = 0,
) -> tuple[int | None, float]:
    """Overfit ``inputs`` until training accuracy (evaluation mode, whole set)
    reaches ``target``. Returns (steps used or None, last accuracy)."""
    check_loss_head(loss, model.spec.head)
    cfg = TrainConfig(Optimizer.ADAM, learning_rate, batch_size, 1, loss)
    weights = class_weights_from_labels(labels.numpy()) if loss is Loss.WEIGHTED_BCE else None
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = make_optimizer(model.trainable_parameters(), cfg)
    perm, pos, acc = torch.randperm(len(inputs), generator=gen), 0, 0.0
    for step in range(1, max_steps + 1):
        if pos + batch_size > len(inputs):
            perm, pos = torch.randperm(len(inputs), generator=gen), 0
        idx = perm[pos : pos + batch_size]
        pos += batch_size
        model.train()
        out = compute_loss(loss, model(inputs[idx]), labels[idx], weights)
        opt.zero_grad()
        out.backward()
        opt.step()
        if step % check_every == 0 or step == max_steps:
            recalibrate_batchnorm(model, inputs)
            _, acc, _ = evaluate_split(model, inputs, labels, cfg, weights)
            if acc >= target:
                return step, acc
    return None, acc


def save_config(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_config(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
