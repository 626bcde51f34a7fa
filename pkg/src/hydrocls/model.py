"""Transfer-learning binary classifier: frozen backbone, trainable head.

The head follows the paperless recipe every module here shares: pooled
backbone features pass through dropout-guarded fully connected layers to two
logits. Training touches head parameters only, drives the learning rate with
a one-cycle schedule, stops early on the validation loss, and returns the
parameters from the best validation epoch.
"""

from __future__ import annotations

import hashlib
import math
from copy import deepcopy
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbones import FeatureBackbone, create_backbone
from .errors import (
    ConfigurationError,
    NumericError,
    ShapeMismatchError,
    SpecValidationError,
    TrainingError,
)
from .imops import load_grayscale
from .ingest import LABEL_HYDROCEPHALUS, LABEL_NORMAL, ImageRecord
from .preprocess import AugmentPolicy, NormalizationStats, augment, evaluation_pipeline, normalize
from .seeding import derive_seed, rng_for

# Probability column order everywhere: (p_normal, p_hydrocephalus).
CLASS_ORDER = (LABEL_NORMAL, LABEL_HYDROCEPHALUS)

CHECKPOINT_VERSION = 1

_EVAL_CHUNK = 64


def class_index(label: str) -> int:
    try:
        return CLASS_ORDER.index(label)
    except ValueError:
        raise SpecValidationError(f"unknown label {label!r}") from None


@dataclass(frozen=True)
class HeadConfig:
    """Classifier head layout; two output classes by construction."""

    hidden_sizes: tuple[int, ...] = (512,)
    dropout_last: float = 0.5
    dropout_hidden: float = 0.25
    n_classes: int = 2

    def validate(self) -> None:
        if self.n_classes != 2:
            raise SpecValidationError("this classifier is binary; n_classes must be 2")
        for name in ("dropout_last", "dropout_hidden"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise SpecValidationError(f"{name} must lie in [0, 1), got {p}")
        if any(w < 1 for w in self.hidden_sizes):
            raise SpecValidationError(f"hidden widths must be >= 1: {self.hidden_sizes}")


@dataclass(frozen=True)
class OneCycleConfig:
    """Learning-rate cycle: cosine rise to lr_max, cosine anneal to the floor."""

    lr_max: float = 0.001
    pct_start: float = 0.3
    div_start: float = 25.0
    div_final: float = 1e4

    def validate(self) -> None:
        if self.lr_max <= 0:
            raise SpecValidationError("lr_max must be positive")
        if not 0.0 < self.pct_start < 1.0:
            raise SpecValidationError("pct_start must lie in (0, 1)")
        if self.div_start <= 1 or self.div_final <= 1:
            raise SpecValidationError("div_start and div_final must exceed 1")


@dataclass(frozen=True)
class TrainConfig:
    """Head-training settings. ``learning_rate`` is the cycle peak unless an
    explicit OneCycleConfig overrides it."""

    learning_rate: float = 0.001
    epochs_max: int = 20
    batch_size: int = 16
    one_cycle: OneCycleConfig | None = None
    patience: int = 3
    seed: int = 0
    backbone_id: str = "tiny_cnn"

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise SpecValidationError("learning_rate must be positive")
        if self.epochs_max < 1:
            raise SpecValidationError("epochs_max must be >= 1")
        if self.patience < 1:
            raise SpecValidationError("patience must be >= 1")
        if self.batch_size < 1:
            raise SpecValidationError("batch_size must be >= 1")
        if self.one_cycle is not None:
            self.one_cycle.validate()

    def effective_cycle(self) -> OneCycleConfig:
        if self.one_cycle is not None:
            return self.one_cycle
        return OneCycleConfig(lr_max=self.learning_rate)


def one_cycle_lr(step: int, total_steps: int, cfg: OneCycleConfig) -> float:
    """Learning rate at an optimizer step of the one-cycle schedule.

    Rises from ``lr_max/div_start`` to ``lr_max`` over the first
    ``pct_start`` of the run along a cosine, peaks exactly at the rounded
    peak step, then anneals along a cosine to ``lr_max/div_final`` at the
    final step.
    """
    cfg.validate()
    if total_steps < 2:
        raise SpecValidationError("total_steps must be >= 2")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} out of range [0, {total_steps})")
    peak = int(round(cfg.pct_start * total_steps))
    peak = max(1, min(peak, total_steps - 1))
    start = cfg.lr_max / cfg.div_start
    final = cfg.lr_max / cfg.div_final
    if step <= peak:
        x = step / peak
        return start + (cfg.lr_max - start) * (1.0 - math.cos(math.pi * x)) / 2.0
    span = total_steps - 1 - peak
    if span <= 0:
        return cfg.lr_max
    x = (step - peak) / span
    return final + (cfg.lr_max - final) * (1.0 + math.cos(math.pi * x)) / 2.0


class EarlyStopper:
    """Track the best validation loss; signal a stop once the run has gone
    more than ``patience`` epochs past the best epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = -1

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
        return epoch - self.best_epoch > self.patience


class HydroClassifier(nn.Module):
    """Backbone feature extractor plus dropout-guarded linear head."""

    def __init__(self, backbone: FeatureBackbone, backbone_id: str, head: HeadConfig, seed: int):
        super().__init__()
        head.validate()
        self.backbone = backbone
        self.backbone_id = backbone_id
        self.head_config = head
        self._backbone_frozen = False

        layers: list[nn.Module] = []
        in_dim = backbone.feature_dim
        for width in head.hidden_sizes:
            layers += [nn.Dropout(head.dropout_hidden), nn.Linear(in_dim, width), nn.ReLU()]
            in_dim = width
        layers += [nn.Dropout(head.dropout_last), nn.Linear(in_dim, head.n_classes)]
        self.head = nn.Sequential(*layers)
        self._init_head(seed)

    def _init_head(self, seed: int) -> None:
        # Uniform fan-in scaling, zero biases; explicit generator keeps the
        # init independent of global RNG state.
        gen = torch.Generator().manual_seed(derive_seed(seed, 0xBEAD))
        with torch.no_grad():
            for module in self.head:
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.in_features)
                    module.weight.uniform_(-bound, bound, generator=gen)
                    module.bias.zero_()

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def head_forward(self, feats: torch.Tensor) -> torch.Tensor:
        pooled = feats.mean(dim=(2, 3))
        return self.head(pooled)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head_forward(self.forward_features(x))

    def train(self, mode: bool = True):
        super().train(mode)
        if self._backbone_frozen:
            self.backbone.eval()
        return self


def build_classifier(backbone_id: str, head: HeadConfig = HeadConfig(), seed: int = 0) -> HydroClassifier:
    """Assemble an untrained classifier; head init is deterministic in seed."""
    return HydroClassifier(create_backbone(backbone_id), backbone_id, head, seed)


def freeze_backbone(model: HydroClassifier) -> None:
    """Exclude backbone parameters from optimization and statistics updates.

    Idempotent; the backbone stays in eval mode even while the head trains.
    """
    for param in model.backbone.parameters():
        param.requires_grad_(False)
    model._backbone_frozen = True
    model.backbone.eval()


def _module_checksum(module: nn.Module) -> str:
    digest = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        tensor = state[name]
        digest.update(name.encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def backbone_checksum(model: HydroClassifier) -> str:
    return _module_checksum(model.backbone)


def head_checksum(model: HydroClassifier) -> str:
    return _module_checksum(model.head)


@dataclass
class TrainedModel:
    """A trained classifier plus everything needed to use it consistently."""

    classifier: HydroClassifier
    backbone_id: str
    head_config: HeadConfig
    stats: NormalizationStats
    input_side: int
    history: list[dict] = field(default_factory=list)
    best_val_loss: float = math.inf
    best_epoch: int = -1
    epochs_run: int = 0


def _labels_tensor(records: list[ImageRecord]) -> torch.Tensor:
    return torch.tensor([class_index(r.label) for r in records], dtype=torch.long)


def _eval_loss(model: HydroClassifier, x: torch.Tensor, y: torch.Tensor) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(x), _EVAL_CHUNK):
            chunk = x[i : i + _EVAL_CHUNK]
            logits = model(chunk)
            total += F.cross_entropy(logits, y[i : i + _EVAL_CHUNK], reduction="sum").item()
    return total / len(x)


def train_head(
    model: HydroClassifier,
    train_records: list[ImageRecord],
    val_records: list[ImageRecord],
    cfg: TrainConfig,
    augment_policy: AugmentPolicy = AugmentPolicy(),
    stats: NormalizationStats = NormalizationStats(),
) -> TrainedModel:
    """Train the head only; early-stop on validation loss and keep the best.

    The run is a pure function of (records, configs, seed): batch order,
    augmentation draws, and dropout all derive from ``cfg.seed``. The
    backbone checksum is verified unchanged across the run.
    """
    cfg.validate()
    augment_policy.validate()
    if not train_records or not val_records:
        raise TrainingError("train and validation record sets must be non-empty")
    train_labels = {r.label for r in train_records}
    if len(train_labels) < 2:
        raise TrainingError(f"training set contains a single class: {train_labels}")

    torch.set_num_threads(1)
    train_images = [load_grayscale(r.path) for r in train_records]
    y_train = _labels_tensor(train_records)
    side = augment_policy.output_side
    val_grids = np.stack(
        [evaluation_pipeline(load_grayscale(r.path), side, stats) for r in val_records]
    )
    x_val = torch.from_numpy(val_grids.astype(np.float32))
    y_val = _labels_tensor(val_records)

    checksum_before = backbone_checksum(model)
    torch.manual_seed(derive_seed(cfg.seed, 0xD0))  # dropout stream
    head_params = [p for p in model.head.parameters() if p.requires_grad]
    cycle = cfg.effective_cycle()
    optimizer = torch.optim.Adam(head_params, lr=cycle.lr_max / cycle.div_start)
    n = len(train_records)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = max(2, cfg.epochs_max * steps_per_epoch)

    stopper = EarlyStopper(cfg.patience)
    history: list[dict] = []
    best_state = None
    step = 0
    for epoch in range(cfg.epochs_max):
        model.train()
        order = rng_for(cfg.seed, 0x5F, epoch).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idxs = order[start : start + cfg.batch_size]
            batch = np.stack(
                [
                    normalize(
                        augment(
                            train_images[i],
                            augment_policy,
                            derive_seed(cfg.seed, 0xA6, epoch, int(i)),
                        ),
                        stats,
                    )
                    for i in idxs
                ]
            )
            x = torch.from_numpy(batch.astype(np.float32))
            y = y_train[idxs]
            lr = one_cycle_lr(min(step, total_steps - 1), total_steps, cycle)
            for group in optimizer.param_groups:
                group["lr"] = lr
            logits = model(x)
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
            epoch_loss += loss.item() * len(idxs)

        val_loss = _eval_loss(model, x_val, y_val)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append(
            {"epoch": epoch, "train_loss": epoch_loss / n, "val_loss": val_loss, "lr": lr}
        )
        improved = val_loss < stopper.best_loss
        should_stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = deepcopy(model.head.state_dict())
        if should_stop:
            break

    if best_state is not None:
        model.head.load_state_dict(best_state)
    model.eval()

    if backbone_checksum(model) != checksum_before:
        raise TrainingError("backbone parameters changed during a frozen-backbone run")

    return TrainedModel(
        classifier=model,
        backbone_id=model.backbone_id,
        head_config=model.head_config,
        stats=stats,
        input_side=side,
        history=history,
        best_val_loss=stopper.best_loss,
        best_epoch=stopper.best_epoch,
        epochs_run=len(history),
    )


def predict_proba(trained: TrainedModel, grids: np.ndarray) -> np.ndarray:
    """Class probabilities for evaluation-path grids.

    ``grids`` is (N, 3, S, S) or a single (3, S, S); rows come back as
    (p_normal, p_hydrocephalus) summing to 1. Dropout is inactive and the
    call is deterministic.
    """
    arr = np.asarray(grids, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 3 or arr.shape[2:] != (trained.input_side,) * 2:
        raise ShapeMismatchError(
            f"expected (N, 3, {trained.input_side}, {trained.input_side}) grids, got {arr.shape}"
        )
    model = trained.classifier
    model.eval()
    outputs = []
    with torch.no_grad():
        for i in range(0, len(arr), _EVAL_CHUNK):
            logits = model(torch.from_numpy(arr[i : i + _EVAL_CHUNK]))
            outputs.append(torch.softmax(logits, dim=1).double().numpy())
    return np.concatenate(outputs, axis=0)


def predict_records(trained: TrainedModel, records: list[ImageRecord]) -> np.ndarray:
    """Evaluation-path preprocessing plus prediction for manifest records."""
    grids = np.stack(
        [
            evaluation_pipeline(load_grayscale(r.path), trained.input_side, trained.stats)
            for r in records
        ]
    )
    return predict_proba(trained, grids)


def save_checkpoint(trained: TrainedModel, path) -> None:
    """Single-archive checkpoint: head parameters plus reconstruction info."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "backbone_id": trained.backbone_id,
        "head_config": asdict(trained.head_config),
        "stats_mean": tuple(trained.stats.mean),
        "stats_std": tuple(trained.stats.std),
        "input_side": trained.input_side,
        "history": trained.history,
        "best_val_loss": trained.best_val_loss,
        "best_epoch": trained.best_epoch,
        "epochs_run": trained.epochs_run,
        "head_state": trained.classifier.head.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> TrainedModel:
    """Rebuild a trained model from :func:`save_checkpoint` output."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ConfigurationError(f"could not read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format_version {version!r}")
    head_cfg_dict = dict(payload["head_config"])
    head_cfg_dict["hidden_sizes"] = tuple(head_cfg_dict["hidden_sizes"])
    head_cfg = HeadConfig(**head_cfg_dict)
    model = build_classifier(payload["backbone_id"], head_cfg, seed=0)
    model.head.load_state_dict(payload["head_state"])
    freeze_backbone(model)
    model.eval()
    stats = NormalizationStats(tuple(payload["stats_mean"]), tuple(payload["stats_std"]))
    return TrainedModel(
        classifier=model,
        backbone_id=payload["backbone_id"],
        head_config=head_cfg,
        stats=stats,
        input_side=int(payload["input_side"]),
        history=list(payload["history"]),
        best_val_loss=float(payload["best_val_loss"]),
        best_epoch=int(payload["best_epoch"]),
        epochs_run=int(payload["epochs_run"]),
    )
