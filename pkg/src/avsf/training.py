"""Loss, freeze strategies, oversampling, the training loop and k-fold splits."""

from __future__ import annotations

import copy
import csv
import enum
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch
from torch import nn

from .align import AlignedPair
from .errors import (
    DivergenceDetected,
    EmptyBatch,
    EmptySplit,
    LengthMismatch,
    SingleClassDataset,
    TooFewSubjects,
    UnknownMode,
)
from .manifest import Label, MediaClip
from .models.checkpoint import save_checkpoint

PROB_CLAMP = 1e-7


@dataclass
class ClipExample:
    """One training/eval item: manifest row plus its aligned pair."""

    clip: MediaClip
    pair: AlignedPair

    @property
    def label(self) -> Label:
        return self.clip.label

    @property
    def subject_id(self) -> str:
        return self.clip.subject_id


class FreezeMode(enum.Enum):
    FREEZE_FRONTEND_AND_TRANSFORMER = "freeze_frontend_and_transformer"
    FREEZE_FRONTEND_ONLY = "freeze_frontend_only"
    FULL_FINETUNE = "full_finetune"
    ENSEMBLE_FROZEN_BACKBONES = "ensemble_frozen_backbones"
    ENSEMBLE_JOINT = "ensemble_joint"


@dataclass
class TrainConfig:
    """Optimization settings; defaults follow the reference recipe."""

    learning_rate: float = 1e-5
    max_epochs: int = 30
    batch_size: int = 8
    early_stop_patience: int = 5
    freeze_mode: FreezeMode = FreezeMode.FULL_FINETUNE
    oversample: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.freeze_mode, str):
            try:
                self.freeze_mode = FreezeMode(self.freeze_mode.lower())
            except ValueError:
                raise ValueError(
                    f"freeze_mode: unknown value {self.freeze_mode!r}; "
                    f"choose from {[m.value for m in FreezeMode]}"
                ) from None
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate: must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs: must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size: must be >= 1, got {self.batch_size}")
        if not 0 <= self.early_stop_patience < self.max_epochs:
            raise ValueError(
                f"early_stop_patience: must be in [0, max_epochs), got "
                f"{self.early_stop_patience} with max_epochs {self.max_epochs}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "early_stop_patience": self.early_stop_patience,
            "freeze_mode": self.freeze_mode.value,
            "oversample": self.oversample,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"{sorted(unknown)[0]}: unknown training config field")
        return cls(**data)


def cross_entropy(labels: Sequence[int], fake_probs: Sequence[float]) -> float:
    """Mean binary cross-entropy of fake-class probabilities.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before the logs so
    saturated predictions cannot produce infinities.

    Raises:
        LengthMismatch: label and probability lists differ in length.
        EmptyBatch: zero samples.
    """
    if len(labels) != len(fake_probs):
        raise LengthMismatch(f"{len(labels)} labels vs {len(fake_probs)} probabilities")
    if len(labels) == 0:
        raise EmptyBatch("cross entropy over zero samples")
    y = np.asarray([int(v) for v in labels], dtype=np.float64)
    p = np.clip(np.asarray(fake_probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def cross_entropy_loss(labels: torch.Tensor, fake_probs: torch.Tensor) -> torch.Tensor:
    """Differentiable version of :func:`cross_entropy` on tensors."""
    if labels.shape[0] != fake_probs.shape[0]:
        raise LengthMismatch(f"{labels.shape[0]} labels vs {fake_probs.shape[0]} probabilities")
    if labels.shape[0] == 0:
        raise EmptyBatch("cross entropy over zero samples")
    y = labels.to(fake_probs.dtype)
    p = torch.clamp(fake_probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p)).mean()


@dataclass
class ParamPartition:
    trainable: list[nn.Parameter]
    frozen: list[nn.Parameter]


_SYNC_MODES = {
    FreezeMode.FREEZE_FRONTEND_AND_TRANSFORMER: ("visual_frontend", "audio_frontend", "transformer"),
    FreezeMode.FREEZE_FRONTEND_ONLY: ("visual_frontend", "audio_frontend"),
    FreezeMode.FULL_FINETUNE: (),
}
_ENSEMBLE_MODES = {
    FreezeMode.ENSEMBLE_FROZEN_BACKBONES: ("av_backbone", "face_backbone"),
    FreezeMode.ENSEMBLE_JOINT: (),
}


def apply_freeze(model: nn.Module, mode: FreezeMode) -> ParamPartition:
    """Set ``requires_grad`` per freeze strategy and return the partition.

    The model must expose ``param_groups()``.  Detector-style models
    accept the frontend/transformer modes; ensemble models the ensemble
    modes.  The temporal head and classifiers are never frozen.

    Raises:
        UnknownMode: mode is not a FreezeMode, or does not apply to this
            model's parameter groups.
    """
    if not isinstance(mode, FreezeMode):
        raise UnknownMode(mode)
    groups = model.param_groups()
    if "av_backbone" in groups:
        table = _ENSEMBLE_MODES
    else:
        table = _SYNC_MODES
    if mode not in table:
        raise UnknownMode(f"{mode.value} (not applicable to this model)")
    frozen_names = table[mode]
    frozen: list[nn.Parameter] = []
    trainable: list[nn.Parameter] = []
    for name, params in groups.items():
        bucket = frozen if name in frozen_names else trainable
        bucket.extend(params)
    for p in frozen:
        p.requires_grad_(False)
    for p in trainable:
        p.requires_grad_(True)
    return ParamPartition(trainable=trainable, frozen=frozen)


def oversample_plan(items: Sequence, seed: int) -> list:
    """Epoch sample list with exactly equal class counts.

    Every original item appears at least once; the minority class is
    topped up by sampling uniformly with replacement.  Order is shuffled
    deterministically by ``seed``.  Items only need a ``label``
    attribute.

    Raises:
        SingleClassDataset: all items share one label.
    """
    real = [it for it in items if Label(int(it.label)) is Label.REAL]
    fake = [it for it in items if Label(int(it.label)) is Label.FAKE]
    if not real or not fake:
        raise SingleClassDataset("oversampling needs both real and fake samples")
    rng = random.Random(seed)
    minority, majority = (real, fake) if len(real) < len(fake) else (fake, real)
    extra = [rng.choice(minority) for _ in range(len(majority) - len(minority))]
    plan = list(items) + extra
    rng.shuffle(plan)
    return plan


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_acc: float


@dataclass
class TrainResult:
    history: list[EpochStats]
    best_epoch: int
    best_val_acc: float
    epochs_run: int


def collate_pairs(examples: Sequence) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
    """Batch aligned pairs to their median length with a padding mask.

    Each example carries a ``pair`` (AlignedPair).  Sequences longer
    than the batch median are truncated, shorter ones zero-padded; the
    returned bool mask is True at padded frames (None when all lengths
    already agree).
    """
    lengths = sorted(ex.pair.num_frames for ex in examples)
    target = lengths[(len(lengths) - 1) // 2]
    lips_batch, audio_batch, masks = [], [], []
    any_padding = False
    for ex in examples:
        lips = torch.as_tensor(np.asarray(ex.pair.lips.frames), dtype=torch.float32)
        audio = torch.as_tensor(np.asarray(ex.pair.audio.features), dtype=torch.float32)
        t = audio.shape[0]
        if t >= target:
            lips, audio = lips[:, :target], audio[:target]
            mask = torch.zeros(target, dtype=torch.bool)
        else:
            any_padding = True
            pad = target - t
            lips = torch.cat([lips, torch.zeros(1, pad, *lips.shape[2:])], dim=1)
            audio = torch.cat([audio, torch.zeros(pad, audio.shape[1])], dim=0)
            mask = torch.cat([torch.zeros(t, dtype=torch.bool), torch.ones(pad, dtype=torch.bool)])
        lips_batch.append(lips)
        audio_batch.append(audio)
        masks.append(mask)
    mask_batch = torch.stack(masks) if any_padding else None
    return torch.stack(lips_batch), torch.stack(audio_batch), mask_batch


def detector_forward(model: nn.Module, examples: Sequence) -> torch.Tensor:
    """Default batch-forward for pair-based detectors."""
    lips, audio, mask = collate_pairs(examples)
    return model(lips, audio, mask)


ForwardFn = Callable[[nn.Module, Sequence], torch.Tensor]


def _batches(items: list, size: int) -> list[list]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def _labels_tensor(examples: Sequence) -> torch.Tensor:
    return torch.tensor([int(ex.label) for ex in examples], dtype=torch.long)


@torch.no_grad()
def _accuracy(model: nn.Module, items: Sequence, batch_size: int, forward_fn: ForwardFn) -> float:
    was_training = model.training
    model.eval()
    try:
        correct = 0
        for batch in _batches(list(items), batch_size):
            logits = forward_fn(model, batch)
            pred = logits.argmax(dim=-1)
            correct += int((pred == _labels_tensor(batch)).sum())
        return correct / len(items)
    finally:
        if was_training:
            model.train()


def train(
    model: nn.Module,
    train_items: Sequence,
    val_items: Sequence,
    config: TrainConfig,
    forward_fn: ForwardFn = detector_forward,
) -> TrainResult:
    """Adam training with early stopping on validation accuracy.

    Items need ``label`` attributes and whatever ``forward_fn``
    consumes (the default expects ``pair``).  The best-validation
    weights are restored into ``model`` before returning.

    Raises:
        EmptySplit: empty train or validation set.
        DivergenceDetected: a batch produced a non-finite loss.
    """
    if len(train_items) == 0 or len(val_items) == 0:
        raise EmptySplit(
            f"need non-empty splits, got train={len(train_items)} val={len(val_items)}"
        )
    torch.manual_seed(config.seed)
    partition = apply_freeze(model, config.freeze_mode)
    optimizer = torch.optim.Adam(partition.trainable, lr=config.learning_rate)

    history: list[EpochStats] = []
    best_state: dict | None = None
    best_acc = -math.inf
    best_epoch = 0
    since_improvement = 0

    for epoch in range(1, config.max_epochs + 1):
        if config.oversample:
            plan = oversample_plan(train_items, seed=config.seed + epoch)
        else:
            plan = list(train_items)
            random.Random(config.seed + epoch).shuffle(plan)

        model.train()
        total_loss, total_n = 0.0, 0
        for batch in _batches(plan, config.batch_size):
            optimizer.zero_grad()
            logits = forward_fn(model, batch)
            fake_probs = torch.softmax(logits, dim=-1)[:, int(Label.FAKE)]
            loss = cross_entropy_loss(_labels_tensor(batch), fake_probs)
            if not torch.isfinite(loss):
                raise DivergenceDetected(epoch)
            loss.backward()
            optimizer.step()
            total_loss += loss.detach().item() * len(batch)
            total_n += len(batch)

        val_acc = _accuracy(model, val_items, config.batch_size, forward_fn)
        history.append(EpochStats(epoch=epoch, train_loss=total_loss / total_n, val_acc=val_acc))

        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= config.early_stop_patience > 0:
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(
        history=history,
        best_epoch=best_epoch,
        best_val_acc=best_acc,
        epochs_run=len(history),
    )


@dataclass(frozen=True)
class FoldSplit:
    """One fold of a subject-disjoint k-fold partition."""

    fold: int
    k: int
    assignments: dict[str, int] = field(hash=False)

    @property
    def test_subjects(self) -> frozenset[str]:
        return frozenset(s for s, f in self.assignments.items() if f == self.fold)

    @property
    def train_subjects(self) -> frozenset[str]:
        return frozenset(s for s, f in self.assignments.items() if f != self.fold)


def make_kfold(clips: Sequence, k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Split clips into k subject-disjoint folds of near-equal subject counts.

    Subjects are shuffled by ``seed``; the first ``n % k`` folds get one
    extra subject.  Returns one FoldSplit per fold, sharing a single
    subject-to-fold assignment map.

    Raises:
        TooFewSubjects: fewer distinct subjects than folds.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    subjects = sorted({clip.subject_id for clip in clips})
    if len(subjects) < k:
        raise TooFewSubjects(len(subjects), k)
    rng = random.Random(seed)
    rng.shuffle(subjects)
    n, base, extra = len(subjects), len(subjects) // k, len(subjects) % k
    assignments: dict[str, int] = {}
    cursor = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        for subject in subjects[cursor : cursor + size]:
            assignments[subject] = fold
        cursor += size
    return [FoldSplit(fold=i, k=k, assignments=assignments) for i in range(k)]


def fold_clips(clips: Sequence, split: FoldSplit) -> tuple[list, list]:
    """(train clips, test clips) for one fold by subject membership."""
    train = [c for c in clips if c.subject_id in split.train_subjects]
    test = [c for c in clips if c.subject_id in split.test_subjects]
    return train, test


def carve_validation(items: Sequence, seed: int, fraction: float = 0.1) -> tuple[list, list]:
    """Split items into (train, val) when no explicit val split exists.

    Prefers a subject-disjoint carve: about ``fraction`` of the subjects
    (at least one) become validation.  With fewer than two subjects it
    falls back to a shuffled item-level split.
    """
    items = list(items)
    if len(items) < 2:
        raise EmptySplit("cannot carve a validation set from fewer than 2 items")
    rng = random.Random(seed)
    subjects = sorted({it.subject_id for it in items})
    if len(subjects) >= 2:
        rng.shuffle(subjects)
        n_val = max(1, round(fraction * len(subjects)))
        if n_val >= len(subjects):
            n_val = len(subjects) - 1
        val_subjects = set(subjects[:n_val])
        train = [it for it in items if it.subject_id not in val_subjects]
        val = [it for it in items if it.subject_id in val_subjects]
    else:
        shuffled = items[:]
        rng.shuffle(shuffled)
        n_val = max(1, round(fraction * len(shuffled)))
        val, train = shuffled[:n_val], shuffled[n_val:]
    if not train or not val:
        raise EmptySplit("validation carve produced an empty split")
    return train, val


def save_run(
    run_dir: str | Path,
    train_config: TrainConfig,
    model_config: dict[str, Any],
    result: TrainResult,
    model: nn.Module,
) -> Path:
    """Write a training run directory: config snapshot, history CSV and
    the best checkpoint."""
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = {
        "train": train_config.to_dict(),
        "model": model_config,
        "best_epoch": result.best_epoch,
        "best_val_acc": result.best_val_acc,
        "epochs_run": result.epochs_run,
    }
    (out / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True))
    with (out / "history.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_acc"])
        for row in result.history:
            writer.writerow([row.epoch, f"{row.train_loss:.10g}", f"{row.val_acc:.10g}"])
    save_checkpoint(model, out / "best_checkpoint", config=model_config)
    return out
