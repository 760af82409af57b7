"""Training protocol: Adam on binary cross-entropy, with checkpointing.

Datasets here are desk-scale (lists of in-memory samples), so the loop keeps
everything in a pair of tensors and shuffles indices per epoch.  The epoch
log records training loss and validation Tanimoto; the best-validation
weights are restored into the model when training finishes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import Sample
from .metrics import tanimoto

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainResult",
    "bce_loss",
    "samples_to_tensors",
    "train",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "write_training_log",
]

_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; the defaults are the reference protocol values."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 150
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_tanimoto: float


@dataclass
class TrainResult:
    log: list[EpochRecord]
    best_epoch: int
    best_val_tanimoto: float
    best_state: dict


def bce_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy with predictions clipped to [eps, 1 - eps]."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    p = pred.clamp(_EPS, 1.0 - _EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def samples_to_tensors(samples: list[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack samples into (N, 3, H, W) inputs and (N, 1, H, W) float targets."""
    if not samples:
        raise ValueError("no samples given")
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask for s in samples])
    x = torch.from_numpy(images).permute(0, 3, 1, 2).contiguous().float()
    y = torch.from_numpy(masks).unsqueeze(1).float()
    return x, y


def _mean_tanimoto(model: nn.Module, samples: list[Sample], batch_size: int) -> float:
    preds = predict(model, np.stack([s.image for s in samples]), batch_size=batch_size)
    return float(np.mean([tanimoto(p, s.mask) for p, s in zip(preds, samples)]))


def _clone_state(model: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train(
    model: nn.Module,
    train_samples: list[Sample],
    val_samples: list[Sample] | None,
    config: TrainConfig | None = None,
) -> TrainResult:
    """Run Adam/BCE optimization and return the per-epoch log.

    Validation Tanimoto is computed on the raw sigmoid output against the
    binary mask after each epoch; the model is left holding the weights of
    the best-validation epoch (the final epoch when there is no validation
    set).  Raises on a non-finite loss with the offending epoch and batch.
    """
    cfg = config or TrainConfig()
    if not train_samples:
        raise ValueError("training set is empty")
    val_samples = val_samples or []
    torch.manual_seed(cfg.seed)
    shuffler = np.random.default_rng(cfg.seed)
    x, y = samples_to_tensors(train_samples)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))

    log: list[EpochRecord] = []
    best_epoch, best_score = 0, -math.inf
    best_state = _clone_state(model)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = shuffler.permutation(len(train_samples))
        total_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size].copy())
            optimizer.zero_grad()
            loss = bce_loss(model(x[idx]), y[idx])
            value = float(loss.detach())
            if not math.isfinite(value):
                raise RuntimeError(f"non-finite loss {value} at epoch {epoch}, batch {start // cfg.batch_size}")
            loss.backward()
            optimizer.step()
            total_loss += value * len(idx)
        train_loss = total_loss / len(train_samples)
        val_score = _mean_tanimoto(model, val_samples, cfg.batch_size) if val_samples else float("nan")
        log.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_tanimoto=val_score))
        score = val_score if val_samples else -train_loss
        if score >= best_score:
            best_epoch, best_score = epoch, score
            best_state = _clone_state(model)
    if log:
        model.load_state_dict(best_state)
    best_val = log[best_epoch - 1].val_tanimoto if log else float("nan")
    return TrainResult(log=log, best_epoch=best_epoch, best_val_tanimoto=best_val, best_state=best_state)


def predict(model: nn.Module, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Sigmoid maps for a batch of (N, H, W, 3) images, returned as (N, H, W) in [0, 1].

    No thresholding is applied; evaluation compares the gray output directly
    against the binary ground truth.
    """
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) images, got {arr.shape}")
    x = torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()
    was_training = model.training
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            outputs.append(model(x[start : start + batch_size])[:, 0].numpy())
    model.train(was_training)
    return np.concatenate(outputs, axis=0)


def save_checkpoint(model: nn.Module, path: str | Path) -> None:
    torch.save(model.state_dict(), Path(path))


def load_checkpoint(model: nn.Module, path: str | Path) -> None:
    model.load_state_dict(torch.load(Path(path), weights_only=True))


def write_training_log(log: list[EpochRecord], path: str | Path) -> None:
    """Training log as CSV with columns epoch, train_loss, val_tanimoto."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_tanimoto"])
        for record in log:
            writer.writerow([record.epoch, f"{record.train_loss:.6f}", f"{record.val_tanimoto:.6f}"])
