"""Evaluation bench: fold aggregation, cross-validation, speed and complexity.

Fold statistics follow the reporting convention of the reference result
tables: the mean is the arithmetic mean of the per-fold percentages, the
standard deviation is the population (divide-by-N) deviation of the
fractional values.  ``check_reported_stats`` recomputes both from printed
fold values so inconsistent published rows can be flagged rather than
silently corrected.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .data import FoldPlan, Sample
from .metrics import tanimoto
from .network import NetworkConfig, build_cfpnet_m, count_parameters, estimate_flops, serialized_size
from .training import TrainConfig, predict, train

__all__ = [
    "CrossValReport",
    "SpeedReport",
    "ComplexityRow",
    "StatsCheck",
    "aggregate_folds",
    "check_reported_stats",
    "cross_validate",
    "benchmark_fps",
    "complexity_report",
]


def aggregate_folds(fold_values: Sequence[float]) -> tuple[float, float]:
    """(mean, std) of per-fold percentages.

    The mean stays in percent; the standard deviation is the population
    deviation (divisor N) of the values rescaled to fractions, matching the
    convention of the reference tables.
    """
    values = list(fold_values)
    if not values:
        raise ValueError("no fold values given")
    mean = float(np.mean(values))
    std = float(np.std(np.asarray(values) / 100.0))
    return mean, std


@dataclass(frozen=True)
class StatsCheck:
    """Recomputed fold statistics compared against reported ones."""

    computed_mean: float
    computed_std: float
    mean_consistent: bool
    std_consistent: bool

    @property
    def consistent(self) -> bool:
        return self.mean_consistent and self.std_consistent


def check_reported_stats(
    fold_values: Sequence[float],
    reported_mean: float,
    reported_std: float,
    mean_tolerance: float = 0.01,
    std_tolerance: float = 0.0001,
) -> StatsCheck:
    """Recompute (mean, std) from fold values and compare with reported numbers."""
    mean, std = aggregate_folds(fold_values)
    return StatsCheck(
        computed_mean=mean,
        computed_std=std,
        mean_consistent=abs(mean - reported_mean) <= mean_tolerance,
        std_consistent=abs(std - reported_std) <= std_tolerance,
    )


@dataclass
class CrossValReport:
    """Per-fold mean Tanimoto (percent), overall mean/std, optional per-group table."""

    k: int
    fold_values: list[float]
    mean: float
    std: float
    per_group: dict[str, float] | None = None


def cross_validate(
    samples: list[Sample],
    fold_plan: FoldPlan,
    net_config: NetworkConfig | None = None,
    train_config: TrainConfig | None = None,
    model_builder: Callable[[NetworkConfig | None, int], nn.Module] | None = None,
) -> CrossValReport:
    """Train on each fold's complement and score mean Tanimoto on the held-out fold.

    Every fold gets a freshly initialized model (seeded from the training seed
    plus the fold index).  A leakage check asserts the training and validation
    id sets are disjoint and exhaustive before each fold runs.  Training
    failures propagate with the fold index attached.
    """
    cfg = train_config or TrainConfig()
    builder = model_builder or (lambda config, seed: build_cfpnet_m(config, seed=seed))
    by_id = {s.sample_id: s for s in samples}
    plan_ids = fold_plan.all_ids
    if plan_ids != set(by_id):
        missing = sorted(plan_ids ^ set(by_id))
        raise ValueError(f"fold plan does not match the sample universe, mismatched ids: {missing[:5]}")

    fold_values: list[float] = []
    group_scores: dict[str, list[float]] = {}
    for fold_index in range(fold_plan.k):
        val_ids = set(fold_plan.validation_ids(fold_index))
        train_ids = set(fold_plan.training_ids(fold_index))
        if val_ids & train_ids or (val_ids | train_ids) != plan_ids:
            raise RuntimeError(f"fold {fold_index}: leakage check failed")
        train_set = [by_id[i] for i in sorted(train_ids)]
        val_set = [by_id[i] for i in sorted(val_ids)]
        model = builder(net_config, cfg.seed + fold_index)
        try:
            train(model, train_set, val_set, cfg)
        except Exception as exc:
            raise RuntimeError(f"fold {fold_index}: training failed: {exc}") from exc
        preds = predict(model, np.stack([s.image for s in val_set]), batch_size=cfg.batch_size)
        scores = [tanimoto(p, s.mask) for p, s in zip(preds, val_set)]
        fold_values.append(100.0 * float(np.mean(scores)))
        for sample, score in zip(val_set, scores):
            if sample.group:
                group_scores.setdefault(sample.group, []).append(100.0 * score)
    mean, std = aggregate_folds(fold_values)
    per_group = {g: float(np.mean(v)) for g, v in sorted(group_scores.items())} or None
    return CrossValReport(k=fold_plan.k, fold_values=fold_values, mean=mean, std=std, per_group=per_group)


@dataclass(frozen=True)
class SpeedReport:
    """Sequential single-image inference throughput."""

    frames: int
    input_size: tuple[int, int]
    total_seconds: float
    mean_fps: float
    latency_ms_p50: float
    latency_ms_p90: float
    latency_ms_p99: float


def benchmark_fps(
    model: nn.Module,
    input_size: tuple[int, int],
    n_frames: int = 500,
    warmup: int = 20,
    in_channels: int = 3,
) -> SpeedReport:
    """Time ``n_frames`` sequential single-image forward passes.

    The timed region contains nothing but the forward calls: the input tensor
    is materialized beforehand and ``warmup`` untimed passes run first.
    ``mean_fps`` is frames divided by the summed timed duration.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be positive")
    was_training = model.training
    model.eval()
    frame = torch.randn(1, in_channels, input_size[0], input_size[1])
    latencies = np.empty(n_frames, dtype=np.float64)
    with torch.no_grad():
        for _ in range(warmup):
            model(frame)
        for i in range(n_frames):
            start = time.perf_counter()
            model(frame)
            latencies[i] = time.perf_counter() - start
    model.train(was_training)
    total = float(latencies.sum())
    return SpeedReport(
        frames=n_frames,
        input_size=tuple(input_size),
        total_seconds=total,
        mean_fps=n_frames / total,
        latency_ms_p50=float(np.percentile(latencies, 50) * 1e3),
        latency_ms_p90=float(np.percentile(latencies, 90) * 1e3),
        latency_ms_p99=float(np.percentile(latencies, 99) * 1e3),
    )


@dataclass(frozen=True)
class ComplexityRow:
    """One comparison-table row: parameters, serialized size, speed, MACs."""

    name: str
    parameters: int
    serialized_bytes: int
    fps: float
    flops: int


def complexity_report(
    models: Sequence[tuple[str, nn.Module]],
    input_size: tuple[int, int],
    n_frames: int = 50,
    warmup: int = 10,
    in_channels: int = 3,
) -> list[ComplexityRow]:
    """Comparison table across models at one input size."""
    rows = []
    for name, model in models:
        speed = benchmark_fps(model, input_size, n_frames=n_frames, warmup=warmup, in_channels=in_channels)
        rows.append(
            ComplexityRow(
                name=name,
                parameters=count_parameters(model),
                serialized_bytes=serialized_size(model),
                fps=speed.mean_fps,
                flops=estimate_flops(model, input_size, in_channels),
            )
        )
    return rows
