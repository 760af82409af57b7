"""Feature-pyramid building blocks.

Two composable, shape-preserving units:

* ``FpChannel``: three stacked 3x3 dilated convolutions whose intermediate
  outputs are concatenated, so one channel emulates 3x3/5x5/7x7 kernels.
* ``CfpModule``: four parallel FP channels with graded dilation rates,
  wrapped by 1x1 reduction/projection convolutions, hierarchical feature
  fusion and a residual connection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

__all__ = [
    "FpChannelConfig",
    "CfpModuleConfig",
    "FpChannel",
    "CfpModule",
    "effective_kernel_size",
    "allocate_fp_filters",
    "assign_channel_dilations",
    "build_fp_channel",
    "build_cfp_module",
    "hff_combine",
]

NORMALIZATIONS = ("batch", "none")


def effective_kernel_size(kernel_size: int, dilation: int) -> int:
    """Spatial extent of a dilated kernel: ``dilation * (kernel_size - 1) + 1``.

    Dilation inserts gaps between kernel taps, so the extent grows while the
    parameter count stays that of the undilated kernel.
    """
    if kernel_size <= 0 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be an odd positive integer, got {kernel_size}")
    if dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    return dilation * (kernel_size - 1) + 1


def allocate_fp_filters(channels: int) -> tuple[int, int, int]:
    """Split a channel budget over the three stacked operators as (1/4, 1/4, 1/2).

    The concatenation of the three operator outputs then matches the input
    width exactly.  There is no defined split for budgets not divisible by 4.
    """
    if channels <= 0 or channels % 4 != 0:
        raise ValueError(f"channel budget must be a positive multiple of 4, got {channels}")
    quarter = channels // 4
    return quarter, quarter, channels - 2 * quarter


def assign_channel_dilations(max_dilation: int, channel_count: int = 4) -> list[int]:
    """Dilation rates for the parallel branches: ``[1, r/4, r/2, r]``, floored to 1.

    The rule is defined only for four branches: the first branch keeps local
    detail at rate 1, the last uses the full ``max_dilation``, and the middle
    two cover intermediate scales.
    """
    if channel_count != 4:
        raise ValueError(f"dilation assignment is defined only for 4 branches, got {channel_count}")
    if max_dilation < 1:
        raise ValueError(f"max_dilation must be a positive integer, got {max_dilation}")
    r = max_dilation
    return [1, max(1, r // 4), max(1, r // 2), r]


def _norm_layer(channels: int, kind: str) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "none":
        return nn.Identity()
    raise ValueError(f"unknown normalization {kind!r}, expected one of {NORMALIZATIONS}")


def conv_unit(
    in_channels: int,
    out_channels: int,
    kernel_size: int,
    stride: int = 1,
    dilation: int = 1,
    normalization: str = "batch",
) -> nn.Sequential:
    """Convolution followed by optional batch norm and ReLU, spatial size preserved.

    Padding is ``dilation * (kernel_size - 1) / 2`` per side so dilated kernels
    keep the output grid aligned with the input (for stride 1).
    """
    padding = dilation * (kernel_size - 1) // 2
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride, padding=padding, dilation=dilation),
        _norm_layer(out_channels, normalization),
        nn.ReLU(),
    )


@dataclass(frozen=True)
class FpChannelConfig:
    """One feature-pyramid channel: width, shared dilation rate, normalization."""

    in_channels: int
    dilation: int = 1
    normalization: str = "batch"

    def __post_init__(self) -> None:
        allocate_fp_filters(self.in_channels)
        if self.dilation < 1:
            raise ValueError(f"dilation must be a positive integer, got {self.dilation}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def filter_split(self) -> tuple[int, int, int]:
        return allocate_fp_filters(self.in_channels)


class FpChannel(nn.Module):
    """Three stacked 3x3 convolutions sharing one dilation rate.

    The outputs of all three operators are concatenated, so the block emits
    exactly ``in_channels`` channels while mixing receptive extents of
    3, 5 and 7 taps (scaled by the dilation rate).
    """

    def __init__(self, config: FpChannelConfig):
        super().__init__()
        self.config = config
        w1, w2, w3 = config.filter_split
        r = config.dilation
        self.conv1 = conv_unit(config.in_channels, w1, 3, dilation=r, normalization=config.normalization)
        self.conv2 = conv_unit(w1, w2, 3, dilation=r, normalization=config.normalization)
        self.conv3 = conv_unit(w2, w3, 3, dilation=r, normalization=config.normalization)

    def forward(self, x):
        a = self.conv1(x)
        b = self.conv2(a)
        c = self.conv3(b)
        return torch.cat([a, b, c], dim=1)


def build_fp_channel(config: FpChannelConfig) -> FpChannel:
    return FpChannel(config)


def hff_combine(branch_outputs: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Hierarchical feature fusion: running sums over the ordered branches.

    ``output[i] = sum(branches[: i + 1])``, accumulated left to right so the
    last output is bit-identical to a plain left-fold sum of all branches.
    Fusing the graded-dilation branches this way suppresses the gridding
    artifacts naive concatenation of dilated outputs produces.
    """
    branches = list(branch_outputs)
    if not branches:
        raise ValueError("hff_combine needs at least one branch")
    shape = branches[0].shape
    for i, b in enumerate(branches[1:], start=1):
        if b.shape != shape:
            raise ValueError(f"branch {i} has shape {tuple(b.shape)}, expected {tuple(shape)}")
    fused = [branches[0]]
    for b in branches[1:]:
        fused.append(fused[-1] + b)
    return fused


@dataclass(frozen=True)
class CfpModuleConfig:
    """Channel-wise feature-pyramid module configuration.

    ``in_channels`` must be divisible by ``4 * channel_count`` so the per-branch
    reduction and the (1/4, 1/4, 1/2) operator split both stay integral.
    ``out_channels`` defaults to ``in_channels``; a larger value turns the module
    into a stage-entry expansion (the residual path then gains a 1x1 projection).
    """

    in_channels: int
    max_dilation: int
    out_channels: int | None = None
    channel_count: int = 4
    normalization: str = "batch"
    residual: bool = True

    def __post_init__(self) -> None:
        if self.in_channels <= 0 or self.in_channels % (4 * self.channel_count) != 0:
            raise ValueError(
                f"in_channels must be a positive multiple of 4 * channel_count "
                f"({4 * self.channel_count}), got {self.in_channels}"
            )
        assign_channel_dilations(self.max_dilation, self.channel_count)
        if self.out_channels is not None and self.out_channels <= 0:
            raise ValueError(f"out_channels must be positive, got {self.out_channels}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def out_width(self) -> int:
        return self.in_channels if self.out_channels is None else self.out_channels

    @property
    def per_channel_width(self) -> int:
        return self.in_channels // self.channel_count

    @property
    def dilation_rates(self) -> list[int]:
        return assign_channel_dilations(self.max_dilation, self.channel_count)


class CfpModule(nn.Module):
    """Parallel FP channels around a 1x1 reduce / 1x1 project bottleneck.

    Pipeline: 1x1 reduction to per-channel width, the parallel FP channels with
    graded dilation rates, hierarchical feature fusion, concatenation back to
    the input width, 1x1 projection (+ norm), residual add, ReLU.  Spatial
    dimensions are preserved throughout.
    """

    def __init__(self, config: CfpModuleConfig):
        super().__init__()
        self.config = config
        width = config.per_channel_width
        self.reduce = conv_unit(config.in_channels, width, 1, normalization=config.normalization)
        self.channels = nn.ModuleList(
            FpChannel(FpChannelConfig(width, rate, config.normalization))
            for rate in config.dilation_rates
        )
        self.project = nn.Conv2d(config.in_channels, config.out_width, 1)
        self.project_norm = _norm_layer(config.out_width, config.normalization)
        if config.residual and config.out_width != config.in_channels:
            self.shortcut: nn.Module | None = nn.Conv2d(config.in_channels, config.out_width, 1)
        else:
            self.shortcut = None
        self.act = nn.ReLU()

    def forward(self, x):
        reduced = self.reduce(x)
        fused = hff_combine([channel(reduced) for channel in self.channels])
        merged = torch.cat(fused, dim=1)
        out = self.project_norm(self.project(merged))
        if self.config.residual:
            out = out + (x if self.shortcut is None else self.shortcut(x))
        return self.act(out)


def build_cfp_module(config: CfpModuleConfig) -> CfpModule:
    return CfpModule(config)
