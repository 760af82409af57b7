"""Network assembly and complexity accounting.

Builds the light-weight encoder-decoder segmentation model from the
channel-wise feature-pyramid modules, a classic U-Net used as a
parameter-count baseline, and the profiling helpers (parameters, MAC
counts, receptive field, serialized size).
"""
from __future__ import annotations

import itertools
import os
import tempfile
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import torch
from torch import nn

from .blocks import CfpModule, CfpModuleConfig, FpChannelConfig, conv_unit, _norm_layer

__all__ = [
    "NetworkConfig",
    "LayerInfo",
    "ComplexityReport",
    "CfpNetM",
    "UNetBaseline",
    "build_cfpnet_m",
    "build_unet_baseline",
    "layer_audit",
    "count_parameters",
    "parameter_breakdown",
    "estimate_flops",
    "flops_breakdown",
    "LayerGeom",
    "receptive_field_of_sequence",
    "receptive_field",
    "serialized_size",
    "complexity_summary",
    "parameter_budget_sweep",
]

SKIP_MODES = ("add", "concat")
INJECTION_MODES = ("concat", "off")
DECONV_KERNELS = (2, 3, 4)
# kernel -> (padding, output_padding) giving an exact 2x upsample at stride 2
_DECONV_GEOMETRY = {2: (0, 0), 3: (1, 1), 4: (1, 0)}


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture switches; the defaults realize the 17-layer reference layout.

    Encoder: a stride-2 3x3 conv plus two 3x3 convs (stage 1), then two CFP
    clusters separated by 2x2 average poolings.  Stage 2 repeats the module
    ``stage2_repeats`` times at ``stage_widths[1]``, stage 3
    ``stage3_repeats`` times at ``stage_widths[2]``, with the listed maximum
    dilation rates.  Decoder: three stride-2 deconvolutions combined with the
    same-stage encoder outputs, then a sigmoid-activated 1x1 conv to a single
    channel.

    ``deconv_kernel``, ``skip_mode``, ``normalization`` and
    ``input_injection`` are the switches the reference material leaves open;
    the defaults are the combination whose learnable-parameter count lands
    closest to the published 654,279 budget while remaining trainable (see
    ``parameter_budget_sweep``).
    """

    in_channels: int = 3
    input_size: tuple[int, int] = (192, 256)  # (height, width), divisible by 8
    stage_widths: tuple[int, int, int] = (32, 64, 128)
    stage2_repeats: int = 2
    stage3_repeats: int = 6
    stage2_dilations: tuple[int, ...] = (2, 2)
    stage3_dilations: tuple[int, ...] = (4, 4, 8, 8, 16, 16)
    channel_count: int = 4
    skip_mode: str = "add"
    deconv_kernel: int = 4
    input_injection: str = "off"
    normalization: str = "batch"

    def __post_init__(self) -> None:
        if self.in_channels < 1:
            raise ValueError("in_channels must be positive")
        if len(self.stage2_dilations) != self.stage2_repeats:
            raise ValueError(
                f"stage2_dilations has {len(self.stage2_dilations)} entries for {self.stage2_repeats} repeats"
            )
        if len(self.stage3_dilations) != self.stage3_repeats:
            raise ValueError(
                f"stage3_dilations has {len(self.stage3_dilations)} entries for {self.stage3_repeats} repeats"
            )
        if self.skip_mode not in SKIP_MODES:
            raise ValueError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        if self.deconv_kernel not in DECONV_KERNELS:
            raise ValueError(f"deconv_kernel must be one of {DECONV_KERNELS}, got {self.deconv_kernel}")
        if self.input_injection not in INJECTION_MODES:
            raise ValueError(f"input_injection must be one of {INJECTION_MODES}, got {self.input_injection!r}")
        group = 4 * self.channel_count
        for width in self.stage_widths:
            if width <= 0:
                raise ValueError("stage widths must be positive")
        for m in (self.stage_widths[0], self.stage_widths[1], self.stage_widths[2]):
            if m % group:
                raise ValueError(f"stage width {m} is not divisible by 4 * channel_count ({group})")


@dataclass(frozen=True)
class LayerInfo:
    """One row of the architecture audit: layer index, kind, mode, output width."""

    index: int
    kind: str
    mode: str
    out_channels: int | None


@dataclass(frozen=True)
class ComplexityReport:
    """Per-model complexity summary under the conventions of this package."""

    parameter_count: int
    flops: int
    receptive_field_per_stage: dict[str, int]
    serialized_size: int
    input_size: tuple[int, int]


def _deconv_unit(in_channels: int, out_channels: int, kernel: int, normalization: str) -> nn.Sequential:
    padding, output_padding = _DECONV_GEOMETRY[kernel]
    return nn.Sequential(
        nn.ConvTranspose2d(in_channels, out_channels, kernel, stride=2, padding=padding, output_padding=output_padding),
        _norm_layer(out_channels, normalization),
        nn.ReLU(),
    )


class CfpNetM(nn.Module):
    """Encoder-decoder segmentation network built from CFP modules.

    Fully convolutional: accepts any input whose spatial dimensions are
    divisible by 8 (three exact 2x downsamplings) and emits a single-channel
    sigmoid map of the same spatial size.
    """

    def __init__(self, config: NetworkConfig | None = None):
        super().__init__()
        cfg = config or NetworkConfig()
        self.config = cfg
        w1, w2, w3 = cfg.stage_widths
        norm = cfg.normalization

        self.init_block = nn.Sequential(
            conv_unit(cfg.in_channels, w1, 3, stride=2, normalization=norm),
            conv_unit(w1, w1, 3, normalization=norm),
            conv_unit(w1, w1, 3, normalization=norm),
        )
        self.pool1 = nn.AvgPool2d(2)
        self.stage2 = nn.Sequential(*self._make_stage(w1, w2, cfg.stage2_dilations, cfg))
        self.pool2 = nn.AvgPool2d(2)
        self.stage3 = nn.Sequential(*self._make_stage(w2, w3, cfg.stage3_dilations, cfg))

        if cfg.input_injection == "concat":
            self.inject_pool: nn.Module | None = nn.AvgPool2d(8)
            self.inject_conv: nn.Module | None = conv_unit(w3 + cfg.in_channels, w3, 1, normalization=norm)
        else:
            self.inject_pool = None
            self.inject_conv = None

        self.up1 = _deconv_unit(w3, w3, cfg.deconv_kernel, norm)
        self.up2 = _deconv_unit(w3, w2, cfg.deconv_kernel, norm)
        self.up3 = _deconv_unit(w2, w1, cfg.deconv_kernel, norm)
        if cfg.skip_mode == "add":
            self.skip2 = nn.Conv2d(w2, w3, 1) if w2 != w3 else nn.Identity()
            self.skip1 = nn.Conv2d(w1, w2, 1) if w1 != w2 else nn.Identity()
        else:
            self.skip2 = nn.Conv2d(w3 + w2, w3, 1)
            self.skip1 = nn.Conv2d(w2 + w1, w2, 1)
        self.classifier = nn.Conv2d(w1, 1, 1)

    @staticmethod
    def _make_stage(in_width: int, width: int, dilations: Sequence[int], cfg: NetworkConfig) -> list[CfpModule]:
        modules = []
        current = in_width
        for rate in dilations:
            modules.append(
                CfpModule(
                    CfpModuleConfig(
                        in_channels=current,
                        max_dilation=rate,
                        out_channels=width,
                        channel_count=cfg.channel_count,
                        normalization=cfg.normalization,
                    )
                )
            )
            current = width
        return modules

    def _combine(self, decoded, encoded, projection):
        if self.config.skip_mode == "add":
            return decoded + projection(encoded)
        return projection(torch.cat([decoded, encoded], dim=1))

    def forward(self, x):
        h, w = x.shape[-2], x.shape[-1]
        if h % 8 or w % 8:
            raise ValueError(f"input spatial size must be divisible by 8, got {h}x{w}")
        e1 = self.init_block(x)
        e2 = self.stage2(self.pool1(e1))
        e3 = self.stage3(self.pool2(e2))
        if self.inject_conv is not None:
            e3 = self.inject_conv(torch.cat([e3, self.inject_pool(x)], dim=1))
        d1 = self._combine(self.up1(e3), e2, self.skip2)
        d2 = self._combine(self.up2(d1), e1, self.skip1)
        d3 = self.up3(d2)
        return torch.sigmoid(self.classifier(d3))


def build_cfpnet_m(config: NetworkConfig | None = None, seed: int | None = None) -> CfpNetM:
    """Construct the segmentation network, optionally with seeded weight init."""
    if seed is not None:
        torch.manual_seed(seed)
    return CfpNetM(config)


def layer_audit(config: NetworkConfig | None = None) -> list[LayerInfo]:
    """The 17-row layer table realized by a config (injection reported separately).

    Row kinds are ``conv``, ``avgpool``, ``cfp`` and ``deconv``; pooling rows
    carry no output width.  When input injection is enabled an ``aux`` row is
    appended after the encoder rows.
    """
    cfg = config or NetworkConfig()
    w1, w2, w3 = cfg.stage_widths
    rows: list[LayerInfo] = [
        LayerInfo(1, "conv", "3x3 stride 2", w1),
        LayerInfo(2, "conv", "3x3 stride 1", w1),
        LayerInfo(3, "conv", "3x3 stride 1", w1),
        LayerInfo(4, "avgpool", "2x2 stride 2", None),
    ]
    index = 5
    for rate in cfg.stage2_dilations:
        rows.append(LayerInfo(index, "cfp", f"max dilation {rate}", w2))
        index += 1
    rows.append(LayerInfo(index, "avgpool", "2x2 stride 2", None))
    index += 1
    for rate in cfg.stage3_dilations:
        rows.append(LayerInfo(index, "cfp", f"max dilation {rate}", w3))
        index += 1
    for width in (w3, w2, w1):
        rows.append(LayerInfo(index, "deconv", f"{cfg.deconv_kernel}x{cfg.deconv_kernel} stride 2", width))
        index += 1
    rows.append(LayerInfo(index, "conv", "1x1 sigmoid", 1))
    if cfg.input_injection == "concat":
        rows.append(LayerInfo(index + 1, "aux", "input injection concat + 1x1", w3))
    return rows


def count_parameters(model: nn.Module) -> int:
    """Total learnable elements across all parameter tensors."""
    return sum(p.numel() for p in model.parameters())


def parameter_breakdown(model: nn.Module) -> list[tuple[str, int]]:
    """Per-child learnable-parameter totals, in registration order."""
    rows = []
    for name, child in model.named_children():
        n = count_parameters(child)
        if n:
            rows.append((name, n))
    direct = sum(p.numel() for p in model.parameters(recurse=False))
    if direct:
        rows.append(("(direct)", direct))
    return rows


def _conv_macs(module: nn.Module, inputs, output) -> int:
    kh, kw = module.kernel_size
    if isinstance(module, nn.ConvTranspose2d):
        # the transposed kernel slides over the input grid: each input element
        # scatters kh*kw taps into out_channels maps
        return inputs[0].numel() * kh * kw * (module.out_channels // module.groups)
    return output.numel() * kh * kw * (module.in_channels // module.groups)


def flops_breakdown(model: nn.Module, input_size: tuple[int, int], in_channels: int = 3) -> list[tuple[str, int]]:
    """Per-convolution multiply-accumulate counts at the given (height, width).

    Convention: one MAC per kernel tap per element of the grid the kernel
    slides over; the output grid for convolutions, the input grid for
    transposed convolutions.  Normalization, activations and poolings
    contribute nothing.
    """
    rows: list[tuple[str, int]] = []
    handles = []

    def register(name, module):
        def hook(mod, inputs, output):
            rows.append((name, _conv_macs(mod, inputs, output)))

        handles.append(module.register_forward_hook(hook))

    for name, module in model.named_modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            register(name or module.__class__.__name__, module)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            model(torch.zeros(1, in_channels, input_size[0], input_size[1]))
    finally:
        for h in handles:
            h.remove()
        model.train(was_training)
    return rows


def estimate_flops(model: nn.Module, input_size: tuple[int, int], in_channels: int = 3) -> int:
    """Total MAC count for one forward pass; see ``flops_breakdown`` for the convention."""
    return sum(n for _, n in flops_breakdown(model, input_size, in_channels))


@dataclass(frozen=True)
class LayerGeom:
    """Geometry of one layer for receptive-field accounting."""

    kind: str
    kernel: int
    stride: int = 1
    dilation: int = 1


_RF_KINDS = ("conv", "pool")


def receptive_field_of_sequence(layers: Iterable[LayerGeom]) -> int:
    """Receptive field of a sequential stack via the standard recurrence.

    ``rf += (k_eff - 1) * jump; jump *= stride`` per layer, where
    ``k_eff = dilation * (kernel - 1) + 1``.  Only convolution and pooling
    layers are supported.
    """
    rf, jump = 1, 1
    for i, layer in enumerate(layers):
        if layer.kind not in _RF_KINDS:
            raise ValueError(f"unsupported layer kind {layer.kind!r} at position {i}: {layer}")
        k_eff = layer.dilation * (layer.kernel - 1) + 1
        rf += (k_eff - 1) * jump
        jump *= layer.stride
    return rf


def _fp_channel_geometry(config: FpChannelConfig) -> list[LayerGeom]:
    return [LayerGeom("conv", 3, dilation=config.dilation)] * 3


def _cfp_module_geometry(config: CfpModuleConfig) -> list[LayerGeom]:
    # deepest path: the 1x1 reduction then the widest-dilation branch
    return [LayerGeom("conv", 1)] + [LayerGeom("conv", 3, dilation=config.max_dilation)] * 3


def _network_stage_geometry(cfg: NetworkConfig) -> dict[str, list[LayerGeom]]:
    stage1 = [LayerGeom("conv", 3, stride=2), LayerGeom("conv", 3), LayerGeom("conv", 3)]
    stage2 = [LayerGeom("pool", 2, stride=2)]
    for rate in cfg.stage2_dilations:
        stage2 += [LayerGeom("conv", 1)] + [LayerGeom("conv", 3, dilation=rate)] * 3
    stage3 = [LayerGeom("pool", 2, stride=2)]
    for rate in cfg.stage3_dilations:
        stage3 += [LayerGeom("conv", 1)] + [LayerGeom("conv", 3, dilation=rate)] * 3
    return {"stage1": stage1, "stage2": stage1 + stage2, "stage3": stage1 + stage2 + stage3}


def receptive_field(target) -> dict[str, int] | int:
    """Receptive field in pixels.

    Accepts a ``NetworkConfig`` or built ``CfpNetM`` (returns the per-encoder-
    stage dictionary, each stage measured from the network input along its
    widest-dilation path), an ``FpChannelConfig`` or ``CfpModuleConfig``
    (returns a single extent), or an explicit ``LayerGeom`` sequence.
    """
    if isinstance(target, CfpNetM):
        target = target.config
    if isinstance(target, NetworkConfig):
        return {name: receptive_field_of_sequence(seq) for name, seq in _network_stage_geometry(target).items()}
    if isinstance(target, FpChannelConfig):
        return receptive_field_of_sequence(_fp_channel_geometry(target))
    if isinstance(target, CfpModuleConfig):
        return receptive_field_of_sequence(_cfp_module_geometry(target))
    return receptive_field_of_sequence(target)


def serialized_size(model: nn.Module) -> int:
    """Size in bytes of the model's saved state dict (informational)."""
    fd, path = tempfile.mkstemp(suffix=".pt")
    os.close(fd)
    try:
        torch.save(model.state_dict(), path)
        return os.path.getsize(path)
    finally:
        os.unlink(path)


def complexity_summary(model: nn.Module, input_size: tuple[int, int], in_channels: int = 3) -> ComplexityReport:
    """Parameters, MACs, per-stage receptive field and serialized size for one model."""
    if isinstance(model, CfpNetM):
        rf = receptive_field(model.config)
    else:
        rf = {}
    return ComplexityReport(
        parameter_count=count_parameters(model),
        flops=estimate_flops(model, input_size, in_channels),
        receptive_field_per_stage=rf,
        serialized_size=serialized_size(model),
        input_size=tuple(input_size),
    )


def parameter_budget_sweep(base: NetworkConfig | None = None) -> list[dict]:
    """Learnable-parameter count for every open-switch combination.

    Enumerates skip mode x deconvolution kernel x normalization x input
    injection over the otherwise-fixed architecture and reports each count.
    Used to document which combination lands closest to a published budget.
    """
    cfg = base or NetworkConfig()
    rows = []
    for skip, kernel, norm, inject in itertools.product(SKIP_MODES, DECONV_KERNELS, ("batch", "none"), INJECTION_MODES):
        candidate = replace(cfg, skip_mode=skip, deconv_kernel=kernel, normalization=norm, input_injection=inject)
        rows.append(
            {
                "skip_mode": skip,
                "deconv_kernel": kernel,
                "normalization": norm,
                "input_injection": inject,
                "parameter_count": count_parameters(CfpNetM(candidate)),
            }
        )
    return rows


def _double_conv(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, 3, padding=1),
        nn.ReLU(),
        nn.Conv2d(out_channels, out_channels, 3, padding=1),
        nn.ReLU(),
    )


class UNetBaseline(nn.Module):
    """Classic five-level U-Net with 2x2 transposed-conv upsampling.

    Used as the parameter-count and MAC-count reference point; plain biased
    convolutions without normalization, single sigmoid output channel.
    """

    def __init__(self, base_width: int = 64, in_channels: int = 3):
        super().__init__()
        if base_width < 1 or base_width & (base_width - 1):
            raise ValueError(f"base_width must be a power of two, got {base_width}")
        b = base_width
        widths = [b, 2 * b, 4 * b, 8 * b]
        self.encoders = nn.ModuleList()
        current = in_channels
        for w in widths:
            self.encoders.append(_double_conv(current, w))
            current = w
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(current, 2 * current)
        current = 2 * current
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for w in reversed(widths):
            self.upsamplers.append(nn.ConvTranspose2d(current, w, 2, stride=2))
            self.decoders.append(_double_conv(2 * w, w))
            current = w
        self.classifier = nn.Conv2d(b, 1, 1)

    def forward(self, x):
        h, w = x.shape[-2], x.shape[-1]
        if h % 16 or w % 16:
            raise ValueError(f"input spatial size must be divisible by 16, got {h}x{w}")
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, decoder, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = decoder(torch.cat([up(x), skip], dim=1))
        return torch.sigmoid(self.classifier(x))


def build_unet_baseline(base_width: int = 64, in_channels: int = 3, seed: int | None = None) -> UNetBaseline:
    """Construct the U-Net reference model, optionally with seeded weight init."""
    if seed is not None:
        torch.manual_seed(seed)
    return UNetBaseline(base_width, in_channels)
