"""The four networks: encoder, common decoder, dual-use residual decoder,
and per-domain multi-scale discriminators.

Presets describe the published layer walks for 48x48 / 128x128 digit
canvases and 240x120 four-channel brain half-slices; arbitrary presets can
be constructed for small-scale testing. Long skip connections pair encoder
levels with decoder levels of equal resolution and channel count; spatial
targets are tracked explicitly so odd sizes (e.g. 15 px levels) round-trip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .blocks import (
    ConvBlock,
    ConvBlockConfig,
    CompressedSkip,
    FeatureNorm,
    NormParamMLP,
    NormParams,
    _SpectralMixin,
    crop_to,
    make_conv,
    upsample_repeat,
)


class LatentPair(NamedTuple):
    """Bottleneck split into a common code and a unique code."""

    common: Tensor
    unique: Tensor

    def joined(self) -> Tensor:
        return torch.cat([self.common, self.unique], dim=1)


# Per-resolution encoder feature maps, highest resolution first.
SkipStack = list[Tensor]


@dataclass(frozen=True)
class ArchitecturePreset:
    """Layer specification shared by all networks of one task."""

    name: str
    image_channels: int
    image_size: tuple[int, int]
    enc_stem_channels: int
    enc_block_channels: tuple[int, ...]
    enc_kernel: int = 3
    dec_kernel: int = 3
    res_kernel: int = 5
    latent_channels: int = 512
    unique_channels: int = 128
    disc_stem_channels: int = 128
    disc_block_channels: tuple[int, ...] = (128, 256, 512)
    disc_kernel: int = 4
    disc_scales: int = 3
    seg_norm_mode: str = "adaptive_from_mlp"
    mlp_hidden: int = 256
    mlp_layers: int = 4

    @property
    def common_channels(self) -> int:
        return self.latent_channels - self.unique_channels

    @property
    def decoder_channels(self) -> tuple[int, ...]:
        """Decoder stage output channels, mirroring the encoder ladder."""
        return tuple(reversed((self.enc_stem_channels,)
                              + self.enc_block_channels[:-1]))

    @property
    def n_downsamples(self) -> int:
        return len(self.enc_block_channels)

    def size_ladder(self) -> list[tuple[int, int]]:
        """Spatial dims per resolution level, input size first."""
        sizes = [self.image_size]
        for _ in range(self.n_downsamples):
            h, w = sizes[-1]
            sizes.append((math.ceil(h / 2), math.ceil(w / 2)))
        return sizes

    def bottleneck_size(self) -> tuple[int, int]:
        return self.size_ladder()[-1]


def preset(name: str) -> ArchitecturePreset:
    """Look up one of the three published presets by name."""
    if name == "mnist48":
        return ArchitecturePreset(
            name="mnist48", image_channels=1, image_size=(48, 48),
            enc_stem_channels=32, enc_block_channels=(64, 128, 256, 512))
    if name == "mnist128":
        return ArchitecturePreset(
            name="mnist128", image_channels=1, image_size=(128, 128),
            enc_stem_channels=16, enc_block_channels=(32, 64, 128, 256, 512))
    if name == "brats":
        return ArchitecturePreset(
            name="brats", image_channels=4, image_size=(240, 120),
            enc_stem_channels=16, enc_block_channels=(32, 64, 128, 256, 512),
            disc_stem_channels=64, disc_block_channels=(64, 128, 256, 512),
            seg_norm_mode="separate_layer_params")
    raise ValueError(f"unknown preset {name!r}")


class Encoder(nn.Module):
    """Downsampling encoder producing (common, unique) codes and skips.

    A plain stem convolution is followed by stride-2 residual conv blocks
    with instance normalization and a final norm+ReLU. The bottleneck is
    split along channels into the common and unique codes; skip features are
    the block outputs excluding the first and last layers.
    """

    def __init__(self, p: ArchitecturePreset, spectral: bool = False) -> None:
        super().__init__()
        self.preset = p
        self.stem = make_conv(p.image_channels, p.enc_stem_channels,
                              p.enc_kernel, spectral=spectral)
        blocks = []
        in_ch = p.enc_stem_channels
        for out_ch in p.enc_block_channels:
            cfg = ConvBlockConfig(in_ch, out_ch, p.enc_kernel, stride=2,
                                  short_skip=True, norm_kind="instance")
            blocks.append(ConvBlock(cfg, spectral=spectral))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.final_norm = FeatureNorm("instance", p.latent_channels)

    def forward(self, x: Tensor) -> tuple[LatentPair, SkipStack]:
        p = self.preset
        if x.shape[1] != p.image_channels:
            raise ValueError(
                f"expected {p.image_channels} input channels, got {x.shape[1]}")
        h = self.stem(x)
        skips: SkipStack = []
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < len(self.blocks) - 1:
                skips.append(h)
        h = F.relu(self.final_norm(h))
        common, unique = torch.split(
            h, [p.common_channels, p.unique_channels], dim=1)
        return LatentPair(common, unique), skips


class _DecoderCore(nn.Module):
    """Shared upsampling ladder for the common and residual decoders."""

    def __init__(self, p: ArchitecturePreset, in_channels: int, kernel: int,
                 short_skip: bool, use_skips: bool, spectral: bool) -> None:
        super().__init__()
        self.preset = p
        self.use_skips = use_skips
        channels = p.decoder_channels
        self.initial = make_conv(in_channels, channels[0], kernel,
                                 spectral=spectral)
        blocks, skip_ops = [], []
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            cfg = ConvBlockConfig(c_in, c_out, kernel, upsample=True,
                                  short_skip=short_skip, norm_kind="layer")
            blocks.append(ConvBlock(cfg, extra_in=1 if use_skips else 0,
                                    spectral=spectral))
            skip_ops.append(CompressedSkip(c_in, spectral=spectral)
                            if use_skips else None)
        self.blocks = nn.ModuleList(blocks)
        self.skip_ops = nn.ModuleList([op for op in skip_ops if op is not None])
        self.final_norm = FeatureNorm("layer", channels[-1])
        self.final_conv = make_conv(channels[-1], p.image_channels, kernel,
                                    spectral=spectral)

    @property
    def norm_channel_counts(self) -> list[int]:
        """Channels normalized per stage: block norms plus the final norm."""
        channels = self.preset.decoder_channels
        return list(channels[:-1]) + [channels[-1]]

    def _stage_sizes(self, out_size: tuple[int, int]) -> list[tuple[int, int]]:
        sizes = [out_size]
        for _ in range(self.preset.n_downsamples):
            h, w = sizes[-1]
            sizes.append((math.ceil(h / 2), math.ceil(w / 2)))
        # Initial-stage target first, then one per block.
        return list(reversed(sizes[:-1]))

    def features(self, z: Tensor, skips: Optional[SkipStack],
                 out_size: tuple[int, int],
                 norm_params: Optional[NormParams] = None,
                 norm_stat_kind: Optional[str] = None) -> Tensor:
        """Run all stages up to and including the final norm+ReLU."""
        if self.use_skips:
            if skips is None or len(skips) != len(self.blocks):
                raise ValueError(
                    f"expected {len(self.blocks)} skip levels, got "
                    f"{0 if skips is None else len(skips)}")
        sizes = self._stage_sizes(out_size)
        h = crop_to(upsample_repeat(z), sizes[0])
        h = self.initial(h)
        for i, block in enumerate(self.blocks):
            extra = None
            if self.use_skips:
                extra = self.skip_ops[i].compress(skips[len(skips) - 1 - i])
            params = norm_params[i] if norm_params is not None else None
            h = block(h, extra=extra, norm_params=params,
                      norm_stat_kind=norm_stat_kind, target_size=sizes[i + 1])
        final_params = norm_params[-1] if norm_params is not None else None
        return F.relu(self.final_norm(h, final_params, norm_stat_kind))

    def forward(self, z: Tensor, skips: Optional[SkipStack],
                out_size: tuple[int, int]) -> Tensor:
        return self.final_conv(self.features(z, skips, out_size))


class CommonDecoder(_DecoderCore):
    """Decodes the common code (plus skips) to an absence-domain image.

    Layer normalization throughout, short skips inside blocks, and an
    identity output nonlinearity (images are signed normalized intensities).
    """

    def __init__(self, p: ArchitecturePreset, in_channels: Optional[int] = None,
                 use_skips: bool = True, spectral: bool = False) -> None:
        super().__init__(p, in_channels or p.common_channels, p.dec_kernel,
                         short_skip=True, use_skips=use_skips,
                         spectral=spectral)


class ResidualDecoder(_DecoderCore):
    """Decodes (common, unique) to an additive residual image.

    Larger kernels and no short skips; reused for segmentation by swapping
    the per-layer normalization parameters and appending a classifier.
    """

    def __init__(self, p: ArchitecturePreset, spectral: bool = False) -> None:
        super().__init__(p, p.latent_channels, p.res_kernel,
                         short_skip=False, use_skips=True, spectral=spectral)


class SegmentationHead(nn.Module):
    """Pixelwise classification layer: 1x1 conv followed by a sigmoid."""

    def __init__(self, in_channels: int, n_classes: int = 1,
                 spectral: bool = False) -> None:
        super().__init__()
        self.conv = make_conv(in_channels, n_classes, 1, spectral=spectral)

    def forward(self, features: Tensor) -> Tensor:
        return torch.sigmoid(self.conv(features))


class SegNorm(nn.Module):
    """Normalization parameters used when the residual decoder segments.

    mode 'adaptive_from_mlp': an MLP on the latent codes emits per-example
    (scale, shift) pairs applied with instance statistics. mode
    'separate_layer_params': learned per-layer pairs (initialized to the
    identity affine) applied with layer statistics. mode 'owned': the
    decoder's own layer normalization parameters are used unchanged
    (baseline models, where the decoder is not shared with translation).
    """

    MODES = ("adaptive_from_mlp", "separate_layer_params", "owned")

    def __init__(self, mode: str, p: ArchitecturePreset,
                 layer_channels: list[int], spectral: bool = False) -> None:
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"unknown segmentation-normalization mode {mode!r}")
        self.mode = mode
        self.layer_channels = layer_channels
        self.mlp = None
        if mode == "adaptive_from_mlp":
            self.mlp = NormParamMLP(p.common_channels, p.unique_channels,
                                    layer_channels, hidden=p.mlp_hidden,
                                    n_hidden=p.mlp_layers, spectral=spectral)
        elif mode == "separate_layer_params":
            self.scales = nn.ParameterList(
                [nn.Parameter(torch.ones(c)) for c in layer_channels])
            self.shifts = nn.ParameterList(
                [nn.Parameter(torch.zeros(c)) for c in layer_channels])

    def resolve(self, common: Tensor, unique: Tensor
                ) -> tuple[Optional[NormParams], Optional[str]]:
        """Return (per-layer params, statistics kind) for a forward pass."""
        if self.mode == "adaptive_from_mlp":
            return self.mlp(common, unique), "instance"
        if self.mode == "separate_layer_params":
            return list(zip(self.scales, self.shifts)), "layer"
        return None, None


class PatchDiscriminator(nn.Module):
    """Single-scale discriminator: plain stem conv, norm+LeakyReLU+conv
    downsampling rows, and a 1x1 conv to a one-channel score map."""

    def __init__(self, p: ArchitecturePreset, spectral: bool = False) -> None:
        super().__init__()
        self.stem = make_conv(p.image_channels, p.disc_stem_channels,
                              p.disc_kernel, spectral=spectral)
        rows = []
        in_ch = p.disc_stem_channels
        for out_ch in p.disc_block_channels:
            rows.append(nn.ModuleDict({
                "norm": FeatureNorm("instance", in_ch),
                "conv": make_conv(in_ch, out_ch, p.disc_kernel, stride=2,
                                  spectral=spectral),
            }))
            in_ch = out_ch
        self.rows = nn.ModuleList(rows)
        self.head = make_conv(in_ch, 1, 1, spectral=spectral)

    def forward(self, x: Tensor) -> Tensor:
        h = self.stem(x)
        for row in self.rows:
            h = row["conv"](F.leaky_relu(row["norm"](h), 0.2))
        return self.head(h)


class MultiScaleDiscriminator(nn.Module):
    """Applies per-scale discriminators at 1x, 2x and 4x average-pool
    downsamplings; score maps are averaged per scale and across scales."""

    def __init__(self, p: ArchitecturePreset, spectral: bool = False) -> None:
        super().__init__()
        self.scales = nn.ModuleList(
            [PatchDiscriminator(p, spectral=spectral)
             for _ in range(p.disc_scales)])

    def forward(self, x: Tensor) -> Tensor:
        scores = []
        for i, disc in enumerate(self.scales):
            scores.append(disc(x).mean(dim=(1, 2, 3)))
            if i < len(self.scales) - 1:
                x = F.avg_pool2d(x, 2)
        return torch.stack(scores, dim=0).mean(dim=0)


@torch.no_grad()
def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Fan-in-scaled normal (Kaiming) initialization for all convs/linears.

    Biases are zeroed, spectral power-iteration vectors are re-randomized,
    and norm-parameter MLP heads are reset to the identity affine.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1:].numel()
            std = math.sqrt(2.0 / fan_in)
            sampled = torch.randn(m.weight.shape, generator=generator,
                                  dtype=m.weight.dtype) * std
            m.weight.copy_(sampled)
            if m.bias is not None:
                m.bias.zero_()
        if isinstance(m, _SpectralMixin):
            m.randomize_spectral(generator)
    for m in module.modules():
        if isinstance(m, NormParamMLP):
            m.reset_head_biases()


def power_iterate(module: nn.Module, n_iters: int = 1) -> None:
    """Advance the spectral-norm power iteration of every wrapped weight."""
    for m in module.modules():
        if isinstance(m, _SpectralMixin):
            m.power_iterate(n_iters)
