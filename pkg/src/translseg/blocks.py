"""Reusable network building blocks.

Pre-activation residual conv blocks (norm -> ReLU -> conv with reflection
padding), compressed long skip connections, feature normalization with
optional externally supplied parameters, spectral weight normalization with
persistent power-iteration state, and the MLP that maps latent codes to
per-layer normalization parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

NORM_EPS = 1e-5
SPECTRAL_EPS = 1e-12

# One externally supplied affine pair: scale/shift of shape (C,) or (B, C).
NormParamPair = tuple[Tensor, Tensor]
# One pair per adaptively normalized decoder layer.
NormParams = list[NormParamPair]


def upsample_repeat(x: Tensor) -> Tensor:
    """2x upsampling by simple repetition of pixel rows and columns."""
    return x.repeat_interleave(2, dim=2).repeat_interleave(2, dim=3)


def crop_to(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Crop bottom/right so spatial dims equal ``size`` (no-op if they do)."""
    h, w = size
    if x.shape[2] < h or x.shape[3] < w:
        raise ValueError(f"cannot crop {tuple(x.shape[2:])} up to {size}")
    return x[:, :, :h, :w]


def subsample_stride2(x: Tensor) -> Tensor:
    """Stride-2 subsampling matching ceil(n/2) conv arithmetic."""
    return x[:, :, ::2, ::2]


class PaddedConv2d(nn.Conv2d):
    """Conv2d with reflection padding totalling kernel-1.

    Stride 1 preserves spatial dims; stride 2 yields ceil(n/2) on each axis
    (handles odd sizes such as the 15-pixel levels of 240x120 inputs).
    Even kernels pad asymmetrically (left (k-1)//2, right k//2).
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, bias: bool = True) -> None:
        super().__init__(in_channels, out_channels, kernel_size,
                         stride=stride, padding=0, bias=bias)
        k = kernel_size
        self._pad = ((k - 1) // 2, k // 2, (k - 1) // 2, k // 2)

    def _padded(self, x: Tensor) -> Tensor:
        if sum(self._pad) == 0:
            return x
        return F.pad(x, self._pad, mode="reflect")

    def forward(self, x: Tensor) -> Tensor:
        return self._conv_forward(self._padded(x), self.weight, self.bias)


def spectral_normalize(weight: Tensor, state: "SpectralState",
                       n_iters: int = 1) -> Tensor:
    """Divide ``weight`` by its power-iteration largest-singular-value estimate.

    The weight is viewed as a 2-D matrix (out_channels x rest). ``state``
    holds the persistent u/v vectors and is advanced in place by ``n_iters``
    iterations (no gradient); the returned tensor keeps the autograd path
    through ``weight``. The estimate is clamped below by 1e-12, so an
    all-zero weight is returned unchanged.
    """
    w2d = weight.reshape(weight.shape[0], -1)
    if n_iters > 0:
        state.step(w2d, n_iters)
    sigma = torch.dot(state.u, torch.mv(w2d, state.v))
    sigma = torch.clamp(sigma, min=SPECTRAL_EPS)
    return weight / sigma


class SpectralState:
    """Persistent power-iteration vectors for one weight matrix."""

    def __init__(self, u: Tensor, v: Tensor) -> None:
        self.u = u
        self.v = v

    @classmethod
    def for_weight(cls, weight: Tensor) -> "SpectralState":
        w2d = weight.detach().reshape(weight.shape[0], -1)
        u = torch.full((w2d.shape[0],), 1.0, dtype=weight.dtype,
                       device=weight.device)
        u = F.normalize(u, dim=0, eps=SPECTRAL_EPS)
        v = F.normalize(torch.mv(w2d.t(), u), dim=0, eps=SPECTRAL_EPS)
        return cls(u, v)

    @torch.no_grad()
    def step(self, w2d: Tensor, n_iters: int) -> None:
        for _ in range(n_iters):
            self.v = F.normalize(torch.mv(w2d.t(), self.u), dim=0,
                                 eps=SPECTRAL_EPS)
            self.u = F.normalize(torch.mv(w2d, self.v), dim=0,
                                 eps=SPECTRAL_EPS)

    @torch.no_grad()
    def randomize(self, w2d: Tensor, generator: Optional[torch.Generator]) -> None:
        self.u = F.normalize(
            torch.randn(self.u.shape, generator=generator, dtype=self.u.dtype),
            dim=0, eps=SPECTRAL_EPS)
        self.step(w2d, 1)


class _SpectralMixin:
    """Adds persistent u/v buffers and pre-forward weight normalization.

    The power iteration is only advanced by explicit ``power_iterate`` calls
    (the training loop advances it once per network per step); every forward
    reuses the current estimate, so repeated forwards are deterministic.
    """

    def _init_spectral(self) -> None:
        state = SpectralState.for_weight(self.weight)
        self.register_buffer("sn_u", state.u)
        self.register_buffer("sn_v", state.v)

    def _state(self) -> SpectralState:
        # Views onto the registered buffers; step() rebinds, so copy back.
        return SpectralState(self.sn_u, self.sn_v)

    def normalized_weight(self) -> Tensor:
        state = self._state()
        return spectral_normalize(self.weight, state, n_iters=0)

    @torch.no_grad()
    def power_iterate(self, n_iters: int = 1) -> None:
        state = self._state()
        state.step(self.weight.reshape(self.weight.shape[0], -1), n_iters)
        self.sn_u.copy_(state.u)
        self.sn_v.copy_(state.v)

    @torch.no_grad()
    def randomize_spectral(self, generator: Optional[torch.Generator]) -> None:
        state = self._state()
        state.randomize(self.weight.reshape(self.weight.shape[0], -1), generator)
        self.sn_u.copy_(state.u)
        self.sn_v.copy_(state.v)


class SNConv2d(PaddedConv2d, _SpectralMixin):
    """Reflection-padded conv whose weight is spectrally normalized."""

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self._init_spectral()

    def forward(self, x: Tensor) -> Tensor:
        return self._conv_forward(self._padded(x), self.normalized_weight(),
                                  self.bias)


class SNLinear(nn.Linear, _SpectralMixin):
    """Linear layer whose weight is spectrally normalized."""

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self._init_spectral()

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.normalized_weight(), self.bias)


def make_conv(in_ch: int, out_ch: int, kernel: int, stride: int = 1,
              spectral: bool = False) -> PaddedConv2d:
    cls = SNConv2d if spectral else PaddedConv2d
    return cls(in_ch, out_ch, kernel, stride=stride)


def make_linear(in_f: int, out_f: int, spectral: bool = False) -> nn.Linear:
    cls = SNLinear if spectral else nn.Linear
    return cls(in_f, out_f)


def _normalize_stats(x: Tensor, kind: str) -> Tensor:
    if kind == "instance":
        dims = (2, 3)
    elif kind == "layer":
        dims = (1, 2, 3)
    else:
        raise ValueError(f"unknown normalization kind {kind!r}")
    mean = x.mean(dim=dims, keepdim=True)
    var = x.var(dim=dims, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + NORM_EPS)


def _apply_affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    if scale.dim() == 1:          # per-layer (C,)
        scale = scale.view(1, -1, 1, 1)
        shift = shift.view(1, -1, 1, 1)
    elif scale.dim() == 2:        # per batch element (B, C)
        scale = scale.view(scale.shape[0], -1, 1, 1)
        shift = shift.view(shift.shape[0], -1, 1, 1)
    else:
        raise ValueError("normalization parameters must be (C,) or (B, C)")
    if scale.shape[1] != x.shape[1]:
        raise ValueError(
            f"normalization parameters for {scale.shape[1]} channels applied "
            f"to a {x.shape[1]}-channel feature map")
    return x * scale + shift


class FeatureNorm(nn.Module):
    """Instance/layer/adaptive feature normalization.

    kind 'instance' and 'layer' own an affine (scale, shift) pair; a forward
    call may replace the affine parameters (and optionally the statistics
    kind) with externally supplied ones, which is how the dual-use residual
    decoder swaps normalization between translation and segmentation. kind
    'adaptive' owns no parameters and always requires external ones.
    """

    def __init__(self, kind: str, channels: int) -> None:
        super().__init__()
        if kind not in ("instance", "layer", "adaptive"):
            raise ValueError(f"unknown norm kind {kind!r}")
        self.kind = kind
        self.channels = channels
        if kind == "adaptive":
            self.weight = None
            self.bias = None
        else:
            self.weight = nn.Parameter(torch.ones(channels))
            self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: Tensor, params: Optional[NormParamPair] = None,
                stat_kind: Optional[str] = None) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(
                f"expected {self.channels} channels, got {x.shape[1]}")
        kind = stat_kind or ("instance" if self.kind == "adaptive" else self.kind)
        out = _normalize_stats(x, kind)
        if params is not None:
            return _apply_affine(out, *params)
        if self.weight is None:
            raise ValueError("adaptive normalization requires parameters")
        return _apply_affine(out, self.weight, self.bias)


@dataclass
class ConvBlockConfig:
    """Configuration of one pre-activation residual conv block."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    upsample: bool = False
    short_skip: bool = False
    norm_kind: str = "instance"

    def __post_init__(self) -> None:
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.stride == 2 and self.upsample:
            raise ValueError("stride-2 and upsampling are mutually exclusive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")


class ConvBlock(nn.Module):
    """norm -> ReLU -> (2x upsample) -> reflection-padded conv (+short skip).

    ``extra_in`` reserves input channels for a skip map concatenated after
    the activation (see :class:`CompressedSkip`); the normalization sees only
    the ``in_channels`` main input. The short skip adds the block input to
    the output, resampled the same way and projected with a 1x1 conv when
    channel counts differ. ``target_size`` crops the upsampled map before
    convolution so odd encoder resolutions round-trip exactly.
    """

    def __init__(self, cfg: ConvBlockConfig, extra_in: int = 0,
                 activation: str = "relu", spectral: bool = False) -> None:
        super().__init__()
        self.cfg = cfg
        self.extra_in = extra_in
        self.norm = FeatureNorm(cfg.norm_kind, cfg.in_channels)
        self.act = nn.ReLU() if activation == "relu" else nn.LeakyReLU(0.2)
        self.conv = make_conv(cfg.in_channels + extra_in, cfg.out_channels,
                              cfg.kernel, stride=cfg.stride, spectral=spectral)
        self.skip_proj = None
        if cfg.short_skip and cfg.in_channels != cfg.out_channels:
            self.skip_proj = make_conv(cfg.in_channels, cfg.out_channels, 1,
                                       spectral=spectral)

    def _resample(self, x: Tensor, target_size: Optional[tuple[int, int]]) -> Tensor:
        if self.cfg.upsample:
            x = upsample_repeat(x)
            if target_size is not None:
                x = crop_to(x, target_size)
        return x

    def forward(self, x: Tensor, extra: Optional[Tensor] = None,
                norm_params: Optional[NormParamPair] = None,
                norm_stat_kind: Optional[str] = None,
                target_size: Optional[tuple[int, int]] = None) -> Tensor:
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"block expects {self.cfg.in_channels} channels, "
                f"got {x.shape[1]}")
        if (extra is None) != (self.extra_in == 0):
            raise ValueError("skip input does not match block configuration")
        h = self.norm(x, norm_params, norm_stat_kind)
        h = self.act(h)
        if extra is not None:
            h = torch.cat([h, extra], dim=1)
        h = self._resample(h, target_size)
        y = self.conv(h)
        if self.cfg.short_skip:
            s = self._resample(x, target_size)
            if self.cfg.stride == 2:
                s = subsample_stride2(s)
            if self.skip_proj is not None:
                s = self.skip_proj(s)
            y = y + s
        return y


class CompressedSkip(nn.Module):
    """Compressed long skip connection.

    The encoder feature stack is compressed to a single map by a 1x1
    convolution, instance-normalized (no affine), and concatenated
    channel-wise to the decoder features.
    """

    def __init__(self, enc_channels: int, spectral: bool = False) -> None:
        super().__init__()
        self.compressor = make_conv(enc_channels, 1, 1, spectral=spectral)

    def compress(self, enc_features: Tensor) -> Tensor:
        return _normalize_stats(self.compressor(enc_features), "instance")

    def forward(self, enc_features: Tensor, dec_features: Tensor) -> Tensor:
        if enc_features.shape[0] != dec_features.shape[0] or \
                enc_features.shape[2:] != dec_features.shape[2:]:
            raise ValueError(
                f"skip level mismatch: encoder {tuple(enc_features.shape)} vs "
                f"decoder {tuple(dec_features.shape)}")
        return torch.cat([dec_features, self.compress(enc_features)], dim=1)


class NormParamMLP(nn.Module):
    """Maps latent codes to per-layer (scale, shift) normalization parameters.

    Both codes are spatially average-pooled, concatenated, pushed through a
    ReLU MLP (``n_hidden`` layers of ``hidden`` units), and projected by one
    linear head per adaptively normalized decoder layer.
    """

    def __init__(self, common_channels: int, unique_channels: int,
                 layer_channels: Sequence[int], hidden: int = 256,
                 n_hidden: int = 4, spectral: bool = False) -> None:
        super().__init__()
        self.layer_channels = list(layer_channels)
        layers: list[nn.Module] = []
        width = common_channels + unique_channels
        for _ in range(n_hidden):
            layers += [make_linear(width, hidden, spectral), nn.ReLU()]
            width = hidden
        self.trunk = nn.Sequential(*layers)
        self.heads = nn.ModuleList(
            [make_linear(hidden, 2 * c, spectral) for c in self.layer_channels])
        self.reset_head_biases()

    @torch.no_grad()
    def reset_head_biases(self) -> None:
        # Start at the identity affine: scale 1, shift 0.
        for head, c in zip(self.heads, self.layer_channels):
            head.bias[:c].fill_(1.0)
            head.bias[c:].zero_()

    def forward(self, common: Tensor, unique: Tensor) -> NormParams:
        if common.shape[0] != unique.shape[0]:
            raise ValueError("code batch sizes differ")
        pooled = torch.cat([common.mean(dim=(2, 3)), unique.mean(dim=(2, 3))],
                           dim=1)
        h = self.trunk(pooled)
        params: NormParams = []
        for head, c in zip(self.heads, self.layer_channels):
            out = head(h)
            params.append((out[:, :c], out[:, c:]))
        return params
