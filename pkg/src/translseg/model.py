"""Full forward computation for both domains, the alternating
discriminator/generator optimization step, and segmentation inference.

The proposed model couples an encoder with a common decoder (absence-domain
images), a dual-use residual decoder (additive residuals, reused for
segmentation), and one multi-scale discriminator per domain. Two baselines
reuse the same parts: segmentation-only (encoder + segmentation decoder)
and an autoencoding variant that adds a reconstruction decoder without long
skip connections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor, nn

from .losses import (
    LossReport,
    LossWeights,
    hinge_discriminator_loss,
    l1_loss,
    segmentation_loss,
    total_generator_loss,
)
from .networks import (
    ArchitecturePreset,
    CommonDecoder,
    Encoder,
    LatentPair,
    MultiScaleDiscriminator,
    ResidualDecoder,
    SegNorm,
    SegmentationHead,
    SkipStack,
    init_weights,
    power_iterate,
)

VARIANTS = ("proposed", "ae_baseline", "seg_only")


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, message: str, report: Optional[dict] = None) -> None:
        super().__init__(message)
        self.report = report or {}


@dataclass
class PresenceBundle:
    """Everything produced by one presence-domain forward pass."""

    x_p: Tensor
    c_p: Tensor
    u_p: Tensor
    x_pa: Tensor
    delta_pa: Tensor
    x_pp: Tensor
    y_seg: Tensor
    c_pa: Tensor
    c_pp: Tensor
    u_pp: Tensor


@dataclass
class AbsenceBundle:
    """Everything produced by one absence-domain forward pass."""

    x_a: Tensor
    c_a: Tensor
    u_a: Tensor
    x_aa: Tensor
    u_sampled: Tensor
    x_ap: Tensor
    c_aa: Tensor
    c_ap: Tensor
    u_ap: Tensor
    x_apa: Optional[Tensor] = None


@dataclass
class OptimizerConfig:
    """AMSGrad settings; the discriminators train 10x faster by default."""

    beta1: float = 0.5
    beta2: float = 0.999
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-3
    weight_decay: float = 1e-4


def sample_unique(shape: tuple[int, ...],
                  generator: torch.Generator,
                  dtype: torch.dtype = torch.float32) -> Tensor:
    """Draw an i.i.d. standard-normal unique code of the given shape."""
    return torch.randn(shape, generator=generator, dtype=dtype)


class TranslationModel(nn.Module):
    """Encoder/dual-decoder model with per-variant component wiring.

    'proposed' carries all four networks plus the segmentation head and the
    segmentation-specific normalization source; 'seg_only' keeps just the
    encoder and the segmentation decoder; 'ae_baseline' adds a
    reconstruction decoder that sees no long skip connections. Spectral
    weight normalization is applied to every network of the proposed
    (adversarial) variant only.
    """

    def __init__(self, preset: ArchitecturePreset,
                 variant: str = "proposed") -> None:
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown model variant {variant!r}")
        self.preset = preset
        self.variant = variant
        spectral = variant == "proposed"

        self.encoder = Encoder(preset, spectral=spectral)
        self.residual_decoder = ResidualDecoder(preset, spectral=spectral)
        self.seg_head = SegmentationHead(preset.decoder_channels[-1],
                                         spectral=spectral)
        seg_mode = preset.seg_norm_mode if variant == "proposed" else "owned"
        self.seg_norm = SegNorm(seg_mode, preset,
                                self.residual_decoder.norm_channel_counts,
                                spectral=spectral)

        self.common_decoder = None
        self.recon_decoder = None
        self.disc_a = None
        self.disc_p = None
        if variant == "proposed":
            self.common_decoder = CommonDecoder(preset, spectral=True)
            self.disc_a = MultiScaleDiscriminator(preset, spectral=True)
            self.disc_p = MultiScaleDiscriminator(preset, spectral=True)
        elif variant == "ae_baseline":
            self.recon_decoder = CommonDecoder(
                preset, in_channels=preset.latent_channels, use_skips=False)

    # -- component forwards -------------------------------------------------

    def _check_input(self, x: Tensor) -> None:
        expected = (self.preset.image_channels, *self.preset.image_size)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(
                f"input shape {tuple(x.shape[1:])} does not match preset "
                f"{self.preset.name} {expected}")

    def encode(self, x: Tensor) -> tuple[LatentPair, SkipStack]:
        self._check_input(x)
        return self.encoder(x)

    def decode_common(self, c: Tensor, skips: SkipStack) -> Tensor:
        return self.common_decoder(c, skips, self.preset.image_size)

    def decode_residual(self, c: Tensor, u: Tensor, skips: SkipStack) -> Tensor:
        if c.shape[2:] != u.shape[2:]:
            raise ValueError("common/unique codes differ spatially")
        z = torch.cat([c, u], dim=1)
        return self.residual_decoder(z, skips, self.preset.image_size)

    def decode_segmentation(self, c: Tensor, u: Tensor,
                            skips: SkipStack) -> Tensor:
        z = torch.cat([c, u], dim=1)
        params, stat_kind = self.seg_norm.resolve(c, u)
        features = self.residual_decoder.features(
            z, skips, self.preset.image_size, norm_params=params,
            norm_stat_kind=stat_kind)
        return self.seg_head(features)

    def discriminate(self, x: Tensor, which: str) -> Tensor:
        self._check_input(x)
        disc = {"A": self.disc_a, "P": self.disc_p}.get(which)
        if disc is None:
            raise ValueError(f"no discriminator for domain {which!r}")
        return disc(x)

    def power_iterate(self, n_iters: int = 1) -> None:
        power_iterate(self, n_iters)

    def initialize(self, seed: int) -> "TranslationModel":
        gen = torch.Generator().manual_seed(seed)
        init_weights(self, gen)
        return self

    # -- full graph ----------------------------------------------------------

    def forward_presence(self, x_p: Tensor) -> PresenceBundle:
        if self.variant != "proposed":
            raise ValueError("translation requires the proposed variant")
        (c_p, u_p), skips = self.encode(x_p)
        x_pa = self.decode_common(c_p, skips)
        delta_pa = self.decode_residual(c_p, u_p, skips)
        x_pp = x_pa + delta_pa
        y_seg = self.decode_segmentation(c_p, u_p, skips)
        lat_pa, _ = self.encode(x_pa)
        lat_pp, _ = self.encode(x_pp)
        return PresenceBundle(
            x_p=x_p, c_p=c_p, u_p=u_p, x_pa=x_pa, delta_pa=delta_pa,
            x_pp=x_pp, y_seg=y_seg, c_pa=lat_pa.common, c_pp=lat_pp.common,
            u_pp=lat_pp.unique)

    def forward_absence(self, x_a: Tensor, generator: torch.Generator,
                        cycle_enabled: bool = True) -> AbsenceBundle:
        if self.variant != "proposed":
            raise ValueError("translation requires the proposed variant")
        (c_a, u_a), skips = self.encode(x_a)
        x_aa = self.decode_common(c_a, skips)
        u_sampled = sample_unique(u_a.shape, generator, dtype=u_a.dtype)
        x_ap = x_aa + self.decode_residual(c_a, u_sampled, skips)
        lat_aa, _ = self.encode(x_aa)
        lat_ap, skips_ap = self.encode(x_ap)
        x_apa = None
        if cycle_enabled:
            x_apa = self.decode_common(lat_ap.common, skips_ap)
        return AbsenceBundle(
            x_a=x_a, c_a=c_a, u_a=u_a, x_aa=x_aa, u_sampled=u_sampled,
            x_ap=x_ap, c_aa=lat_aa.common, c_ap=lat_ap.common,
            u_ap=lat_ap.unique, x_apa=x_apa)

    @torch.no_grad()
    def segment(self, x: Tensor, threshold: float = 0.5) -> Tensor:
        """Binary mask from the segmentation path (ties count as positive)."""
        (c, u), skips = self.encode(x)
        y_seg = self.decode_segmentation(c, u, skips)
        return y_seg >= threshold

    @torch.no_grad()
    def segment_probabilities(self, x: Tensor) -> Tensor:
        (c, u), skips = self.encode(x)
        return self.decode_segmentation(c, u, skips)

    # -- parameter partitioning ----------------------------------------------

    def generator_modules(self) -> list[nn.Module]:
        mods = [self.encoder, self.residual_decoder, self.seg_head,
                self.seg_norm]
        if self.common_decoder is not None:
            mods.append(self.common_decoder)
        if self.recon_decoder is not None:
            mods.append(self.recon_decoder)
        return mods

    def discriminator_modules(self) -> list[nn.Module]:
        return [m for m in (self.disc_a, self.disc_p) if m is not None]

    def generator_parameters(self) -> list[nn.Parameter]:
        return [p for m in self.generator_modules() for p in m.parameters()]

    def discriminator_parameters(self) -> list[nn.Parameter]:
        return [p for m in self.discriminator_modules()
                for p in m.parameters()]


def build_optimizers(model: TranslationModel,
                     cfg: OptimizerConfig) -> dict[str, torch.optim.Optimizer]:
    """AMSGrad optimizers over the generator/discriminator partitions."""
    opts = {"generator": torch.optim.Adam(
        model.generator_parameters(), lr=cfg.lr_generator,
        betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay,
        amsgrad=True)}
    disc_params = model.discriminator_parameters()
    if disc_params:
        opts["discriminator"] = torch.optim.Adam(
            disc_params, lr=cfg.lr_discriminator,
            betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay,
            amsgrad=True)
    return opts


def _require_finite(report: LossReport, context: str) -> None:
    if not torch.isfinite(report.total):
        raise TrainingDiverged(
            f"non-finite loss during {context}: {report.as_dict()}",
            report.as_dict())


def training_step(model: TranslationModel, batch_p: Tensor, batch_a: Tensor,
                  seg_target: Optional[Tensor],
                  labeled_mask: Optional[Tensor],
                  optimizers: dict[str, torch.optim.Optimizer],
                  weights: LossWeights,
                  noise_generator: torch.Generator) -> LossReport:
    """One alternating optimization step (discriminators first).

    The discriminator step forwards the translation graph with generator
    gradients blocked; the generator step recomputes the forward pass from
    scratch. The spectral-norm power iteration of every network advances
    exactly once per step. Baseline variants reduce to a single
    generator-side update on their respective objectives.
    """
    if batch_p.shape[0] != batch_a.shape[0]:
        raise ValueError("presence/absence batch sizes differ")
    if "generator" not in optimizers:
        raise ValueError("optimizers must include a 'generator' entry")

    if model.variant != "proposed":
        return _baseline_step(model, batch_p, batch_a, seg_target,
                              labeled_mask, optimizers, weights)

    if "discriminator" not in optimizers:
        raise ValueError(
            "the proposed variant needs a 'discriminator' optimizer")
    model.power_iterate(1)

    # Discriminator step: fakes computed without generator gradients.
    opt_d = optimizers["discriminator"]
    opt_d.zero_grad()
    with torch.no_grad():
        (c_p, u_p), skips_p = model.encode(batch_p)
        x_pa = model.decode_common(c_p, skips_p)
        (c_a, u_a), skips_a = model.encode(batch_a)
        x_aa = model.decode_common(c_a, skips_a)
        u_sampled = sample_unique(u_a.shape, noise_generator, dtype=u_a.dtype)
        x_ap = x_aa + model.decode_residual(c_a, u_sampled, skips_a)
    d_loss = (hinge_discriminator_loss(model.discriminate(batch_a, "A"),
                                       model.discriminate(x_pa, "A"))
              + hinge_discriminator_loss(model.discriminate(batch_p, "P"),
                                         model.discriminate(x_ap, "P")))
    if not torch.isfinite(d_loss):
        raise TrainingDiverged(
            f"non-finite discriminator loss {float(d_loss.detach())}")
    d_loss.backward()
    opt_d.step()

    # Generator step: fresh forward pass, discriminators held fixed.
    opt_g = optimizers["generator"]
    opt_g.zero_grad()
    presence = model.forward_presence(batch_p)
    absence = model.forward_absence(batch_a, noise_generator,
                                    cycle_enabled=weights.cycle_enabled)
    fake_scores = (model.discriminate(presence.x_pa, "A"),
                   model.discriminate(absence.x_ap, "P"))
    report = total_generator_loss(presence, absence, weights,
                                  seg_target=seg_target,
                                  labeled_mask=labeled_mask,
                                  fake_scores=fake_scores)
    report.terms["adv_d"] = float(d_loss.detach())
    _require_finite(report, "generator step")
    report.total.backward()
    opt_g.step()
    return report


def _baseline_step(model: TranslationModel, batch_p: Tensor, batch_a: Tensor,
                   seg_target: Optional[Tensor],
                   labeled_mask: Optional[Tensor],
                   optimizers: dict[str, torch.optim.Optimizer],
                   weights: LossWeights) -> LossReport:
    opt = optimizers["generator"]
    opt.zero_grad()
    (c_p, u_p), skips_p = model.encode(batch_p)
    y_seg = model.decode_segmentation(c_p, u_p, skips_p)
    seg = segmentation_loss(y_seg, seg_target, labeled_mask)
    terms = {"seg": float(seg.detach())}
    total = weights.seg * seg
    if model.variant == "ae_baseline":
        rec_p = model.recon_decoder(torch.cat([c_p, u_p], dim=1), None,
                                    model.preset.image_size)
        (c_a, u_a), _ = model.encode(batch_a)
        rec_a = model.recon_decoder(torch.cat([c_a, u_a], dim=1), None,
                                    model.preset.image_size)
        rec = l1_loss(batch_p, rec_p) + l1_loss(batch_a, rec_a)
        total = total + weights.rec * rec
        terms["rec"] = float(rec.detach())
    report = LossReport(total=total, terms=terms)
    _require_finite(report, f"{model.variant} step")
    if report.total.requires_grad:
        report.total.backward()
        opt.step()
    return report
