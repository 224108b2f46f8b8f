"""Training objectives.

Dice segmentation loss, L1 reconstruction and latent-matching losses, the
optional cycle loss, hinge adversarial losses, and the weighted total
generator objective. All functions are pure in their tensor inputs and keep
the autograd graph; reported per-term values are detached floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

from torch import Tensor
import torch.nn.functional as F

if TYPE_CHECKING:
    from .model import AbsenceBundle, PresenceBundle

DICE_EPS = 1e-7


@dataclass
class LossWeights:
    """Scalar weights of the total objective.

    Defaults are the tuned operating point of the proposed model; the
    autoencoding baseline uses rec = seg = 1 with everything else 0.
    """

    adv: float = 3.0
    rec: float = 50.0
    lat: float = 1.0
    cyc: float = 50.0
    seg: float = 0.01
    cycle_enabled: bool = True

    def __post_init__(self) -> None:
        for name in ("adv", "rec", "lat", "cyc", "seg"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")

    @classmethod
    def proposed_defaults(cls) -> "LossWeights":
        return cls()

    @classmethod
    def ae_defaults(cls) -> "LossWeights":
        return cls(adv=0.0, rec=1.0, lat=0.0, cyc=0.0, seg=1.0,
                   cycle_enabled=False)

    @classmethod
    def seg_only_defaults(cls) -> "LossWeights":
        return cls(adv=0.0, rec=0.0, lat=0.0, cyc=0.0, seg=1.0,
                   cycle_enabled=False)


@dataclass
class LossReport:
    """Weighted total plus the unweighted per-term values."""

    total: Tensor
    terms: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        out = {"total": float(self.total.detach())}
        out.update(self.terms)
        return out


def _check_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(
            f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def dice_loss(pred: Tensor, target: Tensor) -> Tensor:
    """One minus the Dice overlap, summed over all pixels of the batch.

    ``pred`` holds probabilities in [0, 1] and ``target`` a binary mask. The
    smoothing epsilon in numerator and denominator makes empty-vs-empty
    yield a loss of ~0 instead of 0/0.
    """
    _check_same_shape(pred, target, "dice_loss")
    intersection = (pred * target).sum()
    denom = pred.sum() + target.sum()
    return 1.0 - (2.0 * intersection + DICE_EPS) / (denom + DICE_EPS)


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute elementwise difference."""
    _check_same_shape(a, b, "l1_loss")
    return (a - b).abs().mean()


def reconstruction_loss(presence: "PresenceBundle",
                        absence: "AbsenceBundle") -> Tensor:
    """L1 between each input image and its same-domain reconstruction."""
    return l1_loss(presence.x_p, presence.x_pp) + l1_loss(absence.x_a,
                                                          absence.x_aa)


def latent_loss(presence: "PresenceBundle", absence: "AbsenceBundle") -> Tensor:
    """Sum of the six L1 code-matching terms.

    Common codes must survive translation and reconstruction in both
    domains; unique codes must survive presence reconstruction and, for
    sampled codes, re-encoding of the generated presence image.
    """
    pairs = [
        (presence.c_p, presence.c_pa),
        (absence.c_a, absence.c_ap),
        (absence.c_a, absence.c_aa),
        (presence.c_p, presence.c_pp),
        (presence.u_p, presence.u_pp),
        (absence.u_sampled, absence.u_ap),
    ]
    total = pairs[0][0].new_zeros(())
    for a, b in pairs:
        if a is None or b is None:
            raise ValueError("latent_loss: bundle is missing a code pair")
        total = total + l1_loss(a, b)
    return total


def cycle_loss(x_a: Tensor, x_apa: Optional[Tensor],
               cycle_enabled: bool = True) -> Tensor:
    """L1 of the absence -> presence -> absence round trip (optional)."""
    if not cycle_enabled:
        return x_a.new_zeros(())
    if x_apa is None:
        raise ValueError("cycle_loss: cycle enabled but no round-trip image")
    return l1_loss(x_a, x_apa)


def hinge_discriminator_loss(real_scores: Tensor,
                             fake_scores: Tensor) -> Tensor:
    """mean(max(0, 1 - real)) + mean(max(0, 1 + fake)).

    Piecewise linear; at the hinge point the subgradient is 0 (ReLU
    convention). Fake scores are expected to come from generated images
    with generator gradients blocked.
    """
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def hinge_generator_loss(fake_scores: Tensor) -> Tensor:
    """Negated mean fake score (discriminator weights held fixed)."""
    return -fake_scores.mean()


def segmentation_loss(y_seg: Tensor, target: Optional[Tensor],
                      labeled_mask: Optional[Tensor]) -> Tensor:
    """Dice loss over the labeled sub-batch; 0 when nothing is labeled."""
    if labeled_mask is None or target is None or not bool(labeled_mask.any()):
        return y_seg.new_zeros(())
    return dice_loss(y_seg[labeled_mask], target[labeled_mask])


def total_generator_loss(presence: "PresenceBundle", absence: "AbsenceBundle",
                         weights: LossWeights,
                         seg_target: Optional[Tensor] = None,
                         labeled_mask: Optional[Tensor] = None,
                         fake_scores: Optional[tuple[Tensor, Tensor]] = None,
                         ) -> LossReport:
    """Weighted sum of the generator-side terms.

    ``fake_scores`` holds the discriminator scores of the two translations
    (presence->absence judged by the absence discriminator, and vice
    versa); omit it to drop the adversarial term (weight 0 setups).
    """
    seg = segmentation_loss(presence.y_seg, seg_target, labeled_mask)
    rec = reconstruction_loss(presence, absence)
    lat = latent_loss(presence, absence)
    cyc = cycle_loss(absence.x_a, absence.x_apa, weights.cycle_enabled)
    if fake_scores is not None:
        adv = (hinge_generator_loss(fake_scores[0])
               + hinge_generator_loss(fake_scores[1]))
    else:
        adv = seg.new_zeros(())
    total = (weights.seg * seg + weights.rec * rec + weights.lat * lat
             + weights.cyc * cyc + weights.adv * adv)
    terms = {"seg": float(seg.detach()), "rec": float(rec.detach()),
             "lat": float(lat.detach()), "cyc": float(cyc.detach()),
             "adv_g": float(adv.detach())}
    return LossReport(total=total, terms=terms)
