"""Semi-supervised segmentation via unpaired presence/absence translation."""

from .blocks import (
    ConvBlock,
    ConvBlockConfig,
    CompressedSkip,
    FeatureNorm,
    NormParamMLP,
    SpectralState,
    spectral_normalize,
)
from .losses import (
    LossReport,
    LossWeights,
    cycle_loss,
    dice_loss,
    hinge_discriminator_loss,
    hinge_generator_loss,
    l1_loss,
    latent_loss,
    reconstruction_loss,
    total_generator_loss,
)
from .model import (
    AbsenceBundle,
    OptimizerConfig,
    PresenceBundle,
    TrainingDiverged,
    TranslationModel,
    build_optimizers,
    sample_unique,
    training_step,
)
from .networks import (
    ArchitecturePreset,
    CommonDecoder,
    Encoder,
    LatentPair,
    MultiScaleDiscriminator,
    ResidualDecoder,
    init_weights,
    power_iterate,
    preset,
)

__version__ = "0.1.0"
