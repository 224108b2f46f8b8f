from .augment import AugmentConfig, AugmentParams, apply_augment, augment, \
    sample_augment_params
from .batches import Batch, TrainingBatcher, evaluation_batches, load_example
from .brats import (
    BratsSliceSpec,
    brats_to_half_slices,
    normalize_volume,
    read_half_slice,
    read_nifti,
    write_half_slice,
    write_nifti,
)
from .manifest import (
    DatasetManifest,
    ExampleRecord,
    ManifestError,
    select_labeled_subset,
    validate_manifest,
)
from .mnist import (
    CLUTTER_PRESETS,
    ClutterSpec,
    Layer,
    dither_overlaps,
    generate_cluttered_mnist,
    load_image,
    load_mask,
)
from .seeds import derive_seed, derived_rng
from .sources import DigitSource, load_idx_source, synthetic_digit_source
