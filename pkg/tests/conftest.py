import numpy as np
import pytest
import torch

from translseg.networks import ArchitecturePreset


def tiny_preset(image_size=(8, 8), seg_norm_mode="adaptive_from_mlp"):
    """Miniature architecture for fast CPU tests (< 5k parameters)."""
    return ArchitecturePreset(
        name="tiny", image_channels=1, image_size=image_size,
        enc_stem_channels=2, enc_block_channels=(4, 8),
        enc_kernel=3, dec_kernel=3, res_kernel=3,
        latent_channels=8, unique_channels=2,
        disc_stem_channels=2, disc_block_channels=(4,),
        disc_kernel=3, disc_scales=2,
        seg_norm_mode=seg_norm_mode, mlp_hidden=8, mlp_layers=2)


@pytest.fixture
def tiny():
    return tiny_preset()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def torch_gen():
    return torch.Generator().manual_seed(1234)


def parameter_checksum(module: torch.nn.Module) -> float:
    with torch.no_grad():
        return float(sum(p.double().abs().sum() for p in module.parameters()))
