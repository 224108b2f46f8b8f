"""Brain-MRI half-slice preprocessing.

Consumes directories of co-registered four-sequence NIfTI volumes plus a
lesion label volume per case. Each volume is normalized per channel over
its brain (nonzero) voxels, every axial slice is split at the midline into
two half-slices, and half-slices are routed to the presence domain (enough
lesion), the absence domain (no lesion), or discarded. Outputs are flat
little-endian float32 binaries with a small header, plus a manifest.

A minimal NIfTI-1 reader/writer is included; only single-file (.nii or
.nii.gz) volumes with scalar voxels are supported.
"""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .manifest import DatasetManifest, ExampleRecord, select_labeled_subset
from .seeds import derive_seed, derived_rng

logger = logging.getLogger(__name__)

HALF_SLICE_MAGIC = 0x4853  # "SH" little-endian
_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32,
                 64: np.float64, 256: np.int8, 512: np.uint16, 768: np.uint32}


class VolumeError(ValueError):
    """A case is unreadable or inconsistent; the volume is skipped."""


@dataclass
class BratsSliceSpec:
    """Half-slice admission rules and file conventions."""

    min_brain_frac: float = 0.25
    min_lesion_frac_of_brain: float = 0.01
    hemisphere_split: bool = True
    sequences: tuple[str, ...] = ("t1", "t2", "t1ce", "flair")
    label_suffix: str = "seg"
    labeled_fraction: float = 0.01
    fold_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)


# -- NIfTI-1 ---------------------------------------------------------------------

def read_nifti(path: str | Path) -> np.ndarray:
    """Read a single-file NIfTI-1 volume into an (X, Y, Z) array."""
    path = Path(path)
    opener = gzip.open if path.name.endswith(".gz") else open
    with opener(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 352:
        raise VolumeError(f"{path}: truncated NIfTI header")
    for order in ("<", ">"):
        if struct.unpack(order + "i", blob[:4])[0] == 348:
            break
    else:
        raise VolumeError(f"{path}: not a NIfTI-1 file")
    magic = blob[344:348]
    if magic[:3] not in (b"n+1", b"ni1"):
        raise VolumeError(f"{path}: bad NIfTI magic {magic!r}")
    if magic[:3] == b"ni1":
        raise VolumeError(f"{path}: two-file NIfTI pairs are not supported")
    dim = struct.unpack(order + "8h", blob[40:56])
    ndim = dim[0]
    if not 1 <= ndim <= 4:
        raise VolumeError(f"{path}: unsupported dimensionality {ndim}")
    shape = tuple(dim[1:1 + ndim])
    datatype = struct.unpack(order + "h", blob[70:72])[0]
    if datatype not in _NIFTI_DTYPES:
        raise VolumeError(f"{path}: unsupported datatype code {datatype}")
    vox_offset = int(struct.unpack(order + "f", blob[108:112])[0])
    scl_slope, scl_inter = struct.unpack(order + "2f", blob[112:120])
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(order)
    count = int(np.prod(shape))
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=vox_offset)
    volume = data.reshape(shape, order="F").astype(np.float64)
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        volume = volume * slope + scl_inter
    if volume.ndim == 4:  # trailing singleton time axis
        volume = volume[..., 0]
    return volume


def write_nifti(path: str | Path, volume: np.ndarray) -> Path:
    """Write a float32 single-file NIfTI-1 volume (test fixtures, exports)."""
    path = Path(path)
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise ValueError("expected a 3-D volume")
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    dim = (3,) + volume.shape + (1, 1, 1, 1)
    struct.pack_into("<8h", header, 40, *dim)
    struct.pack_into("<h", header, 70, 16)        # float32
    struct.pack_into("<h", header, 72, 32)        # bitpix
    struct.pack_into("<8f", header, 76, 1, 1, 1, 1, 1, 1, 1, 1)  # pixdim
    struct.pack_into("<f", header, 108, 352.0)    # vox_offset
    struct.pack_into("<2f", header, 112, 1.0, 0.0)
    header[344:348] = b"n+1\x00"
    blob = bytes(header) + b"\x00" * 4 + \
        np.asfortranarray(volume.astype("<f4")).tobytes(order="F")
    opener = gzip.open if path.name.endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(blob)
    return path


# -- half-slice binary container --------------------------------------------------

def write_half_slice(path: str | Path, array: np.ndarray) -> Path:
    """float32 (C, H, W) array behind an 8-byte header of four uint16s:
    magic, channel count, height, width."""
    array = np.asarray(array, dtype=np.float32)
    if array.ndim != 3:
        raise ValueError("half-slice arrays are (channels, H, W)")
    c, h, w = array.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4H", HALF_SLICE_MAGIC, c, h, w))
        fh.write(array.astype("<f4").tobytes())
    return Path(path)


def read_half_slice(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"{path}: truncated half-slice header")
        magic, c, h, w = struct.unpack("<4H", header)
        if magic != HALF_SLICE_MAGIC:
            raise ValueError(f"{path}: bad half-slice magic {magic:#06x}")
        data = np.frombuffer(fh.read(4 * c * h * w), dtype="<f4")
    if data.size != c * h * w:
        raise ValueError(f"{path}: truncated half-slice payload")
    return data.reshape(c, h, w).astype(np.float32)


# -- preprocessing ----------------------------------------------------------------

def normalize_volume(channels: np.ndarray) -> np.ndarray:
    """Mean-center/std-divide each channel over its brain (nonzero) voxels.

    Background voxels stay exactly zero.
    """
    out = np.array(channels, dtype=np.float64, copy=True)
    for c in range(out.shape[0]):
        brain = out[c] != 0
        if not brain.any():
            continue
        vals = out[c][brain]
        std = vals.std()
        out[c][brain] = (vals - vals.mean()) / (std if std > 0 else 1.0)
    return out


def _case_volumes(case_dir: Path, spec: BratsSliceSpec
                  ) -> tuple[np.ndarray, np.ndarray]:
    def find(suffix: str) -> Path:
        for ext in (".nii.gz", ".nii"):
            matches = sorted(case_dir.glob(f"*_{suffix}{ext}"))
            if matches:
                return matches[0]
        raise VolumeError(f"{case_dir.name}: missing sequence {suffix!r}")

    seqs = [read_nifti(find(s)) for s in spec.sequences]
    label = read_nifti(find(spec.label_suffix))
    shapes = {v.shape for v in seqs} | {label.shape}
    if len(shapes) != 1:
        raise VolumeError(
            f"{case_dir.name}: sequence shapes disagree: {sorted(shapes)}")
    return np.stack(seqs), label


def _route_half_slice(image: np.ndarray, brain: np.ndarray,
                      lesion: np.ndarray, spec: BratsSliceSpec
                      ) -> str | None:
    """Return 'P', 'A', or None (discard) for one half-slice."""
    n_pixels = brain.size
    n_brain = int(brain.sum())
    if n_brain < spec.min_brain_frac * n_pixels:
        return None
    n_lesion = int(lesion.sum())
    if n_lesion == 0:
        return "A"
    if n_lesion >= spec.min_lesion_frac_of_brain * n_brain:
        return "P"
    return None


def brats_to_half_slices(volume_dir: str | Path, spec: BratsSliceSpec,
                         out_dir: str | Path,
                         master_seed: int = 0) -> DatasetManifest:
    """Process every case directory under ``volume_dir`` into half-slices.

    Cases are assigned to folds by seeded draw with the configured
    fractions. Unreadable or inconsistent cases are skipped with a log
    entry. After writing, the labeled subset is marked on the manifest
    (plain fraction of the train fold, no class filter).
    """
    volume_dir, out_dir = Path(volume_dir), Path(out_dir)
    case_dirs = sorted(d for d in volume_dir.iterdir() if d.is_dir())
    if not case_dirs:
        raise ValueError(f"no case directories under {volume_dir}")
    records: list[ExampleRecord] = []
    fold_edges = np.cumsum(spec.fold_fractions)
    for case_dir in case_dirs:
        try:
            channels, label = _case_volumes(case_dir, spec)
        except VolumeError as err:
            logger.warning("skipping case %s: %s", case_dir.name, err)
            continue
        brain3d = (channels != 0).any(axis=0)
        channels = normalize_volume(channels)
        draw = derived_rng(master_seed, "fold", case_dir.name).random()
        fold = ("train", "valid", "test")[int(np.searchsorted(fold_edges,
                                                              draw))]
        fold_dir = out_dir / fold
        fold_dir.mkdir(parents=True, exist_ok=True)
        mid = channels.shape[2] // 2
        if spec.hemisphere_split:
            halves = ((slice(None), slice(0, mid)),
                      (slice(None), slice(mid, None)))
        else:
            halves = ((slice(None), slice(None)),)
        for z in range(channels.shape[3]):
            for side, half in enumerate(halves):
                img = channels[(slice(None),) + half + (z,)]
                brain = brain3d[half + (z,)]
                lesion = label[half + (z,)] > 0
                domain = _route_half_slice(img, brain, lesion, spec)
                if domain is None:
                    continue
                stem = f"{case_dir.name}_z{z:03d}_h{side}"
                img_rel = f"{fold}/{stem}.bin"
                write_half_slice(out_dir / img_rel,
                                 img.astype(np.float32))
                mask_rel = None
                if domain == "P":
                    mask_rel = f"{fold}/{stem}_mask.bin"
                    write_half_slice(out_dir / mask_rel,
                                     lesion[None].astype(np.float32))
                records.append(ExampleRecord(
                    image_path=img_rel, domain=domain, fold=fold,
                    mask_path=mask_rel))
    manifest = DatasetManifest(spec=asdict(spec), seed=master_seed,
                               records=records, root=out_dir)
    if manifest.select(fold="train", domain="P"):
        select_labeled_subset(manifest, spec.labeled_fraction,
                              class_filter=None,
                              seed=derive_seed(master_seed, "labeled-subset"))
    manifest.save(out_dir / "manifest.jsonl")
    return manifest
