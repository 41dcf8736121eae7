"""Deterministic synthetic multi-lesion volumes and their file format.

Each sample packs 1..max_instances disjoint ellipsoidal blobs into a
noisy volume, then blurs it so instance boundaries are soft while the
ground-truth masks stay crisp (they are the pre-blur blobs). Everything
is a pure function of (seed, config), and the .vol container round-trips
bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, GenerationError, VolumeFormatError
from .queries import PointPrompt

MAGIC = b"MIQ3DVOL"
VERSION = 1
DISJOINT_MARGIN = 2.0
AXIS_RATIO_RANGE = (0.7, 1.4)


@dataclass(frozen=True)
class SynthConfig:
    shape: tuple = (32, 32, 32)
    max_instances: int = 4
    radius_range: tuple = (3.0, 6.0)
    noise_sigma: float = 0.1
    blur_sigma: float = 1.0
    intensity_offset: float = 0.5

    def __post_init__(self):
        if self.max_instances < 1:
            raise ConfigError("max_instances must be >= 1")
        r_min, r_max = self.radius_range
        if not (0 < r_min <= r_max):
            raise ConfigError("radius_range must satisfy 0 < r_min <= r_max")
        if r_max >= min(self.shape) / 3:
            raise ConfigError("r_max must stay below min(shape)/3")


@dataclass
class VolumeSample:
    volume: np.ndarray  # [1, D, H, W] float32 in [0, 1]
    instance_masks: list  # of bool [D, H, W]
    rng_seed: int
    spacing: tuple = (1, 1, 1)
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return self.volume.shape[1:]


def _ellipsoid(shape, center, radii) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    acc = np.zeros(shape, dtype=np.float64)
    for g, c, r in zip(grids, center, radii):
        acc = acc + ((g - c) / r) ** 2
    return acc <= 1.0


def generate(seed: int, cfg: SynthConfig = SynthConfig()) -> VolumeSample:
    """Build one sample; fully determined by (seed, cfg).

    Blob placement rejection-samples for pairwise disjointness with a
    2-voxel margin and aborts after 1000 failed attempts per blob.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in cfg.shape)
    count = int(rng.integers(1, cfg.max_instances + 1))
    r_min, r_max = cfg.radius_range

    masks: list[np.ndarray] = []
    occupied = np.zeros(shape, dtype=bool)
    for _ in range(count):
        for attempt in range(1000):
            base = rng.uniform(r_min, r_max)
            ratios = rng.uniform(*AXIS_RATIO_RANGE, size=3)
            radii = np.clip(base * ratios, 1.0, r_max)
            margins = radii + DISJOINT_MARGIN
            if any(2 * m + 3 >= s for m, s in zip(margins, shape)):
                continue
            center = [rng.uniform(m + 1, s - 2 - m) for m, s in zip(margins, shape)]
            blob = _ellipsoid(shape, center, radii)
            if not blob.any():
                continue
            inflated = _ellipsoid(shape, center, radii + DISJOINT_MARGIN)
            if (inflated & occupied).any():
                continue
            masks.append(blob)
            occupied |= blob
            break
        else:
            raise GenerationError(
                f"could not place instance {len(masks) + 1}/{count} after 1000 attempts; config too crowded"
            )

    volume = rng.normal(0.0, cfg.noise_sigma, size=shape)
    volume[occupied] += cfg.intensity_offset
    volume = ndimage.gaussian_filter(volume, sigma=cfg.blur_sigma)
    volume = np.clip(volume, 0.0, 1.0).astype(np.float32)

    return VolumeSample(
        volume=volume[None],
        instance_masks=masks,
        rng_seed=int(seed),
        meta={"config": asdict(cfg)},
    )


def _interior_mask(m: np.ndarray) -> np.ndarray:
    """Voxels whose 6-neighbors all lie inside the mask."""
    padded = np.pad(m, 1)
    interior = m.copy()
    for axis in range(3):
        for offset in (0, 2):
            shifted = np.take(padded, range(offset, m.shape[axis] + offset), axis=axis)
            shifted = shifted[tuple(slice(1, -1) if ax != axis else slice(None) for ax in range(3))]
            interior &= shifted
    return interior


def sample_prompt(sample: VolumeSample, seed: int) -> tuple[PointPrompt, int]:
    """Uniform instance, then a uniform interior voxel of its mask.

    Masks without interior voxels fall back to any mask voxel.
    """
    rng = np.random.default_rng(seed)
    idx = int(rng.integers(0, len(sample.instance_masks)))
    mask = sample.instance_masks[idx]
    candidates = np.argwhere(_interior_mask(mask))
    if len(candidates) == 0:
        candidates = np.argwhere(mask)
    voxel = candidates[int(rng.integers(0, len(candidates)))]
    return PointPrompt(float(voxel[0]), float(voxel[1]), float(voxel[2])), idx


def write_vol(path, sample: VolumeSample) -> None:
    """Serialize to the .vol container plus an informational JSON sidecar."""
    path = Path(path)
    d, h, w = sample.shape
    count = len(sample.instance_masks)
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<IIIII", VERSION, d, h, w, count)
    payload += sample.volume.astype("<f4").tobytes()
    for mask in sample.instance_masks:
        payload += np.packbits(mask.reshape(-1), bitorder="little").tobytes()
    payload += struct.pack("<Q", sample.rng_seed & 0xFFFFFFFFFFFFFFFF)
    path.write_bytes(bytes(payload))

    sidecar = {
        "shape": [d, h, w],
        "n_instances": count,
        "rng_seed": sample.rng_seed,
        "spacing": list(sample.spacing),
        **sample.meta,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def read_vol(path) -> VolumeSample:
    """Parse a .vol container, validating magic, version, and exact size."""
    raw = Path(path).read_bytes()
    header = len(MAGIC) + 20
    if len(raw) < header:
        raise VolumeFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[: len(MAGIC)] != MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {raw[:8]!r}")
    version, d, h, w, count = struct.unpack_from("<IIIII", raw, len(MAGIC))
    if version != VERSION:
        raise VolumeFormatError(f"{path}: unsupported version {version}")
    voxels = d * h * w
    mask_bytes = (voxels + 7) // 8
    expected = header + voxels * 4 + count * mask_bytes + 8
    if len(raw) != expected:
        raise VolumeFormatError(f"{path}: size {len(raw)} != expected {expected}")

    offset = header
    volume = np.frombuffer(raw, dtype="<f4", count=voxels, offset=offset).reshape(d, h, w)
    offset += voxels * 4
    masks = []
    for _ in range(count):
        bits = np.frombuffer(raw, dtype=np.uint8, count=mask_bytes, offset=offset)
        masks.append(np.unpackbits(bits, bitorder="little")[:voxels].astype(bool).reshape(d, h, w))
        offset += mask_bytes
    (rng_seed,) = struct.unpack_from("<Q", raw, offset)
    return VolumeSample(
        volume=volume.copy()[None],
        instance_masks=masks,
        rng_seed=int(rng_seed),
    )
