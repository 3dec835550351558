"""Dataset construction: crop/jitter augmentation, dataset mixing, manifests."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import (
    NUM_AFFORDANCES,
    AffordanceTensor,
    CoverageMask,
    RgbRaster,
    ValidationError,
    atomic_write_text,
    load_image,
    load_mask,
    load_tensor,
    save_image,
    save_mask,
    save_tensor,
)

MIN_CROP = 8


@dataclass(frozen=True)
class Sample:
    image: RgbRaster
    target: AffordanceTensor
    mask: CoverageMask
    source_id: str = ""

    def __post_init__(self):
        hw = (self.image.height, self.image.width)
        if (self.target.height, self.target.width) != hw or (self.mask.height, self.mask.width) != hw:
            raise ValidationError(
                f"{self.source_id}: image {hw}, target {self.target.values.shape[1:]} and "
                f"mask {self.mask.valid.shape} must share height and width"
            )
        if self.target.values.shape[0] != NUM_AFFORDANCES:
            raise ValidationError(f"{self.source_id}: target must have {NUM_AFFORDANCES} channels")

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.height, self.image.width


@dataclass(frozen=True)
class AugmentSpec:
    crops_per_image: int = 4
    crop_fraction_range: tuple[float, float] = (0.5, 1.0)
    gain_range: tuple[float, float] = (0.8, 1.2)
    contrast_range: tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        if self.crops_per_image < 0:
            raise ValueError("crops_per_image must be >= 0")
        lo, hi = self.crop_fraction_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_fraction_range must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}")
        for name in ("gain_range", "contrast_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be a positive interval, got {(lo, hi)}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for name in ("crop_fraction_range", "gain_range", "contrast_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "AugmentSpec":
        return cls(**json.loads(text))


def jitter(patch: np.ndarray, gain: np.ndarray, contrast: float) -> np.ndarray:
    """Per-channel gain, then contrast about the patch mean, clamped to [0, 1]."""
    gained = patch * gain
    mean = gained.mean()
    # c*x + (1-c)*m rather than m + c*(x-m): exact identity when c == 1
    return np.clip(contrast * gained + (1.0 - contrast) * mean, 0.0, 1.0)


def crop_augment(sample: Sample, spec: AugmentSpec) -> list[Sample]:
    h, w = sample.shape
    short = min(h, w)
    lo, hi = spec.crop_fraction_range
    if int(lo * short) < MIN_CROP:
        raise ValueError(
            f"crop side {lo} * {short} is below the {MIN_CROP}x{MIN_CROP} minimum"
        )
    rng = np.random.default_rng(spec.seed)
    out = []
    for i in range(spec.crops_per_image):
        side = int(rng.uniform(lo, hi) * short)
        r0 = int(rng.integers(0, h - side + 1))
        c0 = int(rng.integers(0, w - side + 1))
        gain = rng.uniform(*spec.gain_range, size=3)
        contrast = float(rng.uniform(*spec.contrast_range))
        win = (slice(r0, r0 + side), slice(c0, c0 + side))
        image = jitter(sample.image.data[win], gain, contrast)
        out.append(
            Sample(
                RgbRaster(image),
                AffordanceTensor(sample.target.values[(slice(None),) + win]),
                CoverageMask(sample.mask.valid[win]),
                f"{sample.source_id}#crop{i}",
            )
        )
    return out


def augment_dataset(samples: list[Sample], spec: AugmentSpec) -> list[Sample]:
    """crop_augment over a dataset; sample i uses seed ``spec.seed ^ i``."""
    out = []
    for i, s in enumerate(samples):
        per_sample = AugmentSpec(
            spec.crops_per_image, spec.crop_fraction_range, spec.gain_range,
            spec.contrast_range, spec.seed ^ i,
        )
        out.extend(crop_augment(s, per_sample))
    return out


def mix_datasets(a: list, b: list, seed: int) -> list:
    """Concatenate two datasets and shuffle them together."""
    joined = list(a) + list(b)
    order = np.random.default_rng(seed).permutation(len(joined))
    return [joined[i] for i in order]


# --- manifests -------------------------------------------------------------

MANIFEST_KEYS = ("image", "target", "mask", "source_id")


def write_samples(samples, out_dir, prefix: str = "sample") -> Path:
    """Write samples as PNG/AFMT/AFMK files plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        stem = f"{prefix}_{i:05d}"
        save_image(s.image, out_dir / f"{stem}.png")
        save_tensor(s.target, out_dir / f"{stem}.afmt")
        save_mask(s.mask, out_dir / f"{stem}.afmk")
        entries.append(
            {"image": f"{stem}.png", "target": f"{stem}.afmt", "mask": f"{stem}.afmk",
             "source_id": s.source_id or stem}
        )
    return write_manifest(entries, out_dir / "manifest.json")


def write_manifest(entries: list[dict], path) -> Path:
    atomic_write_text(path, json.dumps(entries, indent=1) + "\n")
    return Path(path)


def read_manifest(path) -> list[dict]:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise ValidationError(f"{path}: manifest must be a JSON list")
    for n, e in enumerate(entries):
        missing = [k for k in MANIFEST_KEYS if k not in e]
        if missing:
            raise ValidationError(f"{path}: entry {n} lacks {missing}")
    return entries


def load_sample(entry: dict, base_dir) -> Sample:
    base = Path(base_dir)
    return Sample(
        load_image(base / entry["image"]),
        load_tensor(base / entry["target"]),
        load_mask(base / entry["mask"]),
        entry["source_id"],
    )


def load_manifest(path) -> list[Sample]:
    path = Path(path)
    return [load_sample(e, path.parent) for e in read_manifest(path)]
