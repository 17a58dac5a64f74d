"""Dataset manifests, identity-disjoint splits, PK batches, and paired augmentation.

Manifest format: one record per line, ``path<TAB>identity[<TAB>species]``.
Paths are resolved relative to the manifest's directory. The split sidecar
stores the seed plus the train/test identity lists and is byte-stable for a
given (manifest, seed).

Augmentation produces pixel-aligned pairs: one spatially augmented image is
normalized for the original stream and pushed through the spectral-mix
pipeline for the high-frequency stream, so patch i covers the same spatial
location in both.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from . import spectral
from .errors import InputError, ParameterError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    identity: str
    species: str | None = None


@dataclass
class Manifest:
    name: str
    records: list[ManifestRecord] = field(default_factory=list)

    def identities(self) -> list[str]:
        return sorted({r.identity for r in self.records})

    def by_identity(self) -> dict[str, list[ManifestRecord]]:
        groups: dict[str, list[ManifestRecord]] = {}
        for r in self.records:
            groups.setdefault(r.identity, []).append(r)
        return groups

    def subset(self, identities) -> "Manifest":
        keep = set(identities)
        return Manifest(self.name, [r for r in self.records if r.identity in keep])


def load_manifest(path: str, check_paths: bool = True) -> Manifest:
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise InputError(f"{path}:{lineno}: expected path<TAB>identity[<TAB>species]")
            img_path = parts[0]
            if not os.path.isabs(img_path):
                img_path = os.path.join(base, img_path)
            if check_paths and not os.path.exists(img_path):
                raise InputError(f"{path}:{lineno}: image not found: {img_path}")
            species = parts[2] if len(parts) > 2 and parts[2] else None
            records.append(ManifestRecord(path=img_path, identity=parts[1], species=species))
    if not records:
        raise InputError(f"manifest {path} has no records")
    return Manifest(name=os.path.splitext(os.path.basename(path))[0], records=records)


def write_manifest(manifest: Manifest, path: str, relative_to: str | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        for r in manifest.records:
            p = os.path.relpath(r.path, relative_to) if relative_to else r.path
            line = f"{p}\t{r.identity}"
            if r.species:
                line += f"\t{r.species}"
            fh.write(line + "\n")


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int
    train_fraction: float = 0.7


def split_identities(manifest: Manifest, seed: int, train_fraction: float = 0.7) -> SplitSpec:
    """Identity-disjoint split: lexicographic sort, seeded shuffle, first 70% train."""
    ids = manifest.identities()
    if len(ids) < 2:
        raise InputError(f"need at least 2 identities to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    n_train = int(round(train_fraction * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    train = tuple(sorted(ids[i] for i in perm[:n_train]))
    test = tuple(sorted(ids[i] for i in perm[n_train:]))
    return SplitSpec(train_ids=train, test_ids=test, seed=seed, train_fraction=train_fraction)


def write_split(split: SplitSpec, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"seed: {split.seed}\n")
        fh.write(f"train_fraction: {split.train_fraction}\n")
        fh.write("train: " + ",".join(split.train_ids) + "\n")
        fh.write("test: " + ",".join(split.test_ids) + "\n")


def load_split(path: str) -> SplitSpec:
    fields: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition(":")
            fields[key.strip()] = value.strip()
    try:
        return SplitSpec(
            train_ids=tuple(v for v in fields["train"].split(",") if v),
            test_ids=tuple(v for v in fields["test"].split(",") if v),
            seed=int(fields["seed"]),
            train_fraction=float(fields.get("train_fraction", "0.7")),
        )
    except KeyError as e:
        raise InputError(f"split file {path} is missing field {e.args[0]}") from e


@dataclass(frozen=True)
class BatchSpec:
    """P identities per batch, K images per identity."""

    num_ids: int = 8
    images_per_id: int = 4

    def __post_init__(self):
        if self.num_ids < 2 or self.images_per_id < 2:
            raise ParameterError(
                f"PK batches need P >= 2 and K >= 2, got P={self.num_ids}, K={self.images_per_id}"
            )

    @property
    def batch_size(self) -> int:
        return self.num_ids * self.images_per_id


def sample_batch(
    by_id: dict[str, list[ManifestRecord]],
    label_of: dict[str, int],
    spec: BatchSpec,
    rng: np.random.Generator,
) -> list[tuple[ManifestRecord, int]]:
    """Draw P identities without replacement and K images each.

    Images are drawn without replacement unless the identity has fewer than K
    images, in which case repeats fill the slots.
    """
    ids = sorted(by_id)
    if len(ids) < spec.num_ids:
        raise ParameterError(
            f"need at least P={spec.num_ids} identities, manifest subset has {len(ids)}"
        )
    chosen = rng.choice(len(ids), size=spec.num_ids, replace=False)
    batch = []
    for idx in chosen:
        identity = ids[int(idx)]
        records = by_id[identity]
        replace = len(records) < spec.images_per_id
        picks = rng.choice(len(records), size=spec.images_per_id, replace=replace)
        for p in picks:
            batch.append((records[int(p)], label_of[identity]))
    return batch


@dataclass
class AugmentConfig:
    image_size: tuple[int, int] = (64, 64)
    rotation_deg: float = 15.0
    brightness: float = 0.2
    contrast: float = 0.2
    jitter_prob: float = 0.5
    pad_px: int = 10
    cutoff_fraction: float = spectral.DEFAULT_CUTOFF_FRACTION
    fma_enabled: bool = True           # identity spectrum path when off
    fma_alpha: float | None = None     # force alpha; None draws Uniform(0, 0.5)
    in_channels: int = 3


def load_image(path: str, image_size: tuple[int, int]) -> np.ndarray:
    """Decode to H x W x 3 float RGB in [0, 1] at the target size."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((image_size[1], image_size[0]), Image.BILINEAR)
            return np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, SyntaxError) as e:
        raise InputError(f"cannot decode image {path}: {e}") from e


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Luminance-weighted single channel from H x W x 3."""
    w = np.asarray(GRAY_WEIGHTS, dtype=np.float64)
    return img @ w


def normalize(x: np.ndarray) -> np.ndarray:
    """Shared input normalization: [0, 1] -> [-1, 1]."""
    return (x - 0.5) / 0.5


def _rotate(img: np.ndarray, angle: float) -> np.ndarray:
    # per-channel float rotation keeps precision; zero fill outside the frame
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        chan = Image.fromarray(img[:, :, c].astype(np.float32), mode="F")
        out[:, :, c] = np.asarray(chan.rotate(angle, resample=Image.BILINEAR, fillcolor=0.0))
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class AugmentDraw:
    """One sample's augmentation parameters, drawn up-front from its rng."""

    angle: float
    brightness_on: bool
    brightness: float
    contrast_on: bool
    contrast: float
    crop_top: int
    crop_left: int


def draw_augment(rng: np.random.Generator, cfg: AugmentConfig) -> AugmentDraw:
    return AugmentDraw(
        angle=float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)),
        brightness_on=bool(rng.random() < cfg.jitter_prob),
        brightness=float(rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)),
        contrast_on=bool(rng.random() < cfg.jitter_prob),
        contrast=float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)),
        crop_top=int(rng.integers(0, 2 * cfg.pad_px + 1)),
        crop_left=int(rng.integers(0, 2 * cfg.pad_px + 1)),
    )


def apply_spatial(img: np.ndarray, draw: AugmentDraw, cfg: AugmentConfig) -> np.ndarray:
    h, w = cfg.image_size
    out = _rotate(img, draw.angle)
    if draw.brightness_on:
        out = np.clip(out * draw.brightness, 0, 1)
    if draw.contrast_on:
        mean = out.mean()
        out = np.clip((out - mean) * draw.contrast + mean, 0, 1)
    pad = cfg.pad_px
    padded = np.zeros((h + 2 * pad, w + 2 * pad, 3), dtype=out.dtype)
    padded[pad : pad + h, pad : pad + w] = out
    return padded[draw.crop_top : draw.crop_top + h, draw.crop_left : draw.crop_left + w]


def spatial_augment(img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """Rotation, photometric jitter, pad-then-random-crop; returns H x W x 3."""
    return apply_spatial(img, draw_augment(rng, cfg), cfg)


def hf_from_pixels(gray: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """High-frequency stream pixels from the exact grayscale the original sees."""
    if cfg.fma_enabled:
        return spectral.fma_augment(gray, cfg.cutoff_fraction, rng, alpha=cfg.fma_alpha)
    # identity spectrum path: forward/inverse roundtrip, no filter, no mask
    return spectral.inverse_transform(spectral.forward_transform(gray))


def _to_chw(img: np.ndarray, in_channels: int) -> np.ndarray:
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], in_channels, axis=2)
    elif in_channels == 1:
        img = to_grayscale(img)[:, :, None]
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def augment_pair(
    img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig, want_hf: bool = True
) -> tuple[np.ndarray, np.ndarray | None]:
    """One augmentation draw -> (original input, high-frequency input), both C x H x W.

    The high-frequency image is computed from the already-augmented pixels,
    so the two streams stay geometrically aligned by construction. Single-
    stream training passes ``want_hf=False`` and never touches the spectral
    pipeline.
    """
    aug = spatial_augment(img, rng, cfg)
    orig = normalize(_to_chw(aug, cfg.in_channels))
    if not want_hf:
        return orig.astype(np.float32), None
    hf_gray = hf_from_pixels(to_grayscale(aug), rng, cfg)
    hf = normalize(_to_chw(hf_gray, cfg.in_channels))
    return orig.astype(np.float32), hf.astype(np.float32)


def eval_input(img: np.ndarray, cfg: AugmentConfig) -> np.ndarray:
    """Evaluation-time input: resize happened at load, so normalize only."""
    return normalize(_to_chw(img, cfg.in_channels)).astype(np.float32)


class ImageCache:
    """Decoded-image cache keyed by (path, size); desk-scale datasets fit in RAM."""

    def __init__(self):
        self._cache: dict[tuple[str, tuple[int, int]], np.ndarray] = {}

    def get(self, path: str, image_size: tuple[int, int]) -> np.ndarray:
        key = (path, image_size)
        if key not in self._cache:
            self._cache[key] = load_image(path, image_size)
        return self._cache[key]


def train_label_map(split: SplitSpec) -> dict[str, int]:
    """Dense train-identity indices, stable across runs (sorted order)."""
    return {identity: i for i, identity in enumerate(sorted(split.train_ids))}


def iter_epoch(
    manifest: Manifest,
    split: SplitSpec,
    batch_spec: BatchSpec,
    aug_cfg: AugmentConfig,
    seed: int,
    epoch: int,
    cache: ImageCache,
    want_hf: bool = True,
):
    """Deterministic PK batches for one epoch.

    Batch composition and every per-sample augmentation derive their own rng
    from (seed, epoch, step, position), so iteration order is reproducible
    no matter how loading work is distributed.
    """
    train = manifest.subset(split.train_ids)
    by_id = train.by_identity()
    label_of = train_label_map(split)
    steps = max(1, len(train.records) // batch_spec.batch_size)
    for step in range(steps):
        batch_rng = np.random.default_rng([seed, epoch, step])
        picks = sample_batch(by_id, label_of, batch_spec, batch_rng)
        origs, hfs, labels = [], [], []
        for pos, (record, label) in enumerate(picks):
            sample_rng = np.random.default_rng([seed, epoch, step, pos])
            img = cache.get(record.path, aug_cfg.image_size)
            orig, hf = augment_pair(img, sample_rng, aug_cfg, want_hf=want_hf)
            origs.append(orig)
            hfs.append(hf)
            labels.append(label)
        yield (
            torch.from_numpy(np.stack(origs)),
            torch.from_numpy(np.stack(hfs)) if want_hf else None,
            torch.tensor(labels, dtype=torch.long),
        )
