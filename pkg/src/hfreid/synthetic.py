"""Procedural texture identities for desk-scale retrieval benchmarks.

An identity is a fixed recipe (stripe frequency/orientation/contrast, spot
layout, base gray level); each rendered image varies pose, stripe phase, and
lighting, and composites the textured ellipse over either a cluttered
high-frequency background or a plain one. Clutter is identity-irrelevant by
construction: it is redrawn from the per-image rng.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .datapipe import Manifest, ManifestRecord, write_manifest
from .errors import ParameterError


@dataclass(frozen=True)
class IdentityRecipe:
    stripe_freq: float
    stripe_angle: float
    stripe_contrast: float
    spot_count: int
    spot_brightness: float
    base_level: float
    pattern_seed: int


def make_recipe(rng: np.random.Generator) -> IdentityRecipe:
    return IdentityRecipe(
        stripe_freq=float(rng.uniform(4.0, 14.0)),
        stripe_angle=float(rng.uniform(0.0, np.pi)),
        stripe_contrast=float(rng.uniform(0.3, 0.55)),
        spot_count=int(rng.integers(0, 9)),
        spot_brightness=float(rng.choice((-0.35, 0.35))),
        base_level=float(rng.uniform(0.35, 0.65)),
        pattern_seed=int(rng.integers(0, 2**31 - 1)),
    )


def recipes_for(num_ids: int, rng: np.random.Generator) -> list[IdentityRecipe]:
    """Stratified identity recipes: stripe frequency and orientation are
    spread over their ranges (independently shuffled) so no two identities
    collapse onto near-identical textures by chance."""
    freqs = np.linspace(4.0, 14.0, num_ids)
    angles = np.linspace(0.0, np.pi, num_ids, endpoint=False)
    rng.shuffle(freqs)
    rng.shuffle(angles)
    return [
        IdentityRecipe(
            stripe_freq=float(freqs[i]),
            stripe_angle=float(angles[i]),
            stripe_contrast=float(rng.uniform(0.3, 0.55)),
            spot_count=int(rng.integers(0, 9)),
            spot_brightness=float(rng.choice((-0.35, 0.35))),
            base_level=float(rng.uniform(0.35, 0.65)),
            pattern_seed=int(rng.integers(0, 2**31 - 1)),
        )
        for i in range(num_ids)
    ]


def _clutter_background(size: int, rng: np.random.Generator) -> np.ndarray:
    # pixel-scale salt noise plus a few hard-edged bars: plenty of
    # high-frequency energy, none of it tied to identity
    noise = rng.random((size, size)) < 0.5
    bg = np.where(noise, 0.8, 0.2)
    for _ in range(int(rng.integers(4, 9))):
        horizontal = rng.random() < 0.5
        thickness = int(rng.integers(1, 4))
        start = int(rng.integers(0, size - thickness))
        value = float(rng.choice((0.05, 0.95)))
        if horizontal:
            bg[start : start + thickness, :] = value
        else:
            bg[:, start : start + thickness] = value
    return bg


def render_image(
    recipe: IdentityRecipe,
    rng: np.random.Generator,
    size: int = 64,
    background: str = "clutter",
) -> tuple[np.ndarray, np.ndarray]:
    """One H x W image in [0, 1] plus the boolean object mask."""
    if background not in ("clutter", "plain"):
        raise ParameterError(f"background must be 'clutter' or 'plain', got {background!r}")
    coords = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(coords, coords)

    cx = float(rng.uniform(-0.12, 0.12))
    cy = float(rng.uniform(-0.12, 0.12))
    rx = 0.65 * float(rng.uniform(0.9, 1.1))
    ry = 0.47 * float(rng.uniform(0.9, 1.1))
    tilt = float(rng.uniform(-0.18, 0.18))

    # object-local frame: texture moves with the ellipse
    xo = (xx - cx) * np.cos(tilt) + (yy - cy) * np.sin(tilt)
    yo = -(xx - cx) * np.sin(tilt) + (yy - cy) * np.cos(tilt)
    mask = (xo / rx) ** 2 + (yo / ry) ** 2 <= 1.0

    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    u = np.cos(recipe.stripe_angle) * xo + np.sin(recipe.stripe_angle) * yo
    tex = recipe.base_level + 0.5 * recipe.stripe_contrast * np.sin(
        np.pi * recipe.stripe_freq * u + phase
    )

    spot_rng = np.random.default_rng(recipe.pattern_seed)
    for _ in range(recipe.spot_count):
        sx = float(spot_rng.uniform(-0.8, 0.8)) * rx
        sy = float(spot_rng.uniform(-0.8, 0.8)) * ry
        sr = float(spot_rng.uniform(0.05, 0.1))
        spot = (xo - sx) ** 2 + (yo - sy) ** 2 < sr * sr
        tex = np.where(spot, tex + recipe.spot_brightness, tex)

    light = float(rng.uniform(0.85, 1.15))
    tex = np.clip(tex * light, 0.02, 0.98)

    if background == "clutter":
        bg = _clutter_background(size, rng)
    else:
        bg = np.full((size, size), 0.5)
    return np.where(mask, tex, bg), mask


def generate_dataset(
    out_dir: str,
    num_ids: int,
    images_per_id: int,
    size: int = 64,
    seed: int = 0,
    background: str = "clutter",
) -> str:
    """Write PNGs plus a manifest; returns the manifest path."""
    if num_ids < 1 or images_per_id < 1:
        raise ParameterError("num_ids and images_per_id must be positive")
    os.makedirs(out_dir, exist_ok=True)
    recipe_rng = np.random.default_rng([seed, 0])
    recipes = recipes_for(num_ids, recipe_rng)
    records = []
    for i, recipe in enumerate(recipes):
        identity = f"id{i:03d}"
        for j in range(images_per_id):
            img_rng = np.random.default_rng([seed, 1, i, j])
            img, _ = render_image(recipe, img_rng, size=size, background=background)
            name = f"{identity}_im{j:03d}.png"
            arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(np.repeat(arr[:, :, None], 3, axis=2), mode="RGB").save(
                os.path.join(out_dir, name)
            )
            records.append(ManifestRecord(path=name, identity=identity))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(Manifest("synthetic", records), manifest_path)
    return manifest_path


def patch_object_fraction(mask: np.ndarray, patch_size: int) -> np.ndarray:
    """Per-patch object coverage: (H/P) x (W/P) grid of fractions in [0, 1]."""
    h, w = mask.shape
    if h % patch_size or w % patch_size:
        raise ParameterError(f"mask {mask.shape} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    blocks = mask.astype(np.float64).reshape(gh, patch_size, gw, patch_size)
    return blocks.mean(axis=(1, 3))
