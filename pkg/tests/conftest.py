import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))

from hfreid import datapipe, synthetic
from hfreid.backbone import PatchConfig, VisionTransformer


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """6 identities x 4 images of 64x64 clutter-background textures."""
    root = tmp_path_factory.mktemp("tinyset")
    manifest_path = synthetic.generate_dataset(
        str(root), num_ids=6, images_per_id=4, size=64, seed=11
    )
    manifest = datapipe.load_manifest(manifest_path)
    split = datapipe.split_identities(manifest, seed=3)
    return manifest, split, manifest_path


@pytest.fixture()
def tiny_model():
    torch.manual_seed(0)
    cfg = PatchConfig(image_size=(16, 16), patch_size=8, embed_dim=32, depth=2,
                      heads=2, mlp_ratio=2.0, in_channels=1)
    return VisionTransformer(cfg)


def rand_image(rng: np.random.Generator, h: int = 16, w: int = 16) -> np.ndarray:
    return rng.random((h, w))
