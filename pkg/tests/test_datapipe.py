import os

import numpy as np
import pytest

from hfreid import datapipe, spectral
from hfreid.datapipe import (
    AugmentConfig,
    BatchSpec,
    ImageCache,
    Manifest,
    ManifestRecord,
    augment_pair,
    draw_augment,
    eval_input,
    iter_epoch,
    load_manifest,
    load_split,
    sample_batch,
    split_identities,
    to_grayscale,
    train_label_map,
    write_manifest,
    write_split,
)
from hfreid.errors import InputError, ParameterError


def _fake_manifest(num_ids=10, imgs=3):
    records = [
        ManifestRecord(path=f"/nowhere/id{i:02d}_{j}.png", identity=f"id{i:02d}")
        for i in range(num_ids)
        for j in range(imgs)
    ]
    return Manifest("fake", records)


def test_manifest_round_trip(tmp_path, tiny_dataset):
    manifest, _, manifest_path = tiny_dataset
    out = tmp_path / "copy.tsv"
    write_manifest(manifest, str(out))
    again = load_manifest(str(out))
    assert [r.identity for r in again.records] == [r.identity for r in manifest.records]
    assert len(again.records) == 24


def test_manifest_rejects_missing_image(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("missing.png\tid0\n")
    with pytest.raises(InputError):
        load_manifest(str(p))


def test_manifest_rejects_malformed_line(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("only_one_field\n")
    with pytest.raises(InputError):
        load_manifest(str(p))


def test_split_sizes_and_disjointness():
    split = split_identities(_fake_manifest(10), seed=0)
    assert len(split.train_ids) == 7
    assert len(split.test_ids) == 3
    assert not set(split.train_ids) & set(split.test_ids)
    assert set(split.train_ids) | set(split.test_ids) == {f"id{i:02d}" for i in range(10)}


def test_split_deterministic_file_bytes(tmp_path):
    manifest = _fake_manifest(12)
    for name in ("a", "b"):
        write_split(split_identities(manifest, seed=5), str(tmp_path / name))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_split_different_seeds_differ():
    manifest = _fake_manifest(100, imgs=1)
    s1 = split_identities(manifest, seed=1)
    s2 = split_identities(manifest, seed=2)
    assert s1.train_ids != s2.train_ids
    for s in (s1, s2):
        assert not set(s.train_ids) & set(s.test_ids)
        assert len(s.train_ids) == 70


def test_split_round_trip(tmp_path):
    split = split_identities(_fake_manifest(9), seed=7)
    path = tmp_path / "split.txt"
    write_split(split, str(path))
    again = load_split(str(path))
    assert again == split


def test_split_needs_two_identities():
    with pytest.raises(InputError):
        split_identities(_fake_manifest(1), seed=0)


def test_batch_spec_validation():
    with pytest.raises(ParameterError):
        BatchSpec(num_ids=1, images_per_id=4)
    with pytest.raises(ParameterError):
        BatchSpec(num_ids=8, images_per_id=1)


def test_sample_batch_paper_structure():
    manifest = _fake_manifest(12, imgs=6)
    by_id = manifest.by_identity()
    label_of = {identity: i for i, identity in enumerate(sorted(by_id))}
    rng = np.random.default_rng(0)
    batch = sample_batch(by_id, label_of, BatchSpec(8, 4), rng)
    assert len(batch) == 32
    labels = [label for _, label in batch]
    counts = {l: labels.count(l) for l in set(labels)}
    assert len(counts) == 8
    assert all(c == 4 for c in counts.values())


def test_sample_batch_replacement_rule():
    records = {
        "a": [ManifestRecord("a0.png", "a")],
        "b": [ManifestRecord(f"b{i}.png", "b") for i in range(5)],
    }
    label_of = {"a": 0, "b": 1}
    rng = np.random.default_rng(1)
    batch = sample_batch(records, label_of, BatchSpec(2, 4), rng)
    a_picks = [r.path for r, l in batch if l == 0]
    b_picks = [r.path for r, l in batch if l == 1]
    assert a_picks == ["a0.png"] * 4          # single image repeated
    assert len(set(b_picks)) == 4             # enough images: no replacement


def test_sample_batch_minimal_pk():
    manifest = _fake_manifest(2, imgs=2)
    by_id = manifest.by_identity()
    label_of = {identity: i for i, identity in enumerate(sorted(by_id))}
    batch = sample_batch(by_id, label_of, BatchSpec(2, 2), np.random.default_rng(2))
    assert len(batch) == 4


def test_sample_batch_too_few_identities():
    manifest = _fake_manifest(3, imgs=4)
    by_id = manifest.by_identity()
    with pytest.raises(ParameterError):
        sample_batch(by_id, {}, BatchSpec(8, 4), np.random.default_rng(0))


def test_rotation_draw_statistics():
    cfg = AugmentConfig()
    rng = np.random.default_rng(3)
    angles = np.array([draw_augment(rng, cfg).angle for _ in range(10_000)])
    assert np.max(np.abs(angles)) <= 15.0
    assert abs(angles.mean()) < 0.5
    assert angles.std() > 5.0  # actually spread over the range


def test_augment_pair_deterministic(tiny_dataset):
    manifest, _, _ = tiny_dataset
    img = datapipe.load_image(manifest.records[0].path, (64, 64))
    cfg = AugmentConfig()
    a = augment_pair(img, np.random.default_rng(42), cfg)
    b = augment_pair(img, np.random.default_rng(42), cfg)
    assert a[0].tobytes() == b[0].tobytes()
    assert a[1].tobytes() == b[1].tobytes()


def test_augment_pair_shapes_and_range(tiny_dataset):
    manifest, _, _ = tiny_dataset
    img = datapipe.load_image(manifest.records[0].path, (64, 64))
    orig, hf = augment_pair(img, np.random.default_rng(0), AugmentConfig())
    assert orig.shape == (3, 64, 64)
    assert hf.shape == (3, 64, 64)
    assert orig.min() >= -1.0 and orig.max() <= 1.0
    assert hf.min() >= -1.0 and hf.max() <= 1.0


def test_eval_input_is_normalize_only(tiny_dataset):
    manifest, _, _ = tiny_dataset
    img = datapipe.load_image(manifest.records[0].path, (64, 64))
    out = eval_input(img, AugmentConfig())
    assert out.shape == (3, 64, 64)
    assert np.allclose(out, (img.transpose(2, 0, 1) - 0.5) / 0.5, atol=1e-6)


def test_stream_alignment_with_identity_spectrum_path(tiny_dataset):
    # filter and mask disabled: the high-frequency input must equal the
    # grayscale of the original input, proving geometric alignment
    manifest, _, _ = tiny_dataset
    img = datapipe.load_image(manifest.records[0].path, (64, 64))
    cfg = AugmentConfig(fma_enabled=False)
    orig, hf = augment_pair(img, np.random.default_rng(1), cfg)
    orig_pixels = orig.transpose(1, 2, 0) * 0.5 + 0.5
    hf_pixels = hf[0] * 0.5 + 0.5
    assert np.max(np.abs(to_grayscale(orig_pixels) - hf_pixels)) < 1e-6
    assert np.max(np.abs(hf[0] - hf[1])) == 0.0  # replicated channels


def test_grayscale_weights():
    img = np.zeros((2, 2, 3))
    img[..., 0] = 1.0
    assert np.allclose(to_grayscale(img), 0.299)
    img = np.ones((2, 2, 3))
    assert np.allclose(to_grayscale(img), 1.0)


def test_epoch_iteration_reproducible(tiny_dataset):
    manifest, split, _ = tiny_dataset
    spec = BatchSpec(2, 2)
    cfg = AugmentConfig()
    cache = ImageCache()

    def run():
        return [
            (o.numpy().copy(), h.numpy().copy(), l.numpy().copy())
            for o, h, l in iter_epoch(manifest, split, spec, cfg, seed=9, epoch=2, cache=cache)
        ]

    a, b = run(), run()
    assert len(a) == len(manifest.subset(split.train_ids).records) // 4
    for (ao, ah, al), (bo, bh, bl) in zip(a, b):
        assert ao.tobytes() == bo.tobytes()
        assert ah.tobytes() == bh.tobytes()
        assert al.tolist() == bl.tolist()


def test_epoch_batches_satisfy_spec(tiny_dataset):
    manifest, split, _ = tiny_dataset
    cache = ImageCache()
    for orig, hf, labels in iter_epoch(
        manifest, split, BatchSpec(2, 2), AugmentConfig(), seed=0, epoch=0, cache=cache
    ):
        assert orig.shape[0] == 4
        uniq, counts = np.unique(labels.numpy(), return_counts=True)
        assert len(uniq) == 2
        assert all(counts == 2)


def test_epoch_without_hf_stream(tiny_dataset):
    manifest, split, _ = tiny_dataset
    cache = ImageCache()
    for orig, hf, labels in iter_epoch(
        manifest, split, BatchSpec(2, 2), AugmentConfig(), seed=0, epoch=0, cache=cache,
        want_hf=False,
    ):
        assert hf is None
        assert orig.shape == (4, 3, 64, 64)


def test_train_label_map_dense(tiny_dataset):
    _, split, _ = tiny_dataset
    labels = train_label_map(split)
    assert sorted(labels.values()) == list(range(len(split.train_ids)))
