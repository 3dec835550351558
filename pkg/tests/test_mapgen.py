import numpy as np
import pytest
from hypothesis import given, strategies as st

from affordseg.core import AffordanceTensor, CoverageMask, RgbRaster
from affordseg.mapgen import (
    AugmentSpec,
    Sample,
    augment_dataset,
    crop_augment,
    jitter,
    load_manifest,
    mix_datasets,
    write_samples,
)


def coordinate_sample(h=64, w=64, seed=0):
    """Target channels 0/1 hold the normalized row/column of every pixel."""
    rng = np.random.default_rng(seed)
    target = np.zeros((15, h, w), dtype=np.float32)
    target[0] = (np.arange(h)[:, None] / (h - 1)) * np.ones((1, w))
    target[1] = np.ones((h, 1)) * (np.arange(w)[None, :] / (w - 1))
    image = np.stack([target[0], target[1], rng.random((h, w))], axis=-1)
    mask = (rng.random((h, w)) > 0.3).astype(np.uint8)
    return Sample(RgbRaster(image), AffordanceTensor(target), CoverageMask(mask), "coords")


def test_zero_crops():
    assert crop_augment(coordinate_sample(), AugmentSpec(crops_per_image=0)) == []


def test_identity_jitter_full_frame():
    s = coordinate_sample()
    spec = AugmentSpec(1, (1.0, 1.0), (1.0, 1.0), (1.0, 1.0), seed=3)
    (out,) = crop_augment(s, spec)
    assert np.array_equal(out.image.data, s.image.data)
    assert np.array_equal(out.target.values, s.target.values)


def test_deterministic_given_seed():
    s = coordinate_sample()
    spec = AugmentSpec(3, (0.3, 0.9), seed=7)
    a, b = crop_augment(s, spec), crop_augment(s, spec)
    for x, y in zip(a, b):
        assert x.image.data.tobytes() == y.image.data.tobytes()
        assert x.target.values.tobytes() == y.target.values.tobytes()


def test_crop_below_minimum_rejected():
    with pytest.raises(ValueError):
        crop_augment(coordinate_sample(16, 16), AugmentSpec(1, (0.3, 1.0)))


@given(st.integers(0, 2**32), st.floats(0.2, 1.0))
def test_geometry_lock_step(seed, lo):
    s = coordinate_sample(40, 48)
    for out in crop_augment(s, AugmentSpec(2, (lo, 1.0), seed=seed)):
        rows = np.round(out.target.values[0] * 39).astype(int)
        cols = np.round(out.target.values[1] * 47).astype(int)
        # the crop's target, mask and unjittered image content all come from the same window
        assert np.array_equal(out.mask.valid, s.mask.valid[rows, cols])
        assert np.all(np.diff(rows[:, 0]) == 1) and np.all(np.diff(cols[0]) == 1)
        assert out.image.data.shape[:2] == rows.shape
        assert out.image.data.min() >= 0 and out.image.data.max() <= 1


def test_jitter_keeps_targets_and_masks():
    s = coordinate_sample()
    for out in crop_augment(s, AugmentSpec(4, (0.5, 1.0), (0.5, 1.5), (0.5, 2.0), seed=11)):
        (r0, c0) = (int(round(out.target.values[0, 0, 0] * 63)), int(round(out.target.values[1, 0, 0] * 63)))
        n = out.target.height
        assert out.target.values.tobytes() == s.target.values[:, r0:r0 + n, c0:c0 + n].tobytes()
        assert out.mask.valid.tobytes() == s.mask.valid[r0:r0 + n, c0:c0 + n].tobytes()


def test_jitter_formula():
    patch = np.full((2, 2, 3), 0.5)
    patch[0, 0] = [0.2, 0.4, 0.6]
    g = np.array([1.1, 0.9, 1.0])
    c = 1.5
    gained = patch * g
    m = gained.mean()
    assert np.allclose(jitter(patch, g, c), np.clip(m + c * (gained - m), 0, 1))


def test_augment_dataset_uses_per_sample_seeds():
    a, b = coordinate_sample(seed=1), coordinate_sample(seed=2)
    spec = AugmentSpec(2, (0.5, 1.0), seed=5)
    both = augment_dataset([a, b], spec)
    alone = augment_dataset([b], AugmentSpec(2, (0.5, 1.0), seed=5 ^ 1))
    assert [x.image.data.tobytes() for x in both[2:]] == [x.image.data.tobytes() for x in alone]


def test_spec_json_round_trip():
    spec = AugmentSpec(2, (0.4, 0.8), (0.9, 1.1), (0.7, 1.3), seed=2**63)
    assert AugmentSpec.from_json(spec.to_json()) == spec


@pytest.mark.parametrize("kwargs", [dict(crops_per_image=-1), dict(crop_fraction_range=(0.8, 0.5)),
                                    dict(gain_range=(0.0, 1.0)), dict(crop_fraction_range=(0.5, 1.5))])
def test_bad_spec(kwargs):
    with pytest.raises(ValueError):
        AugmentSpec(**kwargs)


def test_mix_singleton():
    assert mix_datasets([], ["x"], seed=0) == ["x"]


@given(st.lists(st.integers(), max_size=6), st.lists(st.integers(), max_size=6), st.integers(0, 2**32))
def test_mix_is_permutation(a, b, seed):
    out = mix_datasets(a, b, seed)
    assert sorted(out) == sorted(a + b)
    assert out == mix_datasets(a, b, seed)


def test_mix_is_roughly_uniform():
    counts = {}
    for seed in range(3000):
        key = tuple(mix_datasets([0], [1, 2], seed))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    assert min(counts.values()) > 400


def test_manifest_round_trip(tmp_path):
    samples = [coordinate_sample(16, 16, seed=i) for i in range(2)]
    back = load_manifest(write_samples(samples, tmp_path))
    assert len(back) == 2
    for s, b in zip(samples, back):
        assert np.array_equal(b.target.values, s.target.values)
        assert np.array_equal(b.mask.valid, s.mask.valid)
        assert np.abs(b.image.data - s.image.data).max() <= 0.5 / 255 + 1e-12
