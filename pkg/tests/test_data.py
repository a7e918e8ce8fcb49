import numpy as np
import pytest
from PIL import Image

from dualfreq.data import (
    Dataset,
    augment_hflip,
    batch_tensor,
    batches,
    denormalize,
    hflip,
    load_cifake,
    load_records,
    normalize,
    planted_frequencies,
    read_image,
    synth_spectral_dataset,
    write_png,
    write_records,
)
from dualfreq.errors import DataLoadError, InvalidLabelError, ShapeError
from dualfreq.spectral import dft2d, to_grayscale


def test_normalize_examples():
    x = np.zeros((3, 2, 2), dtype=np.float32)
    x[0] = 0.485
    x[1] = 1.0
    out = normalize(x)
    np.testing.assert_allclose(out[0], 0.0, atol=1e-7)
    np.testing.assert_allclose(out[1], (1 - 0.456) / 0.224, rtol=1e-6)
    assert round(float(out[1, 0, 0]), 4) == 2.4286
    np.testing.assert_allclose(out[2], -0.406 / 0.225, rtol=1e-6)


def test_normalize_round_trip(rng):
    x = rng.random((4, 3, 8, 8)).astype(np.float32)
    np.testing.assert_allclose(denormalize(normalize(x)), x, atol=1e-6)


def test_hflip_examples():
    x = np.arange(12).reshape(1, 3, 4)
    np.testing.assert_array_equal(hflip(x)[0, 0], [3, 2, 1, 0])
    np.testing.assert_array_equal(hflip(hflip(x)), x)


def test_flip_rate(rng):
    imgs = np.tile(np.arange(4, dtype=np.uint8), (2000, 1, 1, 1))
    out = augment_hflip(imgs, rng)
    flipped = out[:, 0, 0, 0] == 3
    assert np.all(flipped | (out[:, 0, 0, 0] == 0))
    # binomial(2000, 0.5): 5 sigma is about 112
    assert abs(flipped.sum() - 1000) < 112


def test_augment_keeps_labels_and_is_seeded():
    ds = synth_spectral_dataset(8, np.random.default_rng(0))
    idx = np.arange(len(ds))
    x1, y1 = batch_tensor(ds, idx, np.random.default_rng(9))
    x2, y2 = batch_tensor(ds, idx, np.random.default_rng(9))
    np.testing.assert_array_equal(y1, ds.labels)
    np.testing.assert_array_equal(x1, x2)
    x0, _ = batch_tensor(ds, idx)
    for a, b in zip(x0, x1):
        assert np.array_equal(a, b) or np.array_equal(a[..., ::-1], b)


def test_batches_sizes_and_determinism():
    sizes = [len(b) for b in batches(100, 32, np.random.default_rng(0))]
    assert sizes == [32, 32, 32, 4]
    a = batches(100, 32, np.random.default_rng(4))
    b = batches(100, 32, np.random.default_rng(4))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(100))
    np.testing.assert_array_equal(np.concatenate(batches(10, 3, shuffle=False)), np.arange(10))


def test_dataset_validation():
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 3, 4), np.uint8), [0, 1])
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 3, 4, 4), np.uint8), [0])
    with pytest.raises(InvalidLabelError):
        Dataset(np.zeros((1, 3, 4, 4), np.uint8), [2])


def test_dataset_item_is_normalized():
    ds = Dataset(np.full((1, 3, 2, 2), 255, np.uint8), [1])
    s = ds[0]
    assert s.label == 1
    np.testing.assert_allclose(s.image[1], (1 - 0.456) / 0.224, rtol=1e-6)


# image folders -----------------------------------------------------------------


def _make_tree(root, rng, n=3, size=32):
    for cls in ("REAL", "FAKE"):
        d = root / "train" / cls
        d.mkdir(parents=True)
        for i in reversed(range(n)):
            write_png(d / f"{i:03d}.png", rng.integers(0, 256, (3, size, size)))


def test_load_cifake_order_and_limit(tmp_path, rng):
    _make_tree(tmp_path, rng)
    ds = load_cifake(tmp_path, "train")
    assert ds.ids == [f"{c}/{i:03d}.png" for c in ("REAL", "FAKE") for i in range(3)]
    np.testing.assert_array_equal(ds.labels, [0, 0, 0, 1, 1, 1])
    ref = np.asarray(Image.open(tmp_path / "train/FAKE/001.png")).transpose(2, 0, 1)
    np.testing.assert_array_equal(ds.images[4], ref)
    assert len(load_cifake(tmp_path, "train", limit_per_class=2)) == 4


def test_wrong_size_is_named(tmp_path, rng):
    p = tmp_path / "big.png"
    write_png(p, rng.integers(0, 256, (3, 48, 40)))
    with pytest.raises(DataLoadError, match="40x48"):
        read_image(p)


def test_grayscale_rejected(tmp_path):
    p = tmp_path / "gray.png"
    Image.fromarray(np.zeros((32, 32), np.uint8), mode="L").save(p)
    with pytest.raises(DataLoadError, match="mode L"):
        read_image(p)


def test_undecodable_and_missing(tmp_path):
    p = tmp_path / "junk.png"
    p.write_bytes(b"not an image")
    with pytest.raises(DataLoadError):
        read_image(p)
    with pytest.raises(DataLoadError, match="missing directory"):
        load_cifake(tmp_path, "test")


# binary records ----------------------------------------------------------------


def test_records_round_trip(tmp_path):
    ds = synth_spectral_dataset(3, np.random.default_rng(1))
    path = tmp_path / "data.bin"
    write_records(path, ds)
    assert path.stat().st_size == 6 * 3073
    back = load_records(path)
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    raw = path.read_bytes()
    assert raw[0] == 0 and raw[3073] == 1
    assert raw[1] == ds.images[0, 0, 0, 0] and raw[1 + 1024] == ds.images[0, 1, 0, 0]


def test_records_bad_size(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\0" * 3074)
    with pytest.raises(DataLoadError):
        load_records(path)


# synthetic data ----------------------------------------------------------------


def _offdc_argmax(img):
    spec = dft2d(to_grayscale(img.astype(np.float64)))
    mag = np.hypot(spec.re, spec.im)
    k = np.fft.fftfreq(32) * 32
    radius = np.hypot(*np.meshgrid(k, k, indexing="ij"))
    mag[radius < 4] = 0
    return np.unravel_index(np.argmax(mag), mag.shape)


def test_synthetic_planted_peak():
    ds = synth_spectral_dataset(50, np.random.default_rng(2))
    assert ds.class_counts() == (50, 50)
    planted = planted_frequencies()
    hits = [tuple(int(v) for v in _offdc_argmax(ds.images[i])) in planted for i in np.flatnonzero(ds.labels == 1)]
    assert np.mean(hits) >= 0.95
    top = {}
    for i in np.flatnonzero(ds.labels == 0):
        key = tuple(int(v) for v in _offdc_argmax(ds.images[i]))
        top[key] = top.get(key, 0) + 1
    assert max(top.values()) / 50 < 0.2
    assert sum(top.get(b, 0) for b in planted) / 50 < 0.2


def test_synthetic_determinism():
    a = synth_spectral_dataset(5, np.random.default_rng(11))
    b = synth_spectral_dataset(5, np.random.default_rng(11))
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, [0, 1] * 5)
    assert a.images.dtype == np.uint8
