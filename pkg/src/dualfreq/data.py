"""Datasets: CIFAKE folders, raw binary records, and a synthetic generator.

Images are stored as ``uint8`` arrays ``[N, 3, H, W]`` (R, G, B planes)
and converted to normalised ``float32`` only when a batch is assembled,
so augmentation can be re-sampled every epoch without touching the
stored pixels. Label 0 is real, label 1 is AI-generated.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataLoadError, InvalidLabelError, ShapeError

MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)
CLASS_DIRS = (("REAL", 0), ("FAKE", 1))
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
RECORD_IMAGE_SIZE = 32


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    label: int
    source_id: str


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    ids: list = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ShapeError(f"dataset images must be [N, C, H, W], got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ShapeError(f"{len(self.images)} images but {len(self.labels)} labels")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise InvalidLabelError("labels must be 0 (real) or 1 (fake)")
        if not self.ids:
            self.ids = [f"{self.split}:{i}" for i in range(len(self.images))]

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return Sample(normalize(self.images[i] / 255.0), int(self.labels[i]), self.ids[i])

    def subset(self, indices):
        indices = np.asarray(indices)
        return Dataset(self.images[indices], self.labels[indices], [self.ids[i] for i in indices], self.split)

    def class_counts(self):
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    def balanced_subset(self, per_class):
        """First ``per_class`` samples of each class, in dataset order."""
        idx = np.concatenate([np.flatnonzero(self.labels == c)[:per_class] for c in (0, 1)])
        return self.subset(np.sort(idx))


def normalize(images, mean=MEAN, std=STD):
    """Per-channel ``(x - mean) / std`` on ``[..., C, H, W]`` values in [0, 1]."""
    images = np.asarray(images, dtype=np.float32)
    m = np.asarray(mean, dtype=np.float32)[:, None, None]
    s = np.asarray(std, dtype=np.float32)[:, None, None]
    return (images - m) / s


def denormalize(images, mean=MEAN, std=STD):
    images = np.asarray(images, dtype=np.float32)
    m = np.asarray(mean, dtype=np.float32)[:, None, None]
    s = np.asarray(std, dtype=np.float32)[:, None, None]
    return images * s + m


def hflip(images):
    """Mirror across the vertical axis (reverse the width axis)."""
    return np.asarray(images)[..., ::-1]


def augment_hflip(images, rng, p=0.5):
    """Flip each image of ``[N, C, H, W]`` independently with probability ``p``."""
    images = np.asarray(images)
    flips = rng.random(len(images)) < p
    out = images.copy()
    out[flips] = out[flips][..., ::-1]
    return out


def batch_tensor(dataset, indices, augment_rng=None, mean=MEAN, std=STD):
    """Normalised float32 images and labels for ``indices``.

    When ``augment_rng`` is given, each image is flipped with probability
    0.5 before normalisation (flip and per-channel normalisation commute).
    """
    raw = dataset.images[indices]
    if augment_rng is not None:
        raw = augment_hflip(raw, augment_rng)
    return normalize(raw / np.float32(255.0), mean, std), dataset.labels[indices]


def batches(n, batch_size, rng=None, shuffle=True):
    """Index arrays covering ``range(n)``; the last batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(n) if hasattr(n, "__len__") else int(n)
    order = rng.permutation(n) if shuffle else np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


# CIFAKE folders ------------------------------------------------------------------


def read_image(path, size=RECORD_IMAGE_SIZE):
    """Decode an 8-bit RGB image to ``[3, H, W]`` uint8; other modes are rejected."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            mode, dims = im.mode, im.size
            if mode != "RGB":
                raise DataLoadError(f"{path}: expected 8-bit RGB image, found mode {mode}")
            if size is not None and dims != (size, size):
                raise DataLoadError(f"{path}: expected {size}x{size} image, found {dims[0]}x{dims[1]}")
            arr = np.asarray(im, dtype=np.uint8)
    except DataLoadError:
        raise
    except Exception as exc:
        raise DataLoadError(f"{path}: cannot decode image ({exc})") from None
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_png(path, image):
    from PIL import Image

    Image.fromarray(np.asarray(image, dtype=np.uint8).transpose(1, 2, 0), mode="RGB").save(path)


def load_cifake(root, split, limit_per_class=None, size=RECORD_IMAGE_SIZE):
    """Load ``<root>/<split>/{REAL,FAKE}/*.png`` with lexicographic file order."""
    images, labels, ids = [], [], []
    for dirname, label in CLASS_DIRS:
        d = os.path.join(root, split, dirname)
        if not os.path.isdir(d):
            raise DataLoadError(f"missing directory {d}")
        names = sorted(f for f in os.listdir(d) if f.lower().endswith(IMAGE_EXTENSIONS))
        if limit_per_class is not None:
            names = names[:limit_per_class]
        for name in names:
            path = os.path.join(d, name)
            images.append(read_image(path, size))
            labels.append(label)
            ids.append(f"{dirname}/{name}")
    if not images:
        raise DataLoadError(f"no images found under {os.path.join(root, split)}")
    return Dataset(np.stack(images), np.array(labels), ids, split)


# raw binary records --------------------------------------------------------------

RECORD_BYTES = 1 + 3 * RECORD_IMAGE_SIZE * RECORD_IMAGE_SIZE


def write_records(path, dataset):
    """One byte label then 3072 bytes (R, G, B planes, row-major) per image."""
    if dataset.images.shape[1:] != (3, RECORD_IMAGE_SIZE, RECORD_IMAGE_SIZE):
        raise ShapeError(f"records hold 3x32x32 images, got {dataset.images.shape[1:]}")
    out = np.empty((len(dataset), RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = dataset.labels
    out[:, 1:] = dataset.images.reshape(len(dataset), -1)
    with open(path, "wb") as fh:
        fh.write(out.tobytes())


def load_records(path, split="train"):
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as exc:
        raise DataLoadError(f"{path}: {exc}") from None
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise DataLoadError(f"{path}: size {raw.size} is not a multiple of {RECORD_BYTES}-byte records")
    recs = raw.reshape(-1, RECORD_BYTES)
    labels = recs[:, 0].astype(np.int64)
    if np.any(labels > 1):
        raise DataLoadError(f"{path}: record label outside {{0, 1}}")
    images = recs[:, 1:].reshape(-1, 3, RECORD_IMAGE_SIZE, RECORD_IMAGE_SIZE).copy()
    name = os.path.basename(path)
    return Dataset(images, labels, [f"{name}:{i}" for i in range(len(labels))], split)


# synthetic planted-spectrum data -------------------------------------------------

SYNTH_FREQUENCY = 10
SYNTH_AMPLITUDE = 0.02 * 255


def planted_frequencies(size=32, frequency=SYNTH_FREQUENCY):
    """DFT bins that carry the planted grid in a ``size x size`` image."""
    f = frequency
    return {(f, 0), (size - f, 0), (0, f), (0, size - f)}


def synth_spectral_dataset(n_per_class, rng, size=32, frequency=SYNTH_FREQUENCY,
                           amplitude=SYNTH_AMPLITUDE, split="train"):
    """Smoothed-noise images; class 1 additionally carries a faint periodic grid.

    Each image is a blurred colour noise field (random blur width, contrast
    and brightness) plus white noise of random strength. Class-1 images add
    ``amplitude * (cos(2 pi f y / size + a) + cos(2 pi f x / size + b))`` to
    every channel with random phases ``a, b``: spatially a ~2% ripple, but a
    sharp peak at a fixed DFT bin. Classes alternate 0, 1, 0, 1, ...
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    n = 2 * n_per_class
    labels = np.tile([0, 1], n_per_class)
    coords = np.arange(size)
    images = np.empty((n, 3, size, size), dtype=np.uint8)
    for i in range(n):
        sigma = rng.uniform(0.7, 1.5)
        field_ = gaussian_filter(rng.standard_normal((3, size, size)), (0, sigma, sigma), mode="wrap")
        field_ /= field_.std() + 1e-12
        img = 128 + rng.uniform(-40, 40) + rng.uniform(3, 8) * field_
        img += rng.uniform(0, 14) * rng.standard_normal((3, size, size))
        if labels[i] == 1:
            a, b = rng.uniform(0, 2 * np.pi, size=2)
            grid = np.cos(2 * np.pi * frequency * coords / size + a)[:, None]
            grid = grid + np.cos(2 * np.pi * frequency * coords / size + b)[None, :]
            img += amplitude * grid
        images[i] = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return Dataset(images, labels, [f"synth-{split}:{i}" for i in range(n)], split)
