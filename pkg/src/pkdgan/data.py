"""Dataset ingestion: IDX and CIFAR-10 binary formats, one-class splits, resizing."""

import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 pixel bytes
CIFAR_TRAIN_FILES = ["data_batch_%d.bin" % i for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"

TARGET_SIZE = 32


class DataFormatError(ValueError):
    """Base class for on-disk format violations."""


class BadMagicError(DataFormatError):
    pass


class TruncatedPayloadError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class RecordSizeError(DataFormatError):
    pass


@dataclass
class RawDataset:
    """Images as (N, H, W, C) uint8 plus integer class labels 0-9."""

    images: np.ndarray
    labels: np.ndarray
    name: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(
                "%d images but %d labels" % (len(self.images), len(self.labels))
            )

    def __len__(self):
        return len(self.images)


@dataclass
class OneClassSplit:
    """Normalized 32x32 train/test partitions for one normal class.

    Image arrays are float32 of shape (N, C, 32, 32) in [-1, 1].
    test_labels: 0 = normal, 1 = novel.
    """

    normal_class: int
    train_images: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    @property
    def channels(self):
        return self.train_images.shape[1]


def _read_be32(f, path):
    data = f.read(4)
    if len(data) != 4:
        raise TruncatedPayloadError("%s: truncated header" % path)
    return struct.unpack(">I", data)[0]


def load_idx(images_path, labels_path, name="idx"):
    """Load an MNIST-style IDX image/label file pair."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise BadMagicError("%s: magic 0x%08x, expected 0x%08x"
                                % (images_path, magic, IDX_IMAGE_MAGIC))
        count = _read_be32(f, images_path)
        rows = _read_be32(f, images_path)
        cols = _read_be32(f, images_path)
        payload = f.read()
        if len(payload) < count * rows * cols:
            raise TruncatedPayloadError(
                "%s: expected %d pixel bytes, got %d"
                % (images_path, count * rows * cols, len(payload)))
        images = np.frombuffer(payload, dtype=np.uint8,
                               count=count * rows * cols)
        images = images.reshape(count, rows, cols, 1)

    with open(labels_path, "rb") as f:
        magic = _read_be32(f, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise BadMagicError("%s: magic 0x%08x, expected 0x%08x"
                                % (labels_path, magic, IDX_LABEL_MAGIC))
        label_count = _read_be32(f, labels_path)
        payload = f.read()
        if len(payload) < label_count:
            raise TruncatedPayloadError(
                "%s: expected %d label bytes, got %d"
                % (labels_path, label_count, len(payload)))
        labels = np.frombuffer(payload, dtype=np.uint8, count=label_count)

    if count != label_count:
        raise CountMismatchError(
            "image count %d != label count %d" % (count, label_count))
    return RawDataset(images=images, labels=labels.astype(np.int64), name=name)


def _load_cifar_file(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    raw = np.fromfile(path, dtype=np.uint8)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise RecordSizeError(
            "%s: %d bytes is not a multiple of %d" % (path, len(raw), CIFAR_RECORD_BYTES))
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    # pixels are R, G, B planes of 1024 bytes each
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images, labels


def load_cifar10(root, split="train"):
    """Load CIFAR-10 from its binary batch files under ``root``."""
    files = CIFAR_TRAIN_FILES if split == "train" else [CIFAR_TEST_FILE]
    images, labels = [], []
    for fname in files:
        img, lab = _load_cifar_file(os.path.join(root, fname))
        images.append(img)
        labels.append(lab)
    return RawDataset(images=np.concatenate(images),
                      labels=np.concatenate(labels),
                      name="cifar10")


def normalize(raw):
    """Map uint8 pixel values onto [-1, 1] via v/127.5 - 1."""
    return raw.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def resize_bilinear(image, size=TARGET_SIZE):
    """Bilinear resize of an (H, W, C) array to (size, size, C).

    Uses half-pixel-center sampling: source coordinate for output pixel j is
    (j + 0.5) * (in / out) - 0.5, clamped to the valid range. An input already
    at the target size is returned unchanged.
    """
    h, w, c = image.shape
    if h == size and w == size:
        return image

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (pos - lo).astype(np.float64)
        return lo, hi, frac

    ylo, yhi, yf = axis_weights(h, size)
    xlo, xhi, xf = axis_weights(w, size)

    img = image.astype(np.float64)
    # interpolate rows, then columns
    rows = img[ylo] * (1.0 - yf)[:, None, None] + img[yhi] * yf[:, None, None]
    out = (rows[:, xlo] * (1.0 - xf)[None, :, None]
           + rows[:, xhi] * xf[None, :, None])
    return out.astype(image.dtype if np.issubdtype(image.dtype, np.floating)
                      else np.float64)


def _prepare(images):
    """uint8 (N, H, W, C) -> float32 (N, C, 32, 32) in [-1, 1]."""
    out = np.empty((len(images), images.shape[3], TARGET_SIZE, TARGET_SIZE),
                   dtype=np.float32)
    for i, img in enumerate(images):
        # normalize before resize; fixed order for determinism
        out[i] = resize_bilinear(normalize(img)).transpose(2, 0, 1)
    return out


def make_one_class_split(train, test, normal_class):
    """Build a one-class split: normal-class train images, full binary-labeled test set."""
    mask = train.labels == normal_class
    if not mask.any():
        raise ValueError("class %d absent from training set" % normal_class)
    if train.images.shape[1:] != test.images.shape[1:]:
        raise ValueError("train/test image shapes differ")
    return OneClassSplit(
        normal_class=int(normal_class),
        train_images=_prepare(train.images[mask]),
        test_images=_prepare(test.images),
        test_labels=(test.labels != normal_class).astype(np.int64),
    )


def load_digits_corpus(train_fraction=0.8):
    """Bundled handwritten-digit corpus (8x8, scikit-learn) as train/test RawDatasets.

    Offline stand-in for MNIST-style desk experiments: per class, the first
    ``train_fraction`` of samples (original order) go to train, the rest to test.
    """
    from sklearn.datasets import load_digits

    bunch = load_digits()
    images = np.round(bunch.images * (255.0 / 16.0)).astype(np.uint8)[..., None]
    labels = bunch.target.astype(np.int64)

    train_mask = np.zeros(len(labels), dtype=bool)
    for cls in range(10):
        idx = np.flatnonzero(labels == cls)
        train_mask[idx[: int(len(idx) * train_fraction)]] = True

    return (RawDataset(images[train_mask], labels[train_mask], "digits"),
            RawDataset(images[~train_mask], labels[~train_mask], "digits"))


def load_dataset(name, root=None, max_train=None):
    """Load a named dataset as (train, test) RawDatasets.

    ``root`` is required for mnist/fmnist/cifar10; ``digits`` is bundled.
    ``max_train`` truncates the training set (desk-scale runs).
    """
    name = name.lower()
    if name == "digits":
        train, test = load_digits_corpus()
    elif name in ("mnist", "fmnist"):
        if root is None:
            raise ValueError("dataset root required for %s" % name)
        train = load_idx(os.path.join(root, "train-images-idx3-ubyte"),
                         os.path.join(root, "train-labels-idx1-ubyte"), name)
        test = load_idx(os.path.join(root, "t10k-images-idx3-ubyte"),
                        os.path.join(root, "t10k-labels-idx1-ubyte"), name)
    elif name == "cifar10":
        if root is None:
            raise ValueError("dataset root required for cifar10")
        train = load_cifar10(root, "train")
        test = load_cifar10(root, "test")
    else:
        raise ValueError("unknown dataset %r" % name)

    if max_train is not None and len(train) > max_train:
        train = RawDataset(train.images[:max_train], train.labels[:max_train],
                           train.name)
    return train, test
