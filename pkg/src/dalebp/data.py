"""MNIST IDX ingestion, normalization and optional augmentation."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MNIST_MEAN = 0.1307
MNIST_STD = 0.3081
DATA_DIR_ENV = "DALEBP_DATA_DIR"
SPLITS = {"train": "train", "test": "t10k"}


@dataclass
class Dataset:
    images: np.ndarray  # (count, 784), normalized
    labels: np.ndarray  # (count,), int64
    split: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ContractError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
            raise ContractError("labels must lie in [0, 9]")

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int) -> Dataset:
        return Dataset(self.images[:n], self.labels[:n], self.split)


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file", offset=0) from None


def parse_idx(buf: bytes, expect_magic: int, name: str = "<buffer>") -> np.ndarray:
    """Parse one IDX container into a uint8 array."""
    if len(buf) < 4:
        raise ParseError(f"{name}: header needs 4 bytes, got {len(buf)}", offset=len(buf))
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != expect_magic:
        raise ParseError(f"{name}: bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise ParseError(f"{name}: header needs {header} bytes, got {len(buf)}", offset=len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    expected = header + int(np.prod(dims))
    if len(buf) != expected:
        raise ParseError(
            f"{name}: expected {expected} bytes for dims {dims}, got {len(buf)}", offset=min(len(buf), expected)
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def normalize(pixels) -> np.ndarray:
    """Scale uint8 pixels to [0, 1], then standardize with the MNIST channel statistics."""
    return (np.asarray(pixels, dtype=float) / 255.0 - MNIST_MEAN) / MNIST_STD


def load_idx(images_path, labels_path, split: str = "") -> Dataset:
    images = parse_idx(_read(images_path), IMAGES_MAGIC, str(images_path))
    labels = parse_idx(_read(labels_path), LABELS_MAGIC, str(labels_path))
    if len(images) != len(labels):
        raise ParseError(
            f"count mismatch: {len(images)} images in {images_path}, {len(labels)} labels in {labels_path}", offset=4
        )
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ParseError(f"{labels_path}: label {labels[bad]} out of range", offset=8 + bad)
    return Dataset(normalize(images.reshape(len(images), -1)), labels.astype(np.int64), split)


def data_dir(override=None) -> Path:
    if override:
        return Path(override)
    return Path(os.environ.get(DATA_DIR_ENV, Path.home() / ".cache" / "mnist"))


def load_mnist(split: str, directory=None) -> Dataset:
    if split not in SPLITS:
        raise ContractError(f"unknown split {split!r}")
    d = data_dir(directory)
    stem = SPLITS[split]
    return load_idx(d / f"{stem}-images-idx3-ubyte", d / f"{stem}-labels-idx1-ubyte", split)


@dataclass(frozen=True)
class Augmentation:
    enabled: bool = False
    crop_padding: int = 2
    rotation_degrees: float = 10.0


def augment(images, rng: np.random.Generator, aug: Augmentation, side: int = 28) -> np.ndarray:
    """Random crop with zero padding and random rotation, per image.

    Operates in normalized units; padding uses the value of a black pixel.
    """
    if not aug.enabled:
        return images
    from scipy.ndimage import rotate

    background = (0.0 - MNIST_MEAN) / MNIST_STD
    imgs = np.asarray(images, dtype=float).reshape(-1, side, side)
    out = np.empty_like(imgs)
    p = aug.crop_padding
    for i, img in enumerate(imgs):
        if aug.rotation_degrees:
            angle = rng.uniform(-aug.rotation_degrees, aug.rotation_degrees)
            img = rotate(img - background, angle, reshape=False, order=1, mode="constant", cval=0.0) + background
        if p:
            padded = np.pad(img, p, constant_values=background)
            dy, dx = rng.integers(0, 2 * p + 1, size=2)
            img = padded[dy:dy + side, dx:dx + side]
        out[i] = img
    return out.reshape(len(imgs), -1)
