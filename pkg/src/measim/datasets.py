"""Digit dataset ingestion: IDX file parsing/writing, resizing to the
electrode grid, and a synthetic 0/1 corpus generator for offline use.

Images are parsed from the big-endian IDX format (magic 0x803 for image
files, 0x801 for labels), scaled to [0,1], filtered to the wanted labels, and
reduced to 6x6 by exact area averaging so total stimulus intensity is
preserved by the resize.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .stimuli import DigitImage

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class DatasetError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class RawDigits:
    """Parsed digit samples at native resolution, before grid resizing."""

    images: np.ndarray  # (n, H, W) float64 in [0,1]
    labels: np.ndarray  # (n,) int64
    split: str = ""

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]


def _open_maybe_gzip(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise DatasetError(f"truncated IDX file while reading {what}")
    return data


def load_idx_images(path) -> np.ndarray:
    """Read an IDX image file into a (n, rows, cols) uint8 array."""
    with _open_maybe_gzip(path) as fh:
        (magic,) = struct.unpack(">i", _read_exact(fh, 4, "magic"))
        if magic != IMAGE_MAGIC:
            raise DatasetError(f"bad magic 0x{magic:08x} in image file "
                               f"(expected 0x{IMAGE_MAGIC:08x})")
        count, rows, cols = struct.unpack(">iii", _read_exact(fh, 12, "header"))
        raw = _read_exact(fh, count * rows * cols, "pixels")
        if fh.read(1):
            raise DatasetError("trailing bytes after pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols).copy()


def load_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        (magic,) = struct.unpack(">i", _read_exact(fh, 4, "magic"))
        if magic != LABEL_MAGIC:
            raise DatasetError(f"bad magic 0x{magic:08x} in label file "
                               f"(expected 0x{LABEL_MAGIC:08x})")
        (count,) = struct.unpack(">i", _read_exact(fh, 4, "header"))
        raw = _read_exact(fh, count, "labels")
        if fh.read(1):
            raise DatasetError("trailing bytes after label data")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64).copy()


def save_idx_images(images: np.ndarray, path) -> None:
    """Write (n, rows, cols) uint8 images in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def save_idx_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_mnist(images_path, labels_path, keep=(0, 1), split: str = "") -> RawDigits:
    """Load an IDX image/label pair, keeping only the wanted digit labels."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"image/label count mismatch: {images.shape[0]} images "
                           f"vs {labels.shape[0]} labels")
    mask = np.isin(labels, list(keep))
    return RawDigits(images=images[mask].astype(np.float64) / 255.0,
                     labels=labels[mask], split=split)


_SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_split_files(directory, split: str) -> tuple[Path, Path] | None:
    """Locate the standard IDX pair for a split, gzipped or not."""
    directory = Path(directory)
    img_name, lbl_name = _SPLIT_FILES[split]
    found = []
    for name in (img_name, lbl_name):
        for candidate in (directory / name, directory / (name + ".gz")):
            if candidate.exists():
                found.append(candidate)
                break
        else:
            return None
    return found[0], found[1]


def load_split(directory, split: str, keep=(0, 1)) -> RawDigits:
    pair = find_split_files(directory, split)
    if pair is None:
        raise DatasetError(f"no {split} IDX files found under {directory}")
    return load_mnist(pair[0], pair[1], keep=keep, split=split)


# ---------------------------------------------------------------------------
# Resizing
# ---------------------------------------------------------------------------

def _coverage_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Fractional overlap weights of output cells over input pixels.

    Row r covers the input interval [r*n_in/n_out, (r+1)*n_in/n_out); weights
    are overlap lengths normalized so each row sums to 1.
    """
    ratio = n_in / n_out
    weights = np.zeros((n_out, n_in))
    for r in range(n_out):
        lo, hi = r * ratio, (r + 1) * ratio
        for i in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            weights[r, i] = min(hi, i + 1) - max(lo, i)
    return weights / ratio


def resize_to_6x6(image: np.ndarray, label: int | None = None):
    """Box-filter area average of an input image down to 6x6.

    With fractional row/column coverage weighting the global mean intensity is
    preserved exactly. Returns a DigitImage when a label is given, else the
    bare 6x6 array.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    if image.shape[0] < 6 or image.shape[1] < 6:
        raise ValueError("input image must be at least 6x6")
    rows = _coverage_matrix(6, image.shape[0])
    cols = _coverage_matrix(6, image.shape[1])
    out = np.clip(rows @ image @ cols.T, 0.0, 1.0)
    if label is None:
        return out
    return DigitImage(pixels=out, label=int(label))


def to_digit_images(raw: RawDigits) -> list[DigitImage]:
    return [resize_to_6x6(img, label) for img, label in zip(raw.images, raw.labels)]


# ---------------------------------------------------------------------------
# Synthetic 0/1 digits (stand-in corpus when no IDX data is on disk)
# ---------------------------------------------------------------------------

def _draw_zero(rng: np.random.Generator, size: int = 28) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = size / 2 + rng.uniform(-2.0, 2.0)
    cy = size / 2 + rng.uniform(-2.0, 2.0)
    rx = rng.uniform(5.5, 8.5)
    ry = rng.uniform(7.5, 10.5)
    theta = rng.uniform(-0.3, 0.3)
    u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    field = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    # ring with a flat full-intensity core and soft edges, like a pen stroke
    half_stroke = rng.uniform(1.6, 2.6) / min(rx, ry)
    img = np.clip((half_stroke - np.abs(field - 1.0)) / half_stroke * 2.0, 0.0, 1.0)
    return img


def _draw_one(rng: np.random.Generator, size: int = 28) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    x0 = size / 2 + rng.uniform(-3.5, 3.5)
    slant = rng.uniform(-0.25, 0.25)
    top = rng.uniform(2.5, 5.5)
    bottom = size - rng.uniform(2.5, 5.5)
    half_w = rng.uniform(1.5, 2.6)
    cx = x0 + slant * (yy - size / 2)
    stroke = np.clip((half_w - np.abs(xx - cx)) / half_w * 2.0 + 1.0, 0.0, 1.0)
    band = (yy >= top) & (yy <= bottom)
    return np.where(band, stroke, 0.0)


def synthetic_digits(n: int, seed: int = 0, size: int = 28) -> RawDigits:
    """Deterministic corpus of handwriting-like 0s and 1s at IDX resolution.

    Zeros are jittered elliptical rings, ones are slanted strokes, both with
    near-saturated cores; labels are balanced and shuffled. Intensity jitter
    and 8-bit quantization roughly match scanned-digit texture.
    """
    rng = np.random.default_rng(seed)
    images = np.zeros((n, size, size))
    labels = np.zeros(n, dtype=np.int64)
    labels[1::2] = 1
    rng.shuffle(labels)
    for i in range(n):
        img = _draw_one(rng, size) if labels[i] else _draw_zero(rng, size)
        img = img * rng.uniform(0.85, 1.0)
        img += np.where(img > 0, rng.normal(0.0, 0.02, size=(size, size)), 0.0)
        images[i] = np.clip(img, 0.0, 1.0)
    quantized = np.round(images * 255.0).astype(np.uint8)
    return RawDigits(images=quantized.astype(np.float64) / 255.0,
                     labels=labels, split="synthetic")


def write_synthetic_corpus(directory, n_train: int, n_test: int, seed: int = 0) -> None:
    """Write synthetic train/test splits as standard-named IDX files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, n, offset in (("train", n_train, 0), ("test", n_test, 1)):
        raw = synthetic_digits(n, seed=seed + offset)
        img_name, lbl_name = _SPLIT_FILES[split]
        save_idx_images(np.round(raw.images * 255.0).astype(np.uint8),
                        directory / img_name)
        save_idx_labels(raw.labels, directory / lbl_name)
