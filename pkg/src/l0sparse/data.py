"""MNIST IDX loading and synthetic datasets with known structure."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


class IdxFormatError(ValueError):
    def __init__(self, path, offset: int, msg: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {msg}")


@dataclass(frozen=True)
class Dataset:
    """``inputs`` is [N, d] float64; ``targets`` holds integer labels [N] or real targets [N, k]."""

    inputs: np.ndarray
    targets: np.ndarray
    num_classes: Optional[int] = None

    def __post_init__(self):
        if self.inputs.ndim != 2 or len(self.inputs) < 1:
            raise ValueError("inputs must be a non-empty [N, d] array")
        if len(self.targets) != len(self.inputs):
            raise ValueError("inputs and targets disagree on N")
        if self.num_classes is not None and (self.targets.min() < 0 or self.targets.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        self.inputs.setflags(write=False)
        self.targets.setflags(write=False)

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.num_classes is not None

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.num_classes)


def _read(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return raw


def _parse(path, raw: bytes, magic: int, ndim: int) -> np.ndarray:
    if len(raw) < 4:
        raise IdxFormatError(path, 0, "truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(path, 0, f"wrong magic 0x{found:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(path, len(raw), "truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise IdxFormatError(path, len(raw), f"truncated payload, expected {need} bytes")
    if len(raw) > need:
        raise IdxFormatError(path, need, f"{len(raw) - need} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Raw uint8 images, shape [N, rows, cols]."""
    return _parse(path, _read(path), IMAGES_MAGIC, 3)


def read_idx_labels(path) -> np.ndarray:
    return _parse(path, _read(path), LABELS_MAGIC, 1)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Load an IDX image/label pair; pixels are flattened and scaled to [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(labels_path, 4, f"label count {len(labels)} != image count {len(images)}")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), num_classes)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">I3I", IMAGES_MAGIC, *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.tobytes())


def write_idx(images_path, labels_path, ds: Dataset, side: int = 28) -> None:
    """Inverse of :func:`load_idx` for datasets whose pixels are multiples of 1/255."""
    px = np.rint(ds.inputs * 255.0).astype(np.uint8).reshape(len(ds), side, -1)
    write_idx_images(images_path, px)
    write_idx_labels(labels_path, ds.targets)


def synth_sparse_regression(n: int, d: int, k_active: int, noise_std: float, seed: int):
    """``y = X w* + eps`` with ``k_active`` coordinates of w* set to +-1.

    Returns ``(dataset, true_support)``, support sorted ascending.
    """
    if not 1 <= k_active <= d:
        raise ValueError("need 1 <= k_active <= d")
    gen = np.random.Generator(np.random.Philox(seed))
    support = np.sort(gen.choice(d, size=k_active, replace=False))
    w = np.zeros(d)
    w[support] = gen.choice([-1.0, 1.0], size=k_active)
    x = gen.standard_normal((n, d))
    y = x @ w + noise_std * gen.standard_normal(n)
    return Dataset(x, y[:, None]), support


def synth_xor(n: int, seed: int, noise_std: float = 0.05) -> Dataset:
    """Two-class XOR of the corners of the unit square, jittered by Gaussian noise."""
    gen = np.random.Generator(np.random.Philox(seed))
    bits = gen.integers(0, 2, size=(n, 2))
    x = bits + noise_std * gen.standard_normal((n, 2))
    return Dataset(x.astype(np.float64), (bits[:, 0] ^ bits[:, 1]).astype(np.int64), 2)


def split(ds: Dataset, holdout: float, seed: int) -> tuple[Dataset, Dataset]:
    perm = np.random.Generator(np.random.Philox(seed)).permutation(len(ds))
    cut = len(ds) - int(round(holdout * len(ds)))
    return ds.subset(np.sort(perm[:cut])), ds.subset(np.sort(perm[cut:]))
