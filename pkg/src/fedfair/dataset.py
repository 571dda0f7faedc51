"""Labelled datasets and per-client train/val/test slicing."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasplit import PartitionManifest, largest_remainder
from .errors import FormatError, InvalidSpec
from .seeding import STAGE_SLICE, make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"
    # (rows, cols) for image data, kept so IDX files can be written back.
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if X.ndim != 2:
            X = X.reshape(len(y), -1)
        if X.shape[0] != y.shape[0]:
            raise FormatError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise FormatError("label outside [0, num_classes)")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"feature_{j}" for j in range(self.dim)] + ["label"])
            for x, y in zip(self.features, self.labels):
                w.writerow([repr(float(v)) for v in x] + [int(y)])

    @classmethod
    def from_csv(cls, path, num_classes: int | None = None, name: str | None = None) -> "Dataset":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        if not rows or rows[0][-1] != "label":
            raise FormatError(f"{path}: expected a header ending in 'label'")
        body = rows[1:]
        X = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64).reshape(len(body), len(rows[0]) - 1)
        y = np.array([int(r[-1]) for r in body], dtype=np.int64)
        if num_classes is None:
            num_classes = int(y.max()) + 1 if y.size else 0
        return cls(X, y, num_classes, name or Path(path).stem)


def synth_blobs(num_classes: int, dim: int, per_class: int, spread: float = 5.0, seed: int = 0,
                noise: float = 1.0) -> Dataset:
    """Gaussian blobs, one per class.

    Class means sit evenly spaced on a circle of radius ``spread`` inside a
    random 2-D plane of the feature space (on the line ``[-spread, spread]``
    when ``dim == 1``). Samples add isotropic noise of standard deviation
    ``noise``; ``spread=0, noise=0`` puts every sample at the origin.
    """
    if num_classes < 2 or dim < 1 or per_class < 1:
        raise InvalidSpec("synth_blobs needs num_classes >= 2, dim >= 1, per_class >= 1")
    if not (spread >= 0 and noise >= 0 and math.isfinite(spread) and math.isfinite(noise)):
        raise InvalidSpec("spread and noise must be finite and nonnegative")
    rng = make_rng(seed)
    means = blob_means(num_classes, dim, spread, rng)
    labels = np.repeat(np.arange(num_classes), per_class)
    X = means[labels] + noise * rng.standard_normal((len(labels), dim))
    perm = rng.permutation(len(labels))
    return Dataset(X[perm], labels[perm], num_classes, name=f"blobs{num_classes}x{dim}")


def blob_means(num_classes: int, dim: int, spread: float, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.linspace(-spread, spread, num_classes).reshape(-1, 1)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
    offset = rng.uniform(0, 2 * np.pi)
    theta = offset + 2 * np.pi * np.arange(num_classes) / num_classes
    return spread * (np.cos(theta)[:, None] * basis[:, 0] + np.sin(theta)[:, None] * basis[:, 1])


# IDX: big-endian u32 magic (0x0000 | dtype 0x08 | ndim), u32 per dimension, u8 payload.

def _read_idx(path, magic: int) -> tuple[tuple[int, ...], bytes]:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(data) < head:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:head])
    payload = data[head:]
    if len(payload) != math.prod(dims):
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {math.prod(dims)}")
    return dims, payload


def read_idx_labels(path) -> np.ndarray:
    _, payload = _read_idx(path, IDX_LABELS_MAGIC)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Load an IDX image/label file pair; pixels are scaled to [0, 1]."""
    (n, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx_labels(labels_path)
    if len(labels) != n:
        raise FormatError(f"{n} images but {len(labels)} labels")
    X = np.frombuffer(pixels, dtype=np.uint8).reshape(n, rows * cols).astype(np.float64) / 255.0
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 0
    return Dataset(X, labels, num_classes, name=Path(images_path).stem, image_shape=(rows, cols))


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    if dataset.image_shape is None:
        raise FormatError("dataset has no image shape")
    rows, cols = dataset.image_shape
    pixels = np.rint(dataset.features * 255.0).astype(np.uint8)
    n = len(dataset)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes())


def load_labels(path) -> np.ndarray:
    """Labels from an IDX label file or a CSV with a ``label`` column (or a single column)."""
    with open(path, "rb") as f:
        head = f.read(4)
    if len(head) == 4 and struct.unpack(">I", head)[0] == IDX_LABELS_MAGIC:
        return read_idx_labels(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError(f"{path}: empty label file")
    col = rows[0].index("label") if "label" in rows[0] else 0
    start = 1 if not rows[0][col].lstrip("-").isdigit() else 0
    try:
        return np.array([int(r[col]) for r in rows[start:] if r], dtype=np.int64)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


@dataclass(frozen=True)
class ClientData:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    degenerate: bool = field(default=False)


def split_sizes(n: int, fractions=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    if n < 5:
        # Too small to honour the fractions: train first, then test, then val.
        test = 1 if n >= 2 else 0
        val = 1 if n >= 4 else 0
        return n - test - val, val, test
    a, b, c = largest_remainder(fractions, n)
    return int(a), int(b), int(c)


def slice_client(manifest: PartitionManifest, client: int, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> ClientData:
    """Shuffle one client's samples and cut them into train/val/test index arrays."""
    if not 0 <= client < manifest.num_clients:
        raise InvalidSpec(f"client {client} out of range [0, {manifest.num_clients})")
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise InvalidSpec("fractions must be three nonnegative numbers summing to 1")
    idx = make_rng(seed, STAGE_SLICE, client).permutation(manifest.assignments[client])
    n = len(idx)
    n_tr, n_va, n_te = split_sizes(n, tuple(fr))
    return ClientData(idx[:n_tr], idx[n_tr:n_tr + n_va], idx[n_tr + n_va:], degenerate=n < 5)
