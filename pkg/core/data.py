"""
Datasets - MNIST IDX ingestion, left/right view construction, synthetic correlated views, mini-batching
"""
import gzip
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, FormatError, ShapeError

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
GZIP_MAGIC = b'\x1f\x8b'
IMAGE_SIDE = 28
IMAGE_PIXELS = IMAGE_SIDE * IMAGE_SIDE
HALF_WIDTH = IMAGE_SIDE // 2

# Official file names, as published
MNIST_FILES = {
    'train_images': 'train-images-idx3-ubyte.gz',
    'train_labels': 'train-labels-idx1-ubyte.gz',
    'test_images': 't10k-images-idx3-ubyte.gz',
    'test_labels': 't10k-labels-idx1-ubyte.gz',
}


@dataclass
class PairedDataset:
    """N aligned rows across two views, with optional class labels."""
    view1: np.ndarray
    view2: np.ndarray
    labels: Optional[np.ndarray] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        n = self.view1.shape[0]
        if self.view2.shape[0] != n:
            raise ShapeError(f"views differ in rows: {n} vs {self.view2.shape[0]}")
        if self.labels is not None and self.labels.shape[0] != n:
            raise ShapeError(f"labels have {self.labels.shape[0]} rows, views have {n}")

    def __len__(self) -> int:
        return self.view1.shape[0]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.view1.shape[1], self.view2.shape[1]

    def subset(self, indices: np.ndarray) -> "PairedDataset":
        return PairedDataset(
            view1=self.view1[indices],
            view2=self.view2[indices],
            labels=None if self.labels is None else self.labels[indices],
            meta=dict(self.meta),
        )

    def split(self, heldout_fraction: float, seed: int) -> Tuple["PairedDataset", "PairedDataset"]:
        """Seeded split into (train, held-out)."""
        if not 0.0 < heldout_fraction < 1.0:
            raise ConfigError(f"held-out fraction must be in (0, 1), got {heldout_fraction}")
        order = np.random.default_rng(seed).permutation(len(self))
        n_heldout = max(2, int(round(heldout_fraction * len(self))))
        return self.subset(np.sort(order[n_heldout:])), self.subset(np.sort(order[:n_heldout]))


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    seed: int = 0
    drop_last: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"mini-batch size must be at least 2, got {self.batch_size}")


# ── IDX format ─────────────────────────────────────────────────────────

def _read_bytes(path: str) -> bytes:
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise FormatError(f"{path}: corrupt gzip stream: {e}")
    return raw


def read_idx(path: str, expected_magic: int) -> np.ndarray:
    """Parse one IDX file (optionally gzip-wrapped) into a uint8 array."""
    raw = _read_bytes(path)
    ndim = 3 if expected_magic == IDX_IMAGE_MAGIC else 1
    header_size = 4 * (1 + ndim)
    if len(raw) < 4:
        raise FormatError(f"{path}: no magic number, file holds {len(raw)} bytes", offset=len(raw))
    magic = struct.unpack('>I', raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic number {magic}, expected {expected_magic}", offset=0)
    if len(raw) < header_size:
        raise FormatError(f"{path}: header truncated, need {header_size} bytes", offset=len(raw))
    dims = struct.unpack(f'>{ndim}I', raw[4:header_size])
    expected = header_size + int(np.prod(dims))
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}",
                          offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=expected - header_size,
                         offset=header_size).reshape(dims)


def write_idx(path: str, array: np.ndarray, magic: int, compress: bool = False):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise FormatError(f"IDX payload must be uint8, got {array.dtype}")
    payload = struct.pack('>I', magic) + struct.pack(f'>{array.ndim}I', *array.shape) + array.tobytes()
    if compress:
        payload = gzip.compress(payload, mtime=0)
    with open(path, 'wb') as f:
        f.write(payload)


def load_idx(images_path: str, labels_path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Images as an N x 784 float matrix in [0, 1] plus integer labels."""
    images = read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n = images.shape[0]
    logger.info(f"Loaded {n} images of {images.shape[1]}x{images.shape[2]} from {os.path.basename(images_path)}")
    return images.reshape(n, -1).astype(np.float64) / 255.0, labels.astype(np.int64)


def load_mnist_split(data_dir: str, split: str = 'train') -> Tuple[np.ndarray, np.ndarray]:
    """Load the official train or test pair from a directory (gzipped or plain names)."""
    def resolve(key: str) -> str:
        gz = os.path.join(data_dir, MNIST_FILES[key])
        return gz if os.path.exists(gz) else gz[:-3]
    return load_idx(resolve(f'{split}_images'), resolve(f'{split}_labels'))


def subset_indices(n_total: int, size: int, seed: int) -> np.ndarray:
    """First ``size`` indices of a seeded shuffle of range(n_total)."""
    if size <= 0 or size >= n_total:
        return np.arange(n_total)
    return np.random.default_rng(seed).permutation(n_total)[:size]


# ── Views ──────────────────────────────────────────────────────────────

def split_halves(images: np.ndarray, labels: Optional[np.ndarray] = None) -> PairedDataset:
    """Left 14 image columns as view 1, right 14 as view 2."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 or images.shape[1] != IMAGE_PIXELS:
        raise ShapeError(f"expected N x {IMAGE_PIXELS} images, got {images.shape}")
    grid = images.reshape(-1, IMAGE_SIDE, IMAGE_SIDE)
    n = grid.shape[0]
    return PairedDataset(
        view1=grid[:, :, :HALF_WIDTH].reshape(n, -1),
        view2=grid[:, :, HALF_WIDTH:].reshape(n, -1),
        labels=labels,
        meta={'source': 'mnist-halves'},
    )


def join_halves(view1: np.ndarray, view2: np.ndarray) -> np.ndarray:
    n = view1.shape[0]
    left = view1.reshape(n, IMAGE_SIDE, HALF_WIDTH)
    right = view2.reshape(n, IMAGE_SIDE, IMAGE_SIDE - HALF_WIDTH)
    return np.concatenate([left, right], axis=2).reshape(n, IMAGE_PIXELS)


def _random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def synth_correlated(n: int, d1: int, d2: int, k_shared: int,
                     rho_list: Sequence[float], seed: int) -> Tuple[PairedDataset, np.ndarray]:
    """
    Two views whose population canonical correlations are exactly ``rho_list``.

    Each shared coordinate s_j reaches both views with independent noise of
    variance (1 - rho_j) / rho_j, so corr(u1_j, u2_j) = rho_j. The remaining
    directions are independent unit noise and each view is rotated by its
    own random orthogonal matrix.
    """
    rho = np.asarray(rho_list, dtype=np.float64)
    if k_shared > min(d1, d2) or k_shared < 1:
        raise ConfigError(f"k_shared={k_shared} must be in [1, min(d1, d2)={min(d1, d2)}]")
    if rho.shape != (k_shared,):
        raise ConfigError(f"need {k_shared} planted correlations, got {rho.size}")
    if np.any(rho <= 0.0) or np.any(rho > 1.0):
        raise ConfigError(f"planted correlations must lie in (0, 1], got {rho.tolist()}")

    rng = np.random.default_rng(seed)
    rot1 = _random_orthogonal(rng, d1)
    rot2 = _random_orthogonal(rng, d2)
    noise_std = np.sqrt((1.0 - rho) / rho)
    shared = rng.standard_normal((n, k_shared))
    u1 = shared + noise_std * rng.standard_normal((n, k_shared))
    u2 = shared + noise_std * rng.standard_normal((n, k_shared))
    rest1 = rng.standard_normal((n, d1 - k_shared))
    rest2 = rng.standard_normal((n, d2 - k_shared))

    dataset = PairedDataset(
        view1=np.hstack([u1, rest1]) @ rot1.T,
        view2=np.hstack([u2, rest2]) @ rot2.T,
        meta={'source': 'synthetic', 'seed': seed, 'rho': rho.tolist()},
    )
    return dataset, rho.copy()


# ── Batching ───────────────────────────────────────────────────────────

def batch_indices(n: int, plan: BatchPlan, epoch: int) -> List[np.ndarray]:
    """Index blocks of one epoch; the shuffle is seeded by (seed, epoch)."""
    if plan.batch_size > n:
        raise ConfigError(f"mini-batch size {plan.batch_size} exceeds dataset size {n}")
    order = np.random.default_rng([plan.seed, epoch]).permutation(n)
    stop = n - n % plan.batch_size if plan.drop_last else n
    return [order[i:i + plan.batch_size] for i in range(0, stop, plan.batch_size)]


def batch_iter(dataset: PairedDataset, plan: BatchPlan,
               epoch: int) -> Iterator[Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]]:
    for idx in batch_indices(len(dataset), plan, epoch):
        labels = None if dataset.labels is None else dataset.labels[idx]
        yield dataset.view1[idx], dataset.view2[idx], labels
