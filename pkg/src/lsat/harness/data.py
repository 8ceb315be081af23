"""MNIST ingestion (IDX and CSV) and deterministic train/validation splits."""

import gzip
import os
import struct

import numpy as np

from ..datafit import Dataset
from ..errors import BadMagic, CountMismatch, InsufficientData, TruncatedFile

__all__ = [
    "IMAGE_MAGIC",
    "LABEL_MAGIC",
    "SCALES",
    "read_idx",
    "load_idx",
    "load_csv",
    "find_mnist",
    "load_mnist",
    "split",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
NUM_CLASSES = 10
POOL_SIZE = 50_000
SCALES = {"small": (3_500, 1_500), "full": (35_000, 15_000)}


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, magic):
    """Read an unsigned-byte IDX file and return its array (dims from the header)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: file shorter than its magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagic(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise TruncatedFile(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Images (N x rows*cols, scaled to [0, 1]) and integer labels from IDX files."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return flat, labels.astype(np.int64)


def load_csv(path):
    """Header-free ``label,p0,...,p783`` rows with pixels in [0, 255]."""
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise TruncatedFile(f"{path}: malformed CSV ({exc})") from None
    if table.shape[1] < 2:
        raise TruncatedFile(f"{path}: rows need a label and at least one pixel")
    labels = table[:, 0].astype(np.int64)
    return table[:, 1:] / 255.0, labels


_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory, part):
    """Paths of the image and label files of ``part`` ('train' or 'test')."""
    found = []
    for stem in _NAMES[part]:
        for candidate in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
            path = os.path.join(directory, candidate)
            if os.path.exists(path):
                found.append(path)
                break
        else:
            raise FileNotFoundError(f"no {stem}[.gz] in {directory}")
    return tuple(found)


def load_mnist(directory, part):
    return Dataset.from_labels(*load_idx(*find_mnist(directory, part)), NUM_CLASSES)


def split(full, scale="small", seed=0, sizes=None, pool_size=POOL_SIZE, monitor_size=0):
    """Disjoint random train/validation subsets of the first ``pool_size`` rows.

    ``sizes`` overrides the (train, validation) counts implied by ``scale``.
    With ``monitor_size > 0`` a third disjoint subset is returned for early
    stopping.
    """
    n_train, n_val = SCALES[scale] if sizes is None else sizes
    pool = min(pool_size, len(full))
    need = n_train + n_val + monitor_size
    if need > pool:
        raise InsufficientData(f"need {need} examples but the pool has {pool}")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(pool)[:need]
    parts = [full.subset(idx[:n_train]), full.subset(idx[n_train:n_train + n_val])]
    if monitor_size:
        parts.append(full.subset(idx[n_train + n_val:]))
    return tuple(parts)
