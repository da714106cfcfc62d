"""Datasets: IDX and AIQD readers, AIQD writer, synthetic generator."""

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelOutOfRange, MalformedFile

AIQD_MAGIC = b"AIQD"
IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise MalformedFile(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def take(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, dict(self.meta))


def search_subset(n, size=1000, seed=0):
    """Sorted, fixed-seed sample of ``size`` distinct indices out of ``n``."""
    if size is None or size >= n:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)


def _normalize(images, mean, std):
    if mean is None and std is None:
        return images
    c = images.shape[1]
    mean = np.broadcast_to(np.asarray(mean if mean is not None else 0.0, np.float32), (c,))
    std = np.broadcast_to(np.asarray(std if std is not None else 1.0, np.float32), (c,))
    return ((images - mean[None, :, None, None]) / std[None, :, None, None]).astype(np.float32)


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def _read_idx(path, expect_magic, ndim):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 + 4 * ndim:
        raise MalformedFile(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise MalformedFile(f"{path}: IDX magic {magic:#010x}, expected {expect_magic:#010x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4 : 4 + 4 * ndim])
    count = int(np.prod(dims))
    body = raw[4 + 4 * ndim :]
    if len(body) != count:
        raise MalformedFile(f"{path}: IDX payload has {len(body)} bytes, dims {dims} need {count}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def read_idx_images(path):
    return _read_idx(path, IDX_IMAGES, 3)


def read_idx_labels(path):
    return _read_idx(path, IDX_LABELS, 1)


def load_dataset(path, format="aiqd", labels_path=None, mean=None, std=None, num_classes=None):
    """Load a dataset.

    ``format="idx"`` reads MNIST-style files: ``path`` holds the images and
    ``labels_path`` the labels; pixels are scaled to [0, 1] before the
    optional per-channel ``mean``/``std`` normalization.  ``format="aiqd"``
    reads the native container.
    """
    if format == "idx":
        if labels_path is None:
            raise MalformedFile("IDX datasets need a labels file")
        raw = read_idx_images(path)
        labels = read_idx_labels(labels_path).astype(np.int64)
        images = (raw.astype(np.float32) / np.float32(255.0))[:, None, :, :]
        meta = {"source": str(path), "format": "idx"}
    elif format == "aiqd":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < 20 or raw[:4] != AIQD_MAGIC:
            raise MalformedFile(f"{path}: not an AIQD file")
        n, c, h, w = struct.unpack("<4I", raw[4:20])
        n_px = n * c * h * w
        want = 20 + 4 * n_px + 2 * n
        if len(raw) != want:
            raise MalformedFile(f"{path}: expected {want} bytes, found {len(raw)}")
        images = np.frombuffer(raw, dtype="<f4", count=n_px, offset=20).astype(np.float32).reshape(n, c, h, w)
        labels = np.frombuffer(raw, dtype="<u2", count=n, offset=20 + 4 * n_px).astype(np.int64)
        if not np.isfinite(images).all():
            raise MalformedFile(f"{path}: non-finite pixel values")
        meta = {"source": str(path), "format": "aiqd"}
    else:
        raise ValueError(f"unknown dataset format {format!r}")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 0
    elif len(labels) and labels.max() >= num_classes:
        raise LabelOutOfRange(f"label {int(labels.max())} >= num_classes {num_classes}")
    return Dataset(_normalize(images, mean, std), labels, int(num_classes), meta)


def save_aiqd(path, data):
    images = np.ascontiguousarray(data.images, dtype="<f4")
    if images.ndim != 4:
        raise ValueError("AIQD stores (N, C, H, W) images")
    if len(data.labels) and data.labels.max() > 0xFFFF:
        raise ValueError("AIQD labels are u16")
    with open(path, "wb") as fh:
        fh.write(AIQD_MAGIC)
        fh.write(struct.pack("<4I", *images.shape))
        fh.write(images.tobytes())
        fh.write(np.asarray(data.labels, dtype="<u2").tobytes())


# -- synthetic data ------------------------------------------------------------


def _class_blobs(num_classes, channels, size, blobs_per_class, world_seed):
    rng = np.random.default_rng(world_seed)
    h, w = size
    centers = rng.uniform([0.2 * h, 0.2 * w], [0.8 * h, 0.8 * w], size=(num_classes, blobs_per_class, 2))
    colors = rng.standard_normal((num_classes, blobs_per_class, channels))
    colors /= np.linalg.norm(colors, axis=-1, keepdims=True)
    widths = rng.uniform(0.08 * h, 0.16 * h, size=(num_classes, blobs_per_class))
    return centers, colors, widths


def synthetic_blobs(
    n,
    seed=7,
    shape=(3, 16, 16),
    num_classes=10,
    blobs_per_class=3,
    jitter=1.5,
    noise=0.6,
    clutter=0.6,
    world_seed=2024,
):
    """Gaussian class blobs rendered as images.

    Every class owns ``blobs_per_class`` coloured Gaussian blobs at fixed
    positions.  A sample draws its class uniformly, renders that class's blobs
    with jittered centres and random amplitudes, adds one blob borrowed from a
    random other class (``clutter`` amplitude) and i.i.d. pixel noise.  The
    output is a pure function of the arguments.
    """
    c, h, w = shape
    centers, colors, widths = _class_blobs(num_classes, c, (h, w), blobs_per_class, world_seed)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    images = np.zeros((n, c, h, w), np.float64)

    def render(cls, blob, offset, amp):
        cy, cx = centers[cls, blob] + offset
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * widths[cls, blob] ** 2))
        return amp * colors[cls, blob][:, None, None] * g[None]

    for i in range(n):
        cls = labels[i]
        offsets = rng.normal(0.0, jitter, size=(blobs_per_class, 2))
        amps = rng.uniform(0.6, 1.4, size=blobs_per_class)
        for b in range(blobs_per_class):
            images[i] += render(cls, b, offsets[b], amps[b])
        other = (cls + rng.integers(1, num_classes)) % num_classes
        ob = rng.integers(0, blobs_per_class)
        images[i] += render(other, ob, rng.normal(0.0, jitter, size=2), clutter * rng.uniform(0.6, 1.4))
    images += rng.normal(0.0, noise, size=images.shape)
    meta = {"source": "synthetic_blobs", "seed": seed, "n": n}
    return Dataset(images.astype(np.float32), labels.astype(np.int64), num_classes, meta)
