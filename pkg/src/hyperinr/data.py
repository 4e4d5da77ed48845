"""Dataset ingestion: IDX image files, coordinate grids, synthetic generators,
and balanced desk-scale subset selection."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_MAX_ELEMENTS = 1 << 32  # guards dimension products against overflow bombs


@dataclass(frozen=True)
class ImageDataset:
    """Flattened grayscale images in [0, 1] with integer class labels."""

    images: np.ndarray  # (t, H*W) float64
    labels: np.ndarray  # (t,) int64
    height: int
    width: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 2 or images.shape[1] != self.height * self.width:
            raise ConfigError(f"images shape {images.shape} != (t, {self.height * self.width})")
        if labels.shape != (images.shape[0],):
            raise ConfigError("label count must equal image count")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ConfigError("image values must lie in [0, 1]")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.images.shape[0]


def parse_idx(data: bytes) -> np.ndarray:
    """Parse an IDX byte stream into u8 image tensor (t, H, W) or label vector.

    Big-endian header: magic, then one u32 per dimension, then the raw u8
    payload. Only the two magics used by the common image benchmarks are
    accepted. Every malformed input raises FormatError with a byte offset.
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise FormatError("parse_idx expects a byte stream")
    data = bytes(data)
    if len(data) < 4:
        raise FormatError(f"truncated header: {len(data)} bytes, need 4 (offset 0)")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise FormatError(f"bad magic 0x{magic:08x} (offset 0)")
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise FormatError(f"truncated dimension header (offset {len(data)})")
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_ELEMENTS:
        raise FormatError(f"dimension product {count} overflows sanity bound (offset 4)")
    if len(data) != header_end + count:
        raise FormatError(
            f"payload length {len(data) - header_end} != expected {count} (offset {header_end})"
        )
    arr = np.frombuffer(data, dtype=np.uint8, offset=header_end)
    return arr.reshape(dims)


def load_idx_file(path) -> np.ndarray:
    return parse_idx(Path(path).read_bytes())


def load_image_dataset(images_path, labels_path) -> ImageDataset:
    """Pair an IDX image file with its IDX label file; pixels scaled by /255."""
    raw = load_idx_file(images_path)
    labels = load_idx_file(labels_path)
    if raw.ndim != 3:
        raise FormatError(f"{images_path}: expected an image tensor, got shape {raw.shape}")
    if labels.ndim != 1 or labels.shape[0] != raw.shape[0]:
        raise FormatError(
            f"{labels_path}: {labels.shape[0] if labels.ndim else 0} labels "
            f"for {raw.shape[0]} images"
        )
    t, h, w = raw.shape
    images = raw.reshape(t, h * w).astype(np.float64) / 255.0
    return ImageDataset(images, labels.astype(np.int64), h, w)


def make_grid(height: int, width: int) -> np.ndarray:
    """Pixel-center coordinates mapped linearly to [-1, 1]^2, row-major.

    Row r, column c maps to (x, y) with x from the column and y from the row;
    centers stay strictly inside the domain for sizes >= 2.
    """
    if height < 1 or width < 1:
        raise ConfigError(f"grid size must be positive, got {height}x{width}")
    ys = (np.arange(height) + 0.5) / height * 2.0 - 1.0
    xs = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)


def balanced_subset(dataset: ImageDataset, per_class: int, classes=None) -> ImageDataset:
    """First per_class samples of each class, in original dataset order."""
    if classes is None:
        classes = np.unique(dataset.labels)
    keep = []
    for c in classes:
        idx = np.flatnonzero(dataset.labels == c)[:per_class]
        if idx.size < per_class:
            raise ConfigError(f"class {c} has only {idx.size} samples, need {per_class}")
        keep.append(idx)
    order = np.sort(np.concatenate(keep))
    return ImageDataset(dataset.images[order], dataset.labels[order], dataset.height, dataset.width)


def _blob_image(size, cx, cy, sigma, amp):
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma**2))
    return np.clip(img, 0.0, 1.0)


def _ring_image(size, cx, cy, radius, thickness, amp):
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    r = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
    img = amp * np.exp(-((r - radius) ** 2) / (2.0 * thickness**2))
    return np.clip(img, 0.0, 1.0)


def gen_synthetic_images(kind: str, classes: int, per_class: int, seed: int,
                         size: int = 28) -> ImageDataset:
    """Deterministic labeled image sets with controllable class separation.

    kind "blobs": one Gaussian bump per image; class fixes the base center and
    width, each sample jitters them. kind "rings": annuli with class-specific
    radius. Samples are interleaved across classes so that prefix subsets stay
    balanced.
    """
    if kind not in ("blobs", "rings"):
        raise ConfigError(f"unknown synthetic image kind: {kind!r}")
    if classes < 1 or per_class < 0:
        raise ConfigError(f"invalid class spec: {classes} x {per_class}")
    rng = np.random.default_rng(seed)
    # classes alternate between two rings; each carries a primary bump and a
    # smaller opposing one, so neighbors differ by several jitter deviations
    per_ring = max((classes + 1) // 2, 1)
    slot = np.arange(classes) // 2
    angles = 2.0 * np.pi * slot / per_ring + np.pi / per_ring * (np.arange(classes) % 2)
    ring_r = size * (0.14 + 0.11 * (np.arange(classes) % 2))
    images, labels = [], []
    for i in range(per_class):
        for c in range(classes):
            jx, jy = rng.normal(0.0, size * 0.025, size=2)
            if kind == "blobs":
                cx = size / 2 + ring_r[c] * np.cos(angles[c]) + jx
                cy = size / 2 + ring_r[c] * np.sin(angles[c]) + jy
                sigma = size * (0.075 + 0.01 * (c % 3)) * rng.uniform(0.9, 1.1)
                amp = rng.uniform(0.8, 1.0)
                img = _blob_image(size, cx, cy, sigma, amp)
                cx2 = size / 2 - 0.55 * ring_r[c] * np.cos(angles[c]) + jy * 0.5
                cy2 = size / 2 - 0.55 * ring_r[c] * np.sin(angles[c]) - jx * 0.5
                img = np.clip(img + _blob_image(size, cx2, cy2, 0.6 * sigma, 0.5 * amp), 0, 1)
            else:
                cx = size / 2 + jx * 0.5
                cy = size / 2 + jy * 0.5
                radius = size * (0.12 + 0.03 * c) * rng.uniform(0.95, 1.05)
                thickness = size * 0.045 * rng.uniform(0.9, 1.1)
                img = _ring_image(size, cx, cy, radius, thickness, rng.uniform(0.8, 1.0))
            images.append(img.reshape(-1))
            labels.append(c)
    if not images:
        return ImageDataset(np.zeros((0, size * size)), np.zeros(0, dtype=np.int64), size, size)
    return ImageDataset(np.array(images), np.array(labels, dtype=np.int64), size, size)


def gen_superquadric_cloud(exponent: float, scale: np.ndarray, n_points: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Points on a superquadric surface |x/a|^e + |y/b|^e + |z/c|^e = 1."""
    u = rng.normal(size=(n_points, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True) + 1e-300
    # map the sphere direction onto the superquadric surface
    s = np.sign(u) * np.abs(u) ** (2.0 / exponent)
    norm = (np.abs(s[:, 0]) ** exponent + np.abs(s[:, 1]) ** exponent
            + np.abs(s[:, 2]) ** exponent) ** (1.0 / exponent)
    pts = s / norm[:, None] * scale
    return pts


def gen_synthetic_clouds(classes: int, per_class: int, seed: int, n_points: int = 2000):
    """Superquadric point-cloud classes; returns (list of (m, 3) arrays, labels)."""
    if classes < 1 or per_class < 0:
        raise ConfigError(f"invalid class spec: {classes} x {per_class}")
    rng = np.random.default_rng(seed)
    exps = np.linspace(0.8, 4.0, classes)
    clouds, labels = [], []
    for i in range(per_class):
        for c in range(classes):
            scale = np.array([0.7, 0.7, 0.7]) * rng.uniform(0.85, 1.1, size=3)
            e = exps[c] * rng.uniform(0.95, 1.05)
            clouds.append(gen_superquadric_cloud(e, scale, n_points, rng))
            labels.append(c)
    return clouds, np.array(labels, dtype=np.int64)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 grayscale dump of a [0, 1] float image."""
    from .bundle import atomic_write_bytes

    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ConfigError(f"expected a 2-D image, got shape {image.shape}")
    h, w = image.shape
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
