"""Dataset ingestion and deterministic batching.

Three sources: big-endian IDX pairs (MNIST layout), CIFAR-10 binary
batches (3073-byte records, channel-major RGB), and synthetic
generators. Images always land in [0,1] as float arrays [N, C, H, W];
no mean/std normalization anywhere, so epsilon keeps pixel units.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, LengthError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] in [0, 1]
    labels: np.ndarray  # [N] int64 in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise FormatError(f"images must be [N,C,H,W], got shape {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise FormatError("pixel values outside [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return self.images.shape[0]

    @property
    def sample_shape(self):
        return self.images.shape[1:]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.num_classes)


# -- IDX ---------------------------------------------------------------


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise LengthError(f"{what}: expected {n} bytes, file ended after {len(buf)}")
    return buf


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Parse a big-endian IDX image/label pair into a Dataset."""
    with open(images_path, "rb") as fh:
        magic, n, h, w = struct.unpack(">IIII", _read_exact(fh, 16, "IDX image header"))
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"bad IDX image magic 0x{magic:08x} (want 0x{IDX_IMAGE_MAGIC:08x})")
        raw = _read_exact(fh, n * h * w, f"IDX image payload ({n} images of {h}x{w})")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, h, w)
    with open(labels_path, "rb") as fh:
        magic, nl = struct.unpack(">II", _read_exact(fh, 8, "IDX label header"))
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"bad IDX label magic 0x{magic:08x} (want 0x{IDX_LABEL_MAGIC:08x})")
        labels = np.frombuffer(_read_exact(fh, nl, f"IDX label payload ({nl} labels)"),
                               dtype=np.uint8)
    if n != nl:
        raise FormatError(f"{n} images but {nl} labels")
    return Dataset(images.astype(np.float64) / 255.0, labels, num_classes)


def write_idx(dataset: Dataset, images_path, labels_path):
    """Inverse of load_idx (pixels are rounded back to bytes)."""
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise FormatError(f"IDX stores single-channel images, got C={c}")
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# -- CIFAR-10 binary ----------------------------------------------------


def load_cifar_binary(paths, n: int | None = None, num_classes: int = 10) -> Dataset:
    """Concatenate CIFAR-10 binary batch files; optionally keep the first n records."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    chunks = []
    for path in paths:
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) % CIFAR_RECORD_BYTES:
            raise FormatError(
                f"{path}: size {len(blob)} is not a multiple of {CIFAR_RECORD_BYTES}")
        chunks.append(np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES))
    records = np.concatenate(chunks) if chunks else np.zeros((0, CIFAR_RECORD_BYTES), np.uint8)
    if n is not None:
        records = records[:n]
    labels = records[:, 0]
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels, num_classes)


def write_cifar_binary(dataset: Dataset, path):
    n, c, h, w = dataset.images.shape
    if (c, h, w) != (3, 32, 32):
        raise FormatError(f"CIFAR binary stores 3x32x32 images, got {(c, h, w)}")
    pixels = np.round(dataset.images * 255.0).astype(np.uint8).reshape(n, 3072)
    records = np.concatenate([dataset.labels.astype(np.uint8)[:, None], pixels], axis=1)
    with open(path, "wb") as fh:
        fh.write(records.tobytes())


# -- synthetic data -------------------------------------------------------


def _balanced_labels(n: int, k: int) -> np.ndarray:
    counts = [n // k + (1 if i < n % k else 0) for i in range(k)]
    return np.concatenate([np.full(c, i, dtype=np.int64) for i, c in enumerate(counts)])


def synth_blobs(n: int, d: int, k: int, spread: float, seed: int,
                centers_seed: int = 0) -> Dataset:
    """k Gaussian clusters in [0,1]^d with balanced classes; shape [n,1,1,d].

    Cluster centers depend only on (d, k, centers_seed), so train/test
    splits drawn with different ``seed`` values share the class geometry.
    """
    if k < 2:
        raise FormatError(f"synth_blobs needs k >= 2 classes, got {k}")
    crng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0xCE27E2, centers_seed])))
    centers = crng.uniform(0.25, 0.75, size=(k, d))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0xB10B5, seed])))
    labels = _balanced_labels(n, k)
    points = np.clip(centers[labels] + rng.normal(0.0, spread, size=(n, d)), 0.0, 1.0)
    order = rng.permutation(n)
    return Dataset(points[order].reshape(n, 1, 1, d), labels[order], k)


def _segment_mask(size: int, p0, p1, thickness: float) -> np.ndarray:
    """Distance-based intensity of a stroke from p0 to p1 on a size x size grid."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    v = np.array(p1) - np.array(p0)
    denom = max(float(v @ v), 1e-9)
    t = np.clip(((xx - p0[0]) * v[0] + (yy - p0[1]) * v[1]) / denom, 0.0, 1.0)
    dist = np.sqrt((xx - (p0[0] + t * v[0])) ** 2 + (yy - (p0[1] + t * v[1])) ** 2)
    return np.clip(1.0 - dist / thickness, 0.0, 1.0)


# Stroke endpoints per class in unit coordinates; loosely glyph-like so a
# small CNN has localized features to learn.
_GLYPH_STROKES = [
    [((0.2, 0.2), (0.8, 0.2)), ((0.8, 0.2), (0.8, 0.8)), ((0.8, 0.8), (0.2, 0.8)), ((0.2, 0.8), (0.2, 0.2))],
    [((0.5, 0.15), (0.5, 0.85))],
    [((0.2, 0.2), (0.8, 0.2)), ((0.8, 0.2), (0.2, 0.8)), ((0.2, 0.8), (0.8, 0.8))],
    [((0.2, 0.2), (0.8, 0.5)), ((0.8, 0.5), (0.2, 0.8))],
    [((0.25, 0.2), (0.25, 0.55)), ((0.25, 0.55), (0.8, 0.55)), ((0.7, 0.2), (0.7, 0.85))],
    [((0.8, 0.2), (0.2, 0.2)), ((0.2, 0.2), (0.2, 0.5)), ((0.2, 0.5), (0.75, 0.65)), ((0.75, 0.65), (0.2, 0.85))],
    [((0.7, 0.15), (0.3, 0.5)), ((0.3, 0.5), (0.3, 0.8)), ((0.3, 0.8), (0.7, 0.8)), ((0.7, 0.8), (0.3, 0.65))],
    [((0.2, 0.2), (0.8, 0.2)), ((0.8, 0.2), (0.35, 0.85))],
    [((0.3, 0.2), (0.7, 0.4)), ((0.7, 0.4), (0.3, 0.6)), ((0.3, 0.6), (0.7, 0.8)), ((0.3, 0.2), (0.3, 0.6))],
    [((0.65, 0.45), (0.3, 0.35)), ((0.3, 0.35), (0.6, 0.15)), ((0.65, 0.45), (0.6, 0.85))],
]


def _marker_position(label: int, k: int, size: int) -> tuple[int, int]:
    """Class-specific spot on a ring inside the border."""
    theta = 2.0 * np.pi * label / k
    r = size / 2.0 - 3.0
    py = int(round(size / 2.0 + r * np.sin(theta)))
    px = int(round(size / 2.0 + r * np.cos(theta)))
    return min(max(py, 0), size - 2), min(max(px, 0), size - 2)


def synth_shapes(n: int, size: int = 28, k: int = 10, seed: int = 0,
                 noise: float = 0.15, jitter: float = 0.06,
                 marker: float = 0.45, contrast: float = 1.0,
                 stripes: float = 0.0) -> Dataset:
    """Stroke-glyph images: k classes of heavily varied line drawings.

    Digit-like stand-in for runs where no real MNIST/CIFAR files are on
    disk. Classes differ by stroke layout; samples vary by rotation,
    scale, shift, per-endpoint jitter, stroke thickness/intensity,
    clutter strokes, low-frequency background blotches, and pixel noise,
    so a small CNN has to learn genuine shape features.

    ``marker`` additionally stamps a small class-coded 2x2 cue of that
    contrast on a border ring: an easy-to-learn but easy-to-attack
    shortcut, giving the dataset the brittle-feature character of
    natural images (set 0.0 to disable). ``contrast`` scales the stroke
    intensity, shrinking class margins relative to the noise floor.
    ``stripes`` adds a class-coded +-amplitude grating over the whole
    image: a highly predictive but low-amplitude cue, the synthetic
    analogue of the brittle non-robust features of natural images.
    """
    if not 2 <= k <= len(_GLYPH_STROKES):
        raise FormatError(f"synth_shapes supports 2..{len(_GLYPH_STROKES)} classes, got {k}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0x54A9E5, seed])))
    labels = _balanced_labels(n, k)
    images = np.zeros((n, 1, size, size))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for i, lab in enumerate(labels):
        angle = rng.uniform(-0.45, 0.45)
        scale = rng.uniform(0.75, 1.1)
        shift = rng.uniform(-jitter, jitter, size=2)
        thickness = rng.uniform(1.0, 1.8) * size / 16.0
        intensity = rng.uniform(0.65, 1.0) * contrast
        cos_a, sin_a = np.cos(angle), np.sin(angle)

        def place(p):
            u, v = p[0] - 0.5 + shift[0], p[1] - 0.5 + shift[1]
            u, v = scale * (cos_a * u - sin_a * v), scale * (sin_a * u + cos_a * v)
            wobble = rng.uniform(-0.04, 0.04, size=2)
            return ((u + 0.5 + wobble[0]) * (size - 1), (v + 0.5 + wobble[1]) * (size - 1))

        canvas = np.zeros((size, size))
        for (a, b) in _GLYPH_STROKES[lab]:
            canvas = np.maximum(canvas, _segment_mask(size, place(a), place(b), thickness))
        canvas *= intensity
        # clutter stroke unrelated to the class
        q0 = rng.uniform(0.1, 0.9, size=2) * (size - 1)
        q1 = q0 + rng.uniform(-0.3, 0.3, size=2) * (size - 1)
        canvas = np.maximum(canvas, _segment_mask(size, tuple(q0), tuple(q1),
                                                  rng.uniform(0.8, 1.3)) * rng.uniform(0.25, 0.55))
        # smooth background blotches
        for _ in range(2):
            cy, cx = rng.uniform(0, size - 1, size=2)
            sig = rng.uniform(2.0, 4.0)
            canvas += rng.uniform(0.0, 0.22) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig * sig))
        if marker > 0:
            py, px = _marker_position(int(lab), k, size)
            canvas[py:py + 2, px:px + 2] += marker * rng.uniform(0.8, 1.2)
        if stripes > 0:
            theta = np.pi * lab / k
            phase = 2.0 * np.pi * lab / k
            wave = np.sin(2.4 * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
            canvas += stripes * np.sign(wave)
        images[i, 0] = canvas
    images += rng.uniform(0.0, noise, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    order = rng.permutation(n)
    return Dataset(images[order], labels[order], k)


# -- batching and augmentation -------------------------------------------


@dataclass
class BatchIterator:
    """Seeded shuffling: the visit order is a pure function of (seed, epoch)."""

    n: int
    batch_size: int
    seed: int = 0

    def order(self, epoch: int) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(
            [0x0D0E, int(self.seed), int(epoch)])))
        return rng.permutation(self.n)

    def batches(self, epoch: int):
        order = self.order(epoch)
        for start in range(0, self.n, self.batch_size):
            yield order[start:start + self.batch_size]


def augment(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Per-sample horizontal flip (p=0.5) and pad-`pad` random crop."""
    n, c, h, w = images.shape
    out = np.empty_like(images)
    flips = rng.random(n) < 0.5
    offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    for i in range(n):
        view = padded[i, :, offs[i, 0]:offs[i, 0] + h, offs[i, 1]:offs[i, 1] + w]
        out[i] = view[:, :, ::-1] if flips[i] else view
    return out
