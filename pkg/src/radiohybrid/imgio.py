"""Image decoding, dataset layout scanning, splitting and the RFV1 feature file."""
from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import (
    BadMagic,
    CorruptFile,
    DegenerateSplit,
    DimMismatch,
    EmptyClass,
    IndexOutOfRange,
    MissingClassDir,
    UnsupportedFormat,
)

__all__ = [
    "CLASS_NAMES",
    "Image",
    "LabeledDataset",
    "decode_pgm",
    "encode_pgm",
    "read_pgm",
    "scan_dataset",
    "stratified_split",
    "encode_onehot",
    "write_feature_file",
    "read_feature_file",
]

PathLike = Union[str, os.PathLike]

CLASS_NAMES: tuple[str, ...] = ("glioma", "meningioma", "pituitary", "notumor")
IMAGE_SUFFIXES = (".pgm",)

FEATURE_MAGIC = b"RFV1"
_FEATURE_HEADER = struct.Struct("<4sII")


@dataclass
class Image:
    """Single-channel raster, ``pixels[row, col]``.

    ``domain`` is ``"raw8"`` for values in [0, 255] or ``"unit"`` for [0, 1].
    """

    pixels: np.ndarray
    domain: str = "unit"

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {self.pixels.shape}")
        if self.domain not in ("raw8", "unit"):
            raise ValueError(f"unknown value domain {self.domain!r}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the pixels."""
        return self.pixels.reshape(-1)

    def in_domain(self) -> bool:
        hi = 255.0 if self.domain == "raw8" else 1.0
        return bool(self.pixels.size == 0 or (self.pixels.min() >= 0.0 and self.pixels.max() <= hi))


@dataclass
class LabeledDataset:
    samples: list[tuple[object, int]] = field(default_factory=list)
    classes: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        for _, label in self.samples:
            if not 0 <= label < len(self.classes):
                raise IndexOutOfRange(f"label {label} outside class table of size {len(self.classes)}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.samples], dtype=np.int64)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.classes))


# ---------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pgm(blob: bytes) -> Image:
    """Decode a binary 8-bit PGM (``P5``) into a raw8 :class:`Image`."""
    if blob[:2] != b"P5":
        raise UnsupportedFormat(f"not a binary PGM (magic {blob[:2]!r})")
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(blob, pos)
        if m is None:
            raise CorruptFile("truncated PGM header")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise CorruptFile(f"malformed PGM header token {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedFormat(f"only 8-bit PGM supported, maxval={maxval}")
    if width <= 0 or height <= 0:
        raise CorruptFile(f"bad PGM dimensions {width}x{height}")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(blob) or blob[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise CorruptFile("missing whitespace after PGM header")
    pos += 1
    n = width * height
    payload = blob[pos : pos + n]
    if len(payload) != n:
        raise CorruptFile(f"PGM payload has {len(payload)} bytes, expected {n}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Image(pixels.astype(np.float64), domain="raw8")


def encode_pgm(img: Image | np.ndarray) -> bytes:
    """Encode to binary PGM. Unit-domain images are scaled to 0..255 and rounded."""
    if isinstance(img, Image):
        arr = img.pixels * 255.0 if img.domain == "unit" else img.pixels
    else:
        arr = np.asarray(img, dtype=np.float64)
    raster = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    h, w = raster.shape
    return b"P5\n%d %d\n255\n" % (w, h) + raster.tobytes()


def read_pgm(path: PathLike) -> Image:
    return decode_pgm(Path(path).read_bytes())


# ---------------------------------------------------------------------
# Dataset layout
# ---------------------------------------------------------------------
def scan_dataset(root: PathLike, classes: Sequence[str] = CLASS_NAMES) -> LabeledDataset:
    """List ``<root>/<class>/*.pgm`` with labels from the class table.

    Samples come back sorted by their path relative to ``root``.
    """
    root = Path(root)
    found: list[tuple[str, Path, int]] = []
    for label, name in enumerate(classes):
        cdir = root / name
        if not cdir.is_dir():
            raise MissingClassDir(f"class directory missing: {cdir}")
        files = [p for p in cdir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
        if not files:
            raise EmptyClass(f"no images in {cdir}")
        found.extend((p.relative_to(root).as_posix(), p, label) for p in files)
    found.sort(key=lambda t: t[0])
    return LabeledDataset([(p, label) for _, p, label in found], tuple(classes))


def stratified_split(
    ds: LabeledDataset, train_fraction: float = 0.8, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    """Per-class seeded shuffle; ``round_half_up(count * fraction)`` go to train.

    Both halves keep the input order of the samples they receive.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DegenerateSplit(f"train_fraction must be in (0, 1), got {train_fraction}")
    labels = ds.labels
    train_idx: list[int] = []
    for c in range(len(ds.classes)):
        members = np.flatnonzero(labels == c)
        n = len(members)
        n_train = int(np.floor(n * train_fraction + 0.5))
        if n < 2 or n_train == 0 or n_train == n:
            raise DegenerateSplit(
                f"class {ds.classes[c]!r} with {n} samples cannot be split at {train_fraction}"
            )
        rng = np.random.Generator(np.random.Philox(key=[seed, c]))
        train_idx.extend(members[rng.permutation(n)[:n_train]].tolist())
    in_train = np.zeros(len(ds), dtype=bool)
    in_train[train_idx] = True
    train = [s for s, t in zip(ds.samples, in_train) if t]
    val = [s for s, t in zip(ds.samples, in_train) if not t]
    return LabeledDataset(train, ds.classes), LabeledDataset(val, ds.classes)


def encode_onehot(label: int, num_classes: int = len(CLASS_NAMES)) -> np.ndarray:
    if not 0 <= label < num_classes:
        raise IndexOutOfRange(f"label {label} not in [0, {num_classes})")
    v = np.zeros(num_classes, dtype=np.float64)
    v[label] = 1.0
    return v


# ---------------------------------------------------------------------
# RFV1 feature files
# ---------------------------------------------------------------------
def write_feature_file(path: PathLike, vectors, labels, dim: int | None = None) -> None:
    """Write ``vectors`` (count x dim) as float32 LE plus one label byte each.

    ``dim`` is only needed for an empty vector set.
    """
    vectors = np.asarray(vectors)
    labels = np.asarray(labels)
    if vectors.ndim == 1 and vectors.size == 0:
        vectors = vectors.reshape(0, dim or 0)
    if vectors.ndim != 2:
        raise DimMismatch(f"expected a 2-D matrix, got shape {vectors.shape}")
    if dim is not None and vectors.shape[1] != dim:
        raise DimMismatch(f"vectors have dim {vectors.shape[1]}, expected {dim}")
    if labels.shape != (vectors.shape[0],):
        raise DimMismatch(f"{labels.size} labels for {vectors.shape[0]} vectors")
    if labels.size and (labels.min() < 0 or labels.max() >= len(CLASS_NAMES)):
        raise IndexOutOfRange("label bytes must be < 4")
    count, d = vectors.shape
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, count, d))
        fh.write(vectors.astype("<f4").tobytes())
        fh.write(labels.astype(np.uint8).tobytes())


def read_feature_file(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(vectors float32 [count, dim], labels uint8 [count])``."""
    blob = Path(path).read_bytes()
    if len(blob) < _FEATURE_HEADER.size:
        raise CorruptFile(f"{path}: shorter than the 12-byte header")
    magic, count, dim = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}, expected {FEATURE_MAGIC!r}")
    n_payload = count * dim * 4
    expected = _FEATURE_HEADER.size + n_payload + count
    if len(blob) != expected:
        raise CorruptFile(f"{path}: {len(blob)} bytes, expected {expected}")
    start = _FEATURE_HEADER.size
    vectors = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=start).reshape(count, dim)
    labels = np.frombuffer(blob, dtype=np.uint8, count=count, offset=start + n_payload)
    if labels.size and labels.max() >= len(CLASS_NAMES):
        raise CorruptFile(f"{path}: label byte >= {len(CLASS_NAMES)}")
    return vectors.astype(np.float32), labels.copy()
