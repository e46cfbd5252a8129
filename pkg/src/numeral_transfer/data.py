"""Numeral corpora: directory ingestion, inversion, stratified hold-out split and
the compact ``NMDS`` tensor archive."""
from __future__ import annotations

import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DatasetError

log = logging.getLogger(__name__)

IMAGE_SIZE = 32
N_CLASSES = 10
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".pgm")

# Pixels live on a 2**-24 grid: there 1 - v is exact in float32, so inversion
# is a bitwise involution (it is not for arbitrary float32 values below 0.5).
PIXEL_QUANTUM = 2.0 ** -24

NMDS_MAGIC = b"NMDS"
NMDS_VERSION = 1
_NMDS_HEADER = struct.Struct("<4sIIII")


@dataclass
class LabeledDataset:
    name: str
    images: np.ndarray          # [N, 1, 32, 32] float32 in [0, 1]
    labels: np.ndarray          # [N] int64 in 0..9
    is_eval: np.ndarray | None = None   # per-sample partition tag, None before splitting
    skipped: int = 0
    manifest: "DatasetManifest | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.images.shape != (n, 1, IMAGE_SIZE, IMAGE_SIZE):
            raise DatasetError(f"images must be [N,1,32,32] with N={n}, got {self.images.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise DatasetError("labels must lie in 0..9")
        if n and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DatasetError("pixel values must lie in [0, 1]")
        if self.is_eval is not None:
            self.is_eval = np.asarray(self.is_eval, dtype=bool)
            if self.is_eval.shape != (n,):
                raise DatasetError("partition tags must have one entry per sample")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_split(self) -> bool:
        return self.is_eval is not None

    def class_histogram(self, mask: np.ndarray | None = None) -> np.ndarray:
        labels = self.labels if mask is None else self.labels[mask]
        return np.bincount(labels, minlength=N_CLASSES)

    def train_part(self):
        if self.is_eval is None:
            raise DatasetError(f"dataset {self.name!r} has not been split")
        keep = ~self.is_eval
        return self.images[keep], self.labels[keep]

    def eval_part(self):
        if self.is_eval is None:
            raise DatasetError(f"dataset {self.name!r} has not been split")
        return self.images[self.is_eval], self.labels[self.is_eval]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.name, self.images[index], self.labels[index],
                              None if self.is_eval is None else self.is_eval[index])


def to_pixel_grid(images) -> np.ndarray:
    """Round to the nearest multiple of 2**-24 (a change below 3e-8)."""
    a = np.asarray(images, dtype=np.float32)
    return (np.round(a * np.float32(2 ** 24)) / np.float32(2 ** 24)).astype(np.float32)


def invert(images: np.ndarray) -> np.ndarray:
    """v -> 1 - v. Dark ink on a light page becomes light strokes on black.
    Exactly involutive for values on the pixel grid (see ``to_pixel_grid``)."""
    images = np.asarray(images)
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise DatasetError("invert expects values in [0, 1]; got out-of-range pixels (decoding bug?)")
    return 1.0 - images


# ------------------------------------------------------------------ directory

@dataclass
class DatasetManifest:
    root: Path
    files: dict[int, list[Path]] = field(default_factory=dict)
    checksum: str = ""
    n_classes: int = N_CLASSES

    @property
    def class_counts(self) -> list[int]:
        return [len(self.files[k]) for k in range(self.n_classes)]


def scan_directory(root) -> DatasetManifest:
    """Index ``root/{0..9}/*`` in lexicographic path order."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {str(root)!r} does not exist or is not a directory")
    files = {}
    for k in range(N_CLASSES):
        d = root / str(k)
        if not d.is_dir():
            raise DatasetError(f"missing class directory {str(d)!r}")
        found = sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not found:
            raise DatasetError(f"class directory {str(d)!r} holds no images")
        files[k] = found
    h = hashlib.sha256()
    for k in range(N_CLASSES):
        for p in files[k]:
            h.update(p.relative_to(root).as_posix().encode())
            h.update(b"\n")
    return DatasetManifest(root=root, files=files, checksum=h.hexdigest())


def decode_image(path, strict: bool = False) -> np.ndarray:
    """Grayscale in [0, 1], resampled to 32x32 (bilinear) unless ``strict``."""
    with Image.open(path) as im:
        im = im.convert("L")
        if im.size != (IMAGE_SIZE, IMAGE_SIZE):
            if strict:
                raise DatasetError(f"{path}: size {im.size} is not 32x32 and resampling is disabled")
            im = im.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        return to_pixel_grid(np.asarray(im, dtype=np.float32) / np.float32(255.0))


def load_directory(root, name: str | None = None, strict: bool = False) -> LabeledDataset:
    manifest = scan_directory(root)
    images, labels = [], []
    skipped = 0
    for k in range(N_CLASSES):
        for p in manifest.files[k]:
            try:
                images.append(decode_image(p, strict))
            except (UnidentifiedImageError, OSError, ValueError) as exc:
                skipped += 1
                log.warning("skipping undecodable file %s: %s", p, exc)
                continue
            labels.append(k)
    if not images:
        raise DatasetError(f"no usable images under {str(manifest.root)!r}")
    if skipped:
        log.warning("%d file(s) skipped under %s", skipped, manifest.root)
    arr = invert(np.stack(images)[:, None, :, :]).astype(np.float32)
    return LabeledDataset(name or manifest.root.name, arr, np.array(labels),
                          skipped=skipped, manifest=manifest)


# ---------------------------------------------------------------------- split

def stratified_split(dataset: LabeledDataset, eval_fraction: float, seed: int) -> LabeledDataset:
    """Tag ``floor(eval_fraction * n_c)`` samples of each class (at least one) as Eval."""
    if not 0.0 < eval_fraction < 1.0:
        raise DatasetError(f"eval_fraction must lie in (0, 1), got {eval_fraction}")
    rng = np.random.default_rng(seed)
    is_eval = np.zeros(len(dataset), dtype=bool)
    for k in range(N_CLASSES):
        idx = np.flatnonzero(dataset.labels == k)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise DatasetError(f"class {k} has {len(idx)} sample(s); at least 2 are needed to split")
        n_eval = max(1, int(np.floor(eval_fraction * len(idx))))
        is_eval[rng.permutation(idx)[:n_eval]] = True
    return replace(dataset, is_eval=is_eval)


# -------------------------------------------------------------------- archive

def write_archive(dataset: LabeledDataset, path) -> None:
    """``NMDS`` | version u32 | N u32 | H u32 | W u32 | labels u8[N] | f32 LE images."""
    n = len(dataset)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_NMDS_HEADER.pack(NMDS_MAGIC, NMDS_VERSION, n, IMAGE_SIZE, IMAGE_SIZE))
        fh.write(dataset.labels.astype(np.uint8).tobytes())
        fh.write(np.ascontiguousarray(dataset.images, dtype="<f4").tobytes())
    os.replace(tmp, path)


def read_archive(path, name: str | None = None) -> LabeledDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _NMDS_HEADER.size:
        raise DatasetError(f"{path}: too short for an NMDS header")
    magic, version, n, h, w = _NMDS_HEADER.unpack_from(raw)
    if magic != NMDS_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}, expected {NMDS_MAGIC!r}")
    if version != NMDS_VERSION:
        raise DatasetError(f"{path}: unsupported NMDS version {version}")
    if (h, w) != (IMAGE_SIZE, IMAGE_SIZE):
        raise DatasetError(f"{path}: image size {h}x{w} is not 32x32")
    expected = _NMDS_HEADER.size + n + 4 * n * h * w
    if len(raw) != expected:
        raise DatasetError(f"{path}: length {len(raw)} != expected {expected}")
    off = _NMDS_HEADER.size
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).astype(np.int64)
    images = np.frombuffer(raw, dtype="<f4", count=n * h * w, offset=off + n)
    images = images.astype(np.float32).reshape(n, 1, h, w)
    return LabeledDataset(name or path.stem, images, labels)


def load_any(source, name: str | None = None, strict: bool = False) -> LabeledDataset:
    """Directory tree or ``.nmds`` archive."""
    source = Path(source)
    if source.is_file():
        return read_archive(source, name)
    return load_directory(source, name, strict)
