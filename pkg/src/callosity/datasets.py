"""Dataset ingestion (MNIST IDX, labeled-image manifests), filtering and splits."""
from __future__ import annotations

import csv
import gzip
import logging
import struct
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass(frozen=True)
class LabeledDataset:
    """Samples with dense class indices.

    Pixel data is either held in ``images`` (``[n, h, w]`` or ``[n, h, w, c]``,
    values in [0, 1]) or loaded on demand from ``paths``.
    """

    ids: tuple
    labels: np.ndarray
    classes: tuple
    images: np.ndarray | None = None
    paths: tuple | None = None
    provenance: str = ""

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate sample ids")
        if len(self.labels) != len(self.ids):
            raise DataError(f"{len(self.ids)} ids but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.classes)):
            raise DataError("label index outside the class table")

    def __len__(self):
        return len(self.ids)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_counts(self) -> dict:
        counts = np.bincount(self.labels, minlength=len(self.classes))
        return {self.classes[i]: int(c) for i, c in enumerate(counts)}

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            ids=tuple(self.ids[i] for i in idx),
            labels=self.labels[idx],
            images=None if self.images is None else self.images[idx],
            paths=None if self.paths is None else tuple(self.paths[i] for i in idx),
        )

    def load_images(self, grayscale: bool = False, size: int | None = None) -> np.ndarray:
        """Pixel array for every sample, reading files for manifest datasets."""
        if self.images is not None:
            return self.images
        from .imaging import read_image, resize, to_grayscale

        out = []
        for p in self.paths:
            img = read_image(p)
            if size is not None and img.shape[:2] != (size, size):
                img = resize(img, size, size)
            out.append(to_grayscale(img) if grayscale else img)
        return np.stack(out)


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    data = path.read_bytes()
    if path.suffix == ".gz":
        data = gzip.decompress(data)
    return data


def read_idx_images(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 16:
        raise DataError(f"{path}: truncated IDX header")
    magic, n, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{path}: bad image magic {magic} (expected {IDX_IMAGES_MAGIC})")
    expected = 16 + n * rows * cols
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {n}x{rows}x{cols}, got {len(data)}")
    return np.frombuffer(data, np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 8:
        raise DataError(f"{path}: truncated IDX header")
    magic, n = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataError(f"{path}: bad label magic {magic} (expected {IDX_LABELS_MAGIC})")
    if len(data) != 8 + n:
        raise DataError(f"{path}: expected {8 + n} bytes for {n} labels, got {len(data)}")
    return np.frombuffer(data, np.uint8, offset=8).copy()


def load_mnist(images_path, labels_path, dtype=np.float32) -> LabeledDataset:
    """Parse an IDX image/label pair; pixels are scaled to [0, 1]."""
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(pixels) != len(labels):
        raise DataError(f"{len(pixels)} images but {len(labels)} labels")
    name = Path(images_path).name
    return LabeledDataset(
        ids=tuple(f"{name}:{i}" for i in range(len(labels))),
        labels=labels.astype(np.int64),
        classes=tuple(str(d) for d in range(10)),
        images=(pixels.astype(dtype) / 255.0)[..., None],
        provenance=f"IDX {images_path}",
    )


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_mnist_dir(root, part: str = "train", dtype=np.float32) -> LabeledDataset:
    """Load the ``train`` or ``test`` part from a directory of official IDX files (optionally .gz)."""
    root = Path(root)
    img, lab = MNIST_FILES[part]
    paths = []
    for stem in (img, lab):
        for cand in (root / stem, root / (stem + ".gz")):
            if cand.exists():
                paths.append(cand)
                break
        else:
            raise DataError(f"{root}: missing MNIST file {stem}")
    return load_mnist(*paths, dtype=dtype)


def write_idx_images(path, pixels: np.ndarray):
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def read_manifest(csv_path) -> list[tuple[int, str, str]]:
    """Rows of a ``filename,label`` manifest as ``(line number, filename, label)``.

    A first row reading ``filename,label`` (any case) or the Kaggle
    ``Image,whaleID`` header is skipped.
    """
    rows = []
    with open(csv_path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{csv_path}:{lineno}: expected 'filename,label', got {row!r}")
            fname, label = row[0].strip(), row[1].strip()
            if lineno == 1 and (fname.lower(), label.lower()) in (("filename", "label"), ("image", "whaleid")):
                continue
            if not fname or not label:
                raise DataError(f"{csv_path}:{lineno}: empty filename or label")
            rows.append((lineno, fname, label))
    return rows


def load_manifest(csv_path, image_root=None) -> LabeledDataset:
    """Labeled images from a manifest; pixel data is read lazily.

    With ``image_root=None`` only the labels are read (no file checks).
    """
    rows = read_manifest(csv_path)
    seen = {}
    for lineno, fname, _ in rows:
        if fname in seen:
            raise DataError(f"{csv_path}:{lineno}: duplicate filename {fname!r} (first on line {seen[fname]})")
        seen[fname] = lineno
    paths = None
    if image_root is not None:
        root = Path(image_root)
        paths = []
        for lineno, fname, _ in rows:
            p = root / fname
            if not p.is_file():
                raise DataError(f"{csv_path}:{lineno}: image file {p} not found")
            paths.append(p)
        paths = tuple(paths)
    classes = tuple(sorted({label for _, _, label in rows}))
    index = {c: i for i, c in enumerate(classes)}
    return LabeledDataset(
        ids=tuple(fname for _, fname, _ in rows),
        labels=np.array([index[label] for _, _, label in rows], dtype=np.int64),
        classes=classes,
        paths=paths,
        provenance=f"manifest {csv_path}",
    )


def alpha_filter(ds: LabeledDataset, min_count: int = 20) -> LabeledDataset:
    """Keep only classes with at least ``min_count`` samples, reindexed densely.

    Kept/dropped counts are logged and appended to ``provenance``.
    """
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    keep = [c for c in range(ds.num_classes) if counts[c] >= min_count]
    if not keep:
        raise DataError(f"no class has >= {min_count} samples")
    remap = np.full(ds.num_classes, -1)
    remap[keep] = np.arange(len(keep))
    idx = np.flatnonzero(np.isin(ds.labels, keep))
    note = (f"alpha_filter(min_count={min_count}): kept {len(keep)} classes / {len(idx)} samples, "
            f"dropped {ds.num_classes - len(keep)} classes / {len(ds) - len(idx)} samples")
    log.info(note)
    sub = ds.subset(idx)
    return replace(
        sub,
        labels=remap[sub.labels],
        classes=tuple(ds.classes[c] for c in keep),
        provenance=(ds.provenance + "; " + note).lstrip("; "),
    )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 42
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def split_indices(labels, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    if not spec.stratified:
        perm = rng.permutation(len(labels))
        n_train = int(round(spec.train_fraction * len(labels)))
        if not 0 < n_train < len(labels):
            raise DataError(f"split of {len(labels)} samples leaves one side empty")
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    counts = Counter(labels.tolist())
    small = sorted(c for c, n in counts.items() if n < 2)
    if small:
        raise DataError(f"stratified split needs >= 2 samples per class; too few in classes {small}")
    train, val = [], []
    for c in sorted(counts):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        k = int(round(spec.train_fraction * len(members)))
        k = min(max(k, 1), len(members) - 1)
        train.append(members[:k])
        val.append(members[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def split(ds: LabeledDataset, spec: SplitSpec = SplitSpec()) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded, disjoint, exhaustive train/validation split."""
    tr, va = split_indices(ds.labels, spec)
    return ds.subset(tr), ds.subset(va)


def stratified_subsample(ds: LabeledDataset, n: int, seed: int = 42) -> LabeledDataset:
    """Exactly ``n`` samples, class-proportional (largest-remainder quotas)."""
    if n >= len(ds):
        return ds
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    share = counts * n / len(ds)
    quota = np.floor(share).astype(np.int64)
    order = np.argsort(-(share - quota), kind="stable")
    quota[order[: n - quota.sum()]] += 1
    rng = np.random.default_rng(seed)
    picked = [rng.permutation(np.flatnonzero(ds.labels == c))[:q] for c, q in enumerate(quota)]
    return ds.subset(np.sort(np.concatenate(picked)))
