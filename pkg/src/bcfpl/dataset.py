"""Labelled image collections, deterministic splits, and batch assembly."""
from __future__ import annotations

import csv
import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import BcfplError, DataError, EmptyManifestError, LabelFileError
from .imaging import IMAGE_SUFFIXES, MODEL_SIDE, Image, degrade, read_image

DEFAULT_BATCH_SIZE = 128


class Label(enum.IntEnum):
    EMPTY = 0
    OCCUPIED = 1


# CNRPark names its class folders free/busy
_CLASS_DIRS = {"empty": Label.EMPTY, "occupied": Label.OCCUPIED, "free": Label.EMPTY, "busy": Label.OCCUPIED}


@dataclass(frozen=True)
class Sample:
    path: str
    label: Label
    source: str = ""

    def __post_init__(self):
        if not self.path:
            raise DataError("sample path must be non-empty")
        object.__setattr__(self, "label", Label(int(self.label)))


@dataclass
class Manifest:
    samples: list[Sample]
    name: str = ""

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def counts(self) -> dict[str, int]:
        lab = self.labels()
        return {"empty": int((lab == 0).sum()), "occupied": int((lab == 1).sum())}


@dataclass
class Batch:
    inputs: np.ndarray  # N x 3 x 50 x 50, float32
    labels: np.ndarray  # N, int64
    indices: np.ndarray = field(default=None)  # positions in the source manifest

    def __len__(self):
        return len(self.labels)


def _sorted(samples, name):
    return Manifest(sorted(samples, key=lambda s: s.path), name)


def scan_class_folders(root, name: str | None = None) -> Manifest:
    """Collect images lying under folders named ``Occupied`` or ``Empty``.

    The nearest class-named ancestor decides the label, so PKLot's
    ``lot/weather/date/Occupied/*.jpg`` layout works as is.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data root {root} does not exist or is not a directory")
    samples = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        rel = Path(dirpath).relative_to(root)
        label = None
        for part in reversed(rel.parts):
            if part.lower() in _CLASS_DIRS:
                label = _CLASS_DIRS[part.lower()]
                break
        if label is None:
            continue
        for fn in filenames:
            if Path(fn).suffix.lower() in IMAGE_SUFFIXES:
                samples.append(Sample(str(Path(dirpath) / fn), label, root.name))
    if not samples:
        raise EmptyManifestError(f"no images found under Occupied/Empty folders in {root}")
    return _sorted(samples, name or root.name)


def _parse_label(token, line_no):
    if token not in ("0", "1"):
        raise LabelFileError(f"label must be 0 or 1, got {token!r}", line_no)
    return Label(int(token))


def load_label_file(file, image_root=None, name: str | None = None) -> Manifest:
    """Read a CNRPark-Ext style list: one ``relative/path label`` pair per line."""
    file = Path(file)
    image_root = Path(image_root) if image_root is not None else file.parent
    try:
        text = file.read_text()
    except OSError as exc:
        raise DataError(f"cannot read label file {file}: {exc}") from exc
    samples = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise LabelFileError(f"expected 'path label', got {line.strip()!r}", line_no)
        samples.append(Sample(str(image_root / parts[0]), _parse_label(parts[1], line_no), file.stem))
    if not samples:
        raise EmptyManifestError(f"label file {file} lists no samples")
    return _sorted(samples, name or file.stem)


def load_csv_manifest(file, image_root=None, name: str | None = None) -> Manifest:
    """Read ``path,label`` rows; the header line is optional.

    Relative paths resolve against ``image_root`` (default: the CSV's folder).
    """
    file = Path(file)
    image_root = Path(image_root) if image_root is not None else file.parent
    try:
        with open(file, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read manifest {file}: {exc}") from exc
    samples = []
    for line_no, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if line_no == 1 and row[0].strip().lower() == "path":
            continue
        if len(row) < 2:
            raise LabelFileError("expected 'path,label'", line_no)
        path = Path(row[0].strip())
        if not path.is_absolute():
            path = image_root / path
        source = row[2].strip() if len(row) > 2 else file.stem
        samples.append(Sample(str(path), _parse_label(row[1].strip(), line_no), source))
    if not samples:
        raise EmptyManifestError(f"manifest {file} lists no samples")
    return _sorted(samples, name or file.stem)


def write_csv_manifest(manifest: Manifest, file) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label", "source"])
        for s in manifest:
            w.writerow([s.path, int(s.label), s.source])


def load_manifest(path, image_root=None) -> Manifest:
    """Dispatch on what ``path`` is: class-folder tree, CSV, or label list."""
    path = Path(path)
    if path.is_dir():
        return scan_class_folders(path)
    if not path.exists():
        raise DataError(f"data path {path} does not exist")
    if path.suffix.lower() == ".csv":
        return load_csv_manifest(path, image_root)
    return load_label_file(path, image_root)


def split_manifest(m: Manifest, seed: int, n_train: int, n_test: int = 0) -> tuple[Manifest, Manifest]:
    """Seeded shuffle, then take ``n_train`` then ``n_test`` samples off the front."""
    if n_train < 0 or n_test < 0:
        raise DataError("split sizes must be non-negative")
    if n_train + n_test > len(m):
        raise DataError(f"cannot split {len(m)} samples into {n_train} train + {n_test} test")
    order = np.random.default_rng(seed).permutation(len(m))
    train = [m.samples[i] for i in order[:n_train]]
    test = [m.samples[i] for i in order[n_train:n_train + n_test]]
    return Manifest(train, f"{m.name}-train"), Manifest(test, f"{m.name}-test")


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample generator, independent of the order samples are processed in."""
    return np.random.default_rng([seed, epoch, index])


def to_planar(img: Image) -> np.ndarray:
    """HxWxC image to a 3xHxW tensor; grayscale is replicated to three channels."""
    data = img.data
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    return np.ascontiguousarray(data.transpose(2, 0, 1))


def degraded_tensor(path, k: int) -> np.ndarray:
    try:
        img = read_image(path)
    except BcfplError as exc:
        raise type(exc)(f"while loading sample {path}: {exc}") from exc
    return to_planar(degrade(img, k))


def preprocess_sample(s: Sample, k: int, train_mode: bool, rng=None, cache: dict | None = None) -> np.ndarray:
    """Decode, degrade to a ``k x k`` camera, and (in training) mirror with p = 0.5."""
    key = (s.path, k)
    if cache is not None and key in cache:
        x = cache[key]
    else:
        x = degraded_tensor(s.path, k)
        if cache is not None:
            cache[key] = x
    if train_mode and rng.random() < 0.5:
        x = x[:, :, ::-1]
    return np.ascontiguousarray(x)


def batch_sizes(n: int, batch_size: int) -> list[int]:
    full, rest = divmod(n, batch_size)
    return [batch_size] * full + ([rest] if rest else [])


def epoch_order(n: int, seed: int, epoch: int, train_mode: bool) -> np.ndarray:
    if not train_mode:
        return np.arange(n)
    return np.random.default_rng([seed, epoch, 2**31 - 1]).permutation(n)


def make_batches(
    m: Manifest,
    batch_size: int = DEFAULT_BATCH_SIZE,
    k: int = MODEL_SIDE,
    train_mode: bool = False,
    seed: int = 0,
    epoch: int = 0,
    cache: dict | None = None,
    workers: int = 1,
) -> Iterator[Batch]:
    """Yield batches for one epoch.

    Train mode reshuffles per ``(seed, epoch)`` and flips each sample using
    a generator derived from ``(seed, epoch, manifest index)``; the final
    partial batch is kept.
    """
    if len(m) == 0:
        raise EmptyManifestError(f"manifest {m.name!r} is empty")
    if batch_size < 1:
        raise DataError("batch size must be positive")
    order = epoch_order(len(m), seed, epoch, train_mode)

    def one(idx):
        rng = sample_rng(seed, epoch, int(idx)) if train_mode else None
        return preprocess_sample(m.samples[idx], k, train_mode, rng, cache)

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            tensors = list(pool.map(one, idx)) if pool else [one(i) for i in idx]
            labels = np.array([m.samples[i].label for i in idx], dtype=np.int64)
            yield Batch(np.stack(tensors), labels, idx)
    finally:
        if pool:
            pool.shutdown()
