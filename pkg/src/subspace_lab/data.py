"""Datasets: IDX file ingestion, a seeded synthetic glyph generator, split plans."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_DTYPES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {np.dtype(v).newbyteorder("=") if v.itemsize > 1 else v: k for k, v in IDX_DTYPES.items()}


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Images in ``[0, 1]`` with shape ``(N, C, H, W)``, labels and sample ids."""

    images: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    split_id: str = "all"
    class_count: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if not (len(self.images) == len(self.labels) == len(self.ids)):
            raise DataError("images, labels and ids differ in length")
        if len(self.images) and (self.images.min() < 0 or self.images.max() > 1):
            raise DataError("pixel values must lie in [0, 1]")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError("labels must lie in [0, class_count)")
        if len(np.unique(self.ids)) != len(self.ids):
            raise DataError("sample ids must be unique")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, index, split_id: str | None = None) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.images[index], self.labels[index], self.ids[index], split_id or self.split_id, self.class_count)


# ---------------------------------------------------------------------------
# IDX


def _open(path, mode):
    path = Path(path)
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def read_idx(path) -> np.ndarray:
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: not an IDX file")
    code, ndim = raw[2], raw[3]
    if code not in IDX_DTYPES:
        raise DataError(f"{path}: unknown IDX type code 0x{code:02x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = IDX_DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header != expected:
        raise DataError(f"{path}: payload has {len(raw) - header} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    key = array.dtype.newbyteorder("=") if array.dtype.itemsize > 1 else array.dtype
    if key not in _IDX_CODES:
        raise DataError(f"dtype {array.dtype} has no IDX encoding")
    code = _IDX_CODES[key]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    with _open(path, "wb") as fh:
        fh.write(header + array.astype(IDX_DTYPES[code], copy=False).tobytes())


def load_idx_dataset(images_path, labels_path, split_id="all", class_count=None) -> Dataset:
    """Read an IDX image/label pair; pixel bytes are divided by 255."""
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if images.ndim == 3:
        images = images[:, None]
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / 255.0
    k = class_count or int(labels.max()) + 1
    return Dataset(images, labels, np.arange(len(labels)), split_id, k)


# ---------------------------------------------------------------------------
# Synthetic glyphs

PROTOTYPE_SEED = 20190514


def _class_prototypes(class_count, strokes, seed=PROTOTYPE_SEED):
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.65, 0.65, size=(class_count, strokes, 2, 2))


def _segment_distance(px, a, b):
    # px: (P, 2); a, b: (N, S, 2) -> (N, S, P)
    ab = b - a
    ap = px[None, None] - a[:, :, None]
    denom = np.maximum((ab ** 2).sum(-1), 1e-9)[:, :, None]
    t = np.clip((ap * ab[:, :, None]).sum(-1) / denom, 0.0, 1.0)
    closest = a[:, :, None] + t[..., None] * ab[:, :, None]
    return np.sqrt(((px[None, None] - closest) ** 2).sum(-1))


def make_synthetic(count: int, seed: int, size: int = 28, class_count: int = 10, strokes: int = 3,
                   noise: float = 0.05, channels: int = 1) -> Dataset:
    """Seeded handwriting-like dataset of stroke glyphs with per-sample jitter.

    Every class is a fixed set of line strokes; samples perturb the stroke
    endpoints, rotate, scale, shift and thicken them, and add pixel noise.
    With ``channels > 1`` each sample also gets a random ink and background
    colour, which carry no class information.
    """
    rng = np.random.default_rng(seed)
    protos = _class_prototypes(class_count, strokes)
    labels = rng.integers(class_count, size=count)
    pts = protos[labels] + rng.normal(0.0, 0.12, size=(count, strokes, 2, 2))
    theta = rng.uniform(-0.3, 0.3, size=count)
    scale = rng.uniform(0.85, 1.15, size=count)
    shift = rng.uniform(-0.12, 0.12, size=(count, 2))
    rot = np.stack([np.stack([np.cos(theta), -np.sin(theta)], -1), np.stack([np.sin(theta), np.cos(theta)], -1)], -2)
    pts = np.einsum("nij,nsej->nsei", rot, pts) * scale[:, None, None, None] + shift[:, None, None]
    coords = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    px = np.stack([xx.ravel(), yy.ravel()], -1)
    images = np.empty((count, size * size))
    width = rng.uniform(0.05, 0.11, size=count)[:, None]
    ink = rng.uniform(0.75, 1.0, size=count)[:, None]
    soft = 2.0 / size
    for start in range(0, count, 256):
        sl = slice(start, start + 256)
        d = _segment_distance(px, pts[sl, :, 0], pts[sl, :, 1]).min(axis=1)
        images[sl] = ink[sl] * np.clip(1 - (d - width[sl]) / soft, 0.0, 1.0)
    if channels > 1:
        paper = rng.uniform(0.0, 0.35, size=(count, channels, 1))
        colour = rng.uniform(0.6, 1.0, size=(count, channels, 1))
        images = paper + (colour - paper) * images[:, None]
    else:
        images = images[:, None]
    images += rng.normal(0.0, noise, size=images.shape)
    images = np.clip(images, 0.0, 1.0).reshape(count, channels, size, size)
    return Dataset(images, labels, np.arange(count), "synthetic", class_count)


def standard_splits(dataset: Dataset, victim_train: int, attack_eval: int, reference_fraction: float = 0.1,
                    seed: int = 0) -> dict:
    """Partition into disjoint ``victim_train``, ``reference_train`` and ``attack_eval`` splits.

    ``reference_train`` holds ``round(reference_fraction * victim_train)``
    samples that the victim never sees.
    """
    n_ref = int(round(reference_fraction * victim_train))
    need = victim_train + n_ref + attack_eval
    if need > len(dataset):
        raise DataError(f"split plan needs {need} samples, dataset has {len(dataset)}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    cuts = np.cumsum([victim_train, n_ref, attack_eval])
    parts = np.split(order[:need], cuts[:-1])
    names = ("victim_train", "reference_train", "attack_eval")
    return {name: dataset.subset(np.sort(idx), name) for name, idx in zip(names, parts)}


def check_disjoint(splits: dict) -> None:
    names = list(splits)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            shared = np.intersect1d(splits[names[a]].ids, splits[names[b]].ids)
            if len(shared):
                raise DataError(f"splits {names[a]!r} and {names[b]!r} share {len(shared)} samples")
