"""Datasets: a multi-modal Gaussian mixture generator and IDX / CSV loaders."""
import csv
import os
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_MEANS_STREAM = 1
_SAMPLES_STREAM = 2
_SPLIT_STREAM = 3
_MAX_MEAN_ATTEMPTS = 100_000


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.labels.size and self.labels.min() < 0:
            raise DataError("labels must be non-negative")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass
class MixtureSpec:
    num_classes: int = 4
    clusters_per_class: int = 3
    dim: int = 2
    cluster_separation: float = 5.0
    cluster_scale: float = 0.4
    samples_per_class: int = 300
    seed: int = 0

    def __post_init__(self):
        for name in ("num_classes", "clusters_per_class", "dim", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cluster_separation <= 0 or self.cluster_scale <= 0:
            raise ValueError("cluster_separation and cluster_scale must be > 0")


def mixture_means(spec):
    """Cluster means on a sphere, no two closer than ``4 * cluster_scale``.

    Returns an array of shape ``(num_classes, clusters_per_class, dim)``.
    """
    rng = RngStream(spec.seed, _MEANS_STREAM)
    min_dist = 4.0 * spec.cluster_scale
    total = spec.num_classes * spec.clusters_per_class
    means = []
    attempts = 0
    while len(means) < total:
        attempts += 1
        if attempts > _MAX_MEAN_ATTEMPTS:
            raise ValueError(
                f"could not place {total} cluster means {min_dist} apart on a sphere of "
                f"radius {spec.cluster_separation} in {spec.dim} dims"
            )
        v = rng.standard_normal(spec.dim)
        norm = np.sqrt(np.sum(v * v))
        if norm == 0.0:
            continue
        v = v * (spec.cluster_separation / norm)
        if all(np.sqrt(np.sum((v - m) ** 2)) >= min_dist for m in means):
            means.append(v)
    return np.array(means).reshape(spec.num_classes, spec.clusters_per_class, spec.dim)


def gen_mixture(spec):
    """Sample a train/test pair with exactly ``samples_per_class`` rows per class.

    Sample ``i`` of a class comes from cluster ``i % clusters_per_class``.
    Each class is split 80/20 on its own, so both splits stay balanced.
    """
    means = mixture_means(spec)
    rng = RngStream(spec.seed, _SAMPLES_STREAM)
    split_rng = RngStream(spec.seed, _SPLIT_STREAM)
    n = spec.samples_per_class
    n_train = (4 * n) // 5
    parts = {"train": ([], []), "test": ([], [])}
    for c in range(spec.num_classes):
        cluster = np.arange(n) % spec.clusters_per_class
        noise = rng.standard_normal(n * spec.dim).reshape(n, spec.dim)
        x = means[c, cluster] + spec.cluster_scale * noise
        order = split_rng.permutation(n)
        for name, idx in (("train", order[:n_train]), ("test", order[n_train:])):
            parts[name][0].append(x[idx])
            parts[name][1].append(np.full(idx.size, c))
    return tuple(
        Dataset(np.concatenate(parts[name][0]), np.concatenate(parts[name][1]), name)
        for name in ("train", "test")
    )


def _read_idx(path, expected_magic, what):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated {what} file at offset {len(raw)} (need 4-byte magic)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataError(f"{path}: bad {what} magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    ndim = expected_magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated {what} header at offset {len(raw)} (need {header} bytes)")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise DataError(f"{path}: truncated {what} payload at offset {len(raw)} (need {header + size} bytes)")
    if len(raw) > header + size:
        raise DataError(f"{path}: {len(raw) - header - size} trailing bytes after offset {header + size}")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header)
    return dims, data


def load_idx(images_path, labels_path, split="train"):
    """Load an IDX image/label pair; pixels become floats in [0, 1]."""
    dims, pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    (count,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if dims[0] != count:
        raise DataError(f"{images_path} holds {dims[0]} images but {labels_path} holds {count} labels")
    features = pixels.reshape(dims[0], dims[1] * dims[2]).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), split)


def write_idx(images_path, labels_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_csv(path, label_column="label", split="train"):
    """Numeric CSV with a header row; every non-label column is a feature."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        if label_column not in header:
            raise DataError(f"{path}: unknown label column {label_column!r} (row 1 header: {header})")
        li = header.index(label_column)
        feats, labels = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rowno} has {len(row)} cells, header has {len(header)}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise DataError(f"{path}: non-numeric cell at row {rowno}") from None
            label = values.pop(li)
            if label != int(label):
                raise DataError(f"{path}: non-integer label at row {rowno}")
            feats.append(values)
            labels.append(int(label))
    width = len(header) - 1
    return Dataset(np.array(feats, dtype=np.float64).reshape(len(feats), width), np.array(labels, dtype=np.int64), split)


def write_csv(path, data, label_column="label"):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(data.dim)] + [label_column])
        for x, y in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
