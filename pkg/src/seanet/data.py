"""Dataset plumbing: feature-vector datasets with train/test partitions,
synthetic class-structured generators, holdout splits, and word-vector
ingestion with PCA reduction.

Feature datasets stand in for image corpora after feature extraction; the
binary SEAF format below is the interchange surface for precomputed
features.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

_MAGIC = b"SEAF"
_VERSION = 1
TRAIN_FLAG = 0
TEST_FLAG = 1


@dataclass
class FeatureDataset:
    """Feature rows with integer class labels and a train/test partition.

    ``n_classes`` is the label-space bound (labels lie in [0, n_classes));
    every class actually present must be nonempty in both partitions.
    """

    features: np.ndarray
    labels: np.ndarray
    test_mask: np.ndarray
    n_classes: int
    class_names: dict[int, str] | None = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        self.test_mask = np.asarray(self.test_mask, dtype=bool)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be an (n, F) matrix")
        if self.labels.shape != (n,) or self.test_mask.shape != (n,):
            raise ValueError("labels/partition flags must align with features")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            bad = int(np.argmax((self.labels < 0) | (self.labels >= self.n_classes)))
            raise ValueError(f"label out of range at row {bad}")
        for c in self.present_classes:
            cls = self.labels == c
            if not (cls & ~self.test_mask).any() or not (cls & self.test_mask).any():
                raise ValueError(f"class {c} empty in one partition")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def present_classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels))

    def rows(self, class_id: int | None = None, test: bool = False) -> np.ndarray:
        """Feature rows of one partition, optionally restricted to a class."""
        mask = self.test_mask if test else ~self.test_mask
        if class_id is not None:
            mask = mask & (self.labels == class_id)
        return self.features[mask]

    def partition(self, test: bool = False) -> tuple[np.ndarray, np.ndarray]:
        mask = self.test_mask if test else ~self.test_mask
        return self.features[mask], self.labels[mask]


@dataclass
class SplitSpec:
    """Designates the single held-out class."""

    holdout_class: int


def split(dataset: FeatureDataset, spec: SplitSpec,
          ) -> tuple[FeatureDataset, FeatureDataset]:
    """Partition into (rest, holdout-only) datasets; together they cover
    every row exactly once."""
    if spec.holdout_class not in dataset.present_classes:
        raise ValueError(f"holdout class {spec.holdout_class} not in dataset")
    hold = dataset.labels == spec.holdout_class
    def view(mask):
        return FeatureDataset(dataset.features[mask], dataset.labels[mask],
                              dataset.test_mask[mask], dataset.n_classes,
                              dataset.class_names)
    return view(~hold), view(hold)


def generate_synthetic(classes: int, dim: int, per_class: int, spread: float,
                       seed: int, test_per_class: int | None = None,
                       superclasses: int | None = None,
                       sub_offset: float = 0.4) -> FeatureDataset:
    """Gaussian blob dataset with optional two-level class structure.

    Class means are uniform in [-1, 1]^dim. With ``superclasses`` set, class
    c belongs to super-class ``c % superclasses``: its mean is that
    super-class's center plus a uniform(-sub_offset, sub_offset) offset,
    which gives the clustering analyses recoverable structure. Samples are
    mean + spread * standard normal. Deterministic per seed.
    """
    if classes < 2 or dim < 2:
        raise ValueError("need at least 2 classes and 2 dimensions")
    if test_per_class is None:
        test_per_class = max(1, per_class // 2)
    rng = np.random.default_rng(seed)
    if superclasses:
        centers = rng.uniform(-1.0, 1.0, size=(superclasses, dim))
        offsets = rng.uniform(-sub_offset, sub_offset, size=(classes, dim))
        means = centers[np.arange(classes) % superclasses] + offsets
    else:
        means = rng.uniform(-1.0, 1.0, size=(classes, dim))

    feats, labels, flags = [], [], []
    for c in range(classes):
        n = per_class + test_per_class
        feats.append(means[c] + spread * rng.standard_normal((n, dim)))
        labels.append(np.full(n, c))
        flags.append(np.r_[np.zeros(per_class, bool), np.ones(test_per_class, bool)])
    return FeatureDataset(np.vstack(feats), np.concatenate(labels),
                          np.concatenate(flags), classes)


# --- SEAF binary format -----------------------------------------------------

def save_features(dataset: FeatureDataset, path) -> None:
    """Write the checksummed SEAF feature file."""
    n, f = dataset.features.shape
    body = [
        _MAGIC,
        struct.pack("<IIII", _VERSION, n, f, dataset.n_classes),
        dataset.test_mask.astype(np.uint8).tobytes(),
        dataset.features.astype("<f8", copy=False).tobytes(),
        dataset.labels.astype("<u4", copy=False).tobytes(),
    ]
    blob = b"".join(body)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob)))


def load_features(path) -> FeatureDataset:
    """Read and validate a SEAF file; rejects corruption with a byte offset."""
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0

    def take(nbytes, what):
        nonlocal off
        if off + nbytes > len(buf):
            raise ValueError(f"truncated file: {what} at offset {off}")
        out = buf[off:off + nbytes]
        off += nbytes
        return out

    if take(4, "magic") != _MAGIC:
        raise ValueError("bad magic at offset 0: not a SEAF file")
    version, n, f, c = struct.unpack("<IIII", take(16, "header"))
    if version != _VERSION:
        raise ValueError(f"unsupported version {version} at offset 4")
    flags_off = off
    flags = np.frombuffer(take(n, "partition flags"), dtype=np.uint8)
    if flags.size and flags.max() > 1:
        bad = int(np.argmax(flags > 1))
        raise ValueError(f"invalid partition flag at offset {flags_off + bad}")
    features = np.frombuffer(take(8 * n * f, "features"), dtype="<f8")
    labels_off = off
    labels = np.frombuffer(take(4 * n, "labels"), dtype="<u4")
    crc_off = off
    (crc,) = struct.unpack("<I", take(4, "checksum"))
    if off != len(buf):
        raise ValueError(f"trailing bytes at offset {off}")
    if zlib.crc32(buf[:crc_off]) != crc:
        raise ValueError(f"checksum mismatch at offset {crc_off}")
    if labels.size and labels.max() >= c:
        bad = int(np.argmax(labels >= c))
        raise ValueError(f"label out of range at offset {labels_off + 4 * bad}")
    return FeatureDataset(features.reshape(n, f).copy(),
                          labels.astype(np.intp), flags.astype(bool), int(c))


# --- word vectors -----------------------------------------------------------

def load_word_vectors(path, names) -> dict[str, np.ndarray]:
    """Parse a text table (token then whitespace-separated reals per line)
    restricted to the requested names."""
    wanted = list(names)
    table: dict[str, np.ndarray] = {}
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token = parts[0]
            try:
                vec = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ValueError(f"malformed vector entry at line {lineno}") from None
            if vec.size == 0:
                raise ValueError(f"malformed vector entry at line {lineno}")
            if width is None:
                width = vec.size
            elif vec.size != width:
                raise ValueError(f"inconsistent vector length at line {lineno}")
            if token in table:
                raise ValueError(f"duplicate token {token!r} at line {lineno}")
            table[token] = vec
    missing = [n for n in wanted if n not in table]
    if missing:
        raise ValueError(f"names not found: {', '.join(missing)}")
    return {n: table[n] for n in wanted}


def reduce_word_vectors(table: dict[str, np.ndarray], names,
                        target_dim: int = 20, amplify: float = 10.0,
                        ) -> dict[int, np.ndarray]:
    """PCA-project the named vectors to ``target_dim``, scale by ``amplify``,
    and key the result by class id (position in ``names``).

    The projection is fit on exactly the selected vectors. At full
    dimensionality it is an orthonormal rotation of the centered data, so
    pairwise distances are preserved.
    """
    names = list(names)
    missing = [n for n in names if n not in table]
    if missing:
        raise ValueError(f"names not found: {', '.join(missing)}")
    x = np.vstack([table[n] for n in names])
    source_dim = x.shape[1]
    if target_dim > source_dim:
        raise ValueError("target_dim exceeds source dimensionality")
    if len(names) < target_dim:
        raise ValueError("need at least target_dim names for a well-posed projection")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=True)
    projected = centered @ vt[:target_dim].T * amplify
    return {i: projected[i] for i in range(len(names))}


def synthetic_word_vectors(dataset: FeatureDataset, source_dim: int,
                           noise: float, rng: np.random.Generator,
                           ) -> dict[str, np.ndarray]:
    """Stand-in word-vector table derived from empirical class means.

    Each class name ``class_<c>`` maps to a fixed random linear embedding of
    the class's train-partition mean plus Gaussian noise, so vector geometry
    mirrors feature-space geometry the way name embeddings mirror semantics.
    """
    classes = dataset.present_classes
    embed = rng.standard_normal((source_dim, dataset.feature_dim))
    embed /= np.sqrt(dataset.feature_dim)
    table = {}
    for c in classes:
        mean = dataset.rows(c, test=False).mean(axis=0)
        table[f"class_{c}"] = embed @ mean + noise * rng.standard_normal(source_dim)
    return table
