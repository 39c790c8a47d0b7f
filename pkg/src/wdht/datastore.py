"""Feature/label file formats, dataset splits and the synthetic generator."""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .rng import SplitMix64
from .tagvec import WordEmbeddingTable, load_embedding_table, load_tags, save_tags

FVEC_MAGIC = b"WDHT"
FVEC_VERSION = 1
_FVEC_HEADER = struct.Struct("<4sIQQ")
# refuse payloads that could not be addressed anyway
_MAX_ELEMENTS = 1 << 40


def save_features(path, X):
    X = np.asarray(X)
    if X.ndim != 2:
        raise DataError("feature matrix must be 2-d")
    with open(path, "wb") as fh:
        fh.write(_FVEC_HEADER.pack(FVEC_MAGIC, FVEC_VERSION, X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X, dtype="<f4").tobytes())


def load_features(path):
    """Read an FVEC file as float64 [rows, cols]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _FVEC_HEADER.size:
        raise DataError(f"{path}: truncated header at byte offset {len(blob)}")
    magic, version, rows, cols = _FVEC_HEADER.unpack_from(blob)
    if magic != FVEC_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {FVEC_MAGIC!r}")
    if version != FVEC_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if rows * cols > _MAX_ELEMENTS:
        raise DataError(f"{path}: dimension overflow ({rows} x {cols})")
    expected = _FVEC_HEADER.size + rows * cols * 4
    if len(blob) < expected:
        raise DataError(f"{path}: truncated payload at byte offset {len(blob)}, expected {expected} bytes")
    if len(blob) > expected:
        raise DataError(f"{path}: trailing bytes after offset {expected}")
    X = np.frombuffer(blob, dtype="<f4", offset=_FVEC_HEADER.size).reshape(rows, cols)
    X = X.astype(np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite feature values")
    return X


@dataclass
class LabelMatrix:
    sets: list
    vocab_size: int

    def __len__(self):
        return len(self.sets)

    def subset(self, idx):
        return LabelMatrix([self.sets[i] for i in idx], self.vocab_size)

    def incidence(self):
        """Dense boolean [n, vocab_size] matrix."""
        M = np.zeros((len(self.sets), self.vocab_size), dtype=bool)
        for i, s in enumerate(self.sets):
            M[i, list(s)] = True
        return M


def load_labels(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    vocab = None
    if lines and lines[0].startswith("#labels"):
        parts = lines.pop(0).split()
        if len(parts) != 2 or not parts[1].isdigit():
            raise DataError(f"{path}:1: malformed header, expected '#labels <vocab_size>'")
        vocab = int(parts[1])
    sets = []
    offset = 2 if vocab is not None else 1
    for i, ln in enumerate(lines):
        try:
            ids = {int(t) for t in ln.split()}
        except ValueError:
            raise DataError(f"{path}:{i + offset}: non-integer label token in {ln!r}") from None
        if any(x < 0 for x in ids):
            raise DataError(f"{path}:{i + offset}: negative label id")
        if vocab is not None and any(x >= vocab for x in ids):
            raise DataError(f"{path}:{i + offset}: label id >= declared vocabulary {vocab}")
        sets.append(frozenset(ids))
    if vocab is None:
        vocab = max((max(s) for s in sets if s), default=-1) + 1
    return LabelMatrix(sets, vocab)


def save_labels(path, labels):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#labels {labels.vocab_size}\n")
        for s in labels.sets:
            fh.write(" ".join(str(x) for x in sorted(s)) + "\n")


def check_counts(**named):
    """Raise one error listing every count when sample counts disagree."""
    counts = {k: len(v) for k, v in named.items() if v is not None}
    if len(set(counts.values())) > 1:
        desc = ", ".join(f"{k}={n}" for k, n in counts.items())
        raise DataError(f"inconsistent sample counts: {desc}")


@dataclass
class DatasetSplit:
    train: np.ndarray
    query: np.ndarray

    @property
    def database(self):
        return self.train


def split(count, query_fraction, seed):
    """Uniform random disjoint split; the training side doubles as the database."""
    if not 0.0 < query_fraction < 1.0:
        raise DataError("query fraction must lie in (0, 1)")
    n_query = int(round(count * query_fraction))
    if n_query == 0 or n_query == count:
        raise DataError(f"fraction {query_fraction} leaves one side of a {count}-sample split empty")
    perm = SplitMix64(seed).spawn(0x5917).permutation(count)
    return DatasetSplit(train=np.sort(perm[n_query:]), query=np.sort(perm[:n_query]))


@dataclass
class SyntheticSpec:
    clusters: int = 4
    per_cluster: int = 500
    feature_dim: int = 64
    feature_noise: float = 1.0
    centroid_scale: float = 0.5
    vocab_per_cluster: int = 200
    tags_per_sample: int = 3
    embedding_dim: int = 32
    embedding_noise: float = 0.35
    tag_noise: float = 0.0
    seed: int = 0

    def validate(self):
        if self.clusters < 2:
            raise DataError("synthetic data needs at least 2 clusters")
        for name in ("per_cluster", "feature_dim", "vocab_per_cluster", "tags_per_sample", "embedding_dim"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if self.feature_noise < 0 or self.embedding_noise < 0:
            raise DataError("noise levels must be >= 0")
        if not 0.0 <= self.tag_noise <= 1.0:
            raise DataError("tag_noise is a probability")


@dataclass
class Dataset:
    features: np.ndarray
    tags: list
    labels: LabelMatrix
    table: WordEmbeddingTable
    spec: SyntheticSpec = field(repr=False, default=None)

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx], [self.tags[i] for i in idx], self.labels.subset(idx), self.table, self.spec
        )


def synth_generate(spec):
    """Clustered features with per-cluster tag vocabularies.

    Cluster c gets a feature centroid, a tag vocabulary ``c<c>_t<j>`` whose
    embeddings scatter around an embedding-space centroid, and label c.
    With probability ``tag_noise`` each drawn tag is replaced by a tag from a
    different cluster.  Features are rounded to float32 so in-memory and
    on-disk copies agree.
    """
    spec.validate()
    root = SplitMix64(spec.seed)
    r_feat, r_emb, r_tag = root.spawn(1), root.spawn(2), root.spawn(3)
    C, n_c = spec.clusters, spec.per_cluster

    centroids = r_feat.normal(C * spec.feature_dim).reshape(C, spec.feature_dim) * spec.centroid_scale
    labels = np.repeat(np.arange(C), n_c)
    noise = r_feat.normal(C * n_c * spec.feature_dim).reshape(C * n_c, spec.feature_dim)
    X = centroids[labels] + spec.feature_noise * noise
    X = X.astype(np.float32).astype(np.float64)

    e_cent = r_emb.normal(C * spec.embedding_dim).reshape(C, spec.embedding_dim)
    e_cent /= np.linalg.norm(e_cent, axis=1, keepdims=True)
    V = spec.vocab_per_cluster
    jitter = r_emb.normal(C * V * spec.embedding_dim).reshape(C, V, spec.embedding_dim)
    jitter *= spec.embedding_noise / np.sqrt(spec.embedding_dim)
    entries = {}
    for c in range(C):
        for j in range(V):
            entries[f"c{c}_t{j}"] = e_cent[c] + jitter[c, j]
    table = WordEmbeddingTable(dim=spec.embedding_dim, entries=entries)

    T = spec.tags_per_sample
    n = C * n_c
    picks = r_tag.integers(V, n * T).reshape(n, T)
    flip = r_tag.uniform(n * T).reshape(n, T) < spec.tag_noise
    other = r_tag.integers(C - 1, n * T).reshape(n, T)
    tags = []
    for i in range(n):
        row = []
        for t in range(T):
            c = labels[i]
            if flip[i, t]:
                c = other[i, t] + (other[i, t] >= c)
            row.append(f"c{c}_t{picks[i, t]}")
        tags.append(row)

    label_matrix = LabelMatrix([frozenset([int(c)]) for c in labels], C)
    return Dataset(X, tags, label_matrix, table, spec)


def write_dataset(directory, data, split_):
    """Write train/query halves plus the embedding table into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    for name, idx in (("train", split_.train), ("query", split_.query)):
        part = data.subset(idx)
        save_features(os.path.join(directory, f"{name}_features.fvec"), part.features)
        save_tags(os.path.join(directory, f"{name}_tags.txt"), part.tags)
        save_labels(os.path.join(directory, f"{name}_labels.txt"), part.labels)
    data.table.save(os.path.join(directory, "embeddings.txt"))


def read_dataset(directory, part="train"):
    X = load_features(os.path.join(directory, f"{part}_features.fvec"))
    tags = load_tags(os.path.join(directory, f"{part}_tags.txt"))
    labels = load_labels(os.path.join(directory, f"{part}_labels.txt"))
    table = load_embedding_table(os.path.join(directory, "embeddings.txt"))
    check_counts(features=X, tags=tags, labels=labels)
    return Dataset(X, tags, labels, table)
