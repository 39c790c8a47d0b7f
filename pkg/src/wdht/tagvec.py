"""Word-embedding lookup and per-sample tag aggregation."""

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

MODES = ("mean", "tf", "itf")


def normalize_token(token):
    return token.strip().lower()


@dataclass
class WordEmbeddingTable:
    dim: int
    entries: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, token):
        return normalize_token(token) in self.entries

    def get(self, token):
        return self.entries.get(normalize_token(token))

    def vectors_for(self, tags):
        """Stack the vectors of in-vocabulary tags, keeping list order."""
        found = [self.entries[t] for t in (normalize_token(x) for x in tags) if t in self.entries]
        if not found:
            return np.empty((0, self.dim))
        return np.vstack(found)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{len(self.entries)} {self.dim}\n")
            for tok, vec in self.entries.items():
                fh.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")


@dataclass
class TagStats:
    total_tags: int
    image_count_per_tag: dict

    def count(self, token):
        return self.image_count_per_tag.get(normalize_token(token), 0)


@dataclass
class AggregatedTagVector:
    w: np.ndarray
    sample_id: int = -1
    valid: bool = True


def load_embedding_table(path):
    """Parse a word2vec-style text table.

    An optional first line ``<vocab_count> <dim>`` is accepted.  Duplicate
    tokens (after lowercasing) keep their first occurrence.
    """
    entries = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not rows:
        raise DataError(f"{path}: empty embedding table")

    first = rows[0][1].split()
    if len(first) == 2 and all(p.isdigit() for p in first):
        dim = int(first[1])
        if dim <= 0:
            raise DataError(f"{path}:1: header dim must be positive")
        rows = rows[1:]

    for lineno, line in rows:
        parts = line.rstrip("\n").split(" ")
        parts = [p for p in parts if p != ""]
        if len(parts) < 2:
            raise DataError(f"{path}:{lineno}: malformed row (needs a token and values)")
        token, values = normalize_token(parts[0]), parts[1:]
        if dim is None:
            dim = len(values)
        if len(values) != dim:
            raise DataError(
                f"{path}:{lineno}: inconsistent dimension, expected {dim} values got {len(values)}"
            )
        try:
            vec = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-numeric value ({exc})") from None
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}:{lineno}: non-finite value")
        if not token:
            raise DataError(f"{path}:{lineno}: empty token")
        entries.setdefault(token, vec)

    if not entries:
        raise DataError(f"{path}: no embedding rows")
    return WordEmbeddingTable(dim=dim, entries=entries)


def load_tags(path):
    """One sample per line; whitespace-separated tokens; empty line is an empty set."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [[normalize_token(t) for t in ln.split()] for ln in lines]


def save_tags(path, tagsets):
    with open(path, "w", encoding="utf-8") as fh:
        for tags in tagsets:
            fh.write(" ".join(tags) + "\n")


def compute_tag_stats(tagsets):
    if not tagsets:
        raise DataError("cannot compute tag statistics of an empty corpus")
    total = 0
    per_tag = Counter()
    for tags in tagsets:
        norm = [normalize_token(t) for t in tags]
        total += len(norm)
        per_tag.update(set(norm))
    return TagStats(total_tags=total, image_count_per_tag=dict(per_tag))


def _weights(tokens, stats, mode):
    if mode == "mean":
        return np.ones(len(tokens))
    if stats is None or stats.total_tags <= 0:
        raise DataError(f"{mode} aggregation needs tag statistics with N > 0")
    counts = np.array([stats.count(t) for t in tokens], dtype=np.float64)
    if np.any(counts <= 0):
        missing = [t for t, c in zip(tokens, counts) if c <= 0]
        raise DataError(f"tags absent from corpus statistics: {missing[:5]}")
    n_total = float(stats.total_tags)
    if mode == "tf":
        return counts / n_total
    return np.log(n_total / counts)


def aggregate(tags, table, stats=None, mode="mean", sample_id=-1):
    """Collapse a tag list into one vector (mean, tf- or itf-weighted average).

    Out-of-vocabulary tags are skipped and do not count toward m.  When no
    tag is in the vocabulary the result carries ``valid=False`` and a zero
    vector; callers drop such samples.
    """
    if mode not in MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}; expected one of {MODES}")
    tokens = [t for t in (normalize_token(x) for x in tags) if t and t in table.entries]
    if not tokens:
        return AggregatedTagVector(np.zeros(table.dim), sample_id, valid=False)
    vecs = np.vstack([table.entries[t] for t in tokens])
    weights = _weights(tokens, stats, mode)
    w = np.zeros(table.dim)
    for wt, v in zip(weights, vecs):
        w += wt * v
    w /= len(tokens)
    return AggregatedTagVector(w, sample_id, valid=True)


def aggregate_corpus(tagsets, table, mode="mean", stats=None):
    """Aggregate every sample.

    Returns ``(W, valid_mask)`` with W of shape [n, dim]; invalid rows are zero.
    Statistics default to the corpus itself.
    """
    if mode != "mean" and stats is None:
        stats = compute_tag_stats(tagsets)
    W = np.zeros((len(tagsets), table.dim))
    valid = np.zeros(len(tagsets), dtype=bool)
    for i, tags in enumerate(tagsets):
        agg = aggregate(tags, table, stats, mode, sample_id=i)
        W[i] = agg.w
        valid[i] = agg.valid
    n_bad = int((~valid).sum())
    if n_bad:
        log.warning("%d of %d samples have no in-vocabulary tags and are dropped", n_bad, len(tagsets))
    return W, valid


def tag_vector_variance(tags, table):
    """Mean squared distance of a sample's tag vectors from their centroid."""
    vecs = table.vectors_for(tags)
    if len(vecs) == 0:
        raise DataError("no in-vocabulary tags")
    centred = vecs - vecs.mean(axis=0)
    return float(np.mean(np.sum(centred ** 2, axis=1)))

