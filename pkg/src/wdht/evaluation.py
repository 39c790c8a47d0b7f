"""Retrieval metrics and the experiment drivers built on them.

AP@K divides by the number of relevant items found in the top K and is 0
when none is found.  PR curves report, at each of 1000 recall levels
r = t/1000, the precision at the first rank whose recall reaches r.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .codec import binarize_matrix
from .datastore import split as make_split
from .errors import DataError
from .hashnet import HyperParams, encode, train
from .retrieval import HammingIndex
from .tagvec import aggregate_corpus

log = logging.getLogger(__name__)

PR_LEVELS = 1000


def relevant(query_labels, db_labels):
    return int(bool(set(query_labels) & set(db_labels)))


def relevance_matrix(query_labels, db_labels):
    """[q, n] 0/1 matrix: query and database item share a label."""
    vocab = max(query_labels.vocab_size, db_labels.vocab_size)
    Q = _incidence(query_labels, vocab)
    D = _incidence(db_labels, vocab)
    return (Q.astype(np.int32) @ D.T.astype(np.int32)) > 0


def _incidence(labels, vocab):
    M = np.zeros((len(labels), vocab), dtype=bool)
    for i, s in enumerate(labels.sets):
        M[i, list(s)] = True
    return M


def average_precision_at_k(rel):
    rel = np.asarray(rel, dtype=np.float64)
    if rel.size == 0:
        raise ValueError("relevance list must have K >= 1 entries")
    hits = np.cumsum(rel)
    n_rel = hits[-1]
    if n_rel == 0:
        return 0.0
    prec = hits / np.arange(1, rel.size + 1)
    return float(np.sum(prec * rel) / n_rel)


def ranked_relevance(positions, rel_matrix):
    """Gather relevance along each query's ranking."""
    return np.take_along_axis(rel_matrix, positions, axis=1)


def map_at_k(positions, rel_matrix, k):
    """Mean AP over queries using the first ``k`` ranked items of each row."""
    if positions.shape[0] == 0:
        raise DataError("empty query set")
    ranked = ranked_relevance(positions[:, :k], rel_matrix).astype(np.float64)
    aps = [average_precision_at_k(row) for row in ranked]
    return float(np.mean(aps))


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    n_queries: int

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("recall,precision\n")
            for r, p in zip(self.recall, self.precision):
                fh.write(f"{r!r},{p!r}\n")


def pr_curve(positions, rel_matrix, levels=PR_LEVELS):
    """Average interpolated precision at ``levels`` uniform recall points.

    ``positions`` must be full rankings.  Queries with no relevant items are
    left out of the average.
    """
    if positions.shape[1] != rel_matrix.shape[1]:
        raise DataError("pr_curve needs full rankings over the whole database")
    t = np.arange(1, levels + 1, dtype=np.int64)
    acc = np.zeros(levels)
    used = 0
    ranked = ranked_relevance(positions, rel_matrix).astype(np.int64)
    for row in ranked:
        total = int(row.sum())
        if total == 0:
            continue
        hits = np.cumsum(row)
        # smallest rank i with hits[i] / total >= t / levels, in exact integers
        need = -(-t * total // levels)
        first = np.searchsorted(hits, need, side="left")
        acc += hits[first] / (first + 1.0)
        used += 1
    if used == 0:
        raise DataError("no query has any relevant database item")
    return PRCurve(t / levels, acc / used, used)


def evaluate_codes(db_codes, query_codes, db_labels, query_labels, ks=(100,), with_pr=False):
    """mAP@K for each K (and optionally the PR curve) of a code database."""
    index = HammingIndex.build(db_codes)
    rel = relevance_matrix(query_labels, db_labels)
    full = with_pr or max(ks) >= len(index)
    positions, _ = index.rank_all(query_codes, None if full else max(ks))
    maps = {k: map_at_k(positions, rel, min(k, len(index))) for k in ks}
    curve = pr_curve(positions, rel) if with_pr else None
    return maps, curve


def train_and_score(train_data, query_data, hyper, mode="wdht", agg_mode="mean", bits=16, k=100, hidden=256):
    """Fit on ``train_data`` and report query mAP@k against it as database."""
    params = fit(train_data, hyper, mode, agg_mode, bits, hidden)
    db = binarize_matrix(encode(params, train_data.features))
    q = binarize_matrix(encode(params, query_data.features))
    maps, _ = evaluate_codes(db, q, train_data.labels, query_data.labels, ks=(k,))
    return maps[k]


def fit(data, hyper, mode="wdht", agg_mode="mean", bits=16, hidden=256):
    if mode == "wdht":
        W, valid = aggregate_corpus(data.tags, data.table, agg_mode)
        if not valid.any():
            raise DataError("no sample has an in-vocabulary tag")
        return train(data.features[valid], hyper, "wdht", W=W[valid], bits=bits, hidden=hidden).params
    return train(data.features, hyper, "binary_tag", tagsets=data.tags, bits=bits, hidden=hidden).params


def compare_aggregations(train_data, query_data, hyper, modes=("mean", "tf", "itf"), bits_list=(12, 24, 32, 48), k=100, hidden=256):
    """mAP table keyed by (aggregation mode, bits); every cell uses the same seed."""
    table = {}
    for mode in modes:
        for bits in bits_list:
            table[(mode, bits)] = train_and_score(train_data, query_data, hyper, "wdht", mode, bits, k, hidden)
    return table


@dataclass
class GridResult:
    cells: dict  # (lambda2, lambda3) -> validation mAP
    best: tuple

    def rows(self):
        return [(l2, l3, m) for (l2, l3), m in sorted(self.cells.items())]


def grid_search(data, lambda2_values, lambda3_values, validation_fraction=0.2, hyper=None,
                agg_mode="mean", bits=16, k=100, hidden=256):
    """Exhaustive (lambda2, lambda3) search with lambda1 fixed at 1.

    A held-out validation split is queried against the remaining training
    samples.  Ties prefer smaller lambda3, then smaller lambda2.
    """
    if not lambda2_values or not lambda3_values:
        raise DataError("grid search needs non-empty lambda grids")
    hyper = hyper or HyperParams()
    sp = make_split(len(data), validation_fraction, hyper.seed)
    tr, va = data.subset(sp.train), data.subset(sp.query)
    cells = {}
    for l2 in lambda2_values:
        for l3 in lambda3_values:
            hp = replace(hyper, lambda1=1.0, lambda2=float(l2), lambda3=float(l3))
            cells[(float(l2), float(l3))] = train_and_score(tr, va, hp, "wdht", agg_mode, bits, k, hidden)
            log.info("lambda2=%g lambda3=%g mAP=%.4f", l2, l3, cells[(float(l2), float(l3))])
    best = max(cells, key=lambda c: (cells[c], -c[1], -c[0]))
    return GridResult(cells, best)
