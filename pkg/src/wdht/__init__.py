"""Weakly supervised deep hashing from tag embeddings."""

from .codec import CodeMatrix, HashCode, binarize, binarize_matrix, pack, unpack
from .datastore import SyntheticSpec, split, synth_generate
from .errors import ConfigError, DataError, NumericError, WDHTError
from .hashnet import HyperParams, NetworkParams, forward, init_glorot, train
from .retrieval import HammingIndex, hamming_distance, query_topk
from .tagvec import WordEmbeddingTable, aggregate, compute_tag_stats, load_embedding_table

__version__ = "0.1.0"

__all__ = [
    "CodeMatrix", "HashCode", "binarize", "binarize_matrix", "pack", "unpack",
    "SyntheticSpec", "split", "synth_generate",
    "ConfigError", "DataError", "NumericError", "WDHTError",
    "HyperParams", "NetworkParams", "forward", "init_glorot", "train",
    "HammingIndex", "hamming_distance", "query_topk",
    "WordEmbeddingTable", "aggregate", "compute_tag_stats", "load_embedding_table",
]
