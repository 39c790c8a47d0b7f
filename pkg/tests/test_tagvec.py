import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wdht.errors import DataError
from wdht.tagvec import (
    WordEmbeddingTable, aggregate, aggregate_corpus, compute_tag_stats, load_embedding_table,
    load_tags, tag_vector_variance,
)
from wdht.hashnet import cosine_target


def _table(**vecs):
    return WordEmbeddingTable(dim=len(next(iter(vecs.values()))),
                              entries={k: np.asarray(v, float) for k, v in vecs.items()})


def test_load_table_plain(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("cat 0.1 0.2 0.3\ndog -1 0 1.5\n")
    t = load_embedding_table(p)
    assert t.dim == 3 and len(t) == 2
    np.testing.assert_array_equal(t.get("dog"), [-1, 0, 1.5])


def test_load_table_with_header(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("2 3\ncat 0.1 0.2 0.3\ndog -1 0 1.5\n")
    t = load_embedding_table(p)
    assert t.dim == 3 and set(t.entries) == {"cat", "dog"}


def test_load_table_inconsistent_dim(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("cat 0.1 0.2 0.3\ndog -1 0\n")
    with pytest.raises(DataError, match="inconsistent dimension"):
        load_embedding_table(p)


def test_load_table_empty(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("")
    with pytest.raises(DataError, match="empty"):
        load_embedding_table(p)


def test_load_table_duplicate_keeps_first(tmp_path):
    p = tmp_path / "emb.txt"
    p.write_text("Cat 1 2\ncat 3 4\n")
    t = load_embedding_table(p)
    assert len(t) == 1
    np.testing.assert_array_equal(t.get("CAT"), [1, 2])


def test_load_tags_keeps_empty_lines(tmp_path):
    p = tmp_path / "tags.txt"
    p.write_text("Sky  sea\n\nsun\n")
    assert load_tags(p) == [["sky", "sea"], [], ["sun"]]


def test_tag_stats():
    s = compute_tag_stats([["a", "b"], ["a"]])
    assert s.total_tags == 3
    assert s.image_count_per_tag == {"a": 2, "b": 1}


def test_tag_stats_repeated_tag_counts_one_image():
    s = compute_tag_stats([["a", "a"]])
    assert s.total_tags == 2 and s.image_count_per_tag == {"a": 1}


def test_tag_stats_empty_corpus():
    with pytest.raises(DataError):
        compute_tag_stats([])
    stats = compute_tag_stats([[]])
    assert stats.total_tags == 0
    with pytest.raises(DataError):
        aggregate(["a"], _table(a=[1.0]), stats, "tf")


def test_mean_single():
    w = aggregate(["a"], _table(a=[0.5, -0.5]), mode="mean").w
    np.testing.assert_array_equal(w, [0.5, -0.5])


def test_mean_two():
    w = aggregate(["a", "b"], _table(a=[1, 0], b=[0, 1]), mode="mean").w
    np.testing.assert_allclose(w, [0.5, 0.5], rtol=0, atol=1e-15)


def test_tf_weighting():
    table = _table(a=[1, 0], b=[0, 1])
    stats = compute_tag_stats([["a", "b"], ["a"]])  # N=3, n(a)=2, n(b)=1
    w = aggregate(["a", "b"], table, stats, "tf").w
    np.testing.assert_allclose(w, [1 / 3, 1 / 6], rtol=0, atol=1e-15)


def test_itf_natural_log():
    from wdht.tagvec import TagStats
    stats = TagStats(total_tags=math.e, image_count_per_tag={"a": 1})
    w = aggregate(["a"], _table(a=[0.3, -2.0]), stats, "itf").w
    np.testing.assert_allclose(w, [0.3, -2.0], rtol=1e-15)


def test_itf_zero_for_ubiquitous_tag():
    tags = [["a"]] * 5
    w = aggregate(["a"], _table(a=[1.0, 2.0]), compute_tag_stats(tags), "itf").w
    np.testing.assert_array_equal(w, [0.0, 0.0])


def test_oov_skipped_and_invalid():
    table = _table(a=[2.0, 0.0])
    agg = aggregate(["zzz", "A"], table, mode="mean")
    assert agg.valid
    np.testing.assert_array_equal(agg.w, [2.0, 0.0])  # m counts only in-vocabulary tags
    assert not aggregate(["zzz"], table).valid
    W, valid = aggregate_corpus([["a"], ["qq"], []], table)
    assert valid.tolist() == [True, False, False]


def test_duplicates_kept():
    w = aggregate(["a", "a", "b"], _table(a=[1.0], b=[4.0])).w
    np.testing.assert_allclose(w, [2.0])


def test_variance():
    table = _table(a=[1.0], b=[-1.0], c=[3.0])
    assert tag_vector_variance(["a"], table) == 0.0
    assert tag_vector_variance(["a", "b"], table) == pytest.approx(1.0, abs=1e-15)
    assert tag_vector_variance(["c", "c", "c"], table) == 0.0
    with pytest.raises(DataError):
        tag_vector_variance(["nope"], table)


vec = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=50, deadline=None)
@given(st.lists(vec, min_size=1, max_size=6), st.randoms(use_true_random=False))
def test_mean_permutation_invariant(vectors, rnd):
    table = _table(**{f"t{i}": v for i, v in enumerate(vectors)})
    tags = [f"t{i}" for i in range(len(vectors))]
    shuffled = tags[:]
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(aggregate(tags, table).w, aggregate(shuffled, table).w, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(vec, st.integers(1, 5))
def test_mean_of_equal_vectors(v, m):
    table = _table(x=v)
    np.testing.assert_allclose(aggregate(["x"] * m, table).w, v, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0.1, 5), min_size=3, max_size=3), min_size=2, max_size=5),
       st.lists(st.floats(0.01, 100), min_size=5, max_size=5))
def test_cosine_target_scale_invariant(rows, scales):
    W = np.array(rows)
    c = np.array(scales[: len(rows)])[:, None]
    np.testing.assert_allclose(cosine_target(W), cosine_target(c * W), atol=1e-12)
