"""Core types: vocabulary, tokenized text, sparse vectors, corpus statistics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsrkit.core import (
    CorpusStats,
    SparseVector,
    TokenizedText,
    Vocabulary,
    build_vocabulary,
    compute_corpus_stats,
    read_collection,
    read_vocabulary,
    write_collection,
    write_vocabulary,
)


class TestBuildVocabulary:
    def test_dedup(self):
        vocab = build_vocabulary(["a", "b", "a"])
        assert vocab.term_to_id == {"a": 0, "b": 1}

    def test_empty(self):
        assert build_vocabulary([]).size == 0

    def test_first_seen_order(self):
        vocab = build_vocabulary(["x", "y", "z", "y"])
        assert vocab.term_to_id == {"x": 0, "y": 1, "z": 2}

    def test_round_trip_property(self):
        vocab = build_vocabulary(f"w{i % 37}" for i in range(200))
        for term in vocab.terms:
            assert vocab.terms[vocab.term_to_id[term]] == term

    def test_duplicate_terms_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(terms=("a", "a"), term_to_id={"a": 0})


class TestCorpusStats:
    def test_hand_count(self):
        docs = [
            TokenizedText("d1", (0, 1)),
            TokenizedText("d2", (0,)),
        ]
        stats = compute_corpus_stats(docs)
        assert stats.num_docs == 2
        assert stats.doc_freq == {0: 2, 1: 1}
        assert stats.avg_doc_len == 1.5
        assert not stats.degenerate

    def test_single_empty_doc_is_degenerate(self):
        stats = compute_corpus_stats([TokenizedText("d1", ())])
        assert stats.num_docs == 1
        assert stats.avg_doc_len == 0.0
        assert stats.degenerate

    def test_df_counts_presence_not_occurrences(self):
        stats = compute_corpus_stats([TokenizedText("d1", (0, 0, 0))])
        assert stats.doc_freq[0] == 1

    def test_empty_corpus(self):
        stats = compute_corpus_stats([])
        assert stats.num_docs == 0
        assert stats.degenerate

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        docs = [
            TokenizedText(f"d{i}", tuple(rng.integers(0, 20, size=rng.integers(0, 10))))
            for i in range(30)
        ]
        base = compute_corpus_stats(docs)
        shuffled = list(docs)
        rng.shuffle(shuffled)
        other = compute_corpus_stats(shuffled)
        assert base.doc_freq == other.doc_freq
        assert base.avg_doc_len == other.avg_doc_len


sparse_entries = st.dictionaries(
    st.integers(min_value=0, max_value=63),
    st.floats(min_value=-10, max_value=10, allow_nan=False).filter(lambda x: x != 0.0),
    max_size=20,
)


class TestSparseVector:
    def test_zero_weights_dropped_at_construction(self):
        v = SparseVector({1: 0.0, 2: 3.0})
        assert v.entries == {2: 3.0}
        assert v.nnz == 1

    @given(sparse_entries, sparse_entries)
    @settings(max_examples=200)
    def test_arithmetic_matches_dense_oracle(self, a, b):
        va, vb = SparseVector(a), SparseVector(b)
        da = np.array(va.to_dense(64))
        db = np.array(vb.to_dense(64))
        assert va.dot(vb) == pytest.approx(float(da @ db), abs=1e-9)
        assert va.add(vb).to_dense(64) == pytest.approx((da + db).tolist())
        assert va.scale(2.5).to_dense(64) == pytest.approx((2.5 * da).tolist())

    @given(sparse_entries)
    def test_dense_round_trip(self, a):
        v = SparseVector(a)
        assert SparseVector.from_dense(v.to_dense(64)) == v


class TestFileFormats:
    def test_vocabulary_file_round_trip(self, tmp_path):
        vocab = build_vocabulary(["alpha", "beta", "gamma"])
        path = tmp_path / "vocab.txt"
        write_vocabulary(vocab, path)
        loaded = read_vocabulary(path)
        assert loaded.terms == vocab.terms

    def test_collection_round_trip(self, tmp_path):
        vocab = build_vocabulary(["a", "b", "c"])
        docs = [TokenizedText("d1", (0, 1, 0)), TokenizedText("d2", ())]
        path = tmp_path / "coll.tsv"
        write_collection(docs, vocab, path)
        loaded = list(read_collection(path, vocab))
        assert loaded == docs

    def test_unknown_token_reports_line(self, tmp_path):
        vocab = build_vocabulary(["a"])
        path = tmp_path / "coll.tsv"
        path.write_text("d1\ta zzz\n", encoding="utf-8")
        with pytest.raises(ValueError, match=":1:"):
            list(read_collection(path, vocab))

    def test_missing_tab_rejected(self, tmp_path):
        path = tmp_path / "coll.tsv"
        path.write_text("justonefield\n", encoding="utf-8")
        with pytest.raises(ValueError, match="tab"):
            list(read_collection(path, build_vocabulary([])))
