import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import linear_scan_neighbors
from saner.corpus import LabeledSentence
from saner.embeddings import (CompositeEmbedder, EmbeddingTable, NeighborIndex, PrecomputedVectorFile,
                              build_neighbor_index, cosine, decode_neighbor_index, embed_sentence,
                              encode_neighbor_index, load_embedding_text, load_neighbor_index,
                              load_precomputed, save_embedding_text, save_neighbor_index)
from saner.errors import CoverageError, FormatError, UndefinedSimilarityError


def sentence(*words):
    return LabeledSentence.from_words(list(words), ["O"] * len(words))


def integer_table(rng, n_words, dim, low=-3, high=4):
    words = [f"w{i}" for i in range(n_words)]
    matrix = rng.integers(low, high, size=(n_words, dim)).astype(np.float64)
    return EmbeddingTable(dim, {w: i for i, w in enumerate(words)}, matrix)


class TestLoad:
    def test_with_header(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("2 3\na 1 0 0\nb 0 1 0\n", encoding="utf-8")
        table = load_embedding_text(p)
        assert table.dim == 3 and set(table.vocab) == {"a", "b"}
        np.testing.assert_array_equal(table.matrix[table.vocab["b"]], [0, 1, 0])

    def test_without_header(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("a 1 0\nb 0.5 2\n", encoding="utf-8")
        assert load_embedding_text(p).dim == 2

    def test_inconsistent_dim(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("a 1 0 0 0\nb 1 0 0\n", encoding="utf-8")
        with pytest.raises(FormatError, match="line 2"):
            load_embedding_text(p)

    def test_non_finite(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("a 1 nan\n", encoding="utf-8")
        with pytest.raises(FormatError, match="line 1"):
            load_embedding_text(p)

    def test_duplicates_first_wins(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("a 1 0\na 0 1\n", encoding="utf-8")
        table = load_embedding_text(p)
        assert table.duplicates == 1
        np.testing.assert_array_equal(table.matrix[table.vocab["a"]], [1, 0])

    def test_save_round_trip(self, tmp_path, rng):
        table = EmbeddingTable.from_dict({"x": rng.normal(size=4), "Y": rng.normal(size=4)})
        save_embedding_text(tmp_path / "e.txt", table)
        back = load_embedding_text(tmp_path / "e.txt")
        assert back.vocab == table.vocab
        np.testing.assert_array_equal(back.matrix, table.matrix)


class TestEmbedSentence:
    def test_concatenated_dim(self):
        a = EmbeddingTable.from_dict({"x": [1, 2]})
        b = EmbeddingTable.from_dict({"x": [3, 4, 5]})
        out = embed_sentence(CompositeEmbedder([a, b]), sentence("x", "x"))
        assert out.shape == (2, 5)
        np.testing.assert_array_equal(out[0], [1, 2, 3, 4, 5])

    def test_known_word_row_exact(self):
        t = EmbeddingTable.from_dict({"x": [0.1, 0.2, 0.3]})
        np.testing.assert_array_equal(embed_sentence(CompositeEmbedder([t]), sentence("x"))[0], t.matrix[0])

    def test_unknown_zero(self):
        t = EmbeddingTable.from_dict({"x": [1.0, 2.0]})
        np.testing.assert_array_equal(embed_sentence(CompositeEmbedder([t]), sentence("zz"))[0], [0, 0])

    def test_unknown_mean(self):
        t = EmbeddingTable.from_dict({"x": [1.0, 2.0], "y": [3.0, 0.0]}, unk_policy="mean")
        np.testing.assert_array_equal(embed_sentence(CompositeEmbedder([t]), sentence("zz"))[0], [2, 1])

    def test_lowercase_fallback(self):
        t = EmbeddingTable.from_dict({"paris": [1.0], "Rome": [2.0]})
        out = embed_sentence(CompositeEmbedder([t]), sentence("Paris", "Rome", "rome"))
        np.testing.assert_array_equal(out[:, 0], [1, 2, 0])

    def test_precomputed_slot(self, tmp_path):
        p = tmp_path / "ctx.txt"
        p.write_text("a 1 2\nb 3 4\n\nc 5 6\n", encoding="utf-8")
        pre = load_precomputed(p)
        emb = CompositeEmbedder([EmbeddingTable.from_dict({"c": [9.0]}), pre])
        np.testing.assert_array_equal(embed_sentence(emb, sentence("c"), 1), [[9, 5, 6]])

    def test_precomputed_coverage(self):
        pre = PrecomputedVectorFile(2, [np.zeros((2, 2))])
        with pytest.raises(CoverageError):
            embed_sentence(CompositeEmbedder([pre]), sentence("a", "b", "c"), 0)
        with pytest.raises(CoverageError):
            embed_sentence(CompositeEmbedder([pre]), sentence("a"), 5)

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.integers(1, 6))
    def test_dim_is_sum_of_slots(self, dims, n):
        slots = [EmbeddingTable.from_dict({"a": np.ones(d)}) for d in dims]
        out = embed_sentence(CompositeEmbedder(slots), sentence(*["a"] * n))
        assert out.shape == (n, sum(dims))


class TestCosine:
    def test_collinear(self):
        assert cosine([1, 0], [2, 0]) == 1.0

    def test_orthogonal(self):
        assert cosine([1, 0], [0, 3]) == 0.0

    def test_diagonal(self):
        assert cosine([1, 1], [1, 0]) == pytest.approx(0.70710678, abs=1e-8)

    def test_zero_vector(self):
        with pytest.raises(UndefinedSimilarityError):
            cosine([0, 0], [1, 0])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
           st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
    def test_bounded(self, u, v):
        if not any(u) or not any(v):
            return
        assert -1.0 <= cosine(u, v) <= 1.0


class TestNeighborIndex:
    def test_worked_example(self):
        src = EmbeddingTable.from_dict({"a": [1, 0], "b": [0.9, 0.1], "c": [0, 1]})
        idx = build_neighbor_index(src, {"a"}, m=1)
        (word, sim), = idx.neighbors("a")
        assert word == "b" and sim == pytest.approx(0.99388, abs=1e-4)

    def test_exhaustive_when_m_large(self):
        src = EmbeddingTable.from_dict({"a": [1, 0], "b": [0.9, 0.1], "c": [0, 1], "d": [-1, 0.2]})
        got = build_neighbor_index(src, {"a"}, m=10).neighbors("a")
        assert [w for w, _ in got] == ["b", "c", "d"]

    def test_missing_query(self):
        src = EmbeddingTable.from_dict({"a": [1, 0], "b": [0, 1]})
        idx = build_neighbor_index(src, {"zzz", "a"}, m=3)
        assert idx.neighbors("zzz") == [] and idx.missing == ["zzz"]

    def test_ties_prefer_lower_row(self):
        src = EmbeddingTable.from_dict({"q": [1, 0], "x": [0, 1], "y": [0, 2], "z": [0, -1]})
        assert [w for w, _ in build_neighbor_index(src, {"q"}, m=2).neighbors("q")] == ["x", "y"]

    def test_lookup_order(self):
        idx = NeighborIndex(1, {"Apple": [("Pear", 0.5)], "apple": [("fruit", 0.9)]})
        assert idx.lookup(sentence("Apple").tokens[0]) == [("Pear", 0.5)]
        assert idx.lookup(sentence("APPLE").tokens[0]) == [("fruit", 0.9)]
        assert idx.lookup(sentence("nothing").tokens[0]) == []

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_linear_scan_exactly(self, seed):
        rng = np.random.default_rng(seed)
        table = integer_table(rng, int(rng.integers(2, 120)), int(rng.integers(1, 17)))
        m = int(rng.integers(1, 15))
        idx = build_neighbor_index(table, table.words, m=m, chunk=7)
        rows = table.matrix.tolist()
        for word in table.words:
            assert idx.neighbors(word) == linear_scan_neighbors(table.words, rows, word, m)

    def test_float_table_close_to_oracle(self, rng):
        table = EmbeddingTable(8, {f"w{i}": i for i in range(60)}, rng.normal(size=(60, 8)))
        idx = build_neighbor_index(table, table.words, m=5)
        rows = table.matrix.tolist()
        for word in table.words:
            want = linear_scan_neighbors(table.words, rows, word, 5)
            got = idx.neighbors(word)
            assert [w for w, _ in got] == [w for w, _ in want]
            np.testing.assert_allclose([s for _, s in got], [s for _, s in want], atol=1e-12)

    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_lists_sorted_and_no_self(self, seed, m):
        table = integer_table(np.random.default_rng(seed), 15, 3, -2, 3)
        idx = build_neighbor_index(table, table.words, m=m)
        for word, nbs in idx.entries.items():
            sims = [s for _, s in nbs]
            assert sims == sorted(sims, reverse=True)
            assert word not in [w for w, _ in nbs]
            assert len(nbs) <= m and all(-1.0 <= s <= 1.0 for s in sims)


class TestNeighborCache:
    def index(self):
        return NeighborIndex(3, {"a": [("b", 0.1 + 0.2), ("c", -1 / 3)], "ß": [], "b": [("a", 0.3)]})

    def test_round_trip(self, tmp_path):
        idx = self.index()
        save_neighbor_index(tmp_path / "n.bin", idx)
        back = load_neighbor_index(tmp_path / "n.bin")
        assert back == idx
        assert list(back.entries) == list(idx.entries)
        assert back.entries["ß"] == []

    def test_truncated(self):
        buf = encode_neighbor_index(self.index())
        for cut in (4, 12, 20, len(buf) - 3):
            with pytest.raises(FormatError):
                decode_neighbor_index(buf[:cut])

    def test_version_mismatch(self):
        buf = bytearray(encode_neighbor_index(self.index()))
        buf[8] = 9
        with pytest.raises(FormatError, match="version"):
            decode_neighbor_index(bytes(buf))

    def test_built_index_round_trips(self, tmp_path, rng):
        table = integer_table(rng, 40, 5)
        idx = build_neighbor_index(table, table.words + ["absent"], m=4)
        save_neighbor_index(tmp_path / "n.bin", idx)
        assert load_neighbor_index(tmp_path / "n.bin") == idx
