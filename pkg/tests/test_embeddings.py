import numpy as np
import pytest

from lidsnet.embeddings import (
    EmbeddingFileError, InitMode, build_char_table, build_word_table, parse_vector_file,
)
from lidsnet.text import build_vocabs


def write_vectors(path, rows, header=None):
    lines = [header] if header else []
    lines += [" ".join([tok] + [repr(float(v)) for v in vec]) for tok, vec in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


class TestParseVectorFile:
    def test_glove_line(self, tmp_path):
        vec = np.arange(50) / 10.0
        out = parse_vector_file(write_vectors(tmp_path / "g.txt", [("the", vec)]), 50)
        np.testing.assert_array_equal(out["the"], vec)

    def test_wrong_count_names_line(self, tmp_path):
        f = write_vectors(tmp_path / "g.txt", [("a", np.zeros(50)), ("b", np.zeros(49))])
        with pytest.raises(EmbeddingFileError, match=r"g\.txt:2: expected 50 values, found 49"):
            parse_vector_file(f, 50)

    def test_fasttext_header_skipped(self, tmp_path):
        rows = [("x", np.ones(300)), ("y", np.full(300, 2.0))]
        out = parse_vector_file(write_vectors(tmp_path / "f.vec", rows, header="2000000 300"), 300)
        assert sorted(out) == ["x", "y"]
        np.testing.assert_array_equal(out["y"], 2.0)

    def test_fasttext_header_dim_mismatch(self, tmp_path):
        f = write_vectors(tmp_path / "f.vec", [("x", np.ones(3))], header="1 3")
        with pytest.raises(EmbeddingFileError, match="header declares dim 3"):
            parse_vector_file(f, 4)

    def test_non_finite(self, tmp_path):
        f = tmp_path / "g.txt"
        f.write_text("a 1.0 nan\n")
        with pytest.raises(EmbeddingFileError, match="non-finite"):
            parse_vector_file(f, 2)
        f.write_text("a 1.0 inf\n")
        with pytest.raises(EmbeddingFileError, match=":1: non-finite"):
            parse_vector_file(f, 2)

    def test_bad_float(self, tmp_path):
        f = tmp_path / "g.txt"
        f.write_text("a 1.0 2.0\nb 1.0 x\n")
        with pytest.raises(EmbeddingFileError, match=":2:"):
            parse_vector_file(f, 2)

    def test_duplicate_keeps_first(self, tmp_path):
        f = write_vectors(tmp_path / "g.txt", [("a", [1.0, 2.0]), ("a", [3.0, 4.0])])
        np.testing.assert_array_equal(parse_vector_file(f, 2)["a"], [1.0, 2.0])

    def test_vocab_filter(self, tmp_path):
        words, _ = build_vocabs([["a"]])
        f = write_vectors(tmp_path / "g.txt", [("a", [1.0]), ("b", [2.0])])
        assert list(parse_vector_file(f, 1, vocab=words)) == ["a"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(EmbeddingFileError, match="not found"):
            parse_vector_file(tmp_path / "none.txt", 50)


class TestWordTable:
    @pytest.fixture
    def vocab(self):
        return build_vocabs([["the", "cat"]])[0]

    def test_copy_semantics(self, tmp_path, vocab):
        vec = np.linspace(-1, 1, 50)
        f = write_vectors(tmp_path / "g.txt", [("the", vec)])
        table = build_word_table(vocab, InitMode.pretrained(f), dim=50, dtype=np.float64)
        np.testing.assert_array_equal(table.matrix[vocab.id_of["the"]], vec)
        assert table.covered[vocab.id_of["the"]]

    def test_uncovered_row_fallback(self, tmp_path, vocab):
        f = write_vectors(tmp_path / "g.txt", [("the", np.ones(50))])
        table = build_word_table(vocab, InitMode.pretrained(f), dim=50)
        row = table.matrix[vocab.id_of["cat"]]
        assert not table.covered[vocab.id_of["cat"]]
        assert np.all(np.abs(row) < 0.05)
        assert table.coverage == pytest.approx(0.5)

    def test_pad_row_zero(self, tmp_path, vocab):
        f = write_vectors(tmp_path / "g.txt", [("<pad>", np.ones(50))])
        for mode in (InitMode.random(), InitMode.pretrained(f)):
            np.testing.assert_array_equal(build_word_table(vocab, mode).matrix[0], 0.0)

    def test_random_deterministic(self, vocab):
        a = build_word_table(vocab, InitMode.random(), seed=7).matrix
        b = build_word_table(vocab, InitMode.random(), seed=7).matrix
        np.testing.assert_array_equal(a, b)
        c = build_word_table(vocab, InitMode.random(), seed=8).matrix
        assert not np.array_equal(a, c)

    def test_random_bounds(self, vocab):
        m = build_word_table(vocab, InitMode.random(), dim=50).matrix
        assert m.shape == (4, 50)
        assert np.all(np.abs(m[1:]) < 0.05) and np.all(np.isfinite(m))

    def test_dim_mismatch(self, tmp_path, vocab):
        f = write_vectors(tmp_path / "g.txt", [("the", np.ones(30))])
        with pytest.raises(EmbeddingFileError):
            build_word_table(vocab, InitMode.pretrained(f), dim=50)

    def test_coverage_monotone(self, tmp_path):
        vocab = build_vocabs([["a", "b", "c", "d"]])[0]
        rows = [("a", [1.0]), ("x", [0.0]), ("c", [2.0]), ("d", [3.0])]
        prev = 0.0
        for n in range(len(rows) + 1):
            f = write_vectors(tmp_path / f"g{n}.txt", rows[:n])
            cov = build_word_table(vocab, InitMode.pretrained(f), dim=1).coverage
            assert cov >= prev
            prev = cov
        assert prev == pytest.approx(0.75)


class TestCharTable:
    def test_shape_for_70_chars(self):
        assert build_char_table(range(70), dim=16).shape == (70, 16)

    def test_pad_row(self):
        np.testing.assert_array_equal(build_char_table(range(5))[0], 0.0)

    def test_deterministic(self):
        np.testing.assert_array_equal(build_char_table(range(9), seed=3), build_char_table(range(9), seed=3))

    def test_bounds(self):
        t = build_char_table(range(40))
        assert np.all(np.abs(t) < 0.05)
