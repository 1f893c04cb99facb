import logging

import numpy as np
import pytest

from unicoh.corpus import (
    BOS_ID,
    PAD_ID,
    SPECIALS,
    UNK_ID,
    CorpusError,
    Document,
    Vocab,
    build_vocab,
    load_corpus,
    load_embeddings,
    read_document,
)


@pytest.fixture
def corpus_dir(tmp_path):
    (tmp_path / "b.txt").write_text("Second doc\nhas two\n", encoding="utf-8")
    (tmp_path / "a.txt").write_text("A b\nc\n", encoding="utf-8")
    (tmp_path / "empty.txt").write_text("\n\n  \n", encoding="utf-8")
    return tmp_path


class TestReading:
    def test_lowercases_and_splits(self, corpus_dir):
        doc = read_document(corpus_dir / "a.txt")
        assert doc.sentences == (("a", "b"), ("c",))
        assert doc.n == 2

    def test_blank_file_skipped_with_warning(self, corpus_dir, caplog):
        with caplog.at_level(logging.WARNING):
            assert read_document(corpus_dir / "empty.txt") is None
        assert "empty" in caplog.text

    def test_corpus_order_is_lexicographic(self, corpus_dir):
        docs = load_corpus(corpus_dir)
        assert [d.doc_id for d in docs] == ["a", "b"]
        assert [d.doc_id for d in load_corpus(corpus_dir)] == ["a", "b"]

    def test_missing_file_errors(self, tmp_path):
        with pytest.raises(CorpusError, match="cannot read"):
            read_document(tmp_path / "nope.txt")

    def test_document_rejects_empty_sentence(self):
        with pytest.raises(CorpusError):
            Document("x", (("a",), ()))
        with pytest.raises(CorpusError):
            Document("x", ())


class TestVocab:
    @pytest.fixture
    def docs(self):
        return [Document("d", (("a", "b"), ("a",)))]

    def test_min_freq_filters(self, docs):
        vocab = build_vocab(docs, min_freq=2)
        assert vocab.itos == list(SPECIALS) + ["a"]
        assert vocab.encode(["b"]) == (UNK_ID,)

    def test_min_freq_one_keeps_all(self, docs):
        assert set(build_vocab(docs, min_freq=1).itos) == set(SPECIALS) | {"a", "b"}

    def test_specials_first_and_contiguous(self, docs):
        vocab = build_vocab(docs, min_freq=1)
        assert vocab.stoi["<pad>"] == PAD_ID and vocab.stoi["<bos>"] == BOS_ID
        assert sorted(vocab.stoi.values()) == list(range(len(vocab)))

    def test_save_load_roundtrip_keeps_hash(self, docs, tmp_path):
        vocab = build_vocab(docs, min_freq=1)
        vocab.save(tmp_path / "v.txt")
        loaded = Vocab.load(tmp_path / "v.txt")
        assert loaded == vocab and loaded.hash() == vocab.hash()

    def test_hash_changes_with_content(self, docs):
        assert build_vocab(docs, 1).hash() != build_vocab(docs, 2).hash()

    def test_encode_doc_decode(self, docs):
        vocab = build_vocab(docs, min_freq=1)
        ids = vocab.encode_doc(docs[0])
        assert vocab.decode(ids.sentences[0]) == ("a", "b")


class TestEmbeddings:
    @pytest.fixture
    def vocab(self):
        return Vocab(list(SPECIALS) + ["hello", "world"])

    def test_rows_copied_exactly(self, vocab, tmp_path):
        f = tmp_path / "e.txt"
        f.write_text("hello 0.1 0.2\nzzz 9 9\n", encoding="utf-8")
        table = load_embeddings(f, vocab, 2, np.random.default_rng(0))
        assert table.matrix[vocab.stoi["hello"]].tolist() == [0.1, 0.2]
        assert table.matrix.shape == (len(vocab), 2)
        assert np.all(np.abs(table.matrix[vocab.stoi["world"]]) <= 0.05)

    def test_wrong_length_names_line(self, vocab, tmp_path):
        f = tmp_path / "e.txt"
        f.write_text("hello 0.1 0.2\nworld 0.3\n", encoding="utf-8")
        with pytest.raises(CorpusError, match=":2:"):
            load_embeddings(f, vocab, 2, np.random.default_rng(0))
