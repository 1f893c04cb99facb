"""Corpus reading, vocabulary, and static embedding files.

A corpus is a directory of UTF-8 ``.txt`` files, one sentence per line with
whitespace-separated tokens. Each file becomes one :class:`Document`.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    """An ordered sequence of sentences; tokens are strings or vocabulary ids."""

    doc_id: str
    sentences: tuple[tuple[Hashable, ...], ...]

    def __post_init__(self):
        sents = tuple(tuple(s) for s in self.sentences)
        if not sents:
            raise CorpusError(f"document {self.doc_id!r} has no sentences")
        for i, s in enumerate(sents):
            if not s:
                raise CorpusError(f"document {self.doc_id!r}: sentence {i + 1} is empty")
        object.__setattr__(self, "sentences", sents)

    @property
    def n(self) -> int:
        return len(self.sentences)

    def reorder(self, order: Sequence[int], doc_id: str | None = None) -> "Document":
        return Document(doc_id or self.doc_id, tuple(self.sentences[i] for i in order))

    def to_json(self) -> list[list]:
        return [list(s) for s in self.sentences]


def _tokenize(line: str) -> tuple[str, ...]:
    return tuple(line.lower().split())


def read_document(path: str | Path, doc_id: str | None = None) -> Document | None:
    """Read one file; returns None (with a warning) when it has no sentences."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    sentences = [toks for toks in map(_tokenize, text.splitlines()) if toks]
    if not sentences:
        logger.warning("skipping empty document %s", path)
        return None
    return Document(doc_id or path.stem, tuple(sentences))


def load_corpus(path: str | Path) -> list[Document]:
    """Load every ``*.txt`` file under ``path`` in lexicographic filename order."""
    root = Path(path)
    if not root.is_dir():
        raise CorpusError(f"corpus directory not found: {root}")
    docs = []
    for f in sorted(root.glob("*.txt")):
        doc = read_document(f)
        if doc is not None:
            docs.append(doc)
    return docs


class Vocab:
    """Token <-> id map with the four specials at ids 0..3."""

    def __init__(self, tokens: Iterable[str], min_freq: int = 1):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.itos: list[str] = tokens
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        if len(self.stoi) != len(tokens):
            raise CorpusError("vocabulary contains duplicate tokens")
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.stoi.get(t, UNK_ID) for t in tokens)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.itos[i] for i in ids)

    def encode_doc(self, doc: Document) -> Document:
        return Document(doc.doc_id, tuple(self.encode(s) for s in doc.sentences))

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(docs: Iterable[Document], min_freq: int = 2) -> Vocab:
    """Keep tokens seen at least ``min_freq`` times; order by count, ties lexicographic."""
    if min_freq < 1:
        raise CorpusError("min_freq must be >= 1")
    counts: Counter = Counter()
    for doc in docs:
        for sent in doc.sentences:
            counts.update(sent)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq and t not in SPECIALS),
        key=lambda t: (-counts[t], t),
    )
    return Vocab(list(SPECIALS) + kept, min_freq=min_freq)


@dataclass
class EmbeddingTable:
    matrix: np.ndarray  # (|V|, d)
    trainable: bool = True

    @property
    def d(self) -> int:
        return self.matrix.shape[1]


def random_embeddings(vocab_size: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-0.05, 0.05, size=(vocab_size, d))


def load_embeddings(
    path: str | Path, vocab: Vocab, d: int, rng: np.random.Generator, trainable: bool = True
) -> EmbeddingTable:
    """Rows for tokens found in the file are copied; all others stay random."""
    matrix = random_embeddings(len(vocab), d, rng)
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != d:
                raise CorpusError(
                    f"{path}:{lineno}: expected {d} values for {token!r}, got {len(values)}"
                )
            idx = vocab.stoi.get(token)
            if idx is None or idx in seen:
                continue
            try:
                matrix[idx] = [float(v) for v in values]
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            seen.add(idx)
    logger.info("loaded %d/%d embedding rows from %s", len(seen), len(vocab), path)
    return EmbeddingTable(matrix, trainable=trainable)
