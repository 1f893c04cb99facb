"""Discrimination datasets built from sentence permutations.

Three tasks are supported:

* ``global``  - random permutations of the whole document,
* ``inverse`` - the document in reverse sentence order,
* ``local``   - ``w`` non-overlapping windows of consecutive sentences, each
  shuffled in place while everything outside the windows stays put.

Window spans are 1-based, inclusive ``(start, end)`` sentence indices.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CorpusError, Document
from .seeding import substream

logger = logging.getLogger(__name__)

TASKS = ("global", "inverse", "local")


class DocumentSkipped(ValueError):
    """The document is not eligible for the requested dataset."""


class PairFileError(ValueError):
    pass


@dataclass(frozen=True)
class PairSample:
    pos: Document
    neg: Document
    task: str
    permuted_windows: tuple[tuple[int, int], ...] = ()
    source_doc_id: str = ""
    seed: int = 0

    @property
    def w(self) -> int:
        return len(self.permuted_windows)

    def to_record(self) -> dict:
        return {
            "task": self.task,
            "source_doc_id": self.source_doc_id,
            "pos": self.pos.to_json(),
            "neg": self.neg.to_json(),
            "permuted_windows": [list(s) for s in self.permuted_windows],
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PairSample":
        src = rec["source_doc_id"]
        return cls(
            pos=Document(src, tuple(tuple(s) for s in rec["pos"])),
            neg=Document(f"{src}#neg", tuple(tuple(s) for s in rec["neg"])),
            task=rec["task"],
            permuted_windows=tuple((int(a), int(b)) for a, b in rec["permuted_windows"]),
            source_doc_id=src,
            seed=int(rec["seed"]),
        )


@dataclass(frozen=True)
class DatasetSpec:
    task: str = "global"
    windows: tuple[int, ...] = (1,)
    window_size: int = 3
    max_neg_per_doc: int = 20
    perms_per_doc: int = 20
    min_sentences: int = 11
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        if self.max_neg_per_doc < 1 or self.perms_per_doc < 1:
            raise ValueError("negative caps must be >= 1")
        if self.task == "local" and (not self.windows or any(w < 1 for w in self.windows)):
            raise ValueError(f"invalid window counts {self.windows}")


def _signature(doc: Document) -> tuple:
    return doc.sentences


# -- negatives -----------------------------------------------------------------


def global_negatives(doc: Document, perms_per_doc: int = 20, rng: np.random.Generator | None = None) -> list[Document]:
    """Up to ``perms_per_doc`` distinct reorderings, none equal to the original."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if doc.n < 2:
        logger.warning("document %s has %d sentence(s); no permutations possible", doc.doc_id, doc.n)
        return []
    original = _signature(doc)
    seen = {original}
    out: list[Document] = []

    def consider(order):
        neg = doc.reorder(order, f"{doc.doc_id}#neg{len(out)}")
        sig = _signature(neg)
        if sig not in seen:
            seen.add(sig)
            out.append(neg)

    if math.factorial(doc.n) - 1 <= 4 * perms_per_doc:
        orders = [o for o in itertools.permutations(range(doc.n)) if list(o) != list(range(doc.n))]
        for i in rng.permutation(len(orders)):
            if len(out) == perms_per_doc:
                break
            consider(orders[i])
    else:
        attempts = 0
        while len(out) < perms_per_doc and attempts < 100 * perms_per_doc:
            consider(rng.permutation(doc.n))
            attempts += 1
    return out


def inverse_negative(doc: Document) -> Document:
    if doc.n < 2:
        raise ValueError(f"document {doc.doc_id} needs >= 2 sentences to invert")
    return doc.reorder(range(doc.n - 1, -1, -1), f"{doc.doc_id}#inv")


def _window_placements(n: int, w: int, size: int) -> int:
    slots = n - w * (size - 1)
    return math.comb(slots, w) if slots >= w else 0


def _sample_starts(n: int, w: int, size: int, rng: np.random.Generator) -> list[int]:
    # sorted w-subsets of the reduced slot range map one-to-one onto
    # non-overlapping placements, so this is uniform over placements
    slots = n - w * (size - 1)
    picks = np.sort(rng.choice(slots, size=w, replace=False))
    return [int(c) + k * (size - 1) for k, c in enumerate(picks)]


def local_negatives(
    doc: Document,
    w: int,
    window_size: int = 3,
    max_neg: int = 20,
    rng: np.random.Generator | None = None,
    min_sentences: int = 11,
) -> list[tuple[Document, tuple[tuple[int, int], ...]]]:
    """Negatives that shuffle ``w`` disjoint windows and nothing else.

    Raises :class:`DocumentSkipped` for documents shorter than
    ``min_sentences`` and ``ValueError`` when ``w`` windows cannot fit.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if doc.n < min_sentences:
        raise DocumentSkipped(f"{doc.n} sentences (need >= {min_sentences})")
    if w < 1 or w * window_size > doc.n:
        raise ValueError(f"cannot place {w} windows of size {window_size} in {doc.n} sentences")

    inner = [p for p in itertools.permutations(range(window_size)) if p != tuple(range(window_size))]
    budget = _window_placements(doc.n, w, window_size) * len(inner) ** w
    target = min(max_neg, budget)
    original = _signature(doc)
    seen = {original}
    out = []
    attempts = 0
    while len(out) < target and attempts < 50 * max_neg + 100:
        attempts += 1
        starts = _sample_starts(doc.n, w, window_size, rng)
        order = list(range(doc.n))
        for s in starts:
            perm = inner[int(rng.integers(len(inner)))]
            order[s : s + window_size] = [s + j for j in perm]
        neg = doc.reorder(order, f"{doc.doc_id}#neg{len(out)}")
        sig = _signature(neg)
        if sig in seen:
            continue
        spans = tuple((s + 1, s + window_size) for s in starts)
        # repeated sentences can make a shuffled window look unchanged
        if not all(
            any(doc.sentences[i] != neg.sentences[i] for i in range(a - 1, b)) for a, b in spans
        ):
            continue
        seen.add(sig)
        out.append((neg, spans))
    return out


# -- synthetic corpus -------------------------------------------------------------


def synthetic_corpus(n_docs: int, n_sents: int, vocab_size: int, seed: int = 0) -> list[Document]:
    """Documents whose correct sentence order is recoverable from adjacent pairs.

    Sentence ``i`` ends with link token ``l{i}`` and sentence ``i+1`` starts
    with it; each document also repeats one topic token in every sentence and
    adds 2-4 random filler tokens per sentence. Link tokens take
    ``n_sents - 1`` vocabulary slots; topics take a tenth of the rest.
    """
    if n_docs < 1:
        raise ValueError("n_docs must be >= 1")
    if n_sents < 11:
        raise ValueError("n_sents must be >= 11 so local datasets apply")
    if vocab_size < n_sents + 10:
        raise ValueError("vocab_size must be >= n_sents + 10")
    n_links = n_sents - 1
    rest = vocab_size - n_links
    n_topics = max(1, rest // 10)
    n_fillers = rest - n_topics
    rng = substream(seed, "synthetic")
    docs = []
    width = len(str(n_docs - 1))
    for d in range(n_docs):
        topic = f"t{int(rng.integers(n_topics))}"
        sentences = []
        for i in range(1, n_sents + 1):
            toks = [f"l{i - 1}"] if i > 1 else []
            toks.append(topic)
            toks.extend(f"w{int(j)}" for j in rng.integers(n_fillers, size=int(rng.integers(2, 5))))
            if i < n_sents:
                toks.append(f"l{i}")
            sentences.append(tuple(toks))
        docs.append(Document(f"syn{d:0{width}d}", tuple(sentences)))
    return docs


# -- datasets -----------------------------------------------------------------------


def split_documents(
    docs: Sequence[Document], seed: int, dev_frac: float = 0.1, test_frac: float = 0.0
) -> dict[str, list[Document]]:
    """Split by document (never by pair); each split keeps doc_id order."""
    ids = sorted(d.doc_id for d in docs)
    by_id = {d.doc_id: d for d in docs}
    if len(by_id) != len(docs):
        raise CorpusError("duplicate doc_id in corpus")
    order = [ids[i] for i in substream(seed, "split").permutation(len(ids))]
    n_test = int(round(test_frac * len(ids)))
    n_dev = int(round(dev_frac * (len(ids) - n_test)))
    test, dev, train = order[:n_test], order[n_test : n_test + n_dev], order[n_test + n_dev :]
    return {name: [by_id[i] for i in sorted(part)] for name, part in
            (("train", train), ("dev", dev), ("test", test))}


@dataclass
class DatasetStats:
    docs: int = 0
    docs_used: int = 0
    pairs: int = 0
    pairs_by_w: dict[str, int] = field(default_factory=dict)
    skipped: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "docs": self.docs,
            "docs_used": self.docs_used,
            "pairs": self.pairs,
            "pairs_by_w": dict(self.pairs_by_w),
            "skipped": list(self.skipped),
        }


def make_pairs(docs: Iterable[Document], spec: DatasetSpec, split: str = "train") -> tuple[list[PairSample], DatasetStats]:
    """One PairSample per (document, negative), ordered by doc_id then negative index."""
    docs = sorted(docs, key=lambda d: d.doc_id)
    stats = DatasetStats(docs=len(docs))
    pairs: list[PairSample] = []
    for doc in docs:
        produced: list[PairSample] = []
        if spec.task == "global":
            rng = substream(spec.seed, "datagen", split, "global", doc.doc_id)
            for neg in global_negatives(doc, spec.perms_per_doc, rng):
                produced.append(PairSample(doc, neg, "global", (), doc.doc_id, spec.seed))
        elif spec.task == "inverse":
            if doc.n < 2:
                stats.skipped.append({"doc_id": doc.doc_id, "reason": "fewer than 2 sentences"})
                continue
            neg = inverse_negative(doc)
            if neg.sentences == doc.sentences:
                stats.skipped.append({"doc_id": doc.doc_id, "reason": "reversal equals original"})
                continue
            produced.append(PairSample(doc, neg, "inverse", (), doc.doc_id, spec.seed))
        else:
            reasons = []
            for w in spec.windows:
                rng = substream(spec.seed, "datagen", split, "local", w, doc.doc_id)
                try:
                    negs = local_negatives(
                        doc, w, spec.window_size, spec.max_neg_per_doc, rng, spec.min_sentences
                    )
                except DocumentSkipped as exc:
                    reasons.append(str(exc))
                    break
                except ValueError as exc:
                    reasons.append(f"w={w}: {exc}")
                    continue
                for neg, spans in negs:
                    produced.append(PairSample(doc, neg, "local", spans, doc.doc_id, spec.seed))
            if not produced:
                stats.skipped.append({"doc_id": doc.doc_id, "reason": "; ".join(reasons) or "no negatives"})
                continue
        if produced:
            stats.docs_used += 1
        for p in produced:
            key = str(p.w) if spec.task == "local" else spec.task
            stats.pairs_by_w[key] = stats.pairs_by_w.get(key, 0) + 1
        pairs.extend(produced)
    stats.pairs = len(pairs)
    return pairs, stats


# -- pair files ----------------------------------------------------------------------

_FIELDS = ("task", "source_doc_id", "pos", "neg", "permuted_windows", "seed")


def write_pairs(path: str | Path, pairs: Iterable[PairSample]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def read_pairs(path: str | Path) -> list[PairSample]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PairFileError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            missing = [k for k in _FIELDS if k not in rec] if isinstance(rec, dict) else list(_FIELDS)
            if missing:
                raise PairFileError(f"{path}:{lineno}: missing fields {missing}")
            try:
                pair = PairSample.from_record(rec)
            except (CorpusError, TypeError, ValueError) as exc:
                raise PairFileError(f"{path}:{lineno}: {exc}") from None
            if pair.task not in TASKS:
                raise PairFileError(f"{path}:{lineno}: unknown task {pair.task!r}")
            if pair.pos.n != pair.neg.n:
                raise PairFileError(f"{path}:{lineno}: pos has {pair.pos.n} sentences, neg {pair.neg.n}")
            pairs.append(pair)
    return pairs


# -- validation ------------------------------------------------------------------------


def check_pair(pair: PairSample, window_size: int | None = None, min_sentences: int = 11) -> list[str]:
    """Constraint violations for one pair (empty list when valid)."""
    problems = []
    pos, neg = pair.pos.sentences, pair.neg.sentences
    if sorted(pos) != sorted(neg):
        problems.append("sentence multisets differ")
    if pos == neg:
        problems.append("negative equals positive")
    if pair.task == "local":
        if pair.pos.n < min_sentences:
            problems.append(f"local pair from a {pair.pos.n}-sentence document")
        spans = sorted(pair.permuted_windows)
        if not spans:
            problems.append("local pair without windows")
        for (a1, b1), (a2, b2) in zip(spans, spans[1:]):
            if a2 <= b1:
                problems.append(f"windows {a1}-{b1} and {a2}-{b2} overlap")
        covered = {i for a, b in spans for i in range(a, b + 1)}
        diff = {i + 1 for i in range(len(pos)) if i < len(neg) and pos[i] != neg[i]}
        if not diff <= covered:
            problems.append(f"differences outside windows at {sorted(diff - covered)}")
        for a, b in spans:
            if window_size is not None and b - a + 1 != window_size:
                problems.append(f"window {a}-{b} has wrong size")
            if not any(i in diff for i in range(a, b + 1)):
                problems.append(f"window {a}-{b} unchanged")
    return problems
