"""Full parameter set and batched document scoring."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import coherence_net as net
from . import encoder
from . import tensor as T
from .corpus import Document, Vocab
from .tensor import Tensor, checkpoint


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_emb: int = 300
    p: int = 128
    q: int = 64
    k: int = 5
    G: int = 16
    use_global: bool = True

    @property
    def d(self) -> int:
        return 2 * self.p


@dataclass
class CoherenceModel:
    config: ModelConfig
    params: dict[str, Tensor]
    vocab: Vocab | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def init(
        cls,
        config: ModelConfig,
        rng: np.random.Generator,
        vocab: Vocab | None = None,
        embeddings: np.ndarray | None = None,
        train_embeddings: bool = True,
    ) -> "CoherenceModel":
        params = encoder.init_encoder_params(
            rng, config.vocab_size, config.d_emb, config.p, embeddings, train_embeddings
        )
        params.update(net.init_net_params(rng, config.p, config.q, config.k, config.G, config.use_global))
        return cls(config, params, vocab)

    def trainable(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if p.requires_grad}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        for n, arr in arrays.items():
            self.params[n].data = arr.copy()

    def encode(self, doc: Document) -> Document:
        """Map a token-string document to ids with this model's vocabulary."""
        if self.vocab is None:
            raise ValueError("model has no vocabulary attached")
        return self.vocab.encode_doc(doc)

    # -- scoring -------------------------------------------------------------

    def forward(self, docs: Sequence[Document], with_lm: bool = False) -> "ForwardOutput":
        """Score id-documents together; sentences shared between documents are encoded once."""
        index: dict[tuple, int] = {}
        uniq: list[tuple] = []
        doc_rows: list[np.ndarray] = []
        for doc in docs:
            rows = []
            for s in doc.sentences:
                key = tuple(s)
                if key not in index:
                    index[key] = len(uniq)
                    uniq.append(key)
                rows.append(index[key])
            doc_rows.append(np.array(rows, dtype=np.intp))
        enc = encoder.encode_sentences(self.params, uniq, with_lm=with_lm)

        scores: list[Tensor | None] = [None] * len(docs)
        by_len: dict[int, list[int]] = {}
        for i, rows in enumerate(doc_rows):
            by_len.setdefault(len(rows), []).append(i)
        for n, members in sorted(by_len.items()):
            h = T.take(enc.reps, np.stack([doc_rows[i] for i in members]))
            y = net.score_windows(self.params, h, self.config.use_global)
            for j, i in enumerate(members):
                scores[i] = y[j]

        lm = tokens = None
        if with_lm:
            seg = np.concatenate([np.full(len(r), i) for i, r in enumerate(doc_rows)])
            flat = np.concatenate(doc_rows)
            lm = T.segment_sum(T.take(enc.sent_nll, flat), seg, len(docs))
            tokens = np.array([enc.lengths[r].sum() for r in doc_rows], dtype=np.float64)
        return ForwardOutput(scores, lm, tokens)

    def window_scores(self, doc: Document) -> Tensor:
        return self.forward([doc]).scores[0]

    def score_documents(self, docs: Sequence[Document], batch_size: int = 64) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        with T.no_grad():
            for start in range(0, len(docs), batch_size):
                res = self.forward(docs[start : start + batch_size])
                out.extend(y.data.copy() for y in res.scores)
        return out

    # -- persistence -------------------------------------------------------------

    def save(self, path: str | Path, extra_meta: dict[str, Any] | None = None) -> None:
        meta = dict(self.meta)
        meta.update(extra_meta or {})
        meta["model_config"] = asdict(self.config)
        meta["trainable"] = sorted(self.trainable())
        if self.vocab is not None:
            meta["vocab"] = list(self.vocab.itos)
            meta["vocab_hash"] = self.vocab.hash()
        checkpoint.save(path, {n: p.data for n, p in self.params.items()}, meta)

    @classmethod
    def load(cls, path: str | Path) -> "CoherenceModel":
        arrays, meta = checkpoint.load(path)
        config = ModelConfig(**meta.pop("model_config"))
        trainable = set(meta.pop("trainable", arrays))
        params = {n: Tensor(a, requires_grad=n in trainable, name=n) for n, a in arrays.items()}
        vocab = None
        if "vocab" in meta:
            vocab = Vocab(meta.pop("vocab"))
            expected = meta.pop("vocab_hash", None)
            if expected is not None and vocab.hash() != expected:
                raise checkpoint.CheckpointError("vocabulary hash does not match stored vocabulary")
        return cls(config, params, vocab, meta)


@dataclass
class ForwardOutput:
    scores: list[Tensor]  # per document, (n,)
    lm_nll: Tensor | None = None  # (D,) summed LM loss per document
    lm_tokens: np.ndarray | None = None  # (D,) tokens per document
