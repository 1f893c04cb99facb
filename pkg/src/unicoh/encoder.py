"""Bidirectional LSTM sentence encoder with forward/backward language-model heads.

Each sentence is wrapped as ``<bos> w_1 ... w_m <eos>``. The forward LSTM reads
it left to right and the backward LSTM right to left; the sentence
representation is the concatenation of both final hidden states (size 2p).

The LM heads predict ``w_j`` from the forward state after ``w_{j-1}`` (or
``<bos>``) and from the backward state after ``w_{j+1}`` (or ``<eos>``). Both
heads read from the shared embedding table but have their own projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import BOS_ID, EOS_ID, PAD_ID, Document
from .tensor import Tensor

DIRECTIONS = ("fwd", "bwd")


def init_encoder_params(
    rng: np.random.Generator,
    vocab_size: int,
    d_emb: int,
    p: int,
    embeddings: np.ndarray | None = None,
    train_embeddings: bool = True,
) -> dict[str, Tensor]:
    if p < 1 or d_emb < 1:
        raise ValueError("hidden size p and embedding size must be >= 1")
    if embeddings is None:
        embeddings = rng.uniform(-0.05, 0.05, size=(vocab_size, d_emb))
    elif embeddings.shape != (vocab_size, d_emb):
        raise ValueError(f"embedding matrix {embeddings.shape} != ({vocab_size}, {d_emb})")
    params = {"encoder.embedding": Tensor(embeddings, requires_grad=train_embeddings)}
    bound = 1.0 / np.sqrt(p)
    for d in DIRECTIONS:
        bias = np.zeros(4 * p)
        bias[p : 2 * p] = 1.0  # forget gate
        params[f"encoder.{d}.wx"] = Tensor(rng.uniform(-bound, bound, (d_emb, 4 * p)), True)
        params[f"encoder.{d}.wh"] = Tensor(rng.uniform(-bound, bound, (p, 4 * p)), True)
        params[f"encoder.{d}.b"] = Tensor(bias, True)
    for d in DIRECTIONS:
        params[f"encoder.lm_{d}.w"] = Tensor(rng.uniform(-bound, bound, (p, vocab_size)), True)
        params[f"encoder.lm_{d}.b"] = Tensor(np.zeros(vocab_size), True)
    for name, t in params.items():
        t.name = name
    return params


def hidden_size(params: dict[str, Tensor]) -> int:
    return params["encoder.fwd.wh"].shape[0]


@dataclass
class EncoderOutput:
    reps: Tensor  # (S, 2p)
    fwd_states: Tensor  # (S, T, p), T = longest sentence + 2
    bwd_states: Tensor  # (S, T, p), time axis in reading order (right to left)
    lengths: np.ndarray  # (S,) real token counts m
    sent_nll: Tensor | None = None  # (S,) summed LM negative log-likelihood


@dataclass
class SentenceRep:
    h: Tensor  # (2p,)
    fwd_states: Tensor  # (m + 2, p)
    bwd_states: Tensor  # (m + 2, p)


def _batch_ids(sentences: Sequence[Sequence[int]], vocab_size: int):
    lengths = np.array([len(s) for s in sentences], dtype=np.intp)
    if len(sentences) == 0:
        raise ValueError("no sentences to encode")
    if lengths.min() < 1:
        raise ValueError("cannot encode an empty sentence")
    T_ = int(lengths.max()) + 2
    S = len(sentences)
    fwd = np.full((S, T_), PAD_ID, dtype=np.intp)
    bwd = np.full((S, T_), PAD_ID, dtype=np.intp)
    mask = np.zeros((S, T_), dtype=bool)
    for i, sent in enumerate(sentences):
        seq = [BOS_ID, *sent, EOS_ID]
        fwd[i, : len(seq)] = seq
        bwd[i, : len(seq)] = seq[::-1]
        mask[i, : len(seq)] = True
    if fwd.max() >= vocab_size or fwd.min() < 0:
        raise ValueError(f"token id out of vocabulary range [0, {vocab_size})")
    return fwd, bwd, mask, lengths


def encode_sentences(
    params: dict[str, Tensor], sentences: Sequence[Sequence[int]], with_lm: bool = False
) -> EncoderOutput:
    emb = params["encoder.embedding"]
    V = emb.shape[0]
    fwd_ids, bwd_ids, mask, lengths = _batch_ids(sentences, V)
    S, T_ = fwd_ids.shape
    states = {}
    for d, ids in zip(DIRECTIONS, (fwd_ids, bwd_ids)):
        x = T.take(emb, ids)
        states[d] = T.lstm_sequence(
            x, mask, params[f"encoder.{d}.wx"], params[f"encoder.{d}.wh"], params[f"encoder.{d}.b"]
        )
    reps = T.concat([states["fwd"][:, T_ - 1], states["bwd"][:, T_ - 1]], axis=1)
    out = EncoderOutput(reps, states["fwd"], states["bwd"], lengths)
    if with_lm:
        out.sent_nll = _lm_nll(params, states, fwd_ids, bwd_ids, lengths)
    return out


def _lm_nll(params, states, fwd_ids, bwd_ids, lengths) -> Tensor:
    # state at step t predicts the token at step t + 1, for t = 0 .. m - 1
    S, T_ = fwd_ids.shape
    sent_idx = np.repeat(np.arange(S), lengths)
    step_idx = np.concatenate([np.arange(m) for m in lengths])
    flat = sent_idx * T_ + step_idx
    total = None
    for d, ids in zip(DIRECTIONS, (fwd_ids, bwd_ids)):
        p = states[d].shape[-1]
        h = T.take(states[d].reshape(S * T_, p), flat)
        logits = h @ params[f"encoder.lm_{d}.w"] + params[f"encoder.lm_{d}.b"]
        targets = ids[sent_idx, step_idx + 1]
        nll = -T.pick(T.log_softmax(logits, axis=1), targets)
        per_sent = T.segment_sum(nll, sent_idx, S)
        total = per_sent if total is None else total + per_sent
    return total


def encode_sentence(params: dict[str, Tensor], tokens: Sequence[int]) -> SentenceRep:
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty sentence")
    out = encode_sentences(params, [tokens])
    return SentenceRep(out.reps[0], out.fwd_states[0], out.bwd_states[0])


def lm_loss(params: dict[str, Tensor], doc: Document, reduction: str = "sum") -> Tensor:
    """Forward plus backward LM negative log-likelihood, summed over sentences.

    ``reduction="mean"`` divides by the number of predicted tokens (each token
    is predicted once per direction, and the count covers one direction).
    """
    out = encode_sentences(params, doc.sentences, with_lm=True)
    total = out.sent_nll.sum()
    if reduction == "mean":
        return total * (1.0 / float(out.lengths.sum()))
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total
