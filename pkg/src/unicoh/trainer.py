"""Siamese pairwise training with the window-level adaptive ranking loss."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import tensor as T
from .corpus import Document, Vocab, build_vocab, load_embeddings
from .model import CoherenceModel, ModelConfig
from .permgen import PairSample
from .seeding import substream
from .tensor import Tensor

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    tau: float = 1.0
    lr: float = 1e-3
    l2: float = 1e-5
    epochs: int = 25
    batch_size: int = 5
    lm_weight: float = 1.0
    lm_reduction: str = "mean"
    use_global: bool = True
    use_lm_loss: bool = True
    seed: int = 0
    k: int = 5
    q: int = 64
    p: int = 128
    G: int = 16
    d_emb: int = 300
    min_freq: int = 2
    embeddings: str = ""
    train_embeddings: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        positive = ("tau", "lr", "epochs", "batch_size", "k", "q", "p", "G", "d_emb", "min_freq")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l2 < 0 or self.lm_weight < 0:
            raise ValueError("l2 and lm_weight must be non-negative")
        if self.lm_reduction not in ("sum", "mean"):
            raise ValueError(f"lm_reduction must be 'sum' or 'mean', got {self.lm_reduction!r}")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, self.d_emb, self.p, self.q, self.k, self.G, self.use_global)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "TrainConfig":
        """Build from strings or typed values; unknown keys are an error."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(fields[key].type, raw)
        return cls(**kwargs)


def _coerce(type_name, raw):
    if not isinstance(raw, str):
        return raw
    kind = type_name if isinstance(type_name, str) else type_name.__name__
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


# -- losses ------------------------------------------------------------------------


def adaptive_margin(pos_window: Sequence, neg_window: Sequence, tau: float) -> float:
    """0 when the two windows hold identical token sequences, otherwise tau."""
    return 0.0 if tuple(map(tuple, pos_window)) == tuple(map(tuple, neg_window)) else tau


def window_margins(pos: Document, neg: Document, tau: float) -> np.ndarray:
    """Margin for each window l = 1..n over sentences (l, l+1, l+2); pads compare equal."""
    n = pos.n
    pad = ((),) * 2
    ps, ns = pos.sentences + pad, neg.sentences + pad
    return np.array([adaptive_margin(ps[i : i + 3], ns[i : i + 3], tau) for i in range(n)])


def _pair_terms(model: CoherenceModel, pairs: Sequence[tuple[Document, Document]], tau: float, with_lm: bool):
    for pos, neg in pairs:
        if pos.n != neg.n:
            raise ValueError(f"pair length mismatch: {pos.n} vs {neg.n} sentences")
    docs = [d for pair in pairs for d in pair]
    out = model.forward(docs, with_lm=with_lm)
    ranks = []
    for i, (pos, neg) in enumerate(pairs):
        phi = Tensor(window_margins(pos, neg, tau))
        hinge = T.relu(phi - out.scores[2 * i] + out.scores[2 * i + 1])
        ranks.append(hinge.mean())
    lm = None
    if with_lm:
        pos_rows = np.arange(0, len(docs), 2)
        lm = (T.take(out.lm_nll, pos_rows), out.lm_tokens[pos_rows])
    return ranks, lm


def pair_loss(model: CoherenceModel, pos: Document, neg: Document, tau: float) -> Tensor:
    ranks, _ = _pair_terms(model, [(pos, neg)], tau, with_lm=False)
    return ranks[0]


def batch_objective(
    model: CoherenceModel, pairs: Sequence[tuple[Document, Document]], config: TrainConfig
) -> tuple[Tensor, float, float]:
    """Mean over pairs of ranking loss + lm_weight * LM loss of the positive document.

    Returns the loss tensor and the batch-mean ranking and LM components.
    """
    with_lm = config.use_lm_loss and config.lm_weight > 0
    ranks, lm = _pair_terms(model, pairs, config.tau, with_lm)
    rank_total = ranks[0]
    for r in ranks[1:]:
        rank_total = rank_total + r
    loss = rank_total
    lm_mean = 0.0
    if lm is not None:
        nll, tokens = lm
        if config.lm_reduction == "mean":
            nll = nll * Tensor(1.0 / tokens)
        lm_sum = nll.sum()
        lm_mean = float(lm_sum.data) / len(pairs)
        loss = loss + config.lm_weight * lm_sum
    return loss * (1.0 / len(pairs)), float(rank_total.data) / len(pairs), lm_mean


def total_loss(model: CoherenceModel, pos: Document, neg: Document, config: TrainConfig) -> Tensor:
    return batch_objective(model, [(pos, neg)], config)[0]


# -- training ------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    rank_loss: float
    lm_loss: float
    dev_accuracy: float | None
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_dev_accuracy: float | None = None
    wall_clock: float = 0.0
    checkpoint_path: str | None = None

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                fh.write(json.dumps({"type": "epoch", **dataclasses.asdict(rec)}) + "\n")
            fh.write(
                json.dumps(
                    {
                        "type": "summary",
                        "best_epoch": self.best_epoch,
                        "best_dev_accuracy": self.best_dev_accuracy,
                        "wall_clock": self.wall_clock,
                        "checkpoint": self.checkpoint_path,
                    }
                )
                + "\n"
            )


def infer_task(pairs: Sequence[PairSample]) -> str:
    tasks = {p.task for p in pairs}
    return tasks.pop() if len(tasks) == 1 else "mixed"


def vocab_from_pairs(pairs: Sequence[PairSample], min_freq: int) -> Vocab:
    """Vocabulary over the distinct positive documents (one count per source doc)."""
    seen = {}
    for p in pairs:
        seen.setdefault(p.source_doc_id, p.pos)
    return build_vocab([seen[k] for k in sorted(seen)], min_freq)


def build_model(config: TrainConfig, vocab: Vocab) -> CoherenceModel:
    rng = substream(config.seed, "init")
    emb = None
    if config.embeddings:
        table = load_embeddings(config.embeddings, vocab, config.d_emb, substream(config.seed, "embeddings"))
        emb = table.matrix
    return CoherenceModel.init(
        config.model_config(len(vocab)), rng, vocab, emb, config.train_embeddings
    )


def train(
    pairs: Sequence[PairSample],
    dev_pairs: Sequence[PairSample],
    config: TrainConfig,
    vocab: Vocab | None = None,
    model: CoherenceModel | None = None,
    max_steps: int | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[CoherenceModel, TrainReport]:
    """Train on (pos, neg) pairs, keeping the parameters with the best dev accuracy."""
    from .evaluator import evaluate

    if not pairs:
        raise ValueError("no training pairs")
    start = time.perf_counter()
    if model is None:
        vocab = vocab or vocab_from_pairs(pairs, config.min_freq)
        model = build_model(config, vocab)
    vocab = model.vocab
    model.meta.update({"train_task": infer_task(pairs), "train_config": config.to_dict()})

    encoded = [(vocab.encode_doc(p.pos), vocab.encode_doc(p.neg)) for p in pairs]
    opt = T.Adam(
        model.trainable(), lr=config.lr, beta1=config.beta1, beta2=config.beta2,
        eps=config.eps, l2=config.l2,
    )
    shuffle_rng = substream(config.seed, "shuffle")
    report = TrainReport()
    best_acc = -1.0
    best_state = None
    steps = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(encoded))
        rank_sum = lm_sum = 0.0
        batches = 0
        for b0 in range(0, len(order), config.batch_size):
            batch = [encoded[i] for i in order[b0 : b0 + config.batch_size]]
            opt.zero_grad()
            loss, rank_mean, lm_mean = batch_objective(model, batch, config)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, step {steps} "
                    f"(rank={rank_mean}, lm={lm_mean})"
                )
            loss.backward()
            opt.step()
            rank_sum += rank_mean
            lm_sum += lm_mean
            batches += 1
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        dev_acc = evaluate(model, dev_pairs).accuracy if dev_pairs else None
        rec = EpochRecord(epoch, rank_sum / batches, lm_sum / batches, dev_acc, time.perf_counter() - t0)
        report.epochs.append(rec)
        logger.info(
            "epoch %d rank=%.4f lm=%.4f dev=%s (%.1fs)", epoch, rec.rank_loss, rec.lm_loss, dev_acc, rec.seconds
        )
        if on_epoch:
            on_epoch(rec)
        score = dev_acc if dev_acc is not None else 0.0
        if best_state is None or score > best_acc:
            best_acc, best_state, report.best_epoch = score, model.snapshot(), epoch
        if max_steps is not None and steps >= max_steps:
            break
    model.restore(best_state)
    report.best_dev_accuracy = best_acc if dev_pairs else None
    report.wall_clock = time.perf_counter() - start
    return model, report


# -- multiple seeds ------------------------------------------------------------------


def summarize_runs(rows: Sequence[dict[str, float]]) -> dict[str, dict[str, float]]:
    """Per-metric mean and sample standard deviation across runs."""
    if len(rows) < 2:
        raise ValueError("need at least two runs to summarize")
    summary = {}
    for key in rows[0]:
        vals = [float(r[key]) for r in rows]
        summary[key] = {"mean": statistics.mean(vals), "std": statistics.stdev(vals)}
    return summary


def multi_seed(
    run: Callable[[int], dict[str, float]], seeds: Sequence[int]
) -> tuple[list[dict[str, float]], dict[str, dict[str, float]]]:
    """Call ``run(seed)`` for each seed; returns the per-seed rows and their summary."""
    if len(seeds) < 2:
        raise ValueError("multi_seed needs at least two seeds")
    rows = []
    for s in seeds:
        metrics = dict(run(s))
        rows.append(metrics)
    return rows, summarize_runs(rows)
