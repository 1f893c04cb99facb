"""Pairwise discrimination accuracy, cross-task transfer and window-count sweeps."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import CoherenceModel
from .permgen import PairSample

logger = logging.getLogger(__name__)

TRANSFER_SOURCE_TASK = "global"


class ProvenanceWarning(UserWarning):
    pass


@dataclass
class EvalResult:
    task: str
    label: str
    pairs: int
    correct: int
    ties: int
    accuracy: float
    margin: dict[str, float] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    def to_record(self) -> dict:
        return asdict(self)


def _margin_summary(margins: np.ndarray) -> dict[str, float]:
    q = np.quantile(margins, [0.1, 0.5, 0.9])
    return {
        "mean": float(margins.mean()),
        "std": float(margins.std()),
        "min": float(margins.min()),
        "p10": float(q[0]),
        "median": float(q[1]),
        "p90": float(q[2]),
        "max": float(margins.max()),
    }


def document_scores(model: CoherenceModel, pairs: Sequence[PairSample]) -> tuple[np.ndarray, np.ndarray]:
    """Summed window scores of every positive and negative, each distinct document scored once."""
    cache: dict[tuple, int] = {}
    docs = []
    rows = []
    for p in pairs:
        for doc in (p.pos, p.neg):
            ids = model.encode(doc)
            key = ids.sentences
            if key not in cache:
                cache[key] = len(docs)
                docs.append(ids)
            rows.append(cache[key])
    totals = np.array([float(np.sum(y)) for y in model.score_documents(docs)])
    idx = np.array(rows).reshape(-1, 2)
    return totals[idx[:, 0]], totals[idx[:, 1]]


def evaluate(
    model: CoherenceModel, pairs: Sequence[PairSample], label: str | None = None
) -> EvalResult:
    """Fraction of pairs whose positive scores strictly higher; ties count as wrong."""
    if not pairs:
        raise ValueError("no pairs to evaluate")
    pos, neg = document_scores(model, pairs)
    margins = pos - neg
    correct = int(np.sum(margins > 0))
    ties = int(np.sum(margins == 0))
    tasks = sorted({p.task for p in pairs})
    task = tasks[0] if len(tasks) == 1 else "mixed"
    prov = {"train_task": str(model.meta.get("train_task", "unknown"))}
    return EvalResult(
        task=task,
        label=label or task,
        pairs=len(pairs),
        correct=correct,
        ties=ties,
        accuracy=correct / len(pairs),
        margin=_margin_summary(margins),
        provenance=prov,
    )


def transfer_eval(model: CoherenceModel, pairs: Sequence[PairSample], label: str | None = None) -> EvalResult:
    """Evaluate a model trained on the global task on other pairs without retraining."""
    trained_on = model.meta.get("train_task")
    if trained_on != TRANSFER_SOURCE_TASK:
        warnings.warn(
            f"transfer evaluation expects a model trained on {TRANSFER_SOURCE_TASK!r}, got {trained_on!r}",
            ProvenanceWarning,
            stacklevel=2,
        )
    result = evaluate(model, pairs, label)
    result.provenance["transfer"] = "true"
    result.provenance["expected_train_task"] = TRANSFER_SOURCE_TASK
    return result


@dataclass
class SweepResult:
    results: list[EvalResult]
    monotone: bool

    def by_label(self) -> dict[str, EvalResult]:
        return {r.label: r for r in self.results}


def window_label(ws: Iterable[int]) -> str:
    return "D_{w=" + ",".join(str(w) for w in ws) + "}"


def difficulty_sweep(
    model: CoherenceModel,
    datasets: Mapping[str, Sequence[PairSample]],
    slack: float = 0.0,
) -> SweepResult:
    """Evaluate each dataset; flag whether accuracy(D_{w=1}) <= accuracy(D_{w=3}) + slack."""
    results = [evaluate(model, pairs, label) for label, pairs in datasets.items()]
    acc = {r.label: r.accuracy for r in results}
    w1, w3 = window_label([1]), window_label([3])
    monotone = True
    if w1 in acc and w3 in acc:
        monotone = acc[w1] <= acc[w3] + slack
    return SweepResult(results, monotone)


def split_by_window_count(pairs: Sequence[PairSample]) -> dict[str, list[PairSample]]:
    """Group local pairs by their number of permuted windows, plus the union."""
    groups: dict[int, list[PairSample]] = {}
    for p in pairs:
        groups.setdefault(p.w, []).append(p)
    out = {window_label([w]): groups[w] for w in sorted(groups)}
    if len(groups) > 1:
        out[window_label(sorted(groups))] = list(pairs)
    return out


def write_results(path: str | Path, results: Iterable[EvalResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in results:
            fh.write(json.dumps(r.to_record(), sort_keys=True) + "\n")


def summary_table(results: Sequence[EvalResult], title: str = "accuracy") -> str:
    labels = [r.label for r in results]
    width = max(12, *(len(s) for s in labels))
    head = f"{'dataset':<{width}}  {'pairs':>6}  {'ties':>5}  {title:>9}"
    lines = [head, "-" * len(head)]
    for r in results:
        lines.append(f"{r.label:<{width}}  {r.pairs:>6}  {r.ties:>5}  {100 * r.accuracy:>9.2f}")
    return "\n".join(lines)
