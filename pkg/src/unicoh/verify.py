"""Invariant suite run by ``unicoh verify`` and reused by the acceptance tests."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import coherence_net as net
from . import encoder, reference
from . import tensor as T
from .corpus import Document
from .model import CoherenceModel, ModelConfig
from .permgen import DatasetSpec, check_pair, make_pairs, synthetic_corpus
from .seeding import substream
from .trainer import TrainConfig, batch_objective, pair_loss, total_loss

SMALL = ModelConfig(vocab_size=20, d_emb=8, p=6, q=4, k=3, G=2)
GRAD_TOL = 1e-4
REF_TOL = 1e-12
LM_TOL = 1e-9
KERNEL_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float | None = None
    detail: str = ""
    seconds: float = 0.0


@dataclass
class VerifyOptions:
    trials: int = 100
    train_steps: int = 100
    precision: str = "float64"
    corpus_docs: int = 748
    seed: int = 0
    mutations: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)


# -- random instances ----------------------------------------------------------------


def random_id_document(
    rng: np.random.Generator, vocab_size: int, n: int, max_len: int = 6, doc_id: str = "rand"
) -> Document:
    """Document of ``n`` sentences with random non-special token ids."""
    sents = tuple(
        tuple(int(t) for t in rng.integers(4, vocab_size, size=int(rng.integers(1, max_len + 1))))
        for _ in range(n)
    )
    return Document(doc_id, sents)


def random_permutation_of(doc: Document, rng: np.random.Generator) -> Document:
    """A reordering whose sentence sequence differs from ``doc`` when possible."""
    for _ in range(100):
        neg = doc.reorder(rng.permutation(doc.n), doc.doc_id + "#neg")
        if neg.sentences != doc.sentences:
            return neg
    return neg


def random_model(rng: np.random.Generator, config: ModelConfig = SMALL, scale: float = 1.0) -> CoherenceModel:
    """Model with every parameter redrawn from N(0, scale^2 / fan) so scores are non-trivial."""
    model = CoherenceModel.init(config, rng)
    for name, p in model.params.items():
        fan = p.data.shape[-1] if p.data.ndim else 1
        p.data = rng.normal(0.0, scale / np.sqrt(max(fan, 1)), p.data.shape).astype(p.data.dtype)
    return model


# -- individual checks ---------------------------------------------------------------


def check_gradients(opts: VerifyOptions) -> CheckResult:
    """Finite-difference check of total_loss on a 3-sentence pair, every parameter."""
    dtype = np.float32 if opts.precision == "float32" else np.float64
    rng = substream(opts.seed, "verify", "grad")
    with T.precision(dtype):
        model = CoherenceModel.init(SMALL, rng)
        pos = random_id_document(rng, SMALL.vocab_size, 3)
        neg = random_permutation_of(pos, rng)
        cfg = TrainConfig(tau=1.0, k=SMALL.k, q=SMALL.q, p=SMALL.p, G=SMALL.G, d_emb=SMALL.d_emb)
        errs = T.grad_check(lambda: total_loss(model, pos, neg, cfg), model.trainable(), eps=1e-6)
    worst = max(errs, key=errs.get)
    value = errs[worst]
    return CheckResult(
        f"gradient ({opts.precision})",
        value <= GRAD_TOL,
        value,
        f"max rel-err {value:.3e} at {worst} (tolerance {GRAD_TOL:g})",
    )


def _random_kernel_model(opts: VerifyOptions) -> tuple[CoherenceModel, np.random.Generator]:
    rng = substream(opts.seed, "verify", "kernel")
    return CoherenceModel.init(SMALL, rng), rng


def check_kernel_sums(opts: VerifyOptions) -> CheckResult:
    """Normalized kernels sum to 1 at initialization and after training steps."""
    model, rng = _random_kernel_model(opts)
    worst_init = float(np.abs(net.kernel_sums(model.params) - 1).max())
    cfg = TrainConfig(k=SMALL.k, q=SMALL.q, p=SMALL.p, G=SMALL.G, d_emb=SMALL.d_emb, lr=1e-2)
    opt = T.Adam(model.trainable(), lr=cfg.lr, l2=cfg.l2)
    for _ in range(opts.train_steps):
        pos = random_id_document(rng, SMALL.vocab_size, int(rng.integers(2, 6)))
        opt.zero_grad()
        batch_objective(model, [(pos, random_permutation_of(pos, rng))], cfg)[0].backward()
        opt.step()
    worst_trained = float(np.abs(net.kernel_sums(model.params) - 1).max())
    worst = max(worst_init, worst_trained)
    return CheckResult(
        "kernel normalization",
        worst <= KERNEL_TOL,
        worst,
        f"|sum - 1| {worst_init:.1e} at init, {worst_trained:.1e} after {opts.train_steps} steps",
    )


def check_param_counts(opts: VerifyOptions, configs: list[ModelConfig] | None = None) -> CheckResult:
    """Conv weight count is 6*G*k and G*k < d*k < d*d*k for every configured size."""
    configs = configs or [SMALL, ModelConfig(vocab_size=20)]
    problems = []
    for cfg in configs:
        params = net.init_net_params(substream(opts.seed, "verify", "count"), cfg.p, cfg.q, cfg.k, cfg.G)
        count = net.conv_param_count(params)
        if count != net.N_CONV_LAYERS * cfg.G * cfg.k:
            problems.append(f"p={cfg.p} k={cfg.k} G={cfg.G}: {count} conv weights")
        b = net.conv_param_budget(cfg.d, cfg.k, cfg.G)
        if not b["lightweight"] < b["depthwise"] < b["full"]:
            problems.append(f"budget ordering fails for {b}")
    return CheckResult("parameter counts", not problems, None, "; ".join(problems) or f"{len(configs)} configs")


def check_lm_invariance(opts: VerifyOptions) -> CheckResult:
    rng = substream(opts.seed, "verify", "lm")
    worst = 0.0
    for i in range(opts.trials):
        params = random_model(rng).params
        doc = random_id_document(rng, SMALL.vocab_size, int(rng.integers(2, 8)))
        perm = doc.reorder(rng.permutation(doc.n))
        with T.no_grad():
            a = float(encoder.lm_loss(params, doc).data)
            b = float(encoder.lm_loss(params, perm).data)
        worst = max(worst, abs(a - b))
    return CheckResult("LM permutation invariance", worst <= LM_TOL, worst, f"max |diff| {worst:.1e} over {opts.trials}")


def check_siamese_zero(opts: VerifyOptions) -> CheckResult:
    rng = substream(opts.seed, "verify", "siamese")
    worst = 0.0
    for _ in range(opts.trials):
        model = random_model(rng)
        doc = random_id_document(rng, SMALL.vocab_size, int(rng.integers(1, 8)))
        with T.no_grad():
            worst = max(worst, abs(float(pair_loss(model, doc, doc, 1.0).data)))
    return CheckResult("Siamese zero", worst == 0.0, worst, f"max |pair_loss(D, D)| = {worst!r}")


def check_generator(opts: VerifyOptions) -> CheckResult:
    """Every emitted pair of every task satisfies the dataset constraints."""
    docs = synthetic_corpus(opts.corpus_docs, 12, 500, seed=opts.seed)
    bad: list[str] = []
    total = 0
    specs = [
        DatasetSpec("global", seed=opts.seed),
        DatasetSpec("inverse", seed=opts.seed),
        DatasetSpec("local", windows=(1, 2, 3), seed=opts.seed),
    ]
    for spec in specs:
        pairs, _ = make_pairs(docs, spec)
        total += len(pairs)
        per_doc: dict[tuple[str, int], int] = {}
        for p in pairs:
            per_doc[(p.source_doc_id, p.w)] = per_doc.get((p.source_doc_id, p.w), 0) + 1
            for problem in check_pair(p, window_size=spec.window_size if spec.task == "local" else None):
                bad.append(f"{spec.task}/{p.source_doc_id}: {problem}")
        over = [k for k, c in per_doc.items() if c > spec.max_neg_per_doc]
        bad.extend(f"{spec.task}/{k[0]}: more than {spec.max_neg_per_doc} negatives" for k in over)
    return CheckResult(
        "generator constraints", not bad, len(bad), "; ".join(bad[:5]) or f"{total} pairs valid"
    )


def check_reference(opts: VerifyOptions) -> CheckResult:
    """Vectorized window scores and global features match the scalar-loop reference."""
    rng = substream(opts.seed, "verify", "reference")
    worst = 0.0
    for _ in range(opts.trials):
        model = random_model(rng)
        doc = random_id_document(rng, SMALL.vocab_size, int(rng.integers(1, 7)))
        arrays = {n: p.data for n, p in model.params.items()}
        h = np.stack([reference.sentence_rep(s, arrays) for s in doc.sentences])
        with T.no_grad():
            y = model.window_scores(doc).data
            u = net.global_features(T.Tensor(h), [model.params[n] for n in net.conv_layer_names(model.params)]).data
        conv = [arrays[n] for n in net.conv_layer_names(model.params)]
        worst = max(
            worst,
            float(np.abs(y - reference.doc_window_scores(doc.sentences, arrays)).max()),
            float(np.abs(u - reference.global_features(h, conv)).max()),
        )
    return CheckResult("reference equivalence", worst <= REF_TOL, worst, f"max |diff| {worst:.1e} over {opts.trials}")


CHECKS: dict[str, Callable[[VerifyOptions], CheckResult]] = {
    "gradient": check_gradients,
    "kernel": check_kernel_sums,
    "counts": check_param_counts,
    "lm": check_lm_invariance,
    "siamese": check_siamese_zero,
    "generator": check_generator,
    "reference": check_reference,
}

MUTATIONS = ("skip-softmax",)


@contextmanager
def mutated(names: tuple[str, ...]):
    """Temporarily break the implementation to confirm the checks catch it."""
    unknown = set(names) - set(MUTATIONS)
    if unknown:
        raise ValueError(f"unknown mutation(s) {sorted(unknown)}; choose from {MUTATIONS}")
    original = net.normalize_kernel
    if "skip-softmax" in names:
        net.normalize_kernel = lambda wraw: wraw
    try:
        yield
    finally:
        net.normalize_kernel = original


def run_checks(opts: VerifyOptions, only: list[str] | None = None) -> list[CheckResult]:
    names = only or list(CHECKS)
    results = []
    with mutated(opts.mutations):
        for name in names:
            t0 = time.perf_counter()
            res = CHECKS[name](opts)
            res.seconds = time.perf_counter() - t0
            results.append(res)
    return results


def format_report(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [
        f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}  [{r.seconds:.1f}s]" for r in results
    ]
    failed = [r.name for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        lines.append("failed: " + ", ".join(failed))
    return "\n".join(lines)
