"""``unicoh`` command line: gen, train, eval, score, multiseed, verify."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

from . import permgen
from .corpus import CorpusError, Vocab, build_vocab, load_corpus, read_document
from .evaluator import (
    evaluate,
    split_by_window_count,
    summary_table,
    transfer_eval,
    write_results,
)
from .model import CoherenceModel
from .tensor.checkpoint import CheckpointError
from .trainer import (
    TrainConfig,
    TrainingDiverged,
    multi_seed,
    read_config_file,
    train,
    vocab_from_pairs,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 2, 3, 4
MANIFEST = "manifest.jsonl"
STATS = "stats.json"
VOCAB = "vocab.txt"
CHECKPOINT = "model.ckpt"

logger = logging.getLogger("unicoh")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def write_manifest(out_dir: Path, command: str, config: dict, seed: int | None,
                   inputs: dict, outputs: dict, started: float) -> None:
    record = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "version": tool_version(),
        "wall_clock": round(time.perf_counter() - started, 3),
    }
    with open(out_dir / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


# -- gen -----------------------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if (args.corpus is None) == (args.synthetic is None):
        raise UsageError("gen needs exactly one of --corpus or --synthetic")
    if args.windows is not None and args.task != "local":
        raise UsageError("--windows only applies to --task local")
    if args.synthetic is not None:
        if len(args.synthetic) != 3:
            raise UsageError("--synthetic expects docs,sents,vocab")
        try:
            docs = permgen.synthetic_corpus(*args.synthetic, seed=args.seed)
        except ValueError as exc:
            raise UsageError(f"--synthetic: {exc}") from None
    else:
        docs = load_corpus(args.corpus)
    if not docs:
        raise DataError("corpus contains no documents")
    spec = permgen.DatasetSpec(
        task=args.task,
        windows=args.windows or (1,),
        max_neg_per_doc=args.max_neg,
        perms_per_doc=args.perms,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = permgen.split_documents(docs, args.seed, args.dev_frac, args.test_frac)
    vocab = build_vocab(splits["train"], args.min_freq)
    vocab.save(out / VOCAB)
    stats: dict[str, Any] = {"task": args.task, "vocab_hash": vocab.hash(), "vocab_size": len(vocab), "splits": {}}
    outputs = {"vocab": out / VOCAB, "stats": out / STATS}
    for name, part in splits.items():
        if not part:
            continue
        pairs, st = permgen.make_pairs(part, spec, split=name)
        path = out / f"{name}.jsonl"
        permgen.write_pairs(path, pairs)
        stats["splits"][name] = st.to_json()
        outputs[name] = path
        print(f"{name}: {st.pairs} pairs from {st.docs_used}/{st.docs} documents ({len(st.skipped)} skipped)")
    (out / STATS).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(
        out, "gen", {**dataclasses.asdict(spec), "dev_frac": args.dev_frac, "test_frac": args.test_frac,
                     "min_freq": args.min_freq, "synthetic": args.synthetic},
        args.seed, {"corpus": args.corpus or "synthetic"}, outputs, started,
    )
    return EXIT_OK


# -- train ---------------------------------------------------------------------------

_TRAIN_FLAGS = [f for f in dataclasses.fields(TrainConfig) if f.name not in ("use_global", "use_lm_loss")]


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_train_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override it")
    for f in _TRAIN_FLAGS:
        p.add_argument(_flag(f.name), dest=f"cfg_{f.name}", default=None, metavar=f.name.upper(),
                       help=f"(default {f.default})")
    p.add_argument("--no-global", action="store_true", help="drop the global convolution module")
    p.add_argument("--no-lm", action="store_true", help="drop the language-model loss")


def resolve_train_config(args: argparse.Namespace, **override) -> TrainConfig:
    values: dict[str, Any] = {}
    if args.config:
        values.update(read_config_file(args.config))
    for f in _TRAIN_FLAGS:
        v = getattr(args, f"cfg_{f.name}")
        if v is not None:
            values[f.name] = v
    if args.no_global:
        values["use_global"] = False
    if args.no_lm:
        values["use_lm_loss"] = False
    values.update(override)
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None


def _sidecar(pairs_path: str | Path, name: str) -> Path:
    return Path(pairs_path).parent / name


def load_vocab_for(pairs_path: str, pairs, min_freq: int) -> Vocab:
    """The generator's vocabulary when it sits next to the pair file, otherwise one built from the pairs."""
    path = _sidecar(pairs_path, VOCAB)
    if path.exists():
        return Vocab.load(path)
    return vocab_from_pairs(pairs, min_freq)


def cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    config = resolve_train_config(args)
    pairs = permgen.read_pairs(args.pairs)
    if not pairs:
        raise DataError(f"{args.pairs}: no pairs")
    dev = permgen.read_pairs(args.dev) if args.dev else []
    vocab = load_vocab_for(args.pairs, pairs, config.min_freq)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, report = train(pairs, dev, config, vocab=vocab,
                          on_epoch=lambda r: print(f"epoch {r.epoch}: rank {r.rank_loss:.4f} "
                                                   f"lm {r.lm_loss:.4f} dev {r.dev_accuracy}"))
    ckpt = out / CHECKPOINT
    model.save(ckpt)
    report.checkpoint_path = str(ckpt)
    report.write(out / "train_report.jsonl")
    print(f"best epoch {report.best_epoch} (dev accuracy {report.best_dev_accuracy}); saved {ckpt}")
    write_manifest(out, "train", config.to_dict(), config.seed,
                   {"pairs": args.pairs, "dev": args.dev or "", "config": args.config or ""},
                   {"checkpoint": ckpt, "report": out / "train_report.jsonl"}, started)
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------


def check_vocab(model: CoherenceModel, pairs_path: str) -> None:
    stats_path = _sidecar(pairs_path, STATS)
    if not stats_path.exists() or model.vocab is None:
        return
    expected = json.loads(stats_path.read_text(encoding="utf-8")).get("vocab_hash")
    if expected and expected != model.vocab.hash():
        raise DataError(
            f"vocabulary mismatch: checkpoint {model.vocab.hash()} vs {expected} in {stats_path}"
        )


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    model = CoherenceModel.load(args.ckpt)
    results = []
    for path in args.pairs:
        check_vocab(model, path)
        pairs = permgen.read_pairs(path)
        if not pairs:
            raise DataError(f"{path}: no pairs")
        groups = split_by_window_count(pairs) if args.sweep else {None: pairs}
        for label, group in groups.items():
            if args.transfer:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    res = transfer_eval(model, group, label)
                for w in caught:
                    print(f"warning: {w.message}", file=sys.stderr)
            else:
                res = evaluate(model, group, label)
            res.provenance["pairs_file"] = Path(path).name
            results.append(res)
    print(summary_table(results))
    outputs = {}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_results(out / "results.jsonl", results)
        outputs["results"] = out / "results.jsonl"
        write_manifest(out, "eval", {"transfer": args.transfer, "sweep": args.sweep}, None,
                       {"checkpoint": args.ckpt, "pairs": ",".join(args.pairs)}, outputs, started)
    return EXIT_OK


# -- score ---------------------------------------------------------------------------


def cmd_score(args: argparse.Namespace) -> int:
    model = CoherenceModel.load(args.ckpt)
    doc = read_document(args.doc)
    if doc is None:
        raise DataError(f"{args.doc}: empty document")
    (y,) = model.score_documents([model.encode(doc)])
    for i, v in enumerate(y, start=1):
        print(f"y_{i}\t{v:.10g}")
    print(f"total\t{float(y.sum()):.10g}")
    return EXIT_OK


# -- multiseed -----------------------------------------------------------------------


def cmd_multiseed(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    pairs = permgen.read_pairs(args.pairs)
    dev = permgen.read_pairs(args.dev) if args.dev else []
    test = permgen.read_pairs(args.test)
    base = resolve_train_config(args)
    vocab = load_vocab_for(args.pairs, pairs, base.min_freq)
    groups = split_by_window_count(test) if args.sweep else {"test": test}

    def run(seed: int) -> dict[str, float]:
        model, _ = train(pairs, dev, dataclasses.replace(base, seed=seed), vocab=vocab)
        row = {label: evaluate(model, g, label).accuracy for label, g in groups.items()}
        print(f"seed {seed}: " + ", ".join(f"{k} {v:.4f}" for k, v in row.items()))
        return row

    rows, summary = multi_seed(run, args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "multiseed.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for seed, row in zip(args.seeds, rows):
            fh.write(json.dumps({"type": "run", "seed": seed, **row}, sort_keys=True) + "\n")
        fh.write(json.dumps({"type": "summary", **summary}, sort_keys=True) + "\n")
    for k, s in summary.items():
        print(f"{k}: {100 * s['mean']:.2f} +- {100 * s['std']:.2f}")
    write_manifest(out, "multiseed", {**base.to_dict(), "seeds": list(args.seeds)}, None,
                   {"pairs": args.pairs, "dev": args.dev or "", "test": args.test},
                   {"results": out / "multiseed.jsonl"}, started)
    return EXIT_OK


# -- verify --------------------------------------------------------------------------


def cmd_verify(args: argparse.Namespace) -> int:
    from .verify import CHECKS, VerifyOptions, format_report, run_checks

    only = list(args.only) if args.only else None
    if only and set(only) - set(CHECKS):
        raise UsageError(f"unknown check(s) {sorted(set(only) - set(CHECKS))}; choose from {sorted(CHECKS)}")
    opts = VerifyOptions(
        trials=args.trials, train_steps=args.train_steps, precision=args.precision,
        corpus_docs=args.corpus_docs, seed=args.seed, mutations=tuple(args.mutate or ()),
    )
    try:
        results = run_checks(opts, only)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unicoh", description="Neural coherence scoring: data, training, evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="build discrimination pair datasets")
    g.add_argument("--task", choices=permgen.TASKS, required=True)
    g.add_argument("--corpus", help="directory of *.txt documents, one sentence per line")
    g.add_argument("--synthetic", type=_int_list, metavar="DOCS,SENTS,VOCAB")
    g.add_argument("--out", required=True)
    g.add_argument("--windows", type=_int_list, help="local task window counts, e.g. 1,2,3")
    g.add_argument("--max-neg", type=int, default=20)
    g.add_argument("--perms", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dev-frac", type=float, default=0.1)
    g.add_argument("--test-frac", type=float, default=0.0)
    g.add_argument("--min-freq", type=int, default=2)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a pair file")
    t.add_argument("--pairs", required=True)
    t.add_argument("--dev")
    t.add_argument("--out", required=True)
    add_train_config_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="pairwise accuracy of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--pairs", required=True, action="append", help="repeatable")
    e.add_argument("--transfer", action="store_true", help="cross-task evaluation of a global-task model")
    e.add_argument("--sweep", action="store_true", help="break local pairs down by window count")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("score", help="per-window scores of one document")
    s.add_argument("--ckpt", required=True)
    s.add_argument("doc")
    s.set_defaults(func=cmd_score)

    m = sub.add_parser("multiseed", help="train and evaluate over several seeds")
    m.add_argument("--pairs", required=True)
    m.add_argument("--dev")
    m.add_argument("--test", required=True)
    m.add_argument("--seeds", type=_int_list, default=(1, 2, 3, 4, 5))
    m.add_argument("--sweep", action="store_true")
    m.add_argument("--out", required=True)
    add_train_config_flags(m)
    m.set_defaults(func=cmd_multiseed)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.add_argument("--precision", choices=("float64", "float32"), default="float64")
    v.add_argument("--mutate", action="append", help="deliberately break a component (skip-softmax)")
    v.add_argument("--only", action="append", help="run only the named check (repeatable)")
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--train-steps", type=int, default=100)
    v.add_argument("--corpus-docs", type=int, default=748)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"unicoh: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusError, permgen.PairFileError, CheckpointError, FileNotFoundError,
            TrainingDiverged, ValueError) as exc:
        print(f"unicoh: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
