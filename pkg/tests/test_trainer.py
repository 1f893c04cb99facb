import json

import numpy as np
import pytest

import unicoh.tensor as T
from unicoh import encoder
from unicoh.corpus import Document
from unicoh.model import CoherenceModel, ForwardOutput, ModelConfig
from unicoh.permgen import DatasetSpec, PairSample, make_pairs, synthetic_corpus
from unicoh.tensor import Tensor
from unicoh.trainer import (
    TrainConfig,
    TrainingDiverged,
    adaptive_margin,
    multi_seed,
    pair_loss,
    read_config_file,
    summarize_runs,
    total_loss,
    train,
    vocab_from_pairs,
    window_margins,
)
from unicoh.verify import SMALL, random_id_document, random_permutation_of

TINY = dict(p=4, q=2, k=3, G=2, d_emb=4, min_freq=1)


class FixedScores:
    """Stands in for a model: first document gets ``pos`` scores, second ``neg``."""

    def __init__(self, pos, neg):
        self.scores = [Tensor(np.asarray(pos, float)), Tensor(np.asarray(neg, float))]

    def forward(self, docs, with_lm=False):
        return ForwardOutput(list(self.scores))


@pytest.fixture
def model():
    return CoherenceModel.init(SMALL, np.random.default_rng(3))


@pytest.fixture(scope="module")
def tiny_pairs():
    docs = synthetic_corpus(6, 11, 40, seed=1)
    train_pairs, _ = make_pairs(docs[:5], DatasetSpec("global", perms_per_doc=2))
    dev_pairs, _ = make_pairs(docs[5:], DatasetSpec("global", perms_per_doc=2))
    return train_pairs, dev_pairs


class TestMargin:
    def test_identical(self):
        assert adaptive_margin([("a",), ("b",), ()], [("a",), ("b",), ()], 1.0) == 0.0

    def test_one_token_differs(self):
        assert adaptive_margin([("a",), ("b",), ("c",)], [("a",), ("b",), ("d",)], 1.0) == 1.0

    def test_in_window_permutation(self):
        assert adaptive_margin([("a",), ("b",), ("c",)], [("b",), ("a",), ("c",)], 2.0) == 2.0

    def test_window_margins_pad(self):
        pos = Document("p", ((1,), (2,), (3,), (4,)))
        neg = pos.reorder([0, 1, 3, 2])
        # windows (1,2,3) (2,3,4) (3,4,pad) (4,pad,pad)
        assert window_margins(pos, neg, 1.0).tolist() == [1.0, 1.0, 1.0, 1.0]
        neg = pos.reorder([1, 0, 2, 3])
        assert window_margins(pos, neg, 1.0).tolist() == [1.0, 1.0, 0.0, 0.0]


class TestPairLoss:
    def test_hinge_active(self):
        pos, neg = Document("p", ((1,),)), Document("n", ((2,),))
        assert float(pair_loss(FixedScores([0.2], [0.5]), pos, neg, 1.0).data) == pytest.approx(1.3)

    def test_hinge_satisfied(self):
        pos, neg = Document("p", ((1,),)), Document("n", ((2,),))
        assert float(pair_loss(FixedScores([5.0], [1.0]), pos, neg, 1.0).data) == 0.0

    def test_siamese_zero(self, model):
        rng = np.random.default_rng(0)
        for _ in range(10):
            doc = random_id_document(rng, SMALL.vocab_size, 5)
            assert float(pair_loss(model, doc, doc, 1.0).data) == 0.0

    def test_length_mismatch(self, model):
        with pytest.raises(ValueError):
            pair_loss(model, Document("a", ((4,), (5,))), Document("b", ((4,),)), 1.0)

    def test_monotone_in_tau(self, model):
        rng = np.random.default_rng(1)
        pos = random_id_document(rng, SMALL.vocab_size, 4)
        neg = random_permutation_of(pos, rng)
        losses = [float(pair_loss(model, pos, neg, tau).data) for tau in (0.0, 0.5, 1.0, 2.0)]
        assert losses == sorted(losses) and min(losses) >= 0


class TestTotalLoss:
    def _cfg(self, **kw):
        return TrainConfig(k=SMALL.k, q=SMALL.q, p=SMALL.p, G=SMALL.G, d_emb=SMALL.d_emb, **kw)

    def test_no_lm_equals_pair_loss(self, model):
        rng = np.random.default_rng(2)
        pos = random_id_document(rng, SMALL.vocab_size, 3)
        neg = random_permutation_of(pos, rng)
        cfg = self._cfg(use_lm_loss=False)
        assert float(total_loss(model, pos, neg, cfg).data) == float(pair_loss(model, pos, neg, 1.0).data)

    def test_identical_pair_is_lm(self, model):
        doc = random_id_document(np.random.default_rng(3), SMALL.vocab_size, 3)
        got = float(total_loss(model, doc, doc, self._cfg(lm_reduction="sum")).data)
        assert got == pytest.approx(float(encoder.lm_loss(model.params, doc).data), rel=1e-14)
        got = float(total_loss(model, doc, doc, self._cfg(lm_weight=0.5)).data)
        assert got == pytest.approx(0.5 * float(encoder.lm_loss(model.params, doc, "mean").data), rel=1e-14)

    def test_gradient(self, model):
        rng = np.random.default_rng(4)
        pos = random_id_document(rng, SMALL.vocab_size, 3)
        neg = random_permutation_of(pos, rng)
        errs = T.grad_check(lambda: total_loss(model, pos, neg, self._cfg()), model.trainable(), eps=1e-6)
        assert max(errs.values()) <= 1e-4


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.tau, cfg.lr, cfg.l2, cfg.epochs, cfg.batch_size, cfg.lm_weight) == (1.0, 1e-3, 1e-5, 25, 5, 1.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            TrainConfig(tau=0)
        with pytest.raises(ValueError):
            TrainConfig(lm_reduction="max")

    def test_file_and_coercion(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("# comment\nepochs = 3\nuse_global=false\nlr=0.01  # inline\n", encoding="utf-8")
        cfg = TrainConfig.from_dict(read_config_file(f))
        assert cfg.epochs == 3 and cfg.use_global is False and cfg.lr == 0.01

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"tua": "1"})


class TestTrain:
    def test_report_rows_and_selection(self, tiny_pairs, tmp_path):
        tr, dv = tiny_pairs
        model, report = train(tr, dv, TrainConfig(epochs=3, **TINY))
        assert [r.epoch for r in report.epochs] == [1, 2, 3]
        best = max(r.dev_accuracy for r in report.epochs)
        assert report.best_dev_accuracy == best
        assert report.epochs[report.best_epoch - 1].dev_accuracy == best
        assert model.meta["train_task"] == "global"
        report.write(tmp_path / "r.jsonl")
        lines = [json.loads(x) for x in (tmp_path / "r.jsonl").read_text().splitlines()]
        assert len(lines) == 4 and lines[-1]["type"] == "summary"

    def test_identical_pairs_zero_ranking(self):
        doc = synthetic_corpus(1, 11, 40)[0]
        pairs = [PairSample(doc, doc, "global", (), doc.doc_id)] * 4
        _, report = train(pairs, [], TrainConfig(epochs=2, **TINY))
        assert all(r.rank_loss == 0.0 for r in report.epochs)

    def test_deterministic(self, tiny_pairs):
        tr, dv = tiny_pairs
        a, _ = train(tr, dv, TrainConfig(epochs=2, seed=5, **TINY))
        b, _ = train(tr, dv, TrainConfig(epochs=2, seed=5, **TINY))
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_seed_changes_result(self, tiny_pairs):
        tr, dv = tiny_pairs
        a, _ = train(tr, dv, TrainConfig(epochs=1, seed=1, **TINY))
        b, _ = train(tr, dv, TrainConfig(epochs=1, seed=2, **TINY))
        assert not np.array_equal(a.params["score.w"].data, b.params["score.w"].data)

    def test_nonfinite_aborts(self, tiny_pairs):
        tr, _ = tiny_pairs
        vocab = vocab_from_pairs(tr, 1)
        model = CoherenceModel.init(ModelConfig(len(vocab), 4, 4, 2, 3, 2), np.random.default_rng(0), vocab)
        model.params["encoder.lm_fwd.b"].data[:] = np.nan
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train(tr, [], TrainConfig(epochs=1, **TINY), model=model)

    def test_empty_pairs(self):
        with pytest.raises(ValueError):
            train([], [], TrainConfig())


class TestMultiSeed:
    def test_constant_metric_zero_std(self):
        _, summary = multi_seed(lambda s: {"acc": 0.7}, [1, 2, 3])
        assert summary["acc"] == {"mean": 0.7, "std": 0.0}

    def test_mean(self):
        rows, summary = multi_seed(lambda s: {"acc": {1: 0.8, 2: 0.9}[s]}, [1, 2])
        assert len(rows) == 2
        assert summary["acc"]["mean"] == pytest.approx(0.85)
        assert summary["acc"]["std"] == pytest.approx(np.std([0.8, 0.9], ddof=1))

    def test_needs_two_seeds(self):
        with pytest.raises(ValueError):
            multi_seed(lambda s: {"acc": 1.0}, [1])
        with pytest.raises(ValueError):
            summarize_runs([{"acc": 1.0}])
