import csv

import numpy as np
import pytest

from conftest import small_config
from lidsnet import encoder as enc
from lidsnet import evalbench as eb
from lidsnet import toy
from lidsnet.config import Config
from lidsnet.text import UNSEEN, CharVocab, WordVocab, load_dataset
from lidsnet.trainer import Model, make_model


def constant_model(model, cls):
    """Same model with a head that always predicts ``cls``."""
    p = {k: np.array(v) for k, v in model.params.items()}
    p["dense2_w"][:] = 0.0
    p["dense2_b"][:] = 0.0
    p["dense2_b"][cls] = 5.0
    return Model(p, model.word_vocab, model.char_vocab, model.label_names, model.config)


def random_model(n_words, n_chars, n_classes, cfg=None):
    cfg = cfg or Config(embeddings="random")
    words = WordVocab(["<pad>", "<unk>"] + [f"w{i}" for i in range(n_words - 2)])
    chars = CharVocab(["<pad>", "<unk>"] + [chr(33 + i) for i in range(n_chars - 2)])
    p = enc.init_encoder(cfg, n_words, n_chars)
    p.update(enc.init_classifier(cfg, n_classes))
    return make_model(p, words, chars, [f"c{i}" for i in range(n_classes)], cfg)


class TestEvaluate:
    def test_perfect_model(self, toy_model, toy_corpus):
        rep = eb.evaluate(toy_model, toy_corpus["train"])
        assert rep.accuracy == 1.0
        np.testing.assert_array_equal(rep.confusion, np.diag(np.diag(rep.confusion)))

    def test_constant_prediction_balanced(self, toy_model, toy_corpus):
        rep = eb.evaluate(constant_model(toy_model, 1), toy_corpus["train"])
        assert rep.accuracy == pytest.approx(0.5)
        np.testing.assert_array_equal(rep.confusion[:, 0], 0)

    def test_confusion_recount(self, toy_model, toy_corpus):
        ds = toy_corpus["test"]
        rep = eb.evaluate(toy_model, ds)
        probs = eb.class_probs(toy_model.params, toy_model.config, ds)
        pred = probs.argmax(1)
        for t in range(2):
            for q in range(2):
                assert rep.confusion[t, q] == sum(1 for a, b in zip(ds.labels, pred) if a == t and b == q)
            assert rep.confusion[t].sum() == (ds.labels == t).sum()
        assert rep.confusion.sum() == rep.n_samples == len(ds)
        assert rep.accuracy == pytest.approx(np.trace(rep.confusion) / rep.n_samples)

    def test_unseen_always_wrong(self, toy_model, tmp_path):
        toy.write_corpus(tmp_path, {"test": (["play jazz", "play jazz"], ["PlayMusic", "Mystery"])})
        corpus = load_dataset(tmp_path, vocabs=(toy_model.word_vocab, toy_model.char_vocab),
                              label_names=toy_model.label_names, splits=("test",))
        assert corpus["test"].labels[1] == UNSEEN
        rep = eb.evaluate(toy_model, corpus["test"])
        assert rep.accuracy == 0.5
        assert rep.label_names[-1] == "UNSEEN"
        assert rep.confusion[-1].sum() == 1 and rep.confusion[-1, -1] == 0

    def test_empty_split(self, toy_model, toy_corpus):
        with pytest.raises(ValueError, match="empty"):
            eb.evaluate(toy_model, toy_corpus["test"].subset([]))

    def test_pure(self, toy_model, toy_corpus):
        a = eb.evaluate(toy_model, toy_corpus["valid"])
        b = eb.evaluate(toy_model, toy_corpus["valid"])
        np.testing.assert_array_equal(a.confusion, b.confusion)

    def test_confusion_csv(self, toy_model, toy_corpus, tmp_path):
        eb.evaluate(toy_model, toy_corpus["test"]).write_confusion_csv(tmp_path / "c.csv")
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows[0][1:] == toy_model.label_names
        assert [r[0] for r in rows[1:]] == toy_model.label_names


class TestCountParams:
    def test_hand_tally_four_words(self):
        m = random_model(4, 12, 3)
        tally = (4 * 50 + 12 * 16 + (2 * 16 * 16 + 16) + (3 * 16 * 16 + 16)
                 + 2 * 4 * (82 + 24 + 1) * 24 + (48 * 64 + 64) + (64 * 3 + 3))
        rep = eb.count_params(m)
        assert rep.total == tally
        assert rep.total == sum(rep.components.values())
        assert rep.components["word_embedding"] == 200
        assert rep.components["bilstm"] == 2 * 4 * 107 * 24

    def test_training_preserves_count(self, toy_model, toy_corpus):
        cfg = toy_model.config
        fresh = random_model(len(toy_model.word_vocab), len(toy_model.char_vocab), 2, cfg)
        assert eb.count_params(fresh, with_size=False).total == eb.count_params(toy_model, with_size=False).total

    def test_serialized_size_within_ten_percent(self, toy_model):
        rep = eb.count_params(toy_model)
        assert abs(rep.serialized_bytes - 4 * rep.total) <= 0.1 * 4 * rep.total
        assert 0 < rep.gzip_bytes < rep.serialized_bytes


class TestLatency:
    def test_invariants(self, toy_model):
        rep = eb.benchmark_latency(toy_model, ["play some jazz", "rain tomorrow"], runs=100, warmup=10)
        assert len(rep.times_ms) == 100
        assert rep.median <= rep.p95 <= rep.max
        assert np.all(rep.times_ms > 0)

    def test_doubling_runs_is_stable(self, toy_model):
        a = eb.benchmark_latency(toy_model, ["play some jazz"], runs=100, warmup=10)
        b = eb.benchmark_latency(toy_model, ["play some jazz"], runs=200, warmup=10)
        assert 0.33 < a.median / b.median < 3.0

    def test_minimums(self, toy_model):
        with pytest.raises(ValueError):
            eb.benchmark_latency(toy_model, ["x"], runs=99)
        with pytest.raises(ValueError):
            eb.benchmark_latency(toy_model, ["x"], warmup=9)
        with pytest.raises(ValueError):
            eb.benchmark_latency(toy_model, ["  "])


class TestSweep:
    def test_parse_grid(self):
        g = eb.parse_grid(["margin=0.1,0.15,0.2,0.3,0.4", "lstm-units=16,24,32,40"])
        assert g == {"margin": [0.1, 0.15, 0.2, 0.3, 0.4], "lstm-units": [16, 24, 32, 40]}

    @pytest.mark.parametrize("bad", [[], ["margin"], ["depth=3"], ["margin="]])
    def test_bad_grids(self, bad):
        with pytest.raises(ValueError):
            eb.parse_grid(bad)

    def test_single_point_single_row(self, toy_corpus, tmp_path):
        cfg = small_config(phases=1, phase2_epochs=1)
        rows = eb.sweep(toy_corpus, cfg, {"lstm-units": [8]})
        assert len(rows) == 1 and rows[0]["setting"] == "lstm-units=8"
        eb.write_sweep_csv(rows, tmp_path / "s.csv")
        out = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert out[0]["lstm-units"] == "8"
        assert 0 <= float(out[0]["valid_accuracy"]) <= 1

    def test_cartesian_product(self, toy_corpus):
        cfg = small_config(phases=1, phase2_epochs=1)
        seen = []
        rows = eb.sweep(toy_corpus, cfg, {"margin": [0.1, 0.3], "lstm-units": [4, 6]}, on_result=seen.append)
        assert [r["setting"] for r in rows] == [
            "margin=0.1;lstm-units=4", "margin=0.1;lstm-units=6",
            "margin=0.3;lstm-units=4", "margin=0.3;lstm-units=6",
        ]
        assert seen == rows
