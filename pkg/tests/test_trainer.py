import csv
import math
from itertools import combinations

import numpy as np
import pytest

from conftest import small_config
from lidsnet import encoder as enc
from lidsnet import nn, toy
from lidsnet.text import load_dataset
from lidsnet.trainer import (
    TrainingLog, cosine_backward, cosine_gap, cosine_similarity, cross_entropy, initial_encoder,
    predict, predict_proba, sample_class_pairs, sample_triplets, train, train_phase1,
    triplet_loss, unrank_pairs,
)


def vectors_with_cos(c):
    """Unit anchor and a unit vector at cosine ``c`` to it."""
    a = np.array([1.0, 0.0, 0.0])
    return a, np.array([c, math.sqrt(max(0.0, 1 - c * c)), 0.0])


class TestCosine:
    def test_self(self, rng):
        x = rng.normal(size=48)
        assert cosine_similarity(x, x) == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_opposite(self, rng):
        x = rng.normal(size=48)
        assert cosine_similarity(x, -x) == pytest.approx(-1.0, abs=1e-6)

    def test_zero_vector_guarded(self):
        assert cosine_similarity(np.zeros(3), np.ones(3)) == 0.0

    def test_scale_invariance(self, rng):
        u, v = rng.normal(size=(2, 10))
        assert cosine_similarity(3.7 * u, v) == pytest.approx(cosine_similarity(u, v), abs=1e-6)

    def test_backward_matches_differences(self, rng):
        p = {"u": rng.normal(size=(3, 5)), "v": rng.normal(size=(3, 5))}
        ds = rng.normal(size=3)
        du, dv = cosine_backward(p["u"], p["v"], ds)
        err = nn.grad_check(lambda: float((cosine_similarity(p["u"], p["v"]) * ds).sum()), p,
                            {"u": du, "v": dv})
        assert err < 1e-4


class TestTripletLoss:
    @pytest.mark.parametrize("s_ap,s_an,expected", [(1.0, 0.0, 0.0), (0.0, 1.0, 1.2), (0.5, 0.5, 0.2)])
    def test_unit_cases(self, s_ap, s_an, expected):
        a, p = vectors_with_cos(s_ap)
        _, n = vectors_with_cos(s_an)
        res = triplet_loss(a, p, n, margin=0.2)
        assert res.total == pytest.approx(expected, abs=1e-6)

    def test_sum_and_mean(self, rng):
        a, p, n = rng.normal(size=(3, 6, 4))
        res = triplet_loss(a, p, n)
        assert res.total == pytest.approx(res.per_sample.sum())
        assert res.mean == pytest.approx(res.per_sample.mean())
        assert np.all(res.per_sample >= 0)

    def test_inactive_samples_get_no_gradient(self):
        a, p = vectors_with_cos(1.0)
        _, n = vectors_with_cos(-1.0)
        res = triplet_loss(a, p, n)
        assert not res.active[0]
        for g in (res.grad_anchor, res.grad_positive, res.grad_negative):
            np.testing.assert_array_equal(g, 0.0)

    def test_zero_iff_all_satisfied(self, rng):
        a, p, n = rng.normal(size=(3, 50, 6))
        res = triplet_loss(a, p, n)
        ok = cosine_similarity(a, p) >= cosine_similarity(a, n) + 0.2
        np.testing.assert_array_equal(res.per_sample == 0, ok)

    def test_gradients_match_differences(self, rng):
        q = {k: rng.normal(size=(5, 4)) for k in "apn"}
        res = triplet_loss(q["a"], q["p"], q["n"], margin=1.5)
        err = nn.grad_check(lambda: triplet_loss(q["a"], q["p"], q["n"], margin=1.5).total, q,
                            {"a": res.grad_anchor, "p": res.grad_positive, "n": res.grad_negative})
        assert err < 1e-4


class TestCrossEntropy:
    def test_one_hot(self):
        assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1)[0] == pytest.approx(0.0, abs=1e-6)

    def test_uniform_seven(self):
        assert cross_entropy(np.full(7, 1 / 7), 3)[0] == pytest.approx(math.log(7), abs=1e-6)

    def test_half(self):
        assert cross_entropy(np.array([0.5, 0.5]), 0)[0] == pytest.approx(math.log(2), abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(np.array([0.5, 0.5]), 2)


class TestSampler:
    def test_unrank_matches_enumeration(self):
        for n in (2, 3, 7, 40, 301):
            i, j = unrank_pairs(np.arange(n * (n - 1) // 2), n)
            ti, tj = np.triu_indices(n, k=1)
            np.testing.assert_array_equal(i, ti)
            np.testing.assert_array_equal(j, tj)

    def test_class_of_three_has_three_pairs(self, rng):
        pairs = sample_class_pairs(np.array([4, 8, 9]), 3, rng)
        assert sorted(map(tuple, pairs)) == [(4, 8), (4, 9), (8, 9)]

    def test_top_up(self, rng):
        pairs = sample_class_pairs(np.arange(4), 10, rng)
        assert len(pairs) == 10
        assert {tuple(p) for p in pairs[:6]} == set(combinations(range(4), 2))
        assert len(sample_class_pairs(np.arange(4), 10, rng, top_up=False)) == 6

    def test_without_replacement_when_plenty(self, rng):
        pairs = sample_class_pairs(np.arange(100), 500, rng)
        assert len({tuple(p) for p in pairs}) == 500

    def test_triplet_constraints(self):
        labels = np.repeat([0, 1, 2], [5, 6, 7])
        trip = sample_triplets(labels, 12, seed=0)
        assert len(trip) == 36
        a, p, n = trip.T
        assert np.all(labels[a] == labels[p]) and np.all(labels[a] != labels[n]) and np.all(a != p)

    def test_deterministic(self):
        labels = np.repeat([0, 1], 20)
        np.testing.assert_array_equal(sample_triplets(labels, 50, seed=3), sample_triplets(labels, 50, seed=3))
        assert not np.array_equal(sample_triplets(labels, 50, seed=3), sample_triplets(labels, 50, seed=4))

    def test_small_class_named(self):
        with pytest.raises(ValueError, match="'Lonely'"):
            sample_triplets(np.array([0, 0, 1]), 5, label_names=["Busy", "Lonely"])

    def test_single_class_errors(self):
        with pytest.raises(ValueError, match="two classes"):
            sample_triplets(np.zeros(5, dtype=int), 5)

    def test_negatives_cover_other_classes(self):
        labels = np.repeat([0, 1, 2], 30)
        trip = sample_triplets(labels, 400, seed=1)
        neg_classes = labels[trip[labels[trip[:, 0]] == 0, 2]]
        assert set(neg_classes) == {1, 2}


class TestPhase1:
    def test_zero_epochs_returns_init(self, toy_corpus):
        cfg = small_config(phase1_epochs=0)
        p0, _ = initial_encoder(toy_corpus, cfg)
        p1 = train_phase1(toy_corpus["train"], toy_corpus["valid"], cfg, p0)
        for k in p0:
            np.testing.assert_array_equal(p0[k], p1[k])

    def test_toy_oracle(self, toy_corpus):
        cfg = small_config(phase1_epochs=4)
        p0, _ = initial_encoder(toy_corpus, cfg)
        log = TrainingLog()
        p1 = train_phase1(toy_corpus["train"], toy_corpus["valid"], cfg, p0, log)
        losses = log.series("valid", "triplet_loss")
        assert min(losses) < 0.05
        gap0 = cosine_gap(p0, cfg, toy_corpus["valid"])
        gap1 = cosine_gap(p1, cfg, toy_corpus["valid"])
        assert gap1 > gap0 and gap1 > 0

    def test_bit_identical_reruns(self, toy_corpus):
        cfg = small_config(phase1_epochs=1, pairs_per_class=60)
        p0, _ = initial_encoder(toy_corpus, cfg)
        a = train_phase1(toy_corpus["train"], toy_corpus["valid"], cfg, p0)
        b = train_phase1(toy_corpus["train"], toy_corpus["valid"], cfg, p0)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])


class TestPhase2:
    def test_toy_reaches_full_train_accuracy(self, toy_run):
        _, log = toy_run
        acc = log.series("train", "accuracy")
        assert len(acc) <= 20 and max(acc) == 1.0

    def test_training_log_csv(self, toy_run, tmp_path):
        _, log = toy_run
        log.write_csv(tmp_path / "log.csv")
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "split", "metric", "value"]
        assert {r[2] for r in rows[1:]} >= {"triplet_loss", "cross_entropy", "accuracy"}

    def test_one_phase_random_mode(self, toy_corpus):
        cfg = small_config(phases=1, phase2_epochs=2)
        log = TrainingLog()
        model = train(toy_corpus, cfg, log)
        assert cfg.mode_name == "1P_random"
        assert not log.series("valid", "triplet_loss")
        assert model.n_classes == 2

    def test_frozen_encoder(self, toy_corpus):
        cfg = small_config(phases=1, phase2_epochs=1, freeze_encoder=True)
        p0, _ = initial_encoder(toy_corpus, cfg)
        model = train(toy_corpus, cfg)
        for k in enc.encoder_keys(cfg):
            np.testing.assert_array_equal(model.params[k], p0[k])

    def test_deterministic(self, toy_corpus):
        cfg = small_config(phases=1, phase2_epochs=2)
        a, b = train(toy_corpus, cfg), train(toy_corpus, cfg)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_unseen_training_label_rejected(self, tmp_path):
        toy.write_corpus(tmp_path, {s: (["a b", "c d", "e f"], ["X", "Y", "X"]) for s in ("train", "valid", "test")})
        corpus = load_dataset(tmp_path)
        corpus["train"].labels[0] = -1
        with pytest.raises(ValueError, match="known intents"):
            train(corpus, small_config(phases=1, phase2_epochs=1))


class TestPredict:
    def test_training_utterances_own_class(self, toy_model, toy_corpus):
        ds = toy_corpus["train"]
        for toks, label in zip(ds.tokens, ds.labels):
            assert predict(toy_model, " ".join(toks))[0] == ds.label_names[label]

    def test_probabilities_sum_to_one(self, toy_model):
        probs = predict_proba(toy_model, ["play jazz", "zzzz qqq", "Rain Forecast tomorrow"])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs > 0)

    def test_all_oov_valid_distribution(self, toy_model):
        name, probs = predict(toy_model, "xylophone quartz")
        assert name in toy_model.label_names
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)

    def test_empty_errors(self, toy_model):
        with pytest.raises(ValueError, match="empty"):
            predict(toy_model, "   ")

    def test_argmax_ties_lowest_id(self, toy_model):
        p = {k: np.array(v) for k, v in toy_model.params.items()}
        p["dense2_w"][:] = 0.0
        p["dense2_b"][:] = 0.0
        m = type(toy_model)(p, toy_model.word_vocab, toy_model.char_vocab, toy_model.label_names,
                            toy_model.config)
        assert predict(m, "play jazz")[0] == toy_model.label_names[0]

    def test_monotone_logit_transform(self, toy_model):
        p = {k: np.array(v) for k, v in toy_model.params.items()}
        p["dense2_w"] *= 3.0
        p["dense2_b"] = p["dense2_b"] * 3.0 + 1.0
        m = type(toy_model)(p, toy_model.word_vocab, toy_model.char_vocab, toy_model.label_names,
                            toy_model.config)
        for u in ("play jazz", "rain cold", "album storm"):
            assert predict(m, u)[0] == predict(toy_model, u)[0]

    def test_model_immutable(self, toy_model):
        with pytest.raises(ValueError):
            toy_model.params["dense2_b"][0] = 1.0
