"""Train on a synthetic two-intent corpus and watch the sentence space separate.

Run: python demos/toy_training.py

Phase I pulls same-intent utterances together under the triplet loss; the
cosine gap (mean intra-class minus mean inter-class similarity on the
validation split) is printed before and after. Phase II then fits the softmax
head and the model classifies a few unseen, partly misspelled utterances.
"""

import tempfile

from lidsnet import Config, load_dataset, predict
from lidsnet.toy import write_toy_corpus
from lidsnet.trainer import TrainingLog, cosine_gap, initial_encoder, make_model, train_phase1, train_phase2

root = write_toy_corpus(tempfile.mkdtemp(), n_train=40, n_valid=20, n_test=20, seed=3)
corpus = load_dataset(root)
cfg = Config(embeddings="random", pairs_per_class=400, phase1_epochs=5, phase2_epochs=20)

params, _ = initial_encoder(corpus, cfg)
print(f"cosine gap at init:       {cosine_gap(params, cfg, corpus['valid']):.3f}")

log = TrainingLog()
params = train_phase1(corpus["train"], corpus["valid"], cfg, params, log)
print(f"cosine gap after phase I: {cosine_gap(params, cfg, corpus['valid']):.3f}")

params = train_phase2(corpus["train"], corpus["valid"], cfg, params, log)
train_acc = log.series("train", "accuracy")
print(f"phase II train accuracy by epoch: {' '.join(f'{a:.2f}' for a in train_acc)}")

model = make_model(params, corpus.word_vocab, corpus.char_vocab, corpus.label_names, cfg)
for text in ["play a jazz track", "will it rain tomorrow", "plya some jaz", "snowy forcast"]:
    intent, probs = predict(model, text)
    print(f"{text!r:28} -> {intent} ({probs.max():.3f})")
