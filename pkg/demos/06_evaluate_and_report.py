"""Split-aware evaluation reports in oracle and heuristic modes.

Needs demos/artifacts/ from 04_train_toy_model.py.

Run: python demos/06_evaluate_and_report.py
"""

import os

from varnamer import bpe, corpus
from varnamer.evalmetrics import build_report, evaluate_variables
from varnamer.inference import Predictor
from varnamer.instances import build_instances, derive_max_allowed
from varnamer.model import load_checkpoint

ART = os.path.join(os.path.dirname(__file__), "artifacts")
vocab = bpe.load_vocab(os.path.join(ART, "vocab.tokens.txt"),
                       os.path.join(ART, "vocab.merges.txt"))
model, _, _ = load_checkpoint(os.path.join(ART, "model.ckpt"))
canons = corpus.read_canonical_corpus(os.path.join(ART, "corpus.txt"),
                                      os.path.join(ART, "corpus.index.json"))
max_allowed = derive_max_allowed(build_instances(canons, vocab))
predictor = Predictor(model, vocab, max_allowed=max_allowed)

# Train split: the memorization check. Oracle mode feeds the true token
# count of every name; heuristic mode must guess it.
train_canons = [c for c in canons if c.split == "train"]
for mode in ("oracle", "heuristic"):
    preds = evaluate_variables(predictor, train_canons, mode, k=10)
    for p in preds:
        p.body_in_train = True  # train bodies are, by definition, in train
    report = build_report(preds, mode=mode, max_allowed=max_allowed,
                          body_tags_recomputed=True)
    print(f"== train split, {mode} counts ==")
    print(report.to_text())
    print()

# Validation split: body-in-train vs. body-not-in-train separates shared
# (renamed-duplicate) bodies from genuinely unseen ones.
val_canons = [c for c in canons if c.split == "validation"]
preds = evaluate_variables(predictor, val_canons, "heuristic", k=10)
report = build_report(preds, mode="heuristic", max_allowed=max_allowed,
                      body_tags_recomputed=True)
print("== validation split, heuristic counts ==")
print(report.to_text())
