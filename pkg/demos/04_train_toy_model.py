"""Full desk-scale run: corpus -> vocab -> pretrain -> finetune.

Takes a few minutes on CPU. Writes demos/artifacts/ for the later demos.

Run: python demos/04_train_toy_model.py
"""

import os
import time

import numpy as np

from varnamer import bpe, corpus, toygen
from varnamer.corpus import save_dataset, write_canonical_corpus
from varnamer.instances import build_instances
from varnamer.model import preset, save_checkpoint
from varnamer.training import finetune, pretrain, recipe

ART = os.path.join(os.path.dirname(__file__), "artifacts")
os.makedirs(ART, exist_ok=True)

t0 = time.time()
functions = toygen.generate(200, 0.10, 7)
train_fns = [f for f in functions if f.split == "train"]
evals = corpus.tag_body_in_train(
    [corpus.canonicalize(f) for f in train_fns],
    [f for f in functions if f.split != "train"],
)
functions = train_fns + evals
save_dataset(functions, os.path.join(ART, "toy.jsonl"))

canons, corpus_text = corpus.build_canonical_corpus(functions)
write_canonical_corpus(canons, os.path.join(ART, "corpus.txt"),
                       os.path.join(ART, "corpus.index.json"))
vocab = bpe.train_bpe(corpus_text, 512, 50_000, max_token_length=6)
bpe.save_vocab(vocab, os.path.join(ART, "vocab.tokens.txt"),
               os.path.join(ART, "vocab.merges.txt"))
print(f"corpus + vocab ready ({time.time() - t0:.0f}s)")

instances = build_instances(canons, vocab)
train = [i for i in instances if i.split == "train"]
val = [i for i in instances if i.split == "validation"]
model_config = preset("varbert-toy", vocab.size, dropout=0.0)

t0 = time.time()
pre = pretrain(train, vocab, model_config, recipe("toy-pretrain"),
               val_instances=val, log_path=os.path.join(ART, "pretrain.log"))
print(f"pretrained {pre.epochs_run} epochs in {time.time() - t0:.0f}s; "
      f"final loss {pre.log[-1]['loss']:.3f}; "
      f"validation perplexity {pre.val_perplexity[-1]:.2f}")
save_checkpoint(os.path.join(ART, "pretrained.ckpt"), pre.model, vocab.token_hash())

t0 = time.time()
ft = finetune(pre.model.astype(np.float32), vocab, train, recipe("toy-finetune"),
              log_path=os.path.join(ART, "finetune.log"))
print(f"finetuned {ft.epochs_run} epochs in {time.time() - t0:.0f}s; "
      f"final loss {ft.log[-1]['loss']:.4f}")
save_checkpoint(os.path.join(ART, "model.ckpt"), ft.model, vocab.token_hash(),
                meta={"objective": "cmlm"})
print(f"\nartifacts in {ART}")
