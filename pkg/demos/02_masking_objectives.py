"""The three masking objectives, shown on one function.

Run: python demos/02_masking_objectives.py
"""

import numpy as np

from varnamer import bpe, corpus, toygen
from varnamer.masking import (
    ConstrainedSet,
    apply_plan,
    plan_cmlm,
    plan_mlm,
    plan_mlm_whole_word,
)

functions = toygen.generate(200, 0.10, 7)
canons, corpus_text = corpus.build_canonical_corpus(functions)
vocab = bpe.train_bpe(corpus_text, 512, 50_000, max_token_length=6)

canon = canons[0]
enc = bpe.encode(vocab, canon.text, slot_spans=[s.spans for s in canon.slots])
print("function:")
print(canon.text)


def render(ids):
    return "".join(
        "(MASK)" if t == bpe.MASK_ID else bpe.decode(vocab, [t]) for t in ids
    )


# 1. Plain masked LM: 15% of positions, 80% mask / 10% random / 10% keep.
plan = plan_mlm(enc, vocab, np.random.default_rng(1))
ids, targets = apply_plan(enc, plan)
print(f"\n--- masked LM: {len(targets)} of {len(enc.ids)} positions selected ---")
print(render(ids))

# 2. Whole-word masking: a selected word is masked in full, so multi-token
# words are never half-hidden.
plan = plan_mlm_whole_word(enc, vocab, np.random.default_rng(4))
ids, targets = apply_plan(enc, plan)
print(f"\n--- whole-word masked LM: {len(targets)} positions ---")
print(render(ids))

# 3. Constrained masking: exactly the variable-name tokens, nothing random.
# This is the finetuning objective for name recovery.
plan = plan_cmlm(enc, ConstrainedSet.from_encoding(enc))
ids, targets = apply_plan(enc, plan)
print(f"\n--- constrained masked LM: {len(targets)} positions (all slots) ---")
print(render(ids))

# Dynamic masking: every epoch re-samples the random plans.
from varnamer.masking import instance_rng

plans = {
    tuple(plan_mlm(enc, vocab, instance_rng(7, epoch, 0)).actions)
    for epoch in range(10)
}
print(f"\ndynamic masking: {len(plans)} distinct plans across 10 epochs")
