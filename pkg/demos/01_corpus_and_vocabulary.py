"""Dataset records, canonicalization, body tags, and the BPE vocabulary.

Run: python demos/01_corpus_and_vocabulary.py
"""

from varnamer import bpe, corpus, toygen

# A dataset record is one decompiled function: raw code with placeholder
# names plus the original (gold) names and the byte spans where each
# placeholder occurs.
functions = toygen.generate(n_functions=200, duplicate_rate=0.10, seed=7)
fn = functions[0]
print("=== raw decompiled function ===")
print(fn.raw_code)
print("slots:", {v.decompiler_name: v.gold_name for v in fn.variables})

# Canonicalization substitutes gold names and recomputes the spans.
canon = corpus.canonicalize(fn)
print("\n=== canonical (gold names substituted) ===")
print(canon.text)
assert corpus.uncanonicalize_text(canon) == fn.raw_code  # exact inverse

# Body-in-train tags: an eval function whose body equals a train body up to
# variable renaming is flagged, so reports can separate memorization from
# generalization.
train_canons = [corpus.canonicalize(f) for f in functions if f.split == "train"]
evals = [f for f in functions if f.split != "train"]
tagged = corpus.tag_body_in_train(train_canons, evals)
dup = sum(1 for f in tagged if f.body_in_train)
print(f"\nbody-in-train tags: {dup}/{len(tagged)} eval functions duplicate a train body")

# The tokenizer corpus is the concatenated train-split canonical text.
canons, corpus_text = corpus.build_canonical_corpus(functions)
print(f"corpus: {len(corpus_text)} characters from {len(train_canons)} train functions")

vocab = bpe.train_bpe(corpus_text, vocab_size=512, max_merges=50_000, max_token_length=6)
print(f"\nvocab: {vocab.size} tokens, {len(vocab.merges)} merges")

# Byte-level base alphabet: everything round-trips exactly.
sample = canons[3].text
encoding = bpe.encode(vocab, sample)
assert bpe.decode(vocab, encoding.ids) == sample
print(f"encoded {len(sample)} chars into {len(encoding.ids)} tokens; round-trip exact")

# Slot-aligned encoding: token boundaries are forced at slot edges so a
# variable never shares a token with neighboring punctuation.
canon = canons[0]
enc = bpe.encode(vocab, canon.text, slot_spans=[s.spans for s in canon.slots])
for slot, token_spans in zip(canon.slots, enc.slot_token_spans):
    start, end = token_spans[0]
    pieces = [bpe.decode(vocab, [t]) for t in enc.ids[start:end]]
    print(f"  {slot.gold_name!r} -> {end - start} token(s): {pieces}")
