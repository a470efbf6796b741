import numpy as np
import pytest

from varnamer.bpe import BYTE_BASE, MASK_ID, decode, encode
from varnamer.masking import (
    KEEP,
    MASK,
    RANDOM,
    ConstrainedSet,
    MaskingPlan,
    apply_plan,
    instance_rng,
    plan_cmlm,
    plan_mlm,
    plan_mlm_whole_word,
)


def fake_encoding(n_tokens, vocab, words=None):
    from varnamer.bpe import Encoding

    ids = [BYTE_BASE + (i % 200) for i in range(n_tokens)]
    if words is None:
        segments = [(i, i + 1, True) for i in range(n_tokens)]
    else:
        segments = words
    return Encoding(ids=ids, segments=segments)


def test_mlm_selection_statistics(toy_vocab):
    rng = np.random.default_rng(0)
    enc = fake_encoding(200_000, toy_vocab)
    plan = plan_mlm(enc, toy_vocab, rng)
    frac = len(plan.targets) / len(enc.ids)
    assert abs(frac - 0.15) < 0.004
    kinds = {MASK: 0, RANDOM: 0, KEEP: 0}
    for _pos, action, _rid in plan.actions:
        kinds[action] += 1
    total = sum(kinds.values())
    assert abs(kinds[MASK] / total - 0.80) < 0.01
    assert abs(kinds[RANDOM] / total - 0.10) < 0.01
    assert abs(kinds[KEEP] / total - 0.10) < 0.01


def test_mlm_same_seed_identical_plan(toy_vocab):
    enc = fake_encoding(500, toy_vocab)
    a = plan_mlm(enc, toy_vocab, np.random.default_rng(7), epoch_seed=1)
    b = plan_mlm(enc, toy_vocab, np.random.default_rng(7), epoch_seed=1)
    assert a == b


def test_dynamic_masking_differs_across_epochs(toy_vocab):
    enc = fake_encoding(60, toy_vocab)
    plans = [
        plan_mlm(enc, toy_vocab, instance_rng(3, epoch, 0), epoch_seed=epoch).actions
        for epoch in range(10)
    ]
    distinct = {tuple(p) for p in plans}
    assert len(distinct) >= 9


def test_whole_word_masks_all_tokens_of_selected_word(toy_vocab):
    # one word of 3 tokens; force selection by driving probabilities
    enc = fake_encoding(3, toy_vocab, words=[(0, 3, True)])
    for seed in range(50):
        plan = plan_mlm_whole_word(enc, toy_vocab, np.random.default_rng(seed))
        if plan.targets:
            assert sorted(plan.targets) == [0, 1, 2]
            kinds = {a for _p, a, _r in plan.actions}
            assert len(kinds) == 1  # one action drawn for the word
            return
    pytest.fail("word never selected in 50 seeds")


def test_whole_word_fraction_matches_token_rate(toy_vocab):
    # mixed word lengths over 1e6 tokens: masked-token fraction stays 15%
    rng = np.random.default_rng(11)
    words = []
    start = 0
    lengths = [1, 2, 3, 4] * 100_000
    for n in lengths:
        words.append((start, start + n, True))
        start += n
    enc = fake_encoding(start, toy_vocab, words=words)
    assert len(enc.ids) == 1_000_000
    plan = plan_mlm_whole_word(enc, toy_vocab, rng)
    frac = len(plan.targets) / len(enc.ids)
    assert abs(frac - 0.15) < 0.005


def test_whole_word_on_single_token_words_matches_mlm_statistics(toy_vocab):
    n = 200_000
    enc = fake_encoding(n, toy_vocab)
    plan = plan_mlm_whole_word(enc, toy_vocab, np.random.default_rng(5))
    frac = len(plan.targets) / n
    assert abs(frac - 0.15) < 0.004
    kinds = {MASK: 0, RANDOM: 0, KEEP: 0}
    for _pos, action, _rid in plan.actions:
        kinds[action] += 1
    assert abs(kinds[MASK] / len(plan.actions) - 0.80) < 0.01


def test_cmlm_masks_exactly_slot_positions(toy_vocab):
    enc = fake_encoding(12, toy_vocab)
    plan = plan_cmlm(enc, ConstrainedSet(spans=[(4, 6), (9, 10)]))
    assert sorted(plan.targets) == [4, 5, 9]
    assert all(action == MASK for _p, action, _r in plan.actions)
    ids, targets = apply_plan(enc, plan)
    for pos in range(12):
        if pos in (4, 5, 9):
            assert ids[pos] == MASK_ID
        else:
            assert ids[pos] == enc.ids[pos]
    assert targets == {4: enc.ids[4], 5: enc.ids[5], 9: enc.ids[9]}


def test_cmlm_empty_set_flagged(toy_vocab):
    enc = fake_encoding(5, toy_vocab)
    plan = plan_cmlm(enc, ConstrainedSet(spans=[]))
    assert plan.empty


def test_cmlm_rejects_bad_spans(toy_vocab):
    enc = fake_encoding(5, toy_vocab)
    with pytest.raises(ValueError, match="outside"):
        plan_cmlm(enc, ConstrainedSet(spans=[(3, 9)]))
    with pytest.raises(ValueError, match="overlap"):
        plan_cmlm(enc, ConstrainedSet(spans=[(1, 3), (2, 4)]))


def test_cmlm_targets_decode_to_gold_names(toy_vocab, toy_canons):
    canon = next(c for c in toy_canons if c.slots)
    enc = encode(toy_vocab, canon.text, slot_spans=[s.spans for s in canon.slots])
    plan = plan_cmlm(enc, ConstrainedSet.from_encoding(enc))
    for slot, token_spans in zip(canon.slots, enc.slot_token_spans):
        for start, end in token_spans:
            ids = [plan.targets[pos] for pos in range(start, end)]
            assert decode(toy_vocab, ids).strip() == slot.gold_name


def test_cmlm_target_total_matches_corpus_count(toy_vocab, toy_canons, toy_instances):
    # cross-module: plan targets per epoch == occurrence token count from
    # the corpus module's span bookkeeping
    total_targets = 0
    total_tokens = 0
    for canon, inst in zip(toy_canons, toy_instances):
        plan = plan_cmlm(inst.encoding, inst.constrained)
        total_targets += len(plan.targets)
        for spans in inst.encoding.slot_token_spans:
            for start, end in spans:
                total_tokens += end - start
    assert total_targets == total_tokens


def test_apply_plan_identity_when_empty(toy_vocab):
    enc = fake_encoding(6, toy_vocab)
    ids, targets = apply_plan(enc, MaskingPlan(actions=[], targets={}))
    assert ids == enc.ids
    assert targets == {}


def test_apply_plan_never_touches_unplanned_positions(toy_vocab):
    enc = fake_encoding(50, toy_vocab)
    plan = plan_mlm(enc, toy_vocab, np.random.default_rng(3))
    ids, _ = apply_plan(enc, plan)
    planned = {pos for pos, _a, _r in plan.actions}
    for pos in range(50):
        if pos not in planned:
            assert ids[pos] == enc.ids[pos]


def test_random_action_never_produces_special(toy_vocab):
    from varnamer.masking import _draw_action

    rng = np.random.default_rng(9)
    seen_random = 0
    for _ in range(100_000):
        action, rid = _draw_action(toy_vocab, rng)
        if action == RANDOM:
            seen_random += 1
            assert BYTE_BASE <= rid < toy_vocab.size
    assert seen_random > 8_000
    # and end to end through apply_plan
    enc = fake_encoding(3_000, toy_vocab)
    for seed in range(10):
        plan = plan_mlm(enc, toy_vocab, np.random.default_rng(seed))
        ids, _ = apply_plan(enc, plan)
        for pos, action, rid in plan.actions:
            if action == RANDOM:
                assert rid >= BYTE_BASE
                assert ids[pos] == rid


def test_plan_serializes_to_text(toy_vocab):
    enc = fake_encoding(30, toy_vocab)
    plan = plan_mlm(enc, toy_vocab, np.random.default_rng(1), epoch_seed=4)
    text = plan.to_text()
    assert text.startswith("seed=4")
    assert all(part.split(":")[0].isdigit() for part in text.split()[1:])
