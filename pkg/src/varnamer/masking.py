"""Masked-instance construction for the three training objectives.

* plan_mlm: every position selected independently with probability 0.15;
  selected positions get mask/random/keep actions at 80/10/10.
* plan_mlm_whole_word: the same, at the granularity of pre-tokenization
  segments, so a multi-token word is never half-masked. One action is drawn
  per selected segment (random replacements are re-drawn per token).
* plan_cmlm: deterministic - every token inside a variable-slot occurrence
  is masked, nothing else; no random/keep dilution.

Plans are pure data; :func:`apply_plan` materializes the model input and the
loss targets. Dynamic masking is achieved by deriving a fresh rng per
(seed, epoch, instance) via :func:`instance_rng`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bpe import BYTE_BASE, MASK_ID, BpeVocab
from .bpe import Encoding

MASK, RANDOM, KEEP = "mask", "random", "keep"

SELECT_PROB = 0.15
ACTION_SPLIT = (0.8, 0.1, 0.1)  # mask / random / keep


@dataclass
class MaskingPlan:
    """Per-position actions and prediction targets for one instance."""

    actions: list[tuple[int, str, int | None]]  # (position, action, random id)
    targets: dict[int, int]  # position -> original token id
    epoch_seed: int = 0

    @property
    def empty(self) -> bool:
        return not self.targets

    def to_text(self) -> str:
        parts = [
            f"{pos}:{action}" + (f"={rid}" if rid is not None else "")
            for pos, action, rid in self.actions
        ]
        return f"seed={self.epoch_seed} " + " ".join(parts)


@dataclass
class ConstrainedSet:
    """Token-index spans of every variable occurrence in one instance."""

    spans: list[tuple[int, int]]

    def positions(self) -> list[int]:
        out = []
        for start, end in self.spans:
            out.extend(range(start, end))
        return out

    @classmethod
    def from_encoding(cls, encoding: Encoding) -> "ConstrainedSet":
        if encoding.slot_token_spans is None:
            return cls(spans=[])
        spans = [span for slot in encoding.slot_token_spans for span in slot]
        return cls(spans=sorted(spans))


def instance_rng(seed: int, epoch: int, instance: int) -> np.random.Generator:
    """Deterministic per-(epoch, instance) generator for dynamic masking."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch, instance)))


def _draw_action(vocab: BpeVocab, rng: np.random.Generator) -> tuple[str, int | None]:
    u = rng.random()
    if u < ACTION_SPLIT[0]:
        return MASK, None
    if u < ACTION_SPLIT[0] + ACTION_SPLIT[1]:
        lo, hi = vocab.content_id_range()
        return RANDOM, int(rng.integers(lo, hi))
    return KEEP, None


def plan_mlm(encoding: Encoding, vocab: BpeVocab, rng: np.random.Generator, epoch_seed: int = 0) -> MaskingPlan:
    """Independent 15% position selection with 80/10/10 actions."""
    actions = []
    targets = {}
    selected = rng.random(len(encoding.ids)) < SELECT_PROB
    for pos in np.flatnonzero(selected):
        pos = int(pos)
        action, rid = _draw_action(vocab, rng)
        actions.append((pos, action, rid))
        targets[pos] = encoding.ids[pos]
    return MaskingPlan(actions=actions, targets=targets, epoch_seed=epoch_seed)


def plan_mlm_whole_word(
    encoding: Encoding, vocab: BpeVocab, rng: np.random.Generator, epoch_seed: int = 0
) -> MaskingPlan:
    """Segment-granular selection; a selected word is masked in full.

    Whitespace runs count as selectable segments too, which keeps the
    expected masked-token fraction at exactly 15% of all tokens.
    """
    actions = []
    targets = {}
    for start, end, _is_word in encoding.segments:
        if rng.random() >= SELECT_PROB:
            continue
        action, _rid = _draw_action(vocab, rng)
        for pos in range(start, end):
            rid = None
            if action == RANDOM:
                lo, hi = vocab.content_id_range()
                rid = int(rng.integers(lo, hi))
            actions.append((pos, action, rid))
            targets[pos] = encoding.ids[pos]
    return MaskingPlan(actions=actions, targets=targets, epoch_seed=epoch_seed)


def plan_cmlm(encoding: Encoding, constrained: ConstrainedSet) -> MaskingPlan:
    """Mask exactly the constrained (variable-occurrence) positions.

    Deterministic: every constrained token becomes the mask sentinel, with
    the original gold-name token as target. An empty constrained set yields
    an empty plan, which the training loop skips.
    """
    n = len(encoding.ids)
    actions = []
    targets = {}
    for start, end in constrained.spans:
        if not 0 <= start <= end <= n:
            raise ValueError(f"constrained span ({start}, {end}) outside sequence of {n}")
        for pos in range(start, end):
            if pos in targets:
                raise ValueError(f"overlapping constrained spans at token {pos}")
            actions.append((pos, MASK, None))
            targets[pos] = encoding.ids[pos]
    actions.sort()
    return MaskingPlan(actions=actions, targets=targets)


def apply_plan(encoding: Encoding, plan: MaskingPlan) -> tuple[list[int], dict[int, int]]:
    """Materialize (input ids, position -> target id) from a plan."""
    ids = list(encoding.ids)
    n = len(ids)
    for pos, action, rid in plan.actions:
        if not 0 <= pos < n:
            raise ValueError(f"plan position {pos} outside sequence of {n}")
        if action == MASK:
            ids[pos] = MASK_ID
        elif action == RANDOM:
            if rid is None or rid < BYTE_BASE:
                raise ValueError(f"random action at {pos} must carry a non-special id")
            ids[pos] = rid
        elif action != KEEP:
            raise ValueError(f"unknown action {action!r}")
    return ids, dict(plan.targets)
