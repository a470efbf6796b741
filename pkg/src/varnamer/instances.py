"""Bridging canonical functions to model inputs.

Instances carry the token encoding of a canonical function plus the
token-index spans of its variable occurrences. Model inputs follow the
convention BOS + content + EOS, truncated to max_seq with EOS preserved,
padded on the right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bpe import BOS_ID, EOS_ID, PAD_ID, BpeVocab, Encoding, encode
from .corpus import CanonicalFunction
from .masking import ConstrainedSet


@dataclass
class TrainInstance:
    function_id: str
    encoding: Encoding
    constrained: ConstrainedSet
    split: str
    body_in_train: bool | None = None


def build_instances(canons: list[CanonicalFunction], vocab: BpeVocab) -> list[TrainInstance]:
    """Encode canonical texts with boundaries forced at slot edges."""
    out = []
    for c in canons:
        enc = encode(vocab, c.text, slot_spans=[s.spans for s in c.slots])
        out.append(
            TrainInstance(
                function_id=c.function_id,
                encoding=enc,
                constrained=ConstrainedSet.from_encoding(enc),
                split=c.split,
                body_in_train=c.body_in_train,
            )
        )
    return out


def derive_max_allowed(instances: list[TrainInstance], default: int = 7) -> int:
    """Largest gold-name token count observed on the train split.

    This is how the count-sweep bound is set: from train-data statistics,
    not a fixed constant. Falls back to ``default`` when no train slots
    exist.
    """
    widths = [
        end - start
        for inst in instances
        if inst.split == "train"
        for start, end in inst.constrained.spans
    ]
    return max(widths) if widths else default


def add_specials(
    ids: list[int], targets: dict[int, int], max_seq: int
) -> tuple[list[int], dict[int, int]]:
    """BOS + ids + EOS, truncated to max_seq keeping EOS; targets shift by 1
    and those cut off by truncation are dropped."""
    content = ids[: max_seq - 2]
    seq = [BOS_ID] + content + [EOS_ID]
    shifted = {pos + 1: tid for pos, tid in targets.items() if pos < len(content)}
    return seq, shifted


def pad_batch(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to a rectangle; returns (ids, pad_mask) with True = real."""
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask
