"""Evaluation: exact match at ranks, character error rate, perplexity,
and split-aware reports (Overall / body in train / body not in train).

Variables, not occurrences, are the counting unit. Exact match is
case-sensitive byte equality after boundary whitespace stripping; CER is
unit-cost Levenshtein distance normalized by gold length (may exceed 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import log_softmax_rows
from .corpus import CanonicalFunction
from .inference import InferenceRequest, Predictor, SequenceOverflowError

RANKS = (1, 3, 5, 10)


class EvalError(Exception):
    pass


def exact_match(pred: str, gold: str) -> bool:
    """Case-sensitive equality after stripping slot-boundary whitespace."""
    return pred.strip() == gold.strip()


def top_k_accuracy(ranked: list[str], gold: str, k: int) -> bool:
    """True iff the gold name appears among the first k ranked names."""
    gold = gold.strip()
    return any(exact_match(name, gold) for name in ranked[:k])


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute edit distance (iterative DP)."""
    if a == b:
        return 0
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(pred: str, gold: str) -> float:
    """Edit distance normalized by gold length; error on empty gold."""
    if not gold:
        raise EvalError("cer: gold name is empty")
    return levenshtein(pred, gold) / len(gold)


def perplexity(model, masked_set: list[tuple[np.ndarray, dict[int, int]]]) -> float:
    """exp of the mean -log p(target) over every masked target position.

    ``masked_set`` pairs input id sequences with {position: target id}.
    """
    total = 0.0
    count = 0
    for ids, targets in masked_set:
        if not targets:
            continue
        logits = model.forward(np.asarray(ids, dtype=np.int64)).data
        logp = log_softmax_rows(logits)
        for pos, tid in targets.items():
            total += -float(logp[pos, tid])
            count += 1
    if count == 0:
        raise EvalError("perplexity: evaluation set has no targets")
    return math.exp(total / count)


@dataclass
class VariablePrediction:
    """Everything the report needs about one evaluated variable."""

    function_id: str
    placeholder: str
    gold_name: str
    body_in_train: bool | None
    ranked_names: list[str]
    top1_count: int
    true_count: int
    gold_nll: list[float]  # -log p(gold token) under true-count masking
    mode: str

    @property
    def top1(self) -> str:
        return self.ranked_names[0] if self.ranked_names else ""


def evaluate_variables(
    predictor: Predictor,
    canons: list[CanonicalFunction],
    mode: str,
    k: int = max(RANKS),
    skip_overflow: bool = True,
) -> list[VariablePrediction]:
    """Run the predictor over every variable of every function.

    Oracle mode feeds each variable's true token count; heuristic mode
    sweeps counts. Functions whose masked form exceeds max_seq are skipped
    (mirrors upstream truncation) unless ``skip_overflow`` is False.
    """
    from .bpe import encode  # local import to keep module deps one-way

    out: list[VariablePrediction] = []
    for canon in canons:
        if not canon.slots:
            continue
        slot_spans = {s.decompiler_name: s.spans for s in canon.slots}
        enc = encode(predictor.vocab, canon.text, slot_spans=[s.spans for s in canon.slots])
        true_counts = {}
        gold_ids = {}
        for slot, spans in zip(canon.slots, enc.slot_token_spans):
            start, end = spans[0]
            true_counts[slot.decompiler_name] = end - start
            gold_ids[slot.decompiler_name] = enc.ids[start:end]
        request = InferenceRequest(
            text=canon.text,
            slots=slot_spans,
            k=k,
            mode=mode,
            oracle_counts=true_counts if mode == "oracle" else {},
        )
        try:
            suggestions = predictor.refine_with_accepted(request)
        except SequenceOverflowError:
            if skip_overflow:
                continue
            raise
        _, pending = predictor._substitute_accepted(request)
        for slot in canon.slots:
            name = slot.decompiler_name
            ranked = suggestions[name]
            logp = predictor._forward_variant(canon.text, pending, name, 0, true_counts[name])
            nll = [-float(logp[j, tid]) for j, tid in enumerate(gold_ids[name])]
            out.append(
                VariablePrediction(
                    function_id=canon.function_id,
                    placeholder=name,
                    gold_name=slot.gold_name,
                    body_in_train=canon.body_in_train,
                    ranked_names=[c.name for c in ranked],
                    top1_count=ranked[0].count if ranked else 0,
                    true_count=true_counts[name],
                    gold_nll=nll,
                    mode=mode,
                )
            )
    return out


def classify_error(pred: VariablePrediction) -> str | None:
    """Taxonomy tag for a wrong top-1 prediction; None when correct.

    Precedence: wrong-count, then off-by-few-chars (edit distance <= 2),
    then partial-token (count right but part of a multi-token name wrong),
    else other.
    """
    gold = pred.gold_name.strip()
    if exact_match(pred.top1, gold):
        return None
    if pred.top1_count != pred.true_count:
        return "wrong-count"
    if levenshtein(pred.top1, gold) <= 2:
        return "off-by-few-chars"
    if pred.true_count >= 2:
        return "partial-token"
    return "other"


@dataclass
class SplitMetrics:
    variables: int = 0
    functions: int = 0
    em_percent: dict[int, float] = field(default_factory=dict)
    cer_percent: float = 0.0
    perplexity: float | None = None


@dataclass
class EvalReport:
    mode: str
    max_allowed: int
    dataset_hash: str
    checkpoint_hash: str
    splits: dict[str, SplitMetrics]
    taxonomy: dict[str, int]
    body_tags_recomputed: bool = False

    def to_json(self) -> str:
        payload = {
            "mode": self.mode,
            "max_allowed": self.max_allowed,
            "dataset_hash": self.dataset_hash,
            "checkpoint_hash": self.checkpoint_hash,
            "body_tags_recomputed": self.body_tags_recomputed,
            "splits": {
                name: {
                    "variables": m.variables,
                    "functions": m.functions,
                    "em_percent": {str(k): v for k, v in m.em_percent.items()},
                    "cer_percent": m.cer_percent,
                    "perplexity": m.perplexity,
                }
                for name, m in self.splits.items()
            },
            "taxonomy": self.taxonomy,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"mode={self.mode} max_allowed={self.max_allowed}",
            f"dataset={self.dataset_hash[:12]} checkpoint={self.checkpoint_hash[:12]}"
            + (" (body tags recomputed)" if self.body_tags_recomputed else ""),
            "",
            f"{'split':<18} {'vars':>6} {'fns':>5} "
            + " ".join(f"{'EM@' + str(k):>7}" for k in RANKS)
            + f" {'CER%':>7} {'ppl':>8}",
        ]
        for name, m in self.splits.items():
            ppl = f"{m.perplexity:8.3f}" if m.perplexity is not None else "       -"
            lines.append(
                f"{name:<18} {m.variables:>6} {m.functions:>5} "
                + " ".join(f"{m.em_percent.get(k, 0.0):7.2f}" for k in RANKS)
                + f" {m.cer_percent:7.2f} {ppl}"
            )
        if self.taxonomy:
            lines.append("")
            lines.append(
                "errors: "
                + ", ".join(f"{k}={v}" for k, v in sorted(self.taxonomy.items()))
            )
        return "\n".join(lines)


def _metrics_for(preds: list[VariablePrediction]) -> SplitMetrics:
    m = SplitMetrics()
    m.variables = len(preds)
    m.functions = len({p.function_id for p in preds})
    if not preds:
        m.em_percent = {k: 0.0 for k in RANKS}
        return m
    for k in RANKS:
        hits = sum(top_k_accuracy(p.ranked_names, p.gold_name, k) for p in preds)
        m.em_percent[k] = 100.0 * hits / len(preds)
    m.cer_percent = 100.0 * sum(cer(p.top1, p.gold_name.strip()) for p in preds) / len(preds)
    nll = [x for p in preds for x in p.gold_nll]
    if nll:
        m.perplexity = math.exp(sum(nll) / len(nll))
    return m


def build_report(
    predictions: list[VariablePrediction],
    mode: str,
    max_allowed: int,
    dataset_hash: str = "",
    checkpoint_hash: str = "",
    body_tags_recomputed: bool = False,
) -> EvalReport:
    """Aggregate per-variable predictions into the split-aware table."""
    untagged = sorted({p.function_id for p in predictions if p.body_in_train is None})
    if untagged:
        raise EvalError(f"variables without body_in_train tags in functions: {untagged}")
    in_train = [p for p in predictions if p.body_in_train]
    not_in = [p for p in predictions if not p.body_in_train]
    splits = {
        "overall": _metrics_for(predictions),
        "body_in_train": _metrics_for(in_train),
        "body_not_in_train": _metrics_for(not_in),
    }
    taxonomy: dict[str, int] = {}
    for p in predictions:
        tag = classify_error(p)
        if tag:
            taxonomy[tag] = taxonomy.get(tag, 0) + 1
    return EvalReport(
        mode=mode,
        max_allowed=max_allowed,
        dataset_hash=dataset_hash,
        checkpoint_hash=checkpoint_hash,
        splits=splits,
        taxonomy=taxonomy,
        body_tags_recomputed=body_tags_recomputed,
    )
