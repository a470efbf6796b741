"""Name prediction for variable slots: fixed-count, count heuristic, top-K.

A slot occurrence is predicted by splicing `n` mask tokens into the token
stream in place of the occurrence and reading the model's distribution at
those positions. The count heuristic sweeps n = 1..max_allowed and keeps
the candidate whose chosen tokens have the highest mean probability; ties
go to the smaller count. Every *other* pending occurrence (other variables
and the remaining occurrences of the same variable) is masked with its own
span's token width - a policy independent of the evaluation mode, so a
heuristic sweep that lands on the true count reproduces the oracle-mode
forward pass exactly.

Each count variant runs as its own unpadded forward pass: identical inputs
must yield bit-identical outputs regardless of which mode asked for them.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .autodiff import log_softmax_rows
from .bpe import BOS_ID, EOS_ID, MASK_ID, BpeVocab, decode, encode
from .corpus import DatasetError, substitute_spans
from .model import TransformerEncoder


class InferenceError(Exception):
    pass


class SequenceOverflowError(InferenceError):
    """Masked sequence no longer fits max_seq; caller must truncate context."""


@dataclass
class PredictionCandidate:
    name: str
    count: int
    token_probs: tuple[float, ...]
    mean_prob: float

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "count": self.count,
            "mean_prob": self.mean_prob,
            "token_probs": list(self.token_probs),
        }


@dataclass
class InferenceRequest:
    """One function's text, its slot spans, and the user's accepted names."""

    text: str
    slots: dict[str, list[tuple[int, int]]]  # placeholder -> byte spans
    accepted: dict[str, str] = field(default_factory=dict)
    k: int = 5
    mode: str = "heuristic"
    oracle_counts: dict[str, int] = field(default_factory=dict)


def _kbest_combinations(
    per_position: list[list[tuple[float, int]]], k: int
) -> list[tuple[float, list[int], list[float]]]:
    """Best-k token combinations by total probability from per-position
    candidate lists (each sorted descending). Classic heap enumeration."""
    if not per_position:
        return []
    start = (0,) * len(per_position)

    def total(idx):
        return sum(per_position[i][j][0] for i, j in enumerate(idx))

    heap = [(-total(start), start)]
    seen = {start}
    out = []
    while heap and len(out) < k:
        neg, idx = heapq.heappop(heap)
        probs = [per_position[i][j][0] for i, j in enumerate(idx)]
        ids = [per_position[i][j][1] for i, j in enumerate(idx)]
        out.append((-neg, ids, probs))
        for i in range(len(idx)):
            if idx[i] + 1 < len(per_position[i]):
                nxt = idx[:i] + (idx[i] + 1,) + idx[i + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (-total(nxt), nxt))
    return out


class Predictor:
    """Stateless prediction facade over an immutable model + vocab."""

    def __init__(
        self,
        model: TransformerEncoder,
        vocab: BpeVocab,
        max_allowed: int = 7,
        other_slot_masks: int | None = None,
    ):
        """``other_slot_masks`` fixes how many masks stand in for pending
        occurrences other than the one being predicted; None (default) uses
        each occurrence's own token width in the request text."""
        if max_allowed < 1:
            raise InferenceError("max_allowed must be at least 1")
        self.model = model
        self.vocab = vocab
        self.max_allowed = max_allowed
        self.other_slot_masks = other_slot_masks

    # -- request preparation -------------------------------------------------

    def _substitute_accepted(
        self, request: InferenceRequest
    ) -> tuple[str, dict[str, list[tuple[int, int]]]]:
        unknown = set(request.accepted) - set(request.slots)
        if unknown:
            raise InferenceError(f"accepted names for undeclared slots: {sorted(unknown)}")
        names = list(request.slots)
        data = request.text.encode("utf-8")
        replacements = []
        for name in names:
            spans = request.slots[name]
            if not spans:
                raise InferenceError(f"slot {name!r} declares no occurrences")
            for s, e in spans:
                if not (0 <= s < e <= len(data)):
                    raise InferenceError(f"slot {name!r} span ({s}, {e}) out of bounds")
            texts = {data[s:e] for s, e in spans}
            if len(texts) != 1:
                raise InferenceError(f"slot {name!r} spans cover differing text")
            current = texts.pop().decode("utf-8")
            replacements.append(request.accepted.get(name, current))
        try:
            new_text, new_spans = substitute_spans(
                request.text, [request.slots[n] for n in names], replacements
            )
        except DatasetError as exc:
            raise InferenceError(str(exc)) from exc
        pending = {
            n: new_spans[i] for i, n in enumerate(names) if n not in request.accepted
        }
        return new_text, pending

    def _variant_ids(
        self,
        text: str,
        pending: dict[str, list[tuple[int, int]]],
        target: tuple[str, int],
        n: int,
    ) -> tuple[np.ndarray, list[int]]:
        """Token ids with every pending occurrence replaced by masks.

        The target (slot, occurrence) carries n masks; every other pending
        occurrence - other variables and other occurrences of the same
        variable alike - carries ``other_slot_masks``. Returns the
        BOS/EOS-wrapped id array and the target's mask positions.
        """
        names = list(pending)
        enc = encode(self.vocab, text, slot_spans=[pending[n_] for n_ in names])
        occurrences = sorted(
            (span, name, occ_i)
            for name, slot_spans in zip(names, enc.slot_token_spans)
            for occ_i, span in enumerate(slot_spans)
        )
        ids: list[int] = []
        target_positions: list[int] = []
        cursor = 0
        for (tok_start, tok_end), name, occ_i in occurrences:
            ids.extend(enc.ids[cursor:tok_start])
            if (name, occ_i) == target:
                n_masks = n
                target_positions = list(range(len(ids) + 1, len(ids) + 1 + n_masks))
            elif self.other_slot_masks is not None:
                n_masks = self.other_slot_masks
            else:
                n_masks = tok_end - tok_start  # occurrence keeps its width
            ids.extend([MASK_ID] * n_masks)
            cursor = tok_end
        ids.extend(enc.ids[cursor:])
        seq = [BOS_ID] + ids + [EOS_ID]
        if len(seq) > self.model.config.max_seq:
            raise SequenceOverflowError(
                f"masked sequence of {len(seq)} exceeds max_seq "
                f"{self.model.config.max_seq}; truncate the function context"
            )
        return np.asarray(seq, dtype=np.int64), target_positions

    def _forward_variant(
        self,
        text: str,
        pending: dict[str, list[tuple[int, int]]],
        slot: str,
        occurrence: int,
        n: int,
    ) -> np.ndarray:
        """Log-softmax rows (n, vocab) at the target occurrence's masks."""
        if not 0 <= occurrence < len(pending[slot]):
            raise InferenceError(f"slot {slot!r} has no occurrence {occurrence}")
        seq, positions = self._variant_ids(text, pending, (slot, occurrence), n)
        logits = self.model.forward(seq).data
        rows = logits[np.asarray(positions, dtype=np.intp)]
        return log_softmax_rows(rows)

    # -- prediction ----------------------------------------------------------

    def _candidate_from_argmax(self, logp: np.ndarray, n: int) -> PredictionCandidate:
        ids = logp.argmax(axis=-1)
        probs = np.exp(logp[np.arange(n), ids])
        name = decode(self.vocab, [int(i) for i in ids]).strip()
        return PredictionCandidate(
            name=name,
            count=n,
            token_probs=tuple(float(p) for p in probs),
            mean_prob=float(probs.mean()),
        )

    def predict_fixed_count(
        self,
        text: str,
        pending: dict[str, list[tuple[int, int]]],
        slot: str,
        occurrence: int,
        n: int,
        return_logp: bool = False,
    ):
        """Single forward with n masks at the occurrence; per-position argmax."""
        if n < 1:
            raise InferenceError("mask count must be at least 1")
        logp = self._forward_variant(text, pending, slot, occurrence, n)
        candidate = self._candidate_from_argmax(logp, n)
        return (candidate, logp) if return_logp else candidate

    def best_variable(
        self,
        text: str,
        pending: dict[str, list[tuple[int, int]]],
        slot: str,
        occurrence: int = 0,
    ) -> PredictionCandidate:
        """Count-of-token heuristic: try 1..max_allowed, keep max mean prob."""
        best: PredictionCandidate | None = None
        last_error: InferenceError | None = None
        for n in range(1, self.max_allowed + 1):
            try:
                cand = self.predict_fixed_count(text, pending, slot, occurrence, n)
            except InferenceError as exc:
                last_error = exc
                continue
            if best is None or cand.mean_prob > best.mean_prob:
                best = cand
        if best is None:
            raise last_error if last_error else InferenceError("no candidate produced")
        return best

    def top_k_suggestions(
        self,
        text: str,
        pending: dict[str, list[tuple[int, int]]],
        slot: str,
        occurrence: int = 0,
        k: int = 5,
        counts_to_try: list[int] | None = None,
    ) -> list[PredictionCandidate]:
        """Ranked, name-deduplicated candidates across mask counts.

        Per count, candidates combine per-position top-k tokens scored by
        mean probability; the global list is sorted by mean probability
        (ties: smaller count, then name) and truncated to k entries.
        """
        if k < 1:
            raise InferenceError("k must be at least 1")
        counts = counts_to_try if counts_to_try is not None else range(1, self.max_allowed + 1)
        pool: list[PredictionCandidate] = []
        last_error: InferenceError | None = None
        for n in counts:
            if n < 1:
                raise InferenceError("mask count must be at least 1")
            try:
                logp = self._forward_variant(text, pending, slot, occurrence, n)
            except InferenceError as exc:
                last_error = exc
                continue
            probs = np.exp(logp)
            per_position = []
            for row in probs:
                top = min(k, row.shape[0])
                # ties resolve toward the smaller token id, like argmax
                order = np.lexsort((np.arange(row.shape[0]), -row))[:top]
                per_position.append([(float(row[i]), int(i)) for i in order])
            for total, ids, tok_probs in _kbest_combinations(per_position, k):
                name = decode(self.vocab, ids).strip()
                pool.append(
                    PredictionCandidate(
                        name=name,
                        count=n,
                        token_probs=tuple(tok_probs),
                        mean_prob=total / n,
                    )
                )
        if not pool:
            raise last_error if last_error else InferenceError("no candidate produced")
        pool.sort(key=lambda c: (-c.mean_prob, c.count, c.name))
        out = []
        seen = set()
        for cand in pool:
            if cand.name in seen:
                continue
            seen.add(cand.name)
            out.append(cand)
            if len(out) == k:
                break
        return out

    def refine_with_accepted(
        self, request: InferenceRequest
    ) -> dict[str, list[PredictionCandidate]]:
        """Suggestions for every pending slot given the accepted names.

        Accepted names are substituted into the text as real tokens. Each
        occurrence of a pending variable is predicted independently and the
        occurrence whose best candidate has the highest mean probability
        speaks for the variable.
        """
        if request.k < 1:
            raise InferenceError("k must be at least 1")
        if request.mode not in ("heuristic", "oracle"):
            raise InferenceError(f"unknown mode {request.mode!r}")
        text, pending = self._substitute_accepted(request)
        suggestions: dict[str, list[PredictionCandidate]] = {}
        for name in pending:
            if request.mode == "oracle":
                if name not in request.oracle_counts:
                    raise InferenceError(f"oracle mode needs a count for slot {name!r}")
                counts = [int(request.oracle_counts[name])]
            else:
                counts = None
            best_list: list[PredictionCandidate] | None = None
            for occ_i in range(len(pending[name])):
                ranked = self.top_k_suggestions(
                    text, pending, name, occ_i, k=request.k, counts_to_try=counts
                )
                if best_list is None or ranked[0].mean_prob > best_list[0].mean_prob:
                    best_list = ranked
            suggestions[name] = best_list or []
        return suggestions
