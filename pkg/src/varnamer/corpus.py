"""Dataset ingestion: decompiled functions, gold-name substitution, splits.

The on-disk dataset is line-delimited JSON, one function per line:

    {"id": ..., "code": ..., "vars": [{"dec_name": ..., "gold_name": ...,
     "spans": [[start, end], ...]}, ...], "split": "train", "body_in_train": true}

Spans are byte offsets into the UTF-8 encoding of ``code``. Each span must
cover exactly the decompiler-generated placeholder it is declared for.
Canonicalization replaces every placeholder occurrence with its gold name and
recomputes spans, so downstream code never needs string matching to locate
variables.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace

SPLITS = ("train", "validation", "test")

# Identifiers that look like decompiler-generated placeholders (Hex-Rays
# style v1/a1). Used to flag undeclared placeholders left in raw code.
_PLACEHOLDER_RE = re.compile(rb"(?<![A-Za-z0-9_])[va]\d+(?![A-Za-z0-9_])")


class DatasetError(Exception):
    """Unrecoverable dataset-level problem (per-line issues go in ParseReport)."""


@dataclass
class VariableSlot:
    """One variable of a function: placeholder name, gold name, occurrence spans."""

    decompiler_name: str
    gold_name: str
    occurrences: list[tuple[int, int]]  # byte spans into raw_code, sorted


@dataclass
class DecompiledFunction:
    function_id: str
    raw_code: str
    variables: list[VariableSlot]
    split: str
    body_in_train: bool | None = None


@dataclass
class CanonicalSlot:
    decompiler_name: str
    gold_name: str
    spans: list[tuple[int, int]]  # byte spans into canonical text


@dataclass
class CanonicalFunction:
    """Function text with gold names substituted in place of placeholders."""

    function_id: str
    text: str
    slots: list[CanonicalSlot]
    split: str
    body_in_train: bool | None = None

    @property
    def slot_spans(self) -> list[list[tuple[int, int]]]:
        return [s.spans for s in self.slots]


@dataclass
class ParseReport:
    """Per-line errors and split counts collected while parsing a dataset."""

    errors: list[tuple[int, str]] = field(default_factory=list)
    split_counts: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


def _span_text(code: bytes, span: tuple[int, int]) -> bytes:
    return code[span[0] : span[1]]


def validate_function(fn: DecompiledFunction) -> None:
    """Check the record invariants; raises DatasetError on the first violation."""
    if fn.split not in SPLITS:
        raise DatasetError(f"{fn.function_id}: unknown split {fn.split!r}")
    code = fn.raw_code.encode("utf-8")
    seen_names = set()
    all_spans: list[tuple[int, int, str]] = []
    declared: set[tuple[int, int]] = set()
    for slot in fn.variables:
        if not slot.gold_name:
            raise DatasetError(f"{fn.function_id}: empty gold name for {slot.decompiler_name!r}")
        if slot.decompiler_name in seen_names:
            raise DatasetError(f"{fn.function_id}: duplicate slot {slot.decompiler_name!r}")
        seen_names.add(slot.decompiler_name)
        if not slot.occurrences:
            raise DatasetError(f"{fn.function_id}: slot {slot.decompiler_name!r} has no occurrences")
        if slot.occurrences != sorted(slot.occurrences):
            raise DatasetError(f"{fn.function_id}: unsorted spans for {slot.decompiler_name!r}")
        want = slot.decompiler_name.encode("utf-8")
        for span in slot.occurrences:
            if not (0 <= span[0] < span[1] <= len(code)):
                raise DatasetError(f"{fn.function_id}: span {span} out of bounds")
            got = _span_text(code, span)
            if got != want:
                raise DatasetError(
                    f"{fn.function_id}: span drift for slot {slot.decompiler_name!r} "
                    f"at offset {span[0]}: found {got!r}"
                )
            all_spans.append((span[0], span[1], slot.decompiler_name))
            declared.add(span)
        # Every identifier-boundary occurrence of the placeholder must be declared.
        pat = re.compile(rb"(?<![A-Za-z0-9_])" + re.escape(want) + rb"(?![A-Za-z0-9_])")
        found = {(m.start(), m.end()) for m in pat.finditer(code)}
        got_spans = set(slot.occurrences)
        if found != got_spans:
            missing = sorted(found - got_spans)
            raise DatasetError(
                f"{fn.function_id}: occurrences of {slot.decompiler_name!r} do not match "
                f"declared spans (undeclared at {missing})"
            )
    all_spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(all_spans, all_spans[1:]):
        if s1 < e0:
            raise DatasetError(f"{fn.function_id}: overlapping spans for {n0!r} and {n1!r}")
    for m in _PLACEHOLDER_RE.finditer(code):
        if (m.start(), m.end()) not in declared:
            raise DatasetError(
                f"{fn.function_id}: undeclared placeholder "
                f"{m.group().decode()!r} at offset {m.start()}"
            )


def _record_to_function(obj: dict) -> DecompiledFunction:
    try:
        variables = [
            VariableSlot(
                decompiler_name=str(v["dec_name"]),
                gold_name=str(v["gold_name"]),
                occurrences=[(int(s), int(e)) for s, e in v["spans"]],
            )
            for v in obj["vars"]
        ]
        fn = DecompiledFunction(
            function_id=str(obj["id"]),
            raw_code=str(obj["code"]),
            variables=variables,
            split=str(obj["split"]),
            body_in_train=obj.get("body_in_train"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"bad record structure: {exc}") from exc
    validate_function(fn)
    return fn


def parse_dataset(lines) -> tuple[list[DecompiledFunction], ParseReport]:
    """Parse a line-delimited record stream.

    Malformed lines and duplicate function ids are skipped and reported with
    their 1-based line numbers; parsing is deterministic in stream order.
    """
    report = ParseReport(split_counts={s: 0 for s in SPLITS})
    functions: list[DecompiledFunction] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            fn = _record_to_function(obj)
        except (json.JSONDecodeError, DatasetError) as exc:
            report.errors.append((lineno, str(exc)))
            continue
        if fn.function_id in seen_ids:
            report.errors.append((lineno, f"duplicate function_id {fn.function_id!r}"))
            continue
        seen_ids.add(fn.function_id)
        functions.append(fn)
        report.split_counts[fn.split] += 1
    return functions, report


def load_dataset(path) -> tuple[list[DecompiledFunction], ParseReport]:
    with open(path, encoding="utf-8") as f:
        return parse_dataset(f)


def function_to_record(fn: DecompiledFunction) -> dict:
    rec = {
        "id": fn.function_id,
        "code": fn.raw_code,
        "vars": [
            {
                "dec_name": s.decompiler_name,
                "gold_name": s.gold_name,
                "spans": [list(sp) for sp in s.occurrences],
            }
            for s in fn.variables
        ],
        "split": fn.split,
    }
    if fn.body_in_train is not None:
        rec["body_in_train"] = fn.body_in_train
    return rec


def save_dataset(functions: list[DecompiledFunction], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for fn in functions:
            f.write(json.dumps(function_to_record(fn), sort_keys=True) + "\n")


def substitute_spans(
    text: str, spans_per_group: list[list[tuple[int, int]]], replacements: list[str]
) -> tuple[str, list[list[tuple[int, int]]]]:
    """Replace byte spans with replacement strings, recomputing offsets.

    ``spans_per_group[i]`` are the spans (byte offsets into ``text``) to be
    replaced with ``replacements[i]``. Returns the new text and the new byte
    spans of each replacement, grouped the same way.
    """
    data = text.encode("utf-8")
    tagged = [
        (start, end, group)
        for group, spans in enumerate(spans_per_group)
        for start, end in spans
    ]
    tagged.sort()
    for (s0, e0, _), (s1, _e1, _) in zip(tagged, tagged[1:]):
        if s1 < e0:
            raise DatasetError(f"overlapping spans at byte {s1}")
    out = bytearray()
    new_spans: list[list[tuple[int, int]]] = [[] for _ in spans_per_group]
    cursor = 0
    for start, end, group in tagged:
        out += data[cursor:start]
        rep = replacements[group].encode("utf-8")
        new_spans[group].append((len(out), len(out) + len(rep)))
        out += rep
        cursor = end
    out += data[cursor:]
    return bytes(out).decode("utf-8"), new_spans


def canonicalize(fn: DecompiledFunction) -> CanonicalFunction:
    """Substitute every placeholder occurrence with its gold name."""
    validate_function(fn)
    text, new_spans = substitute_spans(
        fn.raw_code,
        [slot.occurrences for slot in fn.variables],
        [slot.gold_name for slot in fn.variables],
    )
    slots = [
        CanonicalSlot(s.decompiler_name, s.gold_name, spans)
        for s, spans in zip(fn.variables, new_spans)
    ]
    return CanonicalFunction(
        function_id=fn.function_id,
        text=text,
        slots=slots,
        split=fn.split,
        body_in_train=fn.body_in_train,
    )


def uncanonicalize_text(canon: CanonicalFunction) -> str:
    """Inverse substitution; reconstructs the original raw code exactly."""
    text, _ = substitute_spans(
        canon.text,
        [slot.spans for slot in canon.slots],
        [slot.decompiler_name for slot in canon.slots],
    )
    return text


def anonymized_body_key(canon: CanonicalFunction) -> str:
    """Body identity: variable-anonymized, whitespace-normalized text hash.

    Slot occurrences are replaced by VAR0, VAR1, ... in first-occurrence
    order, so the key is invariant under renaming of gold names.
    """
    order = sorted(range(len(canon.slots)), key=lambda i: canon.slots[i].spans[0])
    names = [""] * len(canon.slots)
    for rank, slot_idx in enumerate(order):
        names[slot_idx] = f"VAR{rank}"
    text, _ = substitute_spans(canon.text, [s.spans for s in canon.slots], names)
    normalized = " ".join(text.split())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def tag_body_in_train(
    train: list[CanonicalFunction], evals: list[DecompiledFunction]
) -> list[DecompiledFunction]:
    """Set body_in_train on eval records by membership of the anonymized body
    hash in the train split's hash set. Pre-existing tags take precedence."""
    train_keys = {anonymized_body_key(c) for c in train}
    tagged = []
    for fn in evals:
        if fn.body_in_train is not None:
            tagged.append(fn)
            continue
        key = anonymized_body_key(canonicalize(fn))
        tagged.append(replace(fn, body_in_train=key in train_keys))
    return tagged


def build_canonical_corpus(
    functions: list[DecompiledFunction],
) -> tuple[list[CanonicalFunction], str]:
    """Canonicalize every function and concatenate all texts (one newline
    between functions) into the tokenizer corpus; same content as the
    corpus file written by write_canonical_corpus."""
    canons = [canonicalize(fn) for fn in functions]
    corpus = "\n".join(c.text for c in canons)
    return canons, corpus


def write_canonical_corpus(canons: list[CanonicalFunction], text_path, index_path) -> None:
    """Write the concatenated corpus plus a sidecar index of function
    boundaries (byte offsets) and slot spans (relative to each function)."""
    entries = []
    offset = 0
    chunks = []
    for i, c in enumerate(canons):
        data = c.text.encode("utf-8")
        if i > 0:
            offset += 1  # separating newline
        entries.append(
            {
                "id": c.function_id,
                "start": offset,
                "end": offset + len(data),
                "split": c.split,
                "body_in_train": c.body_in_train,
                "slots": [
                    {
                        "dec_name": s.decompiler_name,
                        "gold_name": s.gold_name,
                        "spans": [list(sp) for sp in s.spans],
                    }
                    for s in c.slots
                ],
            }
        )
        chunks.append(data)
        offset += len(data)
    blob = b"\n".join(chunks)
    with open(text_path, "wb") as f:
        f.write(blob)
    index = {
        "corpus_sha256": hashlib.sha256(blob).hexdigest(),
        "functions": entries,
    }
    with open(index_path, "w", encoding="utf-8") as f:
        json.dump(index, f, sort_keys=True)


def read_canonical_corpus(text_path, index_path) -> list[CanonicalFunction]:
    with open(text_path, "rb") as f:
        blob = f.read()
    with open(index_path, encoding="utf-8") as f:
        index = json.load(f)
    canons = []
    for entry in index["functions"]:
        text = blob[entry["start"] : entry["end"]].decode("utf-8")
        slots = [
            CanonicalSlot(s["dec_name"], s["gold_name"], [tuple(sp) for sp in s["spans"]])
            for s in entry["slots"]
        ]
        canons.append(
            CanonicalFunction(
                function_id=entry["id"],
                text=text,
                slots=slots,
                split=entry["split"],
                body_in_train=entry.get("body_in_train"),
            )
        )
    return canons
