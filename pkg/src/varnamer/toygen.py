"""Synthetic desk-scale corpus: C-like functions with a closed name pool.

Every function is rendered from a template with fresh literals and a unique
uid embedded in its name, so bodies are distinguishable and memorizable.
Variables carry placeholder names (v1, v2, ... in first-occurrence order)
in the raw code plus gold names drawn from role-compatible pools. A fixed
fraction of validation/test functions are byte-identical copies of train
functions up to variable renaming, to exercise body-in-train tagging.
"""

from __future__ import annotations

import re

import numpy as np

from .corpus import DecompiledFunction, VariableSlot

POINTER_NAMES = ("buf", "ptr", "src", "dst", "out_buf")
LENGTH_NAMES = ("n", "len", "size", "limit", "max_len")
COUNTER_NAMES = ("count", "total", "sum", "acc", "hit_count", "token_count")
INDEX_NAMES = ("i", "j", "idx", "pos", "off", "byte_off")
SCALAR_NAMES = ("val", "num", "tmp", "key", "step", "width", "mask", "max_val")

GOLD_NAME_POOL = tuple(
    sorted(POINTER_NAMES + LENGTH_NAMES + COUNTER_NAMES + INDEX_NAMES + SCALAR_NAMES)
)

# Function names are <verb>_<word>_<word>; words recur across the corpus so
# the tokenizer learns them and each function stays easy to tell apart.
_UID_WORDS = (
    "packet", "record", "widget", "branch", "signal", "thread",
    "bucket", "cursor", "window", "socket", "vector", "matrix",
    "header", "symbol", "stream", "module", "object", "handle",
    "legend", "sample", "series", "target", "portal", "anchor",
)

# (template, ordered slot roles); {0}, {1}, ... are slots, {uid}/{lit*} filler
_TEMPLATES: list[tuple[str, tuple[tuple[str, ...], ...]]] = [
    (
        "long sum_{uid}(long *{0}, long {1}) {{\n"
        "  long {2} = 0;\n"
        "  for (long q = 0; q < {1}; q = q + 1) {{\n"
        "    {2} = {2} + {0}[q];\n"
        "  }}\n"
        "  return {2};\n"
        "}}",
        (POINTER_NAMES, LENGTH_NAMES, COUNTER_NAMES),
    ),
    (
        "long scale_{uid}(long {0}) {{\n"
        "  long {1} = {0} * {lit1};\n"
        "  {1} = {1} + {lit2};\n"
        "  return {1};\n"
        "}}",
        (SCALAR_NAMES, COUNTER_NAMES),
    ),
    (
        "long max_{uid}(long {0}, long {1}) {{\n"
        "  long {2} = {0};\n"
        "  if ({1} > {2}) {{\n"
        "    {2} = {1};\n"
        "  }}\n"
        "  return {2};\n"
        "}}",
        (SCALAR_NAMES, SCALAR_NAMES, COUNTER_NAMES),
    ),
    (
        "void copy_{uid}(char *{0}, char *{1}, long {2}) {{\n"
        "  for (long q = 0; q < {2}; q = q + 1) {{\n"
        "    {0}[q] = {1}[q];\n"
        "  }}\n"
        "}}",
        (POINTER_NAMES, POINTER_NAMES, LENGTH_NAMES),
    ),
    (
        "long tally_{uid}(char *{0}, long {1}) {{\n"
        "  long {2} = 0;\n"
        "  for (long q = 0; q < {1}; q = q + 1) {{\n"
        "    if ({0}[q] == {lit1}) {{\n"
        "      {2} = {2} + 1;\n"
        "    }}\n"
        "  }}\n"
        "  return {2};\n"
        "}}",
        (POINTER_NAMES, LENGTH_NAMES, COUNTER_NAMES),
    ),
    (
        "long clamp_{uid}(long {0}, long {1}) {{\n"
        "  if ({0} > {1}) {{\n"
        "    {0} = {1};\n"
        "  }}\n"
        "  if ({0} < {lit1}) {{\n"
        "    {0} = {lit1};\n"
        "  }}\n"
        "  return {0};\n"
        "}}",
        (SCALAR_NAMES, LENGTH_NAMES),
    ),
    (
        "long index_{uid}(long {0}, long {1}) {{\n"
        "  long {2} = {0} * {1} + {lit1};\n"
        "  return {2};\n"
        "}}",
        (INDEX_NAMES, LENGTH_NAMES, INDEX_NAMES),
    ),
    (
        "long mix_{uid}(long {0}) {{\n"
        "  long {1} = {0} ^ {lit1};\n"
        "  {1} = {1} & {lit2};\n"
        "  return {1};\n"
        "}}",
        (SCALAR_NAMES, SCALAR_NAMES),
    ),
    (
        "long find_{uid}(long *{0}, long {1}, long {2}) {{\n"
        "  for (long q = 0; q < {1}; q = q + 1) {{\n"
        "    if ({0}[q] == {2}) {{\n"
        "      return q;\n"
        "    }}\n"
        "  }}\n"
        "  return 0 - 1;\n"
        "}}",
        (POINTER_NAMES, LENGTH_NAMES, SCALAR_NAMES),
    ),
    (
        "long advance_{uid}(long {0}, long {1}) {{\n"
        "  long {2} = {0} + {1};\n"
        "  if ({2} > {lit1}) {{\n"
        "    {2} = {lit1};\n"
        "  }}\n"
        "  return {2};\n"
        "}}",
        (INDEX_NAMES, SCALAR_NAMES, INDEX_NAMES),
    ),
]

_HOLE_RE = re.compile(r"\{(\w+)\}")


def _render(template: str, values: dict[str, str], slot_keys: list[str]):
    """Fill template holes, tracking byte spans of each slot's fills."""
    template = template.replace("{{", "\x00").replace("}}", "\x01")
    out = []
    spans: dict[str, list[tuple[int, int]]] = {k: [] for k in slot_keys}
    offset = 0
    cursor = 0
    for m in _HOLE_RE.finditer(template):
        literal = template[cursor : m.start()].replace("\x00", "{").replace("\x01", "}")
        out.append(literal)
        offset += len(literal)
        key = m.group(1)
        fill = values[key]
        if key in spans:
            spans[key].append((offset, offset + len(fill)))
        out.append(fill)
        offset += len(fill)
        cursor = m.end()
    tail = template[cursor:].replace("\x00", "{").replace("\x01", "}")
    out.append(tail)
    return "".join(out), spans


def _make_function(
    rng: np.random.Generator,
    function_id: str,
    template_idx: int,
    uid: str,
    gold_names: list[str] | None,
    split: str,
) -> DecompiledFunction:
    template, roles = _TEMPLATES[template_idx]
    if gold_names is None:
        gold_names = []
        for pool in roles:
            choices = [p for p in pool if p not in gold_names]
            gold_names.append(choices[int(rng.integers(0, len(choices)))])
    values = {
        "uid": uid,
        "lit1": str(int(rng.integers(2, 98))),
        "lit2": str(int(rng.integers(2, 98))),
    }
    slot_keys = [str(i) for i in range(len(roles))]
    # Placeholders are numbered by first occurrence in the template.
    first_pos = {k: template.find("{" + k + "}") for k in slot_keys}
    order = sorted(slot_keys, key=lambda k: first_pos[k])
    placeholder = {k: f"v{rank + 1}" for rank, k in enumerate(order)}
    for k in slot_keys:
        values[k] = placeholder[k]
    code, spans = _render(template, values, slot_keys)
    variables = [
        VariableSlot(
            decompiler_name=placeholder[k],
            gold_name=gold_names[i],
            occurrences=spans[k],
        )
        for i, k in enumerate(slot_keys)
    ]
    return DecompiledFunction(
        function_id=function_id,
        raw_code=code,
        variables=variables,
        split=split,
    )


def generate(
    n_functions: int = 200,
    duplicate_rate: float = 0.10,
    seed: int = 7,
) -> list[DecompiledFunction]:
    """Deterministic synthetic dataset with 80/10/10 splits.

    Exactly ``duplicate_rate`` of each eval split consists of train
    functions copied verbatim except for renamed gold variables, so the
    recomputed body-in-train fraction is exact.
    """
    rng = np.random.default_rng(seed)
    n_eval = max(1, round(n_functions * 0.1))
    n_train = n_functions - 2 * n_eval
    n_dup = round(n_eval * duplicate_rate)

    uids = set()

    def fresh_uid() -> str:
        # word pairs first; fall back to triples once the pair space thins out
        for _ in range(40):
            pair = rng.choice(len(_UID_WORDS), size=2, replace=False)
            uid = f"{_UID_WORDS[int(pair[0])]}_{_UID_WORDS[int(pair[1])]}"
            if uid not in uids:
                uids.add(uid)
                return uid
        while True:
            triple = rng.choice(len(_UID_WORDS), size=3, replace=False)
            uid = "_".join(_UID_WORDS[int(i)] for i in triple)
            if uid not in uids:
                uids.add(uid)
                return uid

    functions: list[DecompiledFunction] = []
    train_specs: list[tuple[int, str]] = []
    counter = 0

    def next_id(split: str) -> str:
        nonlocal counter
        counter += 1
        return f"toy_{split}_{counter:04d}"

    for _ in range(n_train):
        template_idx = int(rng.integers(0, len(_TEMPLATES)))
        uid = fresh_uid()
        fn = _make_function(rng, next_id("train"), template_idx, uid, None, "train")
        train_specs.append((template_idx, uid))
        functions.append(fn)

    for split in ("validation", "test"):
        for k in range(n_eval):
            if k < n_dup:
                # Copy a train function's body; only gold names change.
                pick = int(rng.integers(0, len(train_specs)))
                template_idx, _uid = train_specs[pick]
                source = functions[pick]
                roles = _TEMPLATES[template_idx][1]
                new_names: list[str] = []
                for pool in roles:
                    choices = [p for p in pool if p not in new_names]
                    new_names.append(choices[int(rng.integers(0, len(choices)))])
                fn = DecompiledFunction(
                    function_id=next_id(split),
                    raw_code=source.raw_code,
                    variables=[
                        VariableSlot(v.decompiler_name, name, v.occurrences)
                        for v, name in zip(source.variables, new_names)
                    ],
                    split=split,
                )
            else:
                template_idx = int(rng.integers(0, len(_TEMPLATES)))
                fn = _make_function(
                    rng, next_id(split), template_idx, fresh_uid(), None, split
                )
            functions.append(fn)
    return functions
