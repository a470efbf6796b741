"""Byte-level BPE: vocabulary training, encoding with slot-aware boundaries.

The base alphabet is all 256 byte values, so any input encodes without UNK.
Pre-tokenization splits text into alternating runs of whitespace and
non-whitespace bytes; merges never cross run boundaries. Merge selection is
deterministic: the most frequent adjacent pair wins, ties broken by
lexicographically smallest pair.

Encoding can be forced to place token boundaries at given byte offsets. The
training/inference pipelines force boundaries at variable-slot edges so a
slot occurrence never shares a token with adjacent punctuation.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

# Special token ids are fixed ahead of the 256 byte tokens.
PAD_ID, MASK_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3, 4
SPECIAL_SENTINELS = ("<pad>", "<mask>", "<s>", "</s>", "<unk>")
NUM_SPECIALS = len(SPECIAL_SENTINELS)
BYTE_BASE = NUM_SPECIALS  # id of byte 0x00
FIRST_MERGE_ID = BYTE_BASE + 256

_WHITESPACE = frozenset(b" \t\n\r\x0b\x0c")
_SPECIAL_BYTES = tuple(s.encode("ascii") for s in SPECIAL_SENTINELS)


class VocabError(Exception):
    pass


@dataclass
class BpeVocab:
    """Learned subword vocabulary: token strings, merge rules, metadata."""

    tokens: list[bytes]  # index = token id; first NUM_SPECIALS are sentinels
    merges: list[tuple[bytes, bytes]]
    vocab_size: int
    max_merges: int
    corpus_sha256: str
    max_token_length: int | None = None
    _ranks: dict[tuple[bytes, bytes], int] = field(default_factory=dict, repr=False)
    _cache: dict[bytes, tuple[int, ...]] = field(default_factory=dict, repr=False)
    _ids: dict[bytes, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._ranks:
            self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        if not self._ids:
            # Merge results may duplicate byte strings; keep the first id.
            for i, tok in enumerate(self.tokens):
                self._ids.setdefault(tok, i)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def content_id_range(self) -> tuple[int, int]:
        """Half-open id range of non-special tokens."""
        return BYTE_BASE, len(self.tokens)

    def token_hash(self) -> str:
        h = hashlib.sha256()
        h.update(
            json.dumps(
                [self.vocab_size, self.max_merges, self.corpus_sha256, self.max_token_length]
            ).encode()
        )
        for tok in self.tokens:
            h.update(b"\x00" + tok)
        for left, right in self.merges:
            h.update(b"\x01" + left + b"\x00" + right)
        return h.hexdigest()


def _segment(data: bytes) -> list[tuple[int, int, bool]]:
    """Split into (start, end, is_word) runs; is_word = non-whitespace."""
    runs = []
    i, n = 0, len(data)
    while i < n:
        is_word = data[i] not in _WHITESPACE
        j = i + 1
        while j < n and (data[j] not in _WHITESPACE) == is_word:
            j += 1
        runs.append((i, j, is_word))
        i = j
    return runs


def _apply_merges(piece: bytes, ranks: dict[tuple[bytes, bytes], int]) -> list[bytes]:
    """Greedy BPE: repeatedly merge the present pair with the lowest rank."""
    syms = [piece[i : i + 1] for i in range(len(piece))]
    while len(syms) > 1:
        best_rank = None
        best_idx = -1
        for i in range(len(syms) - 1):
            rank = ranks.get((syms[i], syms[i + 1]))
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank, best_idx = rank, i
        if best_rank is None:
            break
        left, right = syms[best_idx], syms[best_idx + 1]
        merged = left + right
        # Merge every occurrence of this exact pair, left to right.
        out = []
        i = 0
        while i < len(syms):
            if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                out.append(merged)
                i += 2
            else:
                out.append(syms[i])
                i += 1
        syms = out
    return syms


def _encode_piece(vocab: BpeVocab, piece: bytes) -> tuple[int, ...]:
    cached = vocab._cache.get(piece)
    if cached is None:
        syms = _apply_merges(piece, vocab._ranks)
        cached = tuple(vocab._ids[s] for s in syms)
        vocab._cache[piece] = cached
    return cached


@dataclass
class Encoding:
    """Token ids plus the word/slot structure needed for masking."""

    ids: list[int]
    segments: list[tuple[int, int, bool]]  # token spans, is_word flag
    slot_token_spans: list[list[tuple[int, int]]] | None = None

    @property
    def word_boundaries(self) -> list[int]:
        """First token index of each whitespace-delimited word."""
        return [start for start, _end, is_word in self.segments if is_word]

    def __len__(self) -> int:
        return len(self.ids)


def encode_bytes(
    vocab: BpeVocab,
    data: bytes,
    forced_boundaries: tuple[int, ...] = (),
) -> tuple[list[int], list[int], list[tuple[int, int, bool]]]:
    """Encode raw bytes; returns (ids, token byte starts, token segments)."""
    forced = sorted(set(b for b in forced_boundaries if 0 < b < len(data)))
    ids: list[int] = []
    starts: list[int] = []
    segments: list[tuple[int, int, bool]] = []
    fi = 0
    for run_start, run_end, is_word in _segment(data):
        seg_tok_start = len(ids)
        cuts = [run_start]
        while fi < len(forced) and forced[fi] <= run_end:
            if run_start < forced[fi] < run_end:
                cuts.append(forced[fi])
            fi += 1
        cuts.append(run_end)
        for a, b in zip(cuts, cuts[1:]):
            piece_ids = _encode_piece(vocab, data[a:b])
            offset = a
            for tid in piece_ids:
                ids.append(tid)
                starts.append(offset)
                offset += len(vocab.tokens[tid])
        segments.append((seg_tok_start, len(ids), is_word))
    return ids, starts, segments


def encode(
    vocab: BpeVocab,
    text: str,
    slot_spans: list[list[tuple[int, int]]] | None = None,
    forced_boundaries: tuple[int, ...] = (),
) -> Encoding:
    """Encode text; decode(encode(text)) reproduces it byte-for-byte.

    When slot byte spans are given, token boundaries are forced at every
    span edge and the resulting token-index ranges are returned on the
    Encoding (one list per slot, one (start, end) range per occurrence).
    """
    data = text.encode("utf-8")
    forced = list(forced_boundaries)
    if slot_spans:
        for spans in slot_spans:
            for s, e in spans:
                forced += (s, e)
    ids, starts, segments = encode_bytes(vocab, data, tuple(forced))
    slot_token_spans = None
    if slot_spans is not None:
        start_to_tok = {b: i for i, b in enumerate(starts)}
        end_to_tok = {}
        for i, (b, tid) in enumerate(zip(starts, ids)):
            end_to_tok[b + len(vocab.tokens[tid])] = i + 1
        start_to_tok[len(data)] = len(ids)
        end_to_tok[0] = 0
        slot_token_spans = [
            [(start_to_tok[s], end_to_tok[e]) for s, e in spans] for spans in slot_spans
        ]
    return Encoding(ids=ids, segments=segments, slot_token_spans=slot_token_spans)


def decode_bytes(vocab: BpeVocab, ids) -> bytes:
    out = bytearray()
    for tid in ids:
        tid = int(tid)
        if not 0 <= tid < len(vocab.tokens):
            raise VocabError(f"token id {tid} out of range (vocab size {len(vocab.tokens)})")
        out += vocab.tokens[tid]
    return bytes(out)


def decode(vocab: BpeVocab, ids) -> str:
    """Exact inverse of encode; special ids render as their sentinel strings."""
    return decode_bytes(vocab, ids).decode("utf-8", errors="replace")


def train_bpe(
    corpus: str | bytes,
    vocab_size: int,
    max_merges: int,
    max_token_length: int | None = None,
) -> BpeVocab:
    """Learn a byte-level BPE vocabulary of exactly ``vocab_size`` tokens.

    Deterministic for a fixed corpus: pair-frequency ties are broken by the
    lexicographically smallest (left, right) byte-string pair. An optional
    ``max_token_length`` (bytes) keeps long words split into subwords, which
    small corpora otherwise merge into whole-word tokens.
    """
    data = corpus.encode("utf-8") if isinstance(corpus, str) else bytes(corpus)
    if not data:
        raise VocabError("corpus is empty")
    floor = 256 + NUM_SPECIALS
    if vocab_size < floor:
        raise VocabError(f"vocab_size must be at least {floor} (bytes + specials)")
    target_merges = vocab_size - floor
    if target_merges > max_merges:
        raise VocabError(
            f"vocab_size {vocab_size} needs {target_merges} merges "
            f"but max_merges is {max_merges}; achievable size is {floor + max_merges}"
        )

    tokens: list[bytes] = [s.encode("ascii") for s in SPECIAL_SENTINELS]
    tokens += [bytes([b]) for b in range(256)]
    merges: list[tuple[bytes, bytes]] = []

    piece_freq: Counter[bytes] = Counter()
    for start, end, _is_word in _segment(data):
        piece_freq[data[start:end]] += 1
    piece_syms: dict[bytes, list[bytes]] = {
        piece: [piece[i : i + 1] for i in range(len(piece))] for piece in piece_freq
    }

    pair_counts: Counter[tuple[bytes, bytes]] = Counter()
    pair_pieces: dict[tuple[bytes, bytes], set[bytes]] = {}
    for piece, syms in piece_syms.items():
        freq = piece_freq[piece]
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freq
            pair_pieces.setdefault(pair, set()).add(piece)

    banned = set()
    while len(merges) < target_merges:
        candidates = [
            (pair, count)
            for pair, count in pair_counts.items()
            if count > 0 and pair not in banned
        ]
        if not candidates:
            raise VocabError(
                f"corpus too small to reach vocab_size {vocab_size}; "
                f"achievable size is {len(tokens)}"
            )
        best, _count = min(candidates, key=lambda kv: (-kv[1], kv[0]))
        merged = best[0] + best[1]
        if merged in _SPECIAL_BYTES or (
            max_token_length is not None and len(merged) > max_token_length
        ):
            banned.add(best)
            continue
        merges.append(best)
        tokens.append(merged)
        for piece in sorted(pair_pieces.get(best, ())):
            syms = piece_syms[piece]
            freq = piece_freq[piece]
            for pair in zip(syms, syms[1:]):
                pair_counts[pair] -= freq
                if piece in pair_pieces.get(pair, ()):
                    pair_pieces[pair].discard(piece)
            new_syms = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    new_syms.append(merged)
                    i += 2
                else:
                    new_syms.append(syms[i])
                    i += 1
            piece_syms[piece] = new_syms
            for pair in zip(new_syms, new_syms[1:]):
                pair_counts[pair] += freq
                pair_pieces.setdefault(pair, set()).add(piece)

    return BpeVocab(
        tokens=tokens,
        merges=merges,
        vocab_size=vocab_size,
        max_merges=max_merges,
        corpus_sha256=hashlib.sha256(data).hexdigest(),
        max_token_length=max_token_length,
    )


def _escape(tok: bytes) -> str:
    out = []
    for b in tok:
        if 0x21 <= b <= 0x7E and b != 0x5C:  # printable, not backslash
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape(s: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(s):
        if s[i] == "\\":
            if s[i + 1] != "x":
                raise VocabError(f"bad escape in vocab file: {s!r}")
            out.append(int(s[i + 2 : i + 4], 16))
            i += 4
        else:
            out.append(ord(s[i]))
            i += 1
    return bytes(out)


def save_vocab(vocab: BpeVocab, tokens_path, merges_path) -> None:
    """Two text artifacts: token per line (order = id), merge pair per line
    (order = priority); each begins with a one-line JSON header."""
    header = {
        "vocab_size": vocab.vocab_size,
        "max_merges": vocab.max_merges,
        "max_token_length": vocab.max_token_length,
        "corpus_sha256": vocab.corpus_sha256,
        "special_tokens": list(SPECIAL_SENTINELS),
    }
    head = "#varnamer-bpe " + json.dumps(header, sort_keys=True)
    with open(tokens_path, "w", encoding="ascii") as f:
        f.write(head + "\n")
        for i, tok in enumerate(vocab.tokens):
            f.write((tok.decode("ascii") if i < NUM_SPECIALS else _escape(tok)) + "\n")
    with open(merges_path, "w", encoding="ascii") as f:
        f.write(head + "\n")
        for left, right in vocab.merges:
            f.write(f"{_escape(left)} {_escape(right)}\n")


def load_vocab(tokens_path, merges_path) -> BpeVocab:
    with open(tokens_path, encoding="ascii") as f:
        tok_lines = f.read().split("\n")
    with open(merges_path, encoding="ascii") as f:
        merge_lines = f.read().split("\n")
    for lines, path in ((tok_lines, tokens_path), (merge_lines, merges_path)):
        if not lines or not lines[0].startswith("#varnamer-bpe "):
            raise VocabError(f"{path}: missing vocab header")
    header = json.loads(tok_lines[0][len("#varnamer-bpe ") :])
    if list(header["special_tokens"]) != list(SPECIAL_SENTINELS):
        raise VocabError("unsupported special-token set")
    tokens = []
    for i, line in enumerate(l for l in tok_lines[1:] if l != ""):
        tokens.append(line.encode("ascii") if i < NUM_SPECIALS else _unescape(line))
    merges = []
    for line in merge_lines[1:]:
        if line == "":
            continue
        left, right = line.split(" ")
        merges.append((_unescape(left), _unescape(right)))
    vocab = BpeVocab(
        tokens=tokens,
        merges=merges,
        vocab_size=header["vocab_size"],
        max_merges=header["max_merges"],
        corpus_sha256=header["corpus_sha256"],
        max_token_length=header.get("max_token_length"),
    )
    if len(tokens) != header["vocab_size"]:
        raise VocabError(
            f"token list length {len(tokens)} does not match header "
            f"vocab_size {header['vocab_size']}"
        )
    for i, (left, right) in enumerate(merges):
        if tokens[FIRST_MERGE_ID + i] != left + right:
            raise VocabError(f"merge {i} inconsistent with token list")
    return vocab
