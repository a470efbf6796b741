"""Bidirectional transformer encoder with a tied masked-LM head.

Post-norm arrangement: each sublayer is residual-added then layer-normed;
token + learned absolute position embeddings are layer-normed once before
the first layer. The LM head ties the input embedding matrix and adds a
per-vocabulary bias, so the parameter count stays near the closed-form
estimate in :func:`param_count`.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"VNCKPT01"


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    heads: int
    hidden: int
    ffn_dim: int
    max_seq: int
    vocab_size: int
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ModelError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.max_seq < 2:
            raise ModelError("max_seq must leave room for BOS/EOS")
        for field in ("layers", "heads", "hidden", "ffn_dim", "max_seq", "vocab_size"):
            if getattr(self, field) < 1:
                raise ModelError(f"{field} must be positive")


def preset(name: str, vocab_size: int, dropout: float = 0.1) -> ModelConfig:
    """Named configurations; ffn_dim defaults to 4x hidden."""
    shapes = {
        "varbert-base": dict(layers=12, heads=12, hidden=768, max_seq=512),
        "varbert-small": dict(layers=6, heads=8, hidden=512, max_seq=1024),
        "varbert-toy": dict(layers=2, heads=2, hidden=64, max_seq=256),
    }
    if name not in shapes:
        raise ModelError(f"unknown preset {name!r} (have {sorted(shapes)})")
    s = shapes[name]
    return ModelConfig(
        layers=s["layers"],
        heads=s["heads"],
        hidden=s["hidden"],
        ffn_dim=4 * s["hidden"],
        max_seq=s["max_seq"],
        vocab_size=vocab_size,
        dropout=dropout,
    )


def param_count(config: ModelConfig) -> int:
    """Closed-form trainable parameter count.

    Embeddings (vocab and position) + per layer: attention projections
    (4H^2 + 4H), feed-forward (2*H*ffn + ffn + H), two layer norms (4H);
    plus the embedding layer norm (2H) and the tied LM head's vocab bias.
    """
    h, m = config.hidden, config.vocab_size
    emb = m * h + config.max_seq * h
    attn = 4 * h * h + 4 * h
    ffn = 2 * h * config.ffn_dim + config.ffn_dim + h
    norms = 4 * h
    return emb + config.layers * (attn + ffn + norms) + 2 * h + m


class TransformerEncoder:
    """Encoder producing a vocab distribution at every position."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        h, m = config.hidden, config.vocab_size

        def normal(name, *shape):
            arr = rng.normal(0.0, 0.02, size=shape).astype(self.dtype)
            self.params[name] = Tensor(arr, requires_grad=True)

        def const(name, shape, value):
            self.params[name] = Tensor(
                np.full(shape, value, dtype=self.dtype), requires_grad=True
            )

        normal("embed.tok", m, h)
        normal("embed.pos", config.max_seq, h)
        const("embed.ln.g", (h,), 1.0)
        const("embed.ln.b", (h,), 0.0)
        for i in range(config.layers):
            p = f"layers.{i}"
            for proj in ("q", "k", "v", "o"):
                normal(f"{p}.attn.{proj}.w", h, h)
                const(f"{p}.attn.{proj}.b", (h,), 0.0)
            const(f"{p}.ln1.g", (h,), 1.0)
            const(f"{p}.ln1.b", (h,), 0.0)
            normal(f"{p}.ffn.w1", h, config.ffn_dim)
            const(f"{p}.ffn.b1", (config.ffn_dim,), 0.0)
            normal(f"{p}.ffn.w2", config.ffn_dim, h)
            const(f"{p}.ffn.b2", (h,), 0.0)
            const(f"{p}.ln2.g", (h,), 1.0)
            const(f"{p}.ln2.b", (h,), 0.0)
        const("head.bias", (m,), 0.0)

    # -- parameter plumbing ------------------------------------------------

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def trainable(self) -> dict[str, Tensor]:
        return self.params

    def astype(self, dtype) -> "TransformerEncoder":
        """Copy of the model with parameters cast to ``dtype``."""
        clone = TransformerEncoder.__new__(TransformerEncoder)
        clone.config = self.config
        clone.dtype = np.dtype(dtype)
        clone.params = {
            k: Tensor(v.data.astype(clone.dtype), requires_grad=True)
            for k, v in self.params.items()
        }
        return clone

    # -- forward -----------------------------------------------------------

    def _linear(self, x: Tensor, prefix: str) -> Tensor:
        return ad.add(ad.matmul(x, self.params[f"{prefix}.w"]), self.params[f"{prefix}.b"])

    def encode(
        self,
        ids: np.ndarray,
        pad_mask: np.ndarray | None = None,
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Hidden states (batch, seq, hidden) under bidirectional attention.

        ``pad_mask`` is True at real positions; padded keys are excluded
        from attention. Deterministic when ``training`` is False.
        """
        cfg = self.config
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        batch, seq = ids.shape
        if seq > cfg.max_seq:
            raise ModelError(
                f"sequence length {seq} exceeds max_seq {cfg.max_seq}; truncate upstream"
            )
        if ids.max(initial=0) >= cfg.vocab_size or ids.min(initial=0) < 0:
            raise ModelError("token id out of range for vocab")
        if pad_mask is None:
            pad_mask = np.ones((batch, seq), dtype=bool)
        if training and rng is None:
            raise ModelError("training forward needs an rng for dropout")
        p = cfg.dropout
        dh = cfg.hidden // cfg.heads
        neg = np.where(pad_mask[:, None, None, :], 0.0, -1e9).astype(self.dtype)
        attn_bias = Tensor(neg)

        x = ad.add(
            ad.embedding(self.params["embed.tok"], ids),
            ad.embedding(self.params["embed.pos"], np.arange(seq)),
        )
        x = ad.layer_norm(x, self.params["embed.ln.g"], self.params["embed.ln.b"])
        x = ad.dropout(x, p, rng, training)

        for i in range(cfg.layers):
            pre = f"layers.{i}"

            def split_heads(t: Tensor) -> Tensor:
                t = ad.reshape(t, (batch, seq, cfg.heads, dh))
                return ad.transpose(t, (0, 2, 1, 3))

            q = split_heads(self._linear(x, f"{pre}.attn.q"))
            k = split_heads(self._linear(x, f"{pre}.attn.k"))
            v = split_heads(self._linear(x, f"{pre}.attn.v"))
            scores = ad.scale(
                ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh)
            )
            scores = ad.add(scores, attn_bias)
            probs = ad.dropout(ad.softmax(scores), p, rng, training)
            ctx = ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3))
            ctx = ad.reshape(ctx, (batch, seq, cfg.hidden))
            attn_out = ad.dropout(self._linear(ctx, f"{pre}.attn.o"), p, rng, training)
            x = ad.layer_norm(
                ad.add(x, attn_out), self.params[f"{pre}.ln1.g"], self.params[f"{pre}.ln1.b"]
            )

            h1 = ad.gelu(ad.add(ad.matmul(x, self.params[f"{pre}.ffn.w1"]), self.params[f"{pre}.ffn.b1"]))
            h2 = ad.add(ad.matmul(h1, self.params[f"{pre}.ffn.w2"]), self.params[f"{pre}.ffn.b2"])
            h2 = ad.dropout(h2, p, rng, training)
            x = ad.layer_norm(
                ad.add(x, h2), self.params[f"{pre}.ln2.g"], self.params[f"{pre}.ln2.b"]
            )
        return x

    def head(self, hidden: Tensor) -> Tensor:
        """Tied-embedding LM head: hidden @ tok_emb^T + bias."""
        logits = ad.matmul(hidden, ad.transpose(self.params["embed.tok"], (1, 0)))
        return ad.add(logits, self.params["head.bias"])

    def forward(
        self,
        ids: np.ndarray,
        pad_mask: np.ndarray | None = None,
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Logits (batch, seq, vocab); accepts a single sequence as 1-D ids."""
        squeeze = np.asarray(ids).ndim == 1
        out = self.head(self.encode(ids, pad_mask, training=training, rng=rng))
        if squeeze:
            out = ad.reshape(out, out.shape[1:])
        return out


# -- checkpoint container ---------------------------------------------------


def save_checkpoint(
    path,
    model: TransformerEncoder,
    vocab_hash: str,
    optimizer_state: dict | None = None,
    meta: dict | None = None,
) -> None:
    """Atomic write of a self-describing checkpoint.

    Layout: magic, u64 header length, JSON header (format version, config,
    vocab hash, named tensor index with per-tensor dtype), raw little-endian
    tensor payloads in index order.
    """
    tensors: list[tuple[str, np.ndarray]] = [(k, v.data) for k, v in model.params.items()]
    opt_meta = None
    if optimizer_state is not None:
        opt_meta = {"step": optimizer_state["step"]}
        for group in ("m", "v"):
            for name, arr in optimizer_state[group].items():
                tensors.append((f"opt.{group}.{name}", arr))

    index = []
    offset = 0
    for name, arr in tensors:
        dtype = np.dtype(arr.dtype).newbyteorder("<")
        nbytes = arr.size * dtype.itemsize
        index.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": dtype.str,
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    header = {
        "format_version": 1,
        "config": dataclasses.asdict(model.config),
        "vocab_hash": vocab_hash,
        "optimizer": opt_meta,
        "meta": meta or {},
        "tensors": index,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for _name, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    os.replace(tmp, path)


def load_checkpoint(
    path, expected_vocab_hash: str | None = None
) -> tuple[TransformerEncoder, dict | None, dict]:
    """Load a checkpoint; fails if the stored vocab hash does not match."""
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: not a checkpoint file")
        hlen = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(hlen))
        payload = f.read()
    if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
        raise ModelError(
            f"{path}: checkpoint was trained with a different vocabulary "
            f"(have {header['vocab_hash'][:12]}..., expected {expected_vocab_hash[:12]}...)"
        )
    config = ModelConfig(**header["config"])
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        arr = np.frombuffer(
            payload, dtype=dtype, count=int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1,
            offset=entry["offset"],
        )
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))

    model_arrays = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    dtype = next(iter(model_arrays.values())).dtype
    model = TransformerEncoder(config, seed=0, dtype=dtype)
    for name, tensor in model.params.items():
        if name not in model_arrays:
            raise ModelError(f"{path}: missing tensor {name!r}")
        arr = model_arrays[name]
        if tuple(arr.shape) != tensor.shape:
            raise ModelError(f"{path}: tensor {name!r} has shape {arr.shape}, want {tensor.shape}")
        tensor.data = arr.copy()

    optimizer_state = None
    if header["optimizer"] is not None:
        optimizer_state = {"step": header["optimizer"]["step"], "m": {}, "v": {}}
        for key, arr in arrays.items():
            if key.startswith("opt.m."):
                optimizer_state["m"][key[len("opt.m.") :]] = arr.copy()
            elif key.startswith("opt.v."):
                optimizer_state["v"][key[len("opt.v.") :]] = arr.copy()
    return model, optimizer_state, header
