"""Variable name recovery for decompiled code.

Pipeline: ingest decompiled-function datasets, learn a byte-level BPE
vocabulary over the gold-name-substituted corpus, pre-train a small
bidirectional transformer with (whole-word) masked language modeling,
finetune it to predict masked variable-name tokens, and serve ranked name
suggestions with a count-of-token heuristic.
"""

from .bpe import BpeVocab, Encoding, decode, encode, load_vocab, save_vocab, train_bpe
from .corpus import (
    CanonicalFunction,
    DecompiledFunction,
    VariableSlot,
    canonicalize,
    parse_dataset,
    tag_body_in_train,
)
from .evalmetrics import build_report, cer, exact_match, perplexity, top_k_accuracy
from .inference import InferenceRequest, PredictionCandidate, Predictor
from .masking import ConstrainedSet, MaskingPlan, apply_plan, plan_cmlm, plan_mlm, plan_mlm_whole_word
from .model import ModelConfig, TransformerEncoder, load_checkpoint, param_count, preset, save_checkpoint
from .training import TrainConfig, Trainer, adam_update, finetune, lr_at_step, pretrain

__version__ = "0.1.0"

__all__ = [
    "BpeVocab",
    "CanonicalFunction",
    "ConstrainedSet",
    "DecompiledFunction",
    "Encoding",
    "InferenceRequest",
    "MaskingPlan",
    "ModelConfig",
    "PredictionCandidate",
    "Predictor",
    "TrainConfig",
    "Trainer",
    "TransformerEncoder",
    "VariableSlot",
    "adam_update",
    "apply_plan",
    "build_report",
    "canonicalize",
    "cer",
    "decode",
    "encode",
    "exact_match",
    "finetune",
    "load_checkpoint",
    "load_vocab",
    "lr_at_step",
    "param_count",
    "parse_dataset",
    "perplexity",
    "plan_cmlm",
    "plan_mlm",
    "plan_mlm_whole_word",
    "pretrain",
    "preset",
    "save_checkpoint",
    "save_vocab",
    "tag_body_in_train",
    "top_k_accuracy",
    "train_bpe",
]
