"""Pre-training (masked LM) and finetuning (constrained masked LM).

Optimization is bias-corrected Adam with decoupled weight decay (applied to
matrices only; biases and layer-norm parameters are exempt) under a linear
warmup / linear decay schedule. The effective batch is realized by gradient
accumulation over micro-batches. Every source of randomness derives from
the config seed, so identical configs produce bit-identical checkpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .bpe import BpeVocab
from .instances import TrainInstance, add_specials, pad_batch
from .masking import (
    MaskingPlan,
    apply_plan,
    instance_rng,
    plan_cmlm,
    plan_mlm,
    plan_mlm_whole_word,
)
from .model import ModelConfig, TransformerEncoder

OBJECTIVES = ("mlm", "mlm_ww", "cmlm")
PRETRAIN_OBJECTIVES = ("mlm", "mlm_ww")

# One pretrain + one finetune recipe per model size (a fixed two-run budget;
# no sweep framework). The full-scale recipes carry the published optimizer
# settings; the toy recipes are tuned for CPU desk-scale memorization, where
# tiny batches and no dropout are what converge in 40 epochs.
RECIPES: dict[str, dict] = {
    "base-pretrain": dict(objective="mlm_ww", batch_sequences=1024, micro_batch=16,
                          max_epochs=40, peak_lr=1e-4, warmup_steps=10_000, dropout=0.1),
    "base-finetune": dict(objective="cmlm", batch_sequences=1024, micro_batch=16,
                          max_epochs=40, peak_lr=1e-4, warmup_steps=10_000, dropout=0.1),
    "small-pretrain": dict(objective="mlm_ww", batch_sequences=1024, micro_batch=16,
                           max_epochs=40, peak_lr=1e-4, warmup_steps=10_000, dropout=0.1),
    "small-finetune": dict(objective="cmlm", batch_sequences=1024, micro_batch=16,
                           max_epochs=40, peak_lr=1e-4, warmup_steps=10_000, dropout=0.1),
    "toy-pretrain": dict(objective="mlm_ww", batch_sequences=2, micro_batch=2,
                         max_epochs=40, peak_lr=1.5e-3, warmup_steps=10_000,
                         dropout=0.0, seed=11),
    "toy-finetune": dict(objective="cmlm", batch_sequences=2, micro_batch=2,
                         max_epochs=40, peak_lr=2.5e-3, warmup_steps=10_000,
                         dropout=0.0, seed=12),
}


def recipe(name: str, **overrides) -> "TrainConfig":
    if name not in RECIPES:
        raise TrainingError(f"unknown recipe {name!r} (have {sorted(RECIPES)})")
    return TrainConfig(**{**RECIPES[name], **overrides})


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    objective: str
    batch_sequences: int = 1024  # effective batch, realized via accumulation
    micro_batch: int = 16
    max_epochs: int = 40
    peak_lr: float = 1e-4
    warmup_steps: int = 10_000
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-6
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise TrainingError(f"unknown objective {self.objective!r}")
        if self.peak_lr <= 0:
            raise TrainingError("peak_lr must be positive")
        if self.max_epochs > 40:
            raise TrainingError("max_epochs is capped at 40")


def effective_warmup(config: TrainConfig, total_steps: int) -> int:
    """Warmup shrinks to 6% of the run when the configured warmup would not
    fit (short runs keep the schedule shape)."""
    return max(1, min(config.warmup_steps, int(0.06 * total_steps)))


def lr_at_step(step: int, config: TrainConfig, total_steps: int) -> float:
    """Linear ramp 0 -> peak over warmup, then linear decay peak -> 0."""
    if not 0 <= step <= total_steps:
        raise TrainingError(f"step {step} outside [0, {total_steps}]")
    warmup = effective_warmup(config, total_steps)
    if warmup >= total_steps:
        raise TrainingError("warmup_steps must be smaller than total planned steps")
    if step <= warmup:
        return config.peak_lr * step / warmup
    return config.peak_lr * (total_steps - step) / (total_steps - warmup)


def adam_update(
    theta: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    config: TrainConfig,
    decay_exempt: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update with decoupled weight decay.

    ``step`` is 1-based. Pure: returns (theta', m', v') without mutating
    the inputs. Raises on non-finite gradients.
    """
    if not np.isfinite(grad).all():
        raise TrainingError(f"non-finite gradient (step {step})")
    b1, b2 = config.beta1, config.beta2
    m_new = b1 * m + (1.0 - b1) * grad
    v_new = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m_new / (1.0 - b1**step)
    v_hat = v_new / (1.0 - b2**step)
    update = lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    theta_new = theta - update
    if not decay_exempt and config.weight_decay > 0.0:
        theta_new = theta_new - lr * config.weight_decay * theta
    return theta_new, m_new, v_new


class AdamOptimizer:
    """Holds first/second moments per named parameter plus the step count.

    Weight decay is applied to parameters with 2 or more dims (embeddings
    and projection matrices); biases and layer-norm vectors are exempt.
    """

    def __init__(self, params: dict[str, Tensor], config: TrainConfig):
        self.config = config
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        self.step_count += 1
        for name, p in params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            try:
                p.data, self.m[name], self.v[name] = adam_update(
                    p.data,
                    grad,
                    self.m[name],
                    self.v[name],
                    self.step_count,
                    lr,
                    self.config,
                    decay_exempt=p.data.ndim < 2,
                )
            except TrainingError as exc:
                raise TrainingError(f"{exc} in parameter {name!r}") from exc

    def state(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.step_count = state["step"]
        for k in self.m:
            self.m[k] = state["m"][k].copy()
            self.v[k] = state["v"][k].copy()


@dataclass
class TrainResult:
    model: TransformerEncoder
    optimizer: AdamOptimizer
    log: list[dict] = field(default_factory=list)
    val_perplexity: list[float] = field(default_factory=list)
    diverged: bool = False
    epochs_run: int = 0


def _plan_for(
    instance: TrainInstance, objective: str, seed: int, epoch: int, index: int, vocab: BpeVocab
) -> MaskingPlan:
    if objective == "cmlm":
        return plan_cmlm(instance.encoding, instance.constrained)
    rng = instance_rng(seed, epoch, index)
    if objective == "mlm":
        return plan_mlm(instance.encoding, vocab, rng, epoch_seed=epoch)
    return plan_mlm_whole_word(instance.encoding, vocab, rng, epoch_seed=epoch)


def _batch_loss(
    model: TransformerEncoder,
    batch: list[tuple[list[int], dict[int, int]]],
    *,
    training: bool,
    rng: np.random.Generator | None,
) -> tuple[Tensor, int]:
    """Masked cross-entropy over one padded micro-batch.

    Gathers hidden states at target positions before the vocabulary
    projection so the LM head only touches rows that enter the loss.
    """
    ids, mask = pad_batch([seq for seq, _ in batch])
    width = ids.shape[1]
    flat_positions = []
    target_ids = []
    for row, (_seq, targets) in enumerate(batch):
        for pos, tid in sorted(targets.items()):
            flat_positions.append(row * width + pos)
            target_ids.append(tid)
    hidden = model.encode(ids, mask, training=training, rng=rng)
    flat = ad.reshape(hidden, (ids.shape[0] * width, model.config.hidden))
    rows = ad.embedding(flat, np.asarray(flat_positions, dtype=np.intp))
    logits = model.head(rows)
    loss = ad.cross_entropy_masked(logits, list(enumerate(target_ids)))
    return loss, len(target_ids)


class Trainer:
    """Single-process training loop owning the model and optimizer."""

    def __init__(
        self,
        model: TransformerEncoder,
        vocab: BpeVocab,
        instances: list[TrainInstance],
        config: TrainConfig,
        val_instances: list[TrainInstance] = (),
        log_path=None,
        start_epoch: int = 0,
    ):
        if config.objective == "cmlm":
            instances = [i for i in instances if i.constrained.spans]
        if not instances:
            raise TrainingError("no trainable instances (empty dataset?)")
        self.model = model
        self.vocab = vocab
        self.instances = instances
        self.config = config
        self.val_instances = list(val_instances)
        self.log_path = log_path
        self.start_epoch = start_epoch
        self.steps_per_epoch = math.ceil(len(instances) / config.batch_sequences)
        self.total_steps = max(1, config.max_epochs * self.steps_per_epoch)

    def _micro_batches(self, epoch: int):
        """Yield lists of (ids-with-specials, shifted targets) per step."""
        cfg = self.config
        order = np.arange(len(self.instances))
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(epoch, 0xF00D))
        )
        shuffle_rng.shuffle(order)
        step_items: list[list[tuple[list[int], dict[int, int]]]] = []
        current: list[tuple[list[int], dict[int, int]]] = []
        taken = 0
        for rank, idx in enumerate(order):
            inst = self.instances[int(idx)]
            plan = _plan_for(inst, cfg.objective, cfg.seed, epoch, int(idx), self.vocab)
            if plan.empty:
                continue
            masked_ids, targets = apply_plan(inst.encoding, plan)
            seq, shifted = add_specials(masked_ids, targets, self.model.config.max_seq)
            if not shifted:
                continue
            current.append((seq, shifted))
            taken += 1
            if len(current) == cfg.micro_batch:
                step_items.append(current)
                current = []
            if taken % cfg.batch_sequences == 0:
                if current:
                    step_items.append(current)
                    current = []
                yield step_items
                step_items = []
        if current:
            step_items.append(current)
        if step_items:
            yield step_items

    def run(self, optimizer: AdamOptimizer | None = None, checkpoint_fn=None) -> TrainResult:
        cfg = self.config
        if optimizer is None:
            optimizer = AdamOptimizer(self.model.params, cfg)
        result = TrainResult(model=self.model, optimizer=optimizer)
        if cfg.max_epochs == 0:
            return result
        lr_at_step(0, cfg, self.total_steps)  # validates warmup < total
        log_file = open(self.log_path, "a", encoding="utf-8") if self.log_path else None
        snapshot = {k: p.data.copy() for k, p in self.model.params.items()}
        opt_snapshot = {
            "step": optimizer.step_count,
            "m": {k: a.copy() for k, a in optimizer.m.items()},
            "v": {k: a.copy() for k, a in optimizer.v.items()},
        }
        global_step = optimizer.step_count
        try:
            for epoch in range(self.start_epoch, cfg.max_epochs):
                drop_rng = np.random.default_rng(
                    np.random.SeedSequence(cfg.seed, spawn_key=(epoch, 0xD807))
                )
                for step_micro in self._micro_batches(epoch):
                    global_step = min(global_step + 1, self.total_steps)
                    lr = lr_at_step(global_step, cfg, self.total_steps)
                    total_targets = sum(len(t) for b in step_micro for _, t in b)
                    self.model.zero_grads()
                    step_loss = 0.0
                    try:
                        for micro in step_micro:
                            with Tape() as tape:
                                loss, n = _batch_loss(
                                    self.model, micro, training=True, rng=drop_rng
                                )
                                scaled = ad.scale(loss, n / total_targets)
                            tape.backward(scaled)
                            step_loss += float(loss.data) * n / total_targets
                        if not math.isfinite(step_loss):
                            raise TrainingError(f"loss diverged at step {global_step}")
                        result.optimizer.step(self.model.params, lr)
                    except TrainingError:
                        for k, p in self.model.params.items():
                            p.data = snapshot[k].copy()
                        result.optimizer.load_state(opt_snapshot)
                        result.diverged = True
                        return result
                    entry = {
                        "step": global_step,
                        "epoch": epoch,
                        "lr": lr,
                        "loss": step_loss,
                        "masked_tokens": total_targets,
                    }
                    result.log.append(entry)
                    if log_file:
                        log_file.write(json.dumps(entry, sort_keys=True) + "\n")
                        log_file.flush()
                if self.val_instances:
                    result.val_perplexity.append(
                        masked_perplexity(
                            self.model, self.vocab, self.val_instances, cfg.objective, cfg.seed
                        )
                    )
                result.epochs_run = epoch + 1
                snapshot = {k: p.data.copy() for k, p in self.model.params.items()}
                opt_snapshot = {
                    "step": result.optimizer.step_count,
                    "m": {k: a.copy() for k, a in result.optimizer.m.items()},
                    "v": {k: a.copy() for k, a in result.optimizer.v.items()},
                }
                if checkpoint_fn is not None:
                    checkpoint_fn(self.model, result, epoch)
        finally:
            if log_file:
                log_file.close()
        return result


def masked_perplexity(
    model: TransformerEncoder,
    vocab: BpeVocab,
    instances: list[TrainInstance],
    objective: str,
    seed: int,
) -> float:
    """exp(mean NLL) over masked targets with a fixed evaluation masking."""
    total_nll = 0.0
    count = 0
    for idx, inst in enumerate(instances):
        plan = _plan_for(inst, objective, seed, 0, idx, vocab)
        if plan.empty:
            continue
        masked_ids, targets = apply_plan(inst.encoding, plan)
        seq, shifted = add_specials(masked_ids, targets, model.config.max_seq)
        if not shifted:
            continue
        logits = model.forward(np.asarray(seq, dtype=np.int64)).data
        logp = ad.log_softmax_rows(logits)
        for pos, tid in shifted.items():
            total_nll += -float(logp[pos, tid])
            count += 1
    if count == 0:
        raise TrainingError("no masked targets in perplexity evaluation")
    return math.exp(total_nll / count)


def pretrain(
    train_instances: list[TrainInstance],
    vocab: BpeVocab,
    model_config: ModelConfig,
    config: TrainConfig,
    val_instances: list[TrainInstance] = (),
    log_path=None,
    dtype=np.float32,
) -> TrainResult:
    """Train a fresh model with a masked-LM objective (mlm or mlm_ww)."""
    if config.objective not in PRETRAIN_OBJECTIVES:
        raise TrainingError(f"pretraining needs a masked-LM objective, got {config.objective!r}")
    model = TransformerEncoder(model_config, seed=config.seed, dtype=dtype)
    trainer = Trainer(model, vocab, train_instances, config, val_instances, log_path)
    return trainer.run()


def finetune(
    model: TransformerEncoder,
    vocab: BpeVocab,
    train_instances: list[TrainInstance],
    config: TrainConfig,
    val_instances: list[TrainInstance] = (),
    log_path=None,
    expected_vocab_hash: str | None = None,
) -> TrainResult:
    """Continue from a pretrained model with the constrained objective.

    Instances without variables are skipped; refuses to start when the
    checkpoint's vocabulary fingerprint does not match the live vocab.
    """
    if config.objective != "cmlm":
        raise TrainingError("finetune uses the cmlm objective")
    if expected_vocab_hash is not None and expected_vocab_hash != vocab.token_hash():
        raise TrainingError("vocabulary mismatch: checkpoint vocab_hash differs from vocab")
    trainer = Trainer(model, vocab, train_instances, config, val_instances, log_path)
    return trainer.run()
