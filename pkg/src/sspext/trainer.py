"""Two-phase training (corruption pre-training, then supervised fine-tuning) and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .corpus import Document, EncodedDocument, Limits, Vocabulary, encode
from .evalharness import model_selections
from .metrics import corpus_rouge
from .model import HierarchicalSummarizer, ModelConfig, init_parameters, is_sentence_encoder_param
from .selfsup import (
    TASKS,
    CorruptedDocument,
    CorruptionConfig,
    CorruptionSkipped,
    ReplacePool,
    build_replace_pool,
    corrupt,
    derive_rng,
    mask_loss,
    position_loss,
)

logger = logging.getLogger(__name__)

MAGIC = b"SSPEXT01"
REUSE_MODES = ("full", "sentence_encoder_only", "none")


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainingConfig:
    phase: str = "pretrain"
    task: Optional[str] = "switch"
    learning_rate: Optional[float] = None  # None -> 1e-4 pretrain, 1e-5 finetune
    max_epochs: int = 30
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    patience: int = 3  # 0 disables early stopping
    rng_seed: int = 0
    reuse_mode: str = "full"
    select_k: int = 3

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.phase == "pretrain" and self.task not in TASKS:
            raise ValueError(f"unknown pre-training task {self.task!r}")
        if self.reuse_mode not in REUSE_MODES:
            raise ValueError(f"unknown reuse mode {self.reuse_mode!r}")
        if self.learning_rate is None:
            self.learning_rate = 1e-4 if self.phase == "pretrain" else 1e-5
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# -- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.metadata["model_config"])

    def build_model(self) -> HierarchicalSummarizer:
        model = HierarchicalSummarizer(self.model_config())
        load_tensors(model, self.tensors)
        return model


def state_tensors(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().to(torch.float32).numpy().copy() for k, v in model.state_dict().items()}


def load_tensors(model: torch.nn.Module, tensors: dict[str, np.ndarray], only: Optional[Callable] = None):
    state = model.state_dict()
    missing = [k for k in state if k not in tensors and (only is None or only(k))]
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {missing[:5]}")
    with torch.no_grad():
        for name, value in state.items():
            if only is not None and not only(name):
                continue
            src = torch.from_numpy(np.asarray(tensors[name]))
            if tuple(src.shape) != tuple(value.shape):
                raise CheckpointError(f"shape mismatch for {name}: {tuple(src.shape)} vs {tuple(value.shape)}")
            value.copy_(src.to(value.dtype))


def save_checkpoint(params, metadata: dict, path):
    """Write ``params`` (a module or name->array mapping) in the SSPEXT01 binary format.

    Layout: magic, u64 metadata length, UTF-8 JSON metadata, u32 tensor count,
    then per tensor: u32 name length, name, u32 rank, u64 dims, float32 LE data.
    """
    tensors = state_tensors(params) if isinstance(params, torch.nn.Module) else params
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (meta_len,) = struct.unpack("<Q", take(8))
    metadata = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint tensors")
    return Checkpoint(tensors, metadata)


# -- losses and optimization -------------------------------------------------

def finetune_loss(probs: torch.Tensor, labels, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean binary cross-entropy over real positions; probabilities clamped to [1e-7, 1 - 1e-7]."""
    labels = torch.as_tensor(labels, dtype=probs.dtype)
    p = probs.clamp(1e-7, 1 - 1e-7)
    bce = -(labels * torch.log(p) + (1 - labels) * torch.log(1 - p))
    if pad_mask is None:
        return bce.mean()
    real = ~pad_mask.to(torch.bool)
    return (bce * real).sum() / real.sum().clamp_min(1)


def pad_labels(label_lists: Sequence[Sequence[int]], n_max: int) -> torch.Tensor:
    out = torch.zeros(len(label_lists), n_max)
    for b, labels in enumerate(label_lists):
        out[b, : len(labels)] = torch.as_tensor(labels, dtype=torch.float32)
    return out


def pretrain_loss(model: HierarchicalSummarizer, batch: Sequence[CorruptedDocument],
                  cfg: CorruptionConfig) -> Optional[torch.Tensor]:
    """Loss of one batch of corrupted documents; None when no document carries signal."""
    if not batch:
        return None
    task = batch[0].task
    _, D, pad_mask = model.encode_documents([c.sentences for c in batch])
    if task in ("replace", "switch"):
        labels = pad_labels([c.labels for c in batch], D.shape[1]).to(D.dtype)
        return position_loss(model.head_scores(D, task), labels, pad_mask)

    if cfg.mask_pool_scope == "batch":
        pool = [s for c in batch for s in c.pool]
        if len(pool) < 2:
            return None
        S_pool = model.encode_sentences(pool)
        D_rows, gold, offset = [], [], 0
        for b, c in enumerate(batch):
            D_rows.append(D[b, c.masked_positions])
            gold.extend(offset + g for g in c.gold_pool_index)
            offset += len(c.pool)
        return mask_loss(torch.cat(D_rows), S_pool, gold, cfg.margin)

    usable = [(b, c) for b, c in enumerate(batch) if len(c.pool) >= 2]
    if not usable:
        return None
    S_all = model.encode_sentences([s for _, c in usable for s in c.pool])
    losses, offset = [], 0
    for b, c in usable:
        S_pool = S_all[offset:offset + len(c.pool)]
        offset += len(c.pool)
        losses.append(mask_loss(D[b, c.masked_positions], S_pool, c.gold_pool_index, cfg.margin))
    return torch.stack(losses).mean()


def supervised_loss(model: HierarchicalSummarizer, batch: Sequence[EncodedDocument]) -> torch.Tensor:
    _, D, pad_mask = model.encode_documents([d.sentence_ids for d in batch])
    labels = pad_labels([d.labels for d in batch], D.shape[1]).to(D.dtype)
    return finetune_loss(model.head_scores(D, "select"), labels, pad_mask)


def make_optimizer(params, cfg: TrainingConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


def train_epoch(model: HierarchicalSummarizer, optimizer: torch.optim.Optimizer, items: Sequence,
                loss_fn: Callable, cfg: TrainingConfig, epoch: int) -> float:
    """One pass over ``items`` in a seeded shuffled order; returns the mean batch loss.

    ``loss_fn(batch, epoch)`` returns a scalar tensor or None to skip the batch.
    """
    if not items:
        raise TrainingError("no training data")
    model.train()
    order = derive_rng(cfg.rng_seed, "shuffle", epoch).permutation(len(items))
    losses = []
    for index, start in enumerate(range(0, len(items), cfg.batch_size)):
        batch = [items[i] for i in order[start:start + cfg.batch_size]]
        loss = loss_fn(batch, epoch)
        if loss is None:
            continue
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at batch {index} of epoch {epoch}")
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
        optimizer.step()
        losses.append(value)
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise TrainingError(f"parameter {name} became non-finite in epoch {epoch}")
    return float(np.mean(losses)) if losses else 0.0


# -- phases ------------------------------------------------------------------

def corrupt_batch(task: str, docs: Sequence[EncodedDocument], cfg: CorruptionConfig, seed_key,
                  pool: Optional[ReplacePool] = None) -> list[CorruptedDocument]:
    out = []
    for doc in docs:
        try:
            out.append(corrupt(task, doc, cfg, derive_rng(cfg.rng_seed, seed_key, doc.id), pool))
        except CorruptionSkipped:
            continue
    return out


def _metadata(phase, task, epoch, model_cfg, vocab, extra) -> dict:
    meta = {
        "phase": phase,
        "task": task,
        "epoch": epoch,
        "model_config": model_cfg.to_dict(),
        "vocab_hash": vocab.digest(),
    }
    meta.update(extra)
    return meta


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    model: HierarchicalSummarizer


def run_pretrain(docs: Sequence[Document], vocab: Vocabulary, task: str, model_cfg: ModelConfig,
                 corr_cfg: CorruptionConfig, train_cfg: TrainingConfig,
                 dev_docs: Optional[Sequence[Document]] = None, limits: Limits = Limits(),
                 word_vectors=None, model: Optional[HierarchicalSummarizer] = None) -> PretrainResult:
    """Pre-train on one corruption task; keeps the parameters with the best dev loss.

    Without a dev set the training loss is used for selection and stopping.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    torch.manual_seed(train_cfg.rng_seed)  # dropout draws from the global generator
    train = [encode(d, vocab, limits) for d in docs]
    dev = [encode(d, vocab, limits) for d in dev_docs] if dev_docs else []
    if model is None:
        model = init_parameters(model_cfg, train_cfg.rng_seed, word_vectors, vocab)
    optimizer = make_optimizer(model.parameters(), train_cfg)
    pool = build_replace_pool(train, corr_cfg, derive_rng(corr_cfg.rng_seed, "pool")) if task == "replace" else None
    dev_batch = corrupt_batch(task, dev, corr_cfg, "dev", pool) if dev else []

    def loss_fn(batch, epoch):
        return pretrain_loss(model, corrupt_batch(task, batch, corr_cfg, epoch, pool), corr_cfg)

    history, best, best_state, best_epoch, stale = [], math.inf, None, 0, 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        train_loss = train_epoch(model, optimizer, train, loss_fn, train_cfg, epoch)
        rec = {"epoch": epoch, "train_loss": train_loss}
        if dev_batch:
            rec["dev_loss"] = dev_pretrain_loss(model, dev_batch, corr_cfg, train_cfg.batch_size)
        history.append(rec)
        score = rec.get("dev_loss", train_loss)
        logger.info("pretrain %s epoch %d: %s", task, epoch, rec)
        if score < best:
            best, best_state, best_epoch, stale = score, state_tensors(model), epoch, 0
        else:
            stale += 1
            if train_cfg.patience and stale >= train_cfg.patience:
                break
    meta = _metadata("pretrain", task, best_epoch, model_cfg, vocab, {
        "training_config": train_cfg.to_dict(),
        "corruption_config": corr_cfg.to_dict(),
        "limits": [limits.max_sentences_per_doc, limits.max_tokens_per_sentence],
    })
    return PretrainResult(Checkpoint(best_state, meta), history, model)


@torch.no_grad()
def dev_pretrain_loss(model, dev_batch, corr_cfg, batch_size) -> float:
    model.eval()
    losses = []
    for start in range(0, len(dev_batch), batch_size):
        loss = pretrain_loss(model, dev_batch[start:start + batch_size], corr_cfg)
        if loss is not None:
            losses.append(float(loss))
    model.train()
    return float(np.mean(losses)) if losses else 0.0


def build_finetune_model(model_cfg: ModelConfig, seed: int, init: Optional[Checkpoint], reuse_mode: str,
                         vocab: Vocabulary) -> HierarchicalSummarizer:
    """Fresh model with seed ``seed``, then copy tensors from ``init`` per the reuse mode.

    ``sentence_encoder_only`` keeps only embeddings and the recurrent encoder;
    the attention stack and heads keep their fresh initialization.
    """
    if reuse_mode not in REUSE_MODES:
        raise ValueError(f"unknown reuse mode {reuse_mode!r}")
    if init is not None and reuse_mode != "none":
        if init.metadata.get("vocab_hash") != vocab.digest():
            raise CheckpointError("checkpoint/vocabulary hash mismatch")
        model_cfg = init.model_config()
    model = init_parameters(model_cfg, seed)
    if init is None or reuse_mode == "none":
        return model
    only = is_sentence_encoder_param if reuse_mode == "sentence_encoder_only" else None
    load_tensors(model, init.tensors, only)
    return model


@dataclass
class FinetuneResult:
    checkpoint: Checkpoint
    history: list[dict]
    model: HierarchicalSummarizer


def run_finetune(docs: Sequence[Document], vocab: Vocabulary, model_cfg: ModelConfig, train_cfg: TrainingConfig,
                 dev_docs: Optional[Sequence[Document]] = None, init: Optional[Checkpoint] = None,
                 limits: Limits = Limits(), stop_at_rouge2: Optional[float] = None) -> FinetuneResult:
    """Fine-tune the selection head on oracle labels, tracking dev ROUGE each epoch.

    The kept checkpoint is the epoch with the best dev ROUGE-2. ``stop_at_rouge2``
    ends training as soon as dev ROUGE-2 reaches that value.
    """
    for d in docs:
        if d.labels is None:
            raise ValueError(f"document {d.id} has no labels; run oracle labeling first")
    if not dev_docs:
        dev_docs = docs
    torch.manual_seed(train_cfg.rng_seed)
    model = build_finetune_model(model_cfg, train_cfg.rng_seed, init, train_cfg.reuse_mode, vocab)
    model_cfg = model.config
    train = [encode(d, vocab, limits) for d in docs]
    optimizer = make_optimizer(model.parameters(), train_cfg)

    def loss_fn(batch, epoch):
        return supervised_loss(model, batch)

    history, best, best_state, best_epoch, stale = [], -1.0, None, 0, 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        train_loss = train_epoch(model, optimizer, train, loss_fn, train_cfg, epoch)
        r1, r2, rl = corpus_rouge(model_selections(model, dev_docs, vocab, limits, train_cfg.select_k), dev_docs)
        rec = {"epoch": epoch, "train_loss": train_loss, "rouge1": r1, "rouge2": r2, "rougeL": rl}
        history.append(rec)
        logger.info("finetune epoch %d: %s", epoch, rec)
        if r2 > best:
            best, best_state, best_epoch, stale = r2, state_tensors(model), epoch, 0
        else:
            stale += 1
        if stop_at_rouge2 is not None and r2 >= stop_at_rouge2:
            break
        if train_cfg.patience and stale >= train_cfg.patience:
            break
    meta = _metadata("finetune", None, best_epoch, model_cfg, vocab, {
        "training_config": train_cfg.to_dict(),
        "init_task": None if init is None else init.metadata.get("task"),
        "limits": [limits.max_sentences_per_doc, limits.max_tokens_per_sentence],
    })
    return FinetuneResult(Checkpoint(best_state, meta), history, model)
