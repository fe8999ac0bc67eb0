"""Document corruption tasks (mask, replace, switch) and their pre-training losses."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
import torch

from .corpus import MASK_ID, EncodedDocument

TASKS = ("mask", "replace", "switch")


class CorruptionSkipped(Exception):
    """Raised when a document is too short for a corruption task; callers skip it."""


@dataclass
class CorruptionConfig:
    p_mask: float = 0.25
    p_replace: float = 0.25
    p_switch: float = 0.25
    margin: float = 0.5
    replace_pool_docs: int = 10000
    # smallest number of positions corrupted per document; 0 disables the rule
    min_mask: int = 1
    min_switch: int = 2
    forced_minimum: bool = True
    # "document": mask candidates come from the same document; "batch": from the whole batch
    mask_pool_scope: str = "document"
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("p_mask", "p_replace", "p_switch"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.mask_pool_scope not in ("document", "batch"):
            raise ValueError(f"unknown mask_pool_scope {self.mask_pool_scope!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CorruptedDocument:
    base_id: str
    task: str
    sentences: list[list[int]]
    labels: list[int] = field(default_factory=list)
    masked_positions: list[int] = field(default_factory=list)
    gold_pool_index: list[int] = field(default_factory=list)
    pool: list[list[int]] = field(default_factory=list)
    pool_source_ids: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "base_id": self.base_id,
            "task": self.task,
            "labels": self.labels,
            "masked_positions": self.masked_positions,
            "pool_source_ids": self.pool_source_ids,
        })


@dataclass
class ReplacePool:
    entries: list[tuple[str, list[int]]]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("replace pool is empty")

    def __len__(self):
        return len(self.entries)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Generator seeded from a stable hash of (seed, *keys)."""
    material = json.dumps([int(seed), *[str(k) for k in keys]]).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def corrupt_mask(doc: EncodedDocument, cfg: CorruptionConfig, rng: np.random.Generator) -> CorruptedDocument:
    n = len(doc.sentence_ids)
    if n < 2:
        raise CorruptionSkipped(f"{doc.id}: mask needs >= 2 sentences")
    chosen = np.flatnonzero(rng.random(n) < cfg.p_mask)
    minimum = min(cfg.min_mask, n) if cfg.forced_minimum else 0
    if len(chosen) < minimum:
        extra = rng.choice(np.setdiff1d(np.arange(n), chosen), size=minimum - len(chosen), replace=False)
        chosen = np.sort(np.concatenate([chosen, extra]))
    positions = [int(i) for i in chosen]
    masked = set(positions)
    sentences = [list(s) for s in doc.sentence_ids]
    for i in positions:
        sentences[i] = [MASK_ID]
    return CorruptedDocument(
        base_id=doc.id,
        task="mask",
        sentences=sentences,
        labels=[1 if i in masked else 0 for i in range(n)],
        masked_positions=positions,
        gold_pool_index=list(range(len(positions))),
        pool=[list(doc.sentence_ids[i]) for i in positions],
        pool_source_ids=[doc.id] * len(positions),
    )


def build_replace_pool(corpus: Sequence[EncodedDocument], cfg: CorruptionConfig,
                       rng: np.random.Generator) -> ReplacePool:
    if len(corpus) < 2:
        raise ValueError("replace pool needs a corpus of at least 2 documents")
    k = min(cfg.replace_pool_docs, len(corpus))
    picked = sorted(rng.choice(len(corpus), size=k, replace=False))
    return ReplacePool([(corpus[i].id, list(s)) for i in picked for s in corpus[i].sentence_ids])


def corrupt_replace(doc: EncodedDocument, pool: ReplacePool, cfg: CorruptionConfig,
                    rng: np.random.Generator) -> CorruptedDocument:
    eligible = [j for j, (src, _) in enumerate(pool.entries) if src != doc.id]
    if not eligible:
        raise ValueError(f"no replace-pool entries outside document {doc.id}")
    n = len(doc.sentence_ids)
    chosen = rng.random(n) < cfg.p_replace
    sentences = [list(s) for s in doc.sentence_ids]
    labels = [0] * n
    sources = []
    for i in np.flatnonzero(chosen):
        original = doc.sentence_ids[i]
        # identical text from another document would make the label untruthful
        for _ in range(32):
            j = eligible[rng.integers(len(eligible))]
            if pool.entries[j][1] != list(original):
                break
        else:
            candidates = [j for j in eligible if pool.entries[j][1] != list(original)]
            if not candidates:
                continue
            j = candidates[rng.integers(len(candidates))]
        sentences[i] = list(pool.entries[j][1])
        labels[i] = 1
        sources.append(pool.entries[j][0])
    return CorruptedDocument(doc.id, "replace", sentences, labels, pool_source_ids=sources)


def random_derangement(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation of range(k) with no fixed points (k >= 2), by rejection."""
    if k < 2:
        raise ValueError("a derangement needs at least 2 elements")
    while True:
        perm = rng.permutation(k)
        if not np.any(perm == np.arange(k)):
            return perm


def corrupt_switch(doc: EncodedDocument, cfg: CorruptionConfig, rng: np.random.Generator,
                   max_attempts: int = 100) -> CorruptedDocument:
    n = len(doc.sentence_ids)
    if n < 2:
        raise CorruptionSkipped(f"{doc.id}: switch needs >= 2 sentences")
    original = doc.sentence_ids
    minimum = max(2, min(cfg.min_switch, n)) if cfg.forced_minimum else 0
    for _ in range(max_attempts):
        chosen = np.flatnonzero(rng.random(n) < cfg.p_switch)
        if len(chosen) < minimum:
            extra = rng.choice(np.setdiff1d(np.arange(n), chosen), size=minimum - len(chosen), replace=False)
            chosen = np.sort(np.concatenate([chosen, extra]))
        if len(chosen) < 2:
            # nothing can move; only reachable with the forced minimum disabled
            return CorruptedDocument(doc.id, "switch", [list(s) for s in original], [0] * n)
        perm = random_derangement(len(chosen), rng)
        sentences = [list(s) for s in original]
        for dst, src in zip(chosen, chosen[perm]):
            sentences[dst] = list(original[src])
        # swapping two identical sentences changes nothing visible; resample
        if all(sentences[i] != list(original[i]) for i in chosen):
            labels = [0] * n
            for i in chosen:
                labels[int(i)] = 1
            return CorruptedDocument(doc.id, "switch", sentences, labels)
    raise CorruptionSkipped(f"{doc.id}: could not find a truthful switch (repeated sentences)")


def corrupt(task: str, doc: EncodedDocument, cfg: CorruptionConfig, rng: np.random.Generator,
            pool: Optional[ReplacePool] = None) -> CorruptedDocument:
    if task == "mask":
        return corrupt_mask(doc, cfg, rng)
    if task == "replace":
        if pool is None:
            raise ValueError("replace task needs a pool")
        return corrupt_replace(doc, pool, cfg, rng)
    if task == "switch":
        return corrupt_switch(doc, cfg, rng)
    raise ValueError(f"unknown task {task!r}")


# -- losses ----------------------------------------------------------------

def cosine_scores(D: torch.Tensor, S: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Pairwise cosine similarity [m, p] between rows of D [m, d] and S [p, d]; 0 for zero vectors."""
    num = D @ S.transpose(0, 1)
    norms = torch.linalg.vector_norm(D, dim=-1)[:, None] * torch.linalg.vector_norm(S, dim=-1)[None, :]
    return torch.where(norms > eps, num / norms.clamp_min(eps), torch.zeros_like(num))


def mask_score(d_i, s_j) -> float:
    d = torch.as_tensor(d_i, dtype=torch.float64).reshape(1, -1)
    s = torch.as_tensor(s_j, dtype=torch.float64).reshape(1, -1)
    return float(cosine_scores(d, s)[0, 0])


def mask_loss(D_masked: torch.Tensor, S_pool: torch.Tensor, gold: Sequence[int], margin: float) -> torch.Tensor:
    """Margin ranking loss over candidate pools.

    For every masked position the hinge ``max(0, margin - cos(D_i, S_gold) + cos(D_i, S_k))``
    is averaged over all non-gold candidates k, then averaged over positions.
    Pools with fewer than two candidates contribute 0.
    """
    m, p = D_masked.shape[0], S_pool.shape[0]
    if m == 0 or p < 2:
        return D_masked.sum() * 0.0
    theta = cosine_scores(D_masked, S_pool)
    gold = torch.as_tensor(list(gold), dtype=torch.long)
    pos = theta.gather(1, gold[:, None])
    hinge = torch.clamp(margin - pos + theta, min=0.0)
    negatives = torch.ones_like(theta, dtype=torch.bool)
    negatives[torch.arange(m), gold] = False
    return (hinge * negatives).sum(dim=1).div(p - 1).mean()


def position_loss(outputs: torch.Tensor, labels, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean squared error between head outputs and 0/1 labels over real positions."""
    labels = torch.as_tensor(labels, dtype=outputs.dtype)
    real = torch.ones_like(outputs, dtype=torch.bool) if pad_mask is None else ~pad_mask.to(torch.bool)
    count = int(real.sum())
    if count == 0:
        raise ValueError("position loss over zero real positions")
    return ((outputs - labels) ** 2 * real).sum() / count
