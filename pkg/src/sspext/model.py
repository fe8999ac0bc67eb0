"""Hierarchical extractive model: BiLSTM sentence encoder + self-attention document encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence

from .corpus import PAD_ID, Vocabulary

HEADS = ("select", "replace", "switch")


@dataclass
class ModelConfig:
    vocab_size: int
    d_w: int = 100
    d_h: int = 200
    n_layers: int = 5
    n_heads: int = 4
    d_ff: int = 1024
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_m % self.n_heads:
            raise ValueError(f"d_m={self.d_m} not divisible by n_heads={self.n_heads}")
        if min(self.vocab_size, self.d_w, self.d_h, self.n_layers, self.n_heads, self.d_ff) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def d_m(self) -> int:
        return 2 * self.d_h

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(n: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe.to(dtype)


class SelfAttention(nn.Module):
    def __init__(self, d_m: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.d_k = d_m // n_heads
        self.q = nn.Linear(d_m, d_m)
        # a key bias shifts every score of a query equally, so softmax ignores it
        self.k = nn.Linear(d_m, d_m, bias=False)
        self.v = nn.Linear(d_m, d_m)
        self.out = nn.Linear(d_m, d_m)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, pad_mask):
        # x: [B, n, d_m]; pad_mask: [B, n], True at padded positions
        b, n, _ = x.shape

        def split(t):
            return t.view(b, n, self.n_heads, self.d_k).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)
        scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        ctx = (self.drop(weights) @ v).transpose(1, 2).reshape(b, n, -1)
        return self.out(ctx), weights


class EncoderLayer(nn.Module):
    """Post-norm transformer block: attention and ReLU feed-forward, each with residual + LayerNorm."""

    def __init__(self, d_m: int, n_heads: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.attn = SelfAttention(d_m, n_heads, dropout)
        self.norm1 = nn.LayerNorm(d_m)
        self.ff1 = nn.Linear(d_m, d_ff)
        self.ff2 = nn.Linear(d_ff, d_m)
        self.norm2 = nn.LayerNorm(d_m)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, pad_mask):
        a, weights = self.attn(x, pad_mask)
        x = self.norm1(x + self.drop(a))
        x = self.norm2(x + self.drop(self.ff2(F.relu(self.ff1(x)))))
        return x, weights


class HierarchicalSummarizer(nn.Module):
    """Word embeddings -> S_i per sentence -> contextual D_i per document -> scalar heads."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d_m = config.d_m
        self.embedding = nn.Embedding(config.vocab_size, config.d_w)
        self.sentence_encoder = nn.LSTM(config.d_w, config.d_h, batch_first=True, bidirectional=True)
        self.layers = nn.ModuleList(
            EncoderLayer(d_m, config.n_heads, config.d_ff, config.dropout) for _ in range(config.n_layers)
        )
        self.select_head = nn.Linear(d_m, 1)
        self.replace_head = nn.Linear(d_m, 1)
        self.switch_head = nn.Linear(d_m, 1)

    @property
    def dtype(self):
        return self.embedding.weight.dtype

    # -- sentence level ---------------------------------------------------

    def encode_sentences(self, sentences: Sequence[Sequence[int]]) -> torch.Tensor:
        """Encode id sequences into [N, d_m]: concat of final forward and backward states."""
        if not sentences:
            return torch.zeros(0, self.config.d_m, dtype=self.dtype)
        lengths = [len(s) for s in sentences]
        if min(lengths) == 0:
            raise ValueError("cannot encode an empty sentence")
        ids = torch.full((len(sentences), max(lengths)), PAD_ID, dtype=torch.long)
        for i, s in enumerate(sentences):
            ids[i, : len(s)] = torch.as_tensor(s, dtype=torch.long)
        packed = pack_padded_sequence(
            self.embedding(ids), torch.as_tensor(lengths), batch_first=True, enforce_sorted=False
        )
        _, (h_n, _) = self.sentence_encoder(packed)
        return torch.cat([h_n[0], h_n[1]], dim=-1)

    def encode_sentence(self, token_ids: Sequence[int]) -> torch.Tensor:
        if len(token_ids) == 0:
            raise ValueError("cannot encode an empty sentence")
        return self.encode_sentences([token_ids])[0]

    # -- document level ---------------------------------------------------

    def contextualize(self, S: torch.Tensor, pad_mask: torch.Tensor, return_weights: bool = False):
        """S: [B, n, d_m] (or [n, d_m]); pad_mask True marks padding. Returns D of the same shape."""
        squeeze = S.dim() == 2
        if squeeze:
            S, pad_mask = S.unsqueeze(0), pad_mask.unsqueeze(0)
        pad_mask = pad_mask.to(torch.bool)
        if pad_mask.all(dim=1).any():
            raise ValueError("every position of a document is padded")
        x = S + sinusoidal_positions(S.shape[1], S.shape[2], S.dtype)
        all_weights = []
        for layer in self.layers:
            x, w = layer(x, pad_mask)
            all_weights.append(w)
        if squeeze:
            x = x[0]
            all_weights = [w[0] for w in all_weights]
        return (x, all_weights) if return_weights else x

    def head_scores(self, D: torch.Tensor, head: str) -> torch.Tensor:
        if head == "select":
            return torch.sigmoid(self.select_head(D).squeeze(-1))
        if head == "replace":
            return self.replace_head(D).squeeze(-1)
        if head == "switch":
            return self.switch_head(D).squeeze(-1)
        raise ValueError(f"unknown head {head!r}")

    def encode_documents(self, docs: Sequence[Sequence[Sequence[int]]]):
        """Batch of documents (each a list of id sequences) -> (S, D, pad_mask), all [B, n_max, ...]."""
        flat = [s for doc in docs for s in doc]
        S_flat = self.encode_sentences(flat)
        n_max = max(len(d) for d in docs)
        S = S_flat.new_zeros(len(docs), n_max, self.config.d_m)
        pad_mask = torch.ones(len(docs), n_max, dtype=torch.bool)
        offset = 0
        for b, doc in enumerate(docs):
            S[b, : len(doc)] = S_flat[offset:offset + len(doc)]
            pad_mask[b, : len(doc)] = False
            offset += len(doc)
        return S, self.contextualize(S, pad_mask), pad_mask


# Parameter groups used by the ablation reuse modes.
SENTENCE_ENCODER_PREFIXES = ("embedding.", "sentence_encoder.")


def is_sentence_encoder_param(name: str) -> bool:
    return name.startswith(SENTENCE_ENCODER_PREFIXES)


def read_word_vectors(path, vocab: Vocabulary, dim: int) -> dict[int, np.ndarray]:
    """Parse a ``token v1 .. vd`` text file, keeping rows whose token is in ``vocab``."""
    found = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != dim:
                raise ValueError(f"{path}:{lineno}: vector has {len(parts) - 1} dims, expected {dim}")
            if parts[0] in vocab:
                found[vocab.lookup(parts[0])] = np.asarray(parts[1:], dtype=np.float32)
    return found


@torch.no_grad()
def reset_parameters(module: nn.Module, generator: torch.Generator, only=None):
    """Embeddings U(-0.1, 0.1); weight matrices Glorot-uniform; biases 0; LayerNorm gain 1."""
    for name, p in module.named_parameters():
        if only is not None and not only(name):
            continue
        if name.startswith("embedding."):
            p.uniform_(-0.1, 0.1, generator=generator)
        elif ".norm" in name or name.startswith("norm"):
            p.fill_(1.0 if name.endswith("weight") else 0.0)
        elif p.dim() >= 2:
            fan_out, fan_in = p.shape[0], p.shape[1]
            a = math.sqrt(6.0 / (fan_in + fan_out))
            p.uniform_(-a, a, generator=generator)
        else:
            p.zero_()


def init_parameters(config: ModelConfig, rng_seed: int, word_vectors=None,
                    vocab: Optional[Vocabulary] = None) -> HierarchicalSummarizer:
    """Build a model with deterministic initial weights.

    ``word_vectors`` is an optional path to a text file of pretrained vectors;
    rows for tokens found in ``vocab`` overwrite the random embeddings.
    """
    model = HierarchicalSummarizer(config)
    gen = torch.Generator().manual_seed(int(rng_seed))
    reset_parameters(model, gen)
    if word_vectors is not None:
        if vocab is None:
            raise ValueError("a vocabulary is required to load word vectors")
        rows = read_word_vectors(word_vectors, vocab, config.d_w)
        with torch.no_grad():
            for idx, vec in rows.items():
                model.embedding.weight[idx] = torch.from_numpy(vec)
    return model
