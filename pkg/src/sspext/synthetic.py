"""Synthetic corpora with known structure, for learnability and smoke experiments.

Every sentence carries one ``key`` token; keys increase by one along the
document starting at a random offset, so the canonical sentence order is
recoverable from content. Summaries copy either the sentences that contain a
``salient`` marker word or those whose key is a multiple of ``key_modulus``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .corpus import Document


def ordered_document(rng: np.random.Generator, doc_id: str, n_sentences: int, max_offset: int = 10,
                     n_fillers: int = 40, filler_len: tuple[int, int] = (3, 6),
                     n_salient: Optional[int] = None, key_modulus: Optional[int] = None) -> Document:
    offset = int(rng.integers(max_offset)) if max_offset else 0
    salient_at = set()
    if n_salient:
        salient_at = set(rng.choice(n_sentences, size=min(n_salient, n_sentences), replace=False).tolist())
    sentences = []
    for i in range(n_sentences):
        words = [f"w{int(j):02d}" for j in rng.integers(n_fillers, size=int(rng.integers(*filler_len, endpoint=True)))]
        if i in salient_at:
            words.insert(int(rng.integers(len(words) + 1)), "salient")
        words.insert(int(rng.integers(len(words) + 1)), f"key{offset + i:02d}")
        sentences.append(words)
    if key_modulus:
        salient_at |= {i for i in range(n_sentences) if (offset + i) % key_modulus == 0}
    summary = [list(sentences[i]) for i in sorted(salient_at)]
    return Document(doc_id, sentences, summary)


def ordered_corpus(n_docs: int, seed: int = 0, sentences: tuple[int, int] = (6, 10), max_offset: int = 10,
                   n_salient: Optional[tuple[int, int]] = None, key_modulus: Optional[int] = None,
                   prefix: str = "doc") -> list[Document]:
    """``n_docs`` documents of ``sentences[0]..sentences[1]`` sentences each.

    With ``n_salient=(lo, hi)`` every document gets lo..hi salient sentences
    and a summary made of them; ``key_modulus`` adds the sentences whose key
    is a multiple of it.
    """
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(n_docs):
        n = int(rng.integers(sentences[0], sentences[1], endpoint=True))
        k = int(rng.integers(n_salient[0], n_salient[1], endpoint=True)) if n_salient else None
        docs.append(ordered_document(rng, f"{prefix}{d:05d}", n, max_offset, n_salient=k, key_modulus=key_modulus))
    return docs
