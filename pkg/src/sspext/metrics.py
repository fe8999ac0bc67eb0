"""ROUGE-1/2/L and greedy oracle labeling.

No stemming and no stopword removal; scores are F-measures unless noted.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .corpus import Document


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, p: float, r: float) -> "RougeScore":
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    matches = sum((cand & ref).values())
    n_cand, n_ref = sum(cand.values()), sum(ref.values())
    p = matches / n_cand if n_cand else 0.0
    r = matches / n_ref if n_ref else 0.0
    return RougeScore.from_pr(p, r)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    lcs = lcs_length(candidate, reference)
    p = lcs / len(candidate) if candidate else 0.0
    r = lcs / len(reference) if reference else 0.0
    return RougeScore.from_pr(p, r)


def _flatten(sentences) -> list[str]:
    return [tok for sent in sentences for tok in sent]


def _objective(selected: Sequence[int], doc: Document, summary: list[str]) -> float:
    cand = _flatten(doc.sentences[i] for i in sorted(selected))
    return (rouge_n(cand, summary, 1).f1 + rouge_n(cand, summary, 2).f1) / 2


def oracle_labels(doc: Document, max_select: int = 3) -> list[int]:
    """Greedily pick sentences maximizing mean(ROUGE-1 F1, ROUGE-2 F1) against the summary.

    Stops when no remaining sentence gives a strictly positive gain or
    ``max_select`` sentences are chosen. Ties go to the lowest index.
    """
    summary = _flatten(doc.summary)
    labels = [0] * len(doc.sentences)
    if not summary:
        return labels
    selected: list[int] = []
    best = 0.0
    while len(selected) < max_select:
        pick, pick_score = None, best
        for i in range(len(doc.sentences)):
            if i in selected:
                continue
            score = _objective(selected + [i], doc, summary)
            if score > pick_score:
                pick, pick_score = i, score
        if pick is None:
            break
        selected.append(pick)
        best = pick_score
    for i in selected:
        labels[i] = 1
    return labels


def corpus_rouge(selections: Sequence[Sequence[int]], docs: Sequence[Document]) -> tuple[float, float, float]:
    """Mean per-document ROUGE-1/2/L F1 over the corpus, x100, rounded to 2 decimals."""
    if len(selections) != len(docs):
        raise ValueError("one selection per document required")
    totals = [0.0, 0.0, 0.0]
    for sel, doc in zip(selections, docs):
        for i in sel:
            if not 0 <= i < len(doc.sentences):
                raise IndexError(f"sentence index {i} out of range for {doc.id}")
        if not sel:
            continue
        cand = _flatten(doc.sentences[i] for i in sorted(sel))
        ref = _flatten(doc.summary)
        totals[0] += rouge_n(cand, ref, 1).f1
        totals[1] += rouge_n(cand, ref, 2).f1
        totals[2] += rouge_l(cand, ref).f1
    n = max(len(docs), 1)
    return tuple(round(100 * t / n, 2) for t in totals)


def write_rouge_csv(path, scores: tuple[float, float, float], method: str | None = None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"] if method is None else ["method", "metric", "value"])
        for name, value in zip(("rouge1", "rouge2", "rougeL"), scores):
            row = [name, f"{value:.2f}"]
            writer.writerow(row if method is None else [method] + row)
