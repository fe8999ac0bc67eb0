"""Extractive inference, the Lead3 baseline, corpus evaluation and learning-curve CSVs."""

from __future__ import annotations

import csv
from typing import Mapping, Sequence

import numpy as np
import torch

from .corpus import Document, EncodedDocument, Limits, Vocabulary, encode
from .metrics import corpus_rouge, write_rouge_csv
from .model import HierarchicalSummarizer

CURVE_METRICS = ("rouge1", "rouge2", "rougeL")


def top_k_indices(probs: Sequence[float], k: int = 3) -> list[int]:
    """Indices of the k largest probabilities (lower index wins ties), in document order."""
    order = sorted(range(len(probs)), key=lambda i: (-float(probs[i]), i))
    return sorted(order[:k])


@torch.no_grad()
def predict_probs(model: HierarchicalSummarizer, docs: Sequence[EncodedDocument],
                  batch_size: int = 16) -> list[np.ndarray]:
    was_training = model.training
    model.eval()
    out = []
    for start in range(0, len(docs), batch_size):
        batch = docs[start:start + batch_size]
        _, D, _ = model.encode_documents([d.sentence_ids for d in batch])
        probs = model.head_scores(D, "select").double().numpy()
        out.extend(probs[b, : len(d)] for b, d in enumerate(batch))
    model.train(was_training)
    return out


def select_sentences(doc: EncodedDocument, model: HierarchicalSummarizer, k: int = 3) -> list[int]:
    return top_k_indices(predict_probs(model, [doc])[0], k)


def lead3(doc) -> list[int]:
    n = len(doc.sentences) if isinstance(doc, Document) else len(doc)
    return list(range(min(3, n)))


def oracle_selection(doc: Document) -> list[int]:
    if doc.labels is None:
        raise ValueError(f"document {doc.id} has no labels")
    return [i for i, y in enumerate(doc.labels) if y]


BASELINES = {"lead3": lead3, "oracle": oracle_selection}


def model_selections(model: HierarchicalSummarizer, docs: Sequence[Document], vocab: Vocabulary,
                     limits: Limits = Limits(), k: int = 3) -> list[list[int]]:
    encoded = [encode(d, vocab, limits) for d in docs]
    return [top_k_indices(p, k) for p in predict_probs(model, encoded)]


def evaluate(method, docs: Sequence[Document], vocab: Vocabulary | None = None,
             limits: Limits = Limits(), k: int = 3, report_path=None, name: str | None = None):
    """ROUGE-1/2/L (x100) of a method on a corpus.

    ``method`` is a baseline name (``lead3``/``oracle``), a model (needs
    ``vocab``), or any callable mapping a Document to selected indices.
    """
    if isinstance(method, str):
        name = name or method
        fn = BASELINES[method]
        selections = [fn(d) for d in docs]
    elif isinstance(method, HierarchicalSummarizer):
        if vocab is None:
            raise ValueError("evaluating a model needs its vocabulary")
        selections = model_selections(method, docs, vocab, limits, k)
    else:
        selections = [method(d) for d in docs]
    scores = corpus_rouge(selections, docs)
    if report_path is not None:
        write_rouge_csv(report_path, scores, method=name or "model")
    return scores


def label_accuracy(model: HierarchicalSummarizer, docs: Sequence[EncodedDocument]) -> float:
    """Fraction of sentences where thresholding the selection probability at 0.5 matches the label."""
    right = total = 0
    for probs, doc in zip(predict_probs(model, docs), docs):
        pred = (probs > 0.5).astype(int)
        right += int((pred == np.asarray(doc.labels)).sum())
        total += len(doc)
    return right / total if total else 0.0


def write_history_csv(path, history: Sequence[Mapping], columns: Sequence[str]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for rec in history:
            writer.writerow([rec[c] for c in columns])


def read_history_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in rows]


def emit_curves(histories: Mapping[str, Sequence[Mapping]], path, metrics: Sequence[str] = CURVE_METRICS):
    """Long-format ``method,epoch,metric,value`` CSV sorted by (method, epoch, metric)."""
    if not histories:
        raise ValueError("no histories to emit")
    rows = []
    for method, history in histories.items():
        for rec in history:
            for metric in metrics:
                if metric in rec:
                    rows.append((method, int(rec["epoch"]), metric, rec[metric]))
    rows.sort(key=lambda r: r[:3])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "epoch", "metric", "value"])
        writer.writerows(rows)
    return len(rows)
