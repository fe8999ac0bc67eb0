import csv

import numpy as np
import pytest

from sspext.corpus import Document, EncodedDocument, build_vocabulary
from sspext.evalharness import (
    emit_curves,
    evaluate,
    label_accuracy,
    lead3,
    oracle_selection,
    read_history_csv,
    top_k_indices,
    write_history_csv,
)
from sspext.metrics import oracle_labels
from sspext.model import ModelConfig, init_parameters
from sspext.synthetic import ordered_corpus


@pytest.mark.parametrize("probs, k, expected", [
    ((0.1, 0.9, 0.3, 0.8), 2, [1, 3]),
    ((0.5, 0.5, 0.5, 0.5, 0.5), 3, [0, 1, 2]),
    ((0.2, 0.7), 3, [0, 1]),
    ((0.9, 0.1, 0.95), 1, [2]),
    ((), 3, []),
])
def test_top_k_indices(probs, k, expected):
    assert top_k_indices(probs, k) == expected


def test_lead3():
    assert lead3(Document("a", [["x"]] * 5)) == [0, 1, 2]
    assert lead3(Document("b", [["x"], ["y"]])) == [0, 1]
    assert lead3(EncodedDocument("c", [[3], [4], [5], [6]])) == [0, 1, 2]


def test_lead3_scores_perfectly_when_summary_is_lead():
    docs = [Document(f"d{i}", [["a", f"w{i}"], ["b", "c"], ["d", "e"], ["tail"]],
                     [["a", f"w{i}"], ["b", "c"], ["d", "e"]]) for i in range(3)]
    assert evaluate("lead3", docs) == (100.0, 100.0, 100.0)


def test_empty_summaries_score_zero():
    docs = [Document("a", [["x", "y"], ["z"]], [])]
    assert evaluate("lead3", docs) == (0.0, 0.0, 0.0)


def test_oracle_at_least_lead3():
    docs = ordered_corpus(20, seed=8, key_modulus=3)
    docs = [Document(d.id, d.sentences, d.summary, oracle_labels(d, 3)) for d in docs]
    o, l3 = evaluate("oracle", docs), evaluate("lead3", docs)
    assert o[1] >= l3[1]
    assert oracle_selection(docs[0]) == [i for i, y in enumerate(docs[0].labels) if y]
    with pytest.raises(ValueError):
        oracle_selection(Document("u", [["x"]]))


def test_evaluate_model_is_deterministic_and_writes_report(tmp_path):
    docs = ordered_corpus(6, seed=2)
    vocab = build_vocabulary(docs, 1)
    model = init_parameters(ModelConfig(vocab_size=len(vocab), d_w=8, d_h=6, n_layers=1, n_heads=2, d_ff=8), 0)
    a = evaluate(model, docs, vocab, report_path=tmp_path / "r.csv", name="scratch")
    assert evaluate(model, docs, vocab) == a
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["method", "metric", "value"]
    assert [r[:2] for r in rows[1:]] == [["scratch", "rouge1"], ["scratch", "rouge2"], ["scratch", "rougeL"]]
    with pytest.raises(ValueError):
        evaluate(model, docs)


def test_evaluate_accepts_callables():
    docs = [Document("a", [["x"], ["y"]], [["y"]])]
    assert evaluate(lambda d: [1], docs) == (100.0, 0.0, 100.0)


def test_label_accuracy_with_zeroed_head():
    import torch

    docs = [EncodedDocument("a", [[3], [4]], [1, 0])]
    model = init_parameters(ModelConfig(vocab_size=6, d_w=4, d_h=2, n_layers=1, n_heads=2, d_ff=4), 0)
    with torch.no_grad():
        model.select_head.weight.zero_()
        model.select_head.bias.fill_(-3.0)
    assert label_accuracy(model, docs) == 0.5


def _history(offset):
    return [{"epoch": e, "train_loss": 1.0 / e, "rouge1": offset + e, "rouge2": offset + e / 2,
             "rougeL": offset + e / 3} for e in (1, 2, 3)]


def test_emit_curves(tmp_path):
    histories = {"switch": _history(10.0), "scratch": _history(0.0)}
    n = emit_curves(histories, tmp_path / "curves.csv")
    rows = list(csv.reader(open(tmp_path / "curves.csv")))
    assert n == 18 and len(rows) == 19
    assert rows[0] == ["method", "epoch", "metric", "value"]
    keys = [(r[0], int(r[1]), r[2]) for r in rows[1:]]
    assert keys == sorted(keys)
    assert rows[1] == ["scratch", "1", "rouge1", "1.0"]
    lookup = {(r[0], int(r[1]), r[2]): float(r[3]) for r in rows[1:]}
    assert lookup[("switch", 2, "rouge2")] == 11.0
    with pytest.raises(ValueError):
        emit_curves({}, tmp_path / "x.csv")


def test_history_csv_round_trip(tmp_path):
    hist = _history(5.0)
    cols = ["epoch", "train_loss", "rouge1", "rouge2", "rougeL"]
    write_history_csv(tmp_path / "h.csv", hist, cols)
    back = read_history_csv(tmp_path / "h.csv")
    assert back == hist
    assert isinstance(back[0]["epoch"], int)
    assert np.isclose(back[2]["train_loss"], 1 / 3)
