import json

import pytest

from sspext.cli import main
from sspext.corpus import load_corpus
from sspext.synthetic import ordered_corpus
from sspext.trainer import load_checkpoint

TINY = ["--set", "d_w=8", "--set", "d_h=6", "--set", "n_layers=1", "--set", "n_heads=2", "--set", "d_ff=16"]


def _raw_jsonl(path, n=10, seed=0):
    with open(path, "w", encoding="utf-8") as fh:
        for d in ordered_corpus(n, seed=seed, sentences=(4, 6), n_salient=(1, 2)):
            fh.write(json.dumps({"id": d.id, "sentences": [" ".join(s) for s in d.sentences],
                                 "summary": [" ".join(s) for s in d.summary]}) + "\n")
    return path


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("SSPEXT_SEED", raising=False)
    _raw_jsonl(tmp_path / "raw.jsonl")
    assert main(["ingest", "--input", "raw.jsonl", "--out", "corpus.bin", "--vocab", "vocab.txt",
                 "--min-count", "1"]) == 0
    return tmp_path


def test_ingest_writes_corpus_vocab_and_snapshot(workdir):
    docs, vocab, limits = load_corpus(workdir / "corpus.bin")
    assert len(docs) == 10 and all(d.labels is None for d in docs)
    assert (workdir / "vocab.txt").read_text().splitlines()[:3] == ["<pad>", "<unk>", "<mask_sent>"]
    snap = json.loads((workdir / "corpus.bin.config.json").read_text())
    assert snap["command"] == "ingest" and snap["vocab_hash"] == vocab.digest()


def test_label_then_pipeline(workdir, capsys):
    assert main(["label", "--corpus", "corpus.bin", "--max-select", "3"]) == 0
    docs, _, _ = load_corpus(workdir / "corpus.bin")
    assert all(d.labels is not None and sum(d.labels) <= 3 for d in docs)

    assert main(["pretrain", "--task", "switch", "--corpus", "corpus.bin", "--seed", "7",
                 "--set", "max_epochs=2", *TINY, "--out", "sw.ckpt"]) == 0
    assert load_checkpoint(workdir / "sw.ckpt").metadata["task"] == "switch"
    assert (workdir / "sw.ckpt.loss.csv").read_text().startswith("epoch,train_loss")

    assert main(["finetune", "--corpus", "corpus.bin", "--init", "sw.ckpt", "--reuse", "sentenc",
                 "--dev", "corpus.bin", "--set", "max_epochs=2", "--out", "ft.ckpt"]) == 0
    snap = json.loads((workdir / "ft.ckpt.config.json").read_text())
    assert snap["training_config"]["reuse_mode"] == "sentence_encoder_only"
    assert snap["model_config"]["d_h"] == 6  # taken from the checkpoint
    assert (workdir / "ft.ckpt.history.csv").read_text().startswith("epoch,train_loss,rouge1,rouge2,rougeL")

    capsys.readouterr()
    assert main(["evaluate", "--model", "ft.ckpt", "--corpus", "corpus.bin", "--report", "r.csv",
                 "--selections", "sel.jsonl"]) == 0
    r1, r2, rl = map(float, capsys.readouterr().out.split())
    assert 0 <= r2 <= 100
    sel = [json.loads(line) for line in (workdir / "sel.jsonl").read_text().splitlines()]
    assert len(sel) == 10 and all(len(s["indices"]) == 3 for s in sel)

    assert main(["finetune", "--corpus", "corpus.bin", "--reuse", "none", *TINY,
                 "--set", "max_epochs=2", "--out", "scratch.ckpt"]) == 0
    assert main(["curves", "--history", "ft.ckpt.history.csv", "scratch.ckpt.history.csv",
                 "--out", "curves.csv"]) == 0
    lines = (workdir / "curves.csv").read_text().splitlines()
    assert lines[0] == "method,epoch,metric,value" and len(lines) == 1 + 2 * 2 * 3
    assert lines[1].startswith("ft.ckpt,1,rouge1,")


def test_evaluate_baseline_prints_scores(workdir, capsys):
    capsys.readouterr()
    assert main(["evaluate", "--baseline", "lead3", "--corpus", "corpus.bin"]) == 0
    assert len(capsys.readouterr().out.split()) == 3
    assert (workdir / "sspext-evaluate.config.json").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["pretrain", "--task", "shuffle", "--corpus", "corpus.bin", "--out", "x"],
    ["evaluate", "--corpus", "corpus.bin"],
    ["evaluate", "--model", "a", "--baseline", "lead3", "--corpus", "corpus.bin"],
    ["finetune", "--corpus", "corpus.bin", "--reuse", "half", "--out", "x"],
    ["nosuchcommand"],
])
def test_usage_errors_exit_1(workdir, argv):
    assert main(argv) == 1


def test_runtime_errors_exit_2(workdir):
    assert main(["evaluate", "--baseline", "lead3", "--corpus", "missing.bin"]) == 2
    (workdir / "junk.ckpt").write_bytes(b"garbage")
    assert main(["evaluate", "--model", "junk.ckpt", "--corpus", "corpus.bin"]) == 2
    # fine-tuning needs oracle labels
    assert main(["finetune", "--corpus", "corpus.bin", *TINY, "--out", "x.ckpt"]) == 2
    assert main(["pretrain", "--task", "mask", "--corpus", "corpus.bin", "--set", "bogus=1",
                 "--out", "x.ckpt"]) == 2


def test_vocab_mismatch_between_checkpoint_and_corpus(workdir):
    assert main(["pretrain", "--task", "mask", "--corpus", "corpus.bin", "--set", "max_epochs=1",
                 *TINY, "--out", "m.ckpt"]) == 0
    _raw_jsonl(workdir / "other.jsonl", seed=99)
    assert main(["ingest", "--input", "other.jsonl", "--out", "other.bin", "--min-count", "2", "--label"]) == 0
    assert main(["finetune", "--corpus", "other.bin", "--init", "m.ckpt", "--out", "y.ckpt"]) == 2


def test_seed_from_environment_and_config_file(workdir, monkeypatch):
    (workdir / "run.toml").write_text("max_epochs = 1\nrng_seed = 5\n")
    base = ["pretrain", "--task", "replace", "--corpus", "corpus.bin", "--config", "run.toml", *TINY]
    assert main(base + ["--out", "a.ckpt"]) == 0
    assert json.loads((workdir / "a.ckpt.config.json").read_text())["seed"] == 5
    monkeypatch.setenv("SSPEXT_SEED", "11")
    assert main(base + ["--out", "b.ckpt"]) == 0
    assert json.loads((workdir / "b.ckpt.config.json").read_text())["seed"] == 11
    assert main(base + ["--seed", "3", "--out", "c.ckpt"]) == 0
    assert json.loads((workdir / "c.ckpt.config.json").read_text())["seed"] == 3
    monkeypatch.setenv("SSPEXT_SEED", "eleven")
    assert main(base + ["--out", "d.ckpt"]) == 1


def test_pretrain_is_byte_reproducible(workdir):
    args = ["pretrain", "--task", "mask", "--corpus", "corpus.bin", "--seed", "7",
            "--set", "max_epochs=2", *TINY]
    assert main(args + ["--out", "a.ckpt"]) == 0
    assert main(args + ["--out", "b.ckpt"]) == 0
    assert (workdir / "a.ckpt").read_bytes() == (workdir / "b.ckpt").read_bytes()
    assert main(["pretrain", "--task", "mask", "--corpus", "corpus.bin", "--seed", "8",
                 "--set", "max_epochs=2", *TINY, "--out", "c.ckpt"]) == 0
    assert (workdir / "a.ckpt").read_bytes() != (workdir / "c.ckpt").read_bytes()


def test_gradcheck_command(workdir, capsys):
    capsys.readouterr()
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1] == "PASS"
    assert {line.split()[0] for line in out[:-1]} == {"mask", "replace", "switch", "finetune"}
    assert main(["gradcheck", "--seed", "0", "--tolerance", "1e-30"]) == 2
