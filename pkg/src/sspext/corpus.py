"""Corpus ingestion, tokenization, vocabularies and id encoding."""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK_WORD = "<unk>"
MASK_SENT = "<mask_sent>"
SPECIALS = (PAD, UNK_WORD, MASK_SENT)
PAD_ID, UNK_ID, MASK_ID = 0, 1, 2

_PUNCT = re.compile(r"""([.,!?;:'"()\[\]])""")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Limits:
    max_sentences_per_doc: int = 50
    max_tokens_per_sentence: int = 100

    def __post_init__(self):
        if self.max_sentences_per_doc < 1 or self.max_tokens_per_sentence < 1:
            raise ValueError("length limits must be >= 1")


@dataclass
class Document:
    id: str
    sentences: list[list[str]]
    summary: list[list[str]] = field(default_factory=list)
    labels: Optional[list[int]] = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.sentences):
            raise CorpusError(f"label length mismatch: {self.id}")

    def to_json(self) -> dict:
        out = {"id": self.id, "sentences": self.sentences, "summary": self.summary}
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Document":
        return cls(obj["id"], obj["sentences"], obj.get("summary", []), obj.get("labels"))


@dataclass
class EncodedDocument:
    id: str
    sentence_ids: list[list[int]]
    labels: Optional[list[int]] = None

    def __len__(self):
        return len(self.sentence_ids)


def tokenize(raw_sentence: str) -> list[str]:
    """Lowercase, split punctuation off as standalone tokens, split on whitespace."""
    return _PUNCT.sub(r" \1 ", raw_sentence.lower()).split()


def _parse_line(obj, lineno: int, limits: Optional[Limits]) -> Optional[Document]:
    try:
        doc_id = str(obj["id"])
        raw_sents = obj["sentences"]
        raw_summary = obj.get("summary", [])
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"line {lineno}: missing field {exc}") from None
    labels = obj.get("labels")
    if labels is not None and len(labels) != len(raw_sents):
        raise CorpusError(f"label length mismatch: {doc_id}")

    sentences, kept_labels = [], []
    for i, raw in enumerate(raw_sents):
        toks = tokenize(raw)
        if not toks:
            continue
        sentences.append(toks)
        if labels is not None:
            kept_labels.append(int(labels[i]))
    if not sentences:
        return None
    summary = [t for t in (tokenize(s) for s in raw_summary) if t]
    if limits is not None:
        n = limits.max_sentences_per_doc
        sentences = [s[: limits.max_tokens_per_sentence] for s in sentences[:n]]
        kept_labels = kept_labels[:n]
    return Document(doc_id, sentences, summary, kept_labels if labels is not None else None)


def ingest_corpus(path, limits: Optional[Limits] = None) -> list[Document]:
    """Read a JSONL corpus of raw articles.

    Each line holds ``id``, ``sentences`` and ``summary`` (arrays of raw
    strings) and optionally ``labels``. Whitespace-only sentences are dropped
    together with their label; documents left with no sentences are rejected
    and counted in a warning.
    """
    docs: list[Document] = []
    rejected = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            doc = _parse_line(obj, lineno, limits)
            if doc is None:
                rejected += 1
            else:
                docs.append(doc)
    if rejected:
        logger.warning("rejected %d document(s) with no non-empty sentences", rejected)
    return docs


class Vocabulary:
    """Immutable token <-> id mapping; ids 0..2 are PAD, UNK_WORD, MASK_SENT."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != SPECIALS:
            raise CorpusError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise CorpusError("duplicate token in vocabulary")
        self._id_to_token = tuple(tokens)
        self._token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self._id_to_token)

    def __contains__(self, token):
        return token in self._token_to_id

    @property
    def id_to_token(self) -> tuple[str, ...]:
        return self._id_to_token

    @property
    def token_to_id(self) -> dict[str, int]:
        return dict(self._token_to_id)

    def lookup(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._id_to_token[i] for i in ids]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self._id_to_token).encode("utf-8")).hexdigest()

    def save(self, path):
        Path(path).write_text("\n".join(self._id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))


def build_vocabulary(docs: Sequence[Document], min_count: int = 5) -> Vocabulary:
    """Ids by descending frequency over sentences and summaries, ties lexicographic."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not docs:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    for doc in docs:
        for sent in doc.sentences:
            counts.update(sent)
        for sent in doc.summary:
            counts.update(sent)
    for special in SPECIALS:
        counts.pop(special, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(list(SPECIALS) + kept)


def encode(doc: Document, vocab: Vocabulary, limits: Limits = Limits()) -> EncodedDocument:
    sents = doc.sentences[: limits.max_sentences_per_doc]
    ids = [[vocab.lookup(t) for t in s[: limits.max_tokens_per_sentence]] for s in sents]
    labels = None if doc.labels is None else list(doc.labels[: len(ids)])
    return EncodedDocument(doc.id, ids, labels)


# Corpus container written by the ``ingest`` subcommand: gzip JSONL whose first
# line is a header carrying the vocabulary and limits.

def save_corpus(path, docs: Sequence[Document], vocab: Vocabulary, limits: Limits):
    header = {
        "format": "sspext-corpus-1",
        "vocab": list(vocab.id_to_token),
        "limits": [limits.max_sentences_per_doc, limits.max_tokens_per_sentence],
    }
    # mtime=0 keeps the archive byte-stable across runs
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
        gz.write((json.dumps(header) + "\n").encode("utf-8"))
        for doc in docs:
            gz.write((json.dumps(doc.to_json()) + "\n").encode("utf-8"))


def load_corpus(path) -> tuple[list[Document], Vocabulary, Limits]:
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError:
            raise CorpusError(f"{path}: not a corpus file") from None
        if header.get("format") != "sspext-corpus-1":
            raise CorpusError(f"{path}: not a corpus file")
        docs = [Document.from_json(json.loads(line)) for line in fh if line.strip()]
    return docs, Vocabulary(header["vocab"]), Limits(*header["limits"])
