"""Hierarchical extractive summarization with self-supervised document-level pre-training."""

from .corpus import Document, EncodedDocument, Limits, Vocabulary, build_vocabulary, encode, ingest_corpus, tokenize
from .metrics import RougeScore, corpus_rouge, oracle_labels, rouge_l, rouge_n
from .model import HierarchicalSummarizer, ModelConfig, init_parameters
from .selfsup import CorruptionConfig, corrupt_mask, corrupt_replace, corrupt_switch
from .trainer import Checkpoint, TrainingConfig, load_checkpoint, run_finetune, run_pretrain, save_checkpoint

__version__ = "0.1.0"
