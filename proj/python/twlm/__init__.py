"""Desk-scale domain-adaptive BERT-style pre-training and evaluation."""

from ._twlm import (
    DataError,
    Encoding,
    ModelConfig,
    NumericError,
    UsageError,
    Vocabulary,
    __version__,
    accuracy,
    clean_tweet,
    cli_main,
    compare,
    decode,
    encode,
    entity_f1,
    marginal_performance,
    merge_vocab,
    param_count,
    pearson,
    precision_recall_f1,
    run_finetune,
    run_pretrain,
    split_sentences,
    train_wordpiece,
    vocab_overlap,
)

__all__ = [
    "DataError",
    "Encoding",
    "ModelConfig",
    "NumericError",
    "UsageError",
    "Vocabulary",
    "__version__",
    "accuracy",
    "clean_tweet",
    "cli_main",
    "compare",
    "decode",
    "encode",
    "entity_f1",
    "marginal_performance",
    "merge_vocab",
    "param_count",
    "pearson",
    "precision_recall_f1",
    "run_finetune",
    "run_pretrain",
    "split_sentences",
    "train_wordpiece",
    "vocab_overlap",
]
