"""Email ham/spam/phishing detection pipeline."""

from ._ipsdm import (
    LABELS,
    Checkpoint,
    IpsdmError,
    Vocabulary,
    adamw_trace,
    balance,
    load_csv,
    prepare,
    run_cli,
    score,
    softmax,
    split_sizes,
    tokenizer_train,
    train,
    train_vocab,
)

__all__ = [
    "LABELS",
    "Checkpoint",
    "IpsdmError",
    "Vocabulary",
    "adamw_trace",
    "balance",
    "load_csv",
    "prepare",
    "run_cli",
    "score",
    "softmax",
    "split_sizes",
    "tokenizer_train",
    "train",
    "train_vocab",
]
