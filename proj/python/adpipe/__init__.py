"""Contextual audio-description pipeline: python surface of the C++ core."""

from adpipe._core import (
    Vocabulary,
    cider,
    detokenize,
    em_iterate,
    gen_synthetic,
    grad_suite,
    read_container,
    recall_at_k_within_n,
    reconstruct,
    redundancy_contrast,
    rouge_l,
    scaled_attention,
    softmax_rows,
    tokenize,
    write_container,
)

__all__ = [
    "Vocabulary",
    "cider",
    "detokenize",
    "em_iterate",
    "gen_synthetic",
    "grad_suite",
    "read_container",
    "recall_at_k_within_n",
    "reconstruct",
    "redundancy_contrast",
    "rouge_l",
    "scaled_attention",
    "softmax_rows",
    "tokenize",
    "write_container",
]

__version__ = "0.1.0"
