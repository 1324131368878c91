"""absakit: aspect-based sentiment analysis at desk scale.

A self-contained toolkit for aspect extraction (BIO tagging with a
linear-chain CRF) and aspect sentiment classification, built on a miniature
transformer encoder with its own reverse-mode autodiff, multi-layer
aggregation heads (P-SUM / H-SUM), and an experiment harness.
"""

from .crf import CrfParams, crf_nll, log_partition, sequence_score, viterbi_decode
from .data import AeExample, AscExample, bio_decode, bio_encode, make_batches, split_validation
from .encoder import EncoderConfig, EncoderState, Vocab, build_vocab, encoder_forward, tokenize
from .harness import RunConfig, evaluate, load_checkpoint, probe_layers, save_checkpoint, train
from .heads import AbsaModel, hsum_forward, psum_forward, total_loss
from .metrics import RunReport, ae_span_f1, aggregate_seeds, asc_scores
from .tensor import Adam, Tensor

__version__ = "0.1.0"

__all__ = [
    "AbsaModel",
    "Adam",
    "AeExample",
    "AscExample",
    "CrfParams",
    "EncoderConfig",
    "EncoderState",
    "RunConfig",
    "RunReport",
    "Tensor",
    "Vocab",
    "ae_span_f1",
    "aggregate_seeds",
    "asc_scores",
    "bio_decode",
    "bio_encode",
    "build_vocab",
    "crf_nll",
    "encoder_forward",
    "evaluate",
    "hsum_forward",
    "load_checkpoint",
    "log_partition",
    "make_batches",
    "probe_layers",
    "psum_forward",
    "save_checkpoint",
    "sequence_score",
    "split_validation",
    "tokenize",
    "total_loss",
    "train",
    "viterbi_decode",
]
