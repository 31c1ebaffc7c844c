"""Joint multi-intent detection and slot filling with two-stage mutual
guidance over heterogeneous semantics-label graphs, built on a small
tape-based autodiff core."""

from .config import TrainConfig
from .corpus import (
    SynthSpec,
    Utterance,
    Vocabulary,
    build_vocab,
    encode,
    generate_synthetic,
    parse_corpus,
    serialize_corpus,
)
from .metrics import EvalReport, build_report
from .model import JointModel, PredictionRecord
from .training import evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "Utterance",
    "Vocabulary",
    "SynthSpec",
    "parse_corpus",
    "serialize_corpus",
    "build_vocab",
    "encode",
    "generate_synthetic",
    "JointModel",
    "PredictionRecord",
    "EvalReport",
    "build_report",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "__version__",
]
