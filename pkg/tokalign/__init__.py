# flake8: noqa
from tokalign._version import __version__, __version_info__
from tokalign.align_exception import (
    AlignException,
    BatchSizeError,
    CheckpointError,
    ConfigurationError,
    ConsistencyError,
    CorpusParseError,
    CorpusValidationError,
    DimensionError,
    EmptySequenceError,
    InputError,
    NumericError,
    SelfCheckFailure,
    VocabularyError,
)
from tokalign.data import (
    CorpusRecord,
    SyntheticSpec,
    Token,
    Vocabulary,
    generate_synthetic,
    iter_batches,
    load_corpus,
    save_corpus,
    split_corpus,
)
from tokalign.toi import (
    IdfTable,
    ToiWeights,
    batch_weights,
    compute_idf,
    corpus_statistics,
    select_toi,
    sentence_weights,
)
from tokalign.encoders import (
    AlignmentModel,
    EncodedBatch,
    EncoderConfig,
    encode_text,
    encode_video,
    fuse,
)
from tokalign.losses import (
    LossBreakdown,
    LossConfig,
    ScoringHead,
    fusion_loss,
    sentence_loss,
    token_loss,
    token_similarity,
    total_objective,
)
from tokalign.cascade import (
    CascadeSelection,
    CombinedScoreMatrix,
    FusedPairs,
    cascade_select,
    combined_scores,
    full_select,
    random_select,
)
from tokalign.evaluation import (
    InferenceWeights,
    RetrievalMetrics,
    StageMask,
    evaluate,
    rank_metrics,
    score_matrix,
    score_pair,
    sweep_token_weight,
)
from tokalign.config import RunConfig
from tokalign.checkpoint import load_checkpoint, save_checkpoint
from tokalign.optim import Adam, LinearWarmupDecay
from tokalign.train import ABLATIONS, Trainer, run_ablations, run_train
from tokalign.selfcheck import run_selfcheck

from tokalign import util

__author__ = "tokalign developers"
__license__ = "GNU Lesser General Public License (LGPL)"

__all__ = [
    "ABLATIONS",
    "Adam",
    "AlignException",
    "AlignmentModel",
    "BatchSizeError",
    "CascadeSelection",
    "CheckpointError",
    "CombinedScoreMatrix",
    "ConfigurationError",
    "ConsistencyError",
    "CorpusParseError",
    "CorpusRecord",
    "CorpusValidationError",
    "DimensionError",
    "EmptySequenceError",
    "EncodedBatch",
    "EncoderConfig",
    "FusedPairs",
    "IdfTable",
    "InferenceWeights",
    "InputError",
    "LinearWarmupDecay",
    "LossBreakdown",
    "LossConfig",
    "NumericError",
    "RetrievalMetrics",
    "RunConfig",
    "ScoringHead",
    "SelfCheckFailure",
    "StageMask",
    "SyntheticSpec",
    "ToiWeights",
    "Token",
    "Trainer",
    "Vocabulary",
    "VocabularyError",
    "batch_weights",
    "cascade_select",
    "combined_scores",
    "compute_idf",
    "corpus_statistics",
    "encode_text",
    "encode_video",
    "evaluate",
    "full_select",
    "fuse",
    "fusion_loss",
    "generate_synthetic",
    "iter_batches",
    "load_checkpoint",
    "load_corpus",
    "random_select",
    "rank_metrics",
    "run_ablations",
    "run_selfcheck",
    "run_train",
    "save_checkpoint",
    "save_corpus",
    "score_matrix",
    "score_pair",
    "select_toi",
    "sentence_loss",
    "sentence_weights",
    "split_corpus",
    "sweep_token_weight",
    "token_loss",
    "token_similarity",
    "total_objective",
    "util",
]
