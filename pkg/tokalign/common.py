"""
Common constants and global variables.
"""
import logging

import numpy as np

#
# Reserved vocabulary entries. Ids are fixed so checkpoints stay portable.
#

PAD, CLS, SEP, UNK = "[PAD]", "[CLS]", "[SEP]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, SEP, UNK)
(PAD_ID, CLS_ID, SEP_ID, UNK_ID) = range(4)

#
# Universal POS tags used for token-of-interest selection
#

NOUN, VERB, DET, ADP = "NOUN", "VERB", "DET", "ADP"
UNIVERSAL_POS = frozenset(
    (
        "ADJ",
        "ADP",
        "ADV",
        "AUX",
        "CCONJ",
        "DET",
        "INTJ",
        "NOUN",
        "NUM",
        "PART",
        "PRON",
        "PROPN",
        "PUNCT",
        "SCONJ",
        "SYM",
        "VERB",
        "X",
    )
)
DEFAULT_TARGET_POS = frozenset((NOUN, VERB))

# Modality type ids for the fusion type embedding.
(VIDEO_TYPE, TEXT_TYPE) = range(2)

# Additive attention / max mask for padded positions. Finite on purpose: the
# tensor layer treats non-finite values as an error state.
MASK_VALUE = -1e9

# Floor applied to idf values before per-sentence normalization.
IDF_FLOOR = 1e-6

DTYPES = {"float64": np.float64, "float32": np.float32}
DEFAULT_DTYPE = np.float64

CASCADE_MODES = ("cascade", "random", "full")
REDUCTIONS = ("sum", "mean")
LOSS_NAMES = ("sentence", "token", "fusion")
DIRECTIONS = ("t2v", "v2t")

CHECKPOINT_MAGIC = b"TKAL"
CHECKPOINT_VERSION = 1

# Process exit codes for the command line program.
EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2

# Where commands write their report when given no explicit path.
DEFAULT_RUN_DIR = "runs"

DEBUG = logging.DEBUG
INFO = logging.INFO
WARNING = logging.WARNING
ERROR = logging.ERROR
CRITICAL = logging.CRITICAL
