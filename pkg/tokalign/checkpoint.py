"""
Versioned binary checkpoints.

Layout, built with `.Message` (all integers big-endian, strings
length-prefixed)::

    magic       4 bytes, b"TKAL"
    version     int
    config      string, canonical `.RunConfig` JSON
    fusion      boolean, whether fusion parameters follow
    vocabulary  string list, ids in order
    idf         int |D|, int count, then count x (string word, int df,
                double idf)
    parameters  int count, then count x (string name, array)

where an array is a dtype tag (``f8``/``f4``), an int ndim, ndim int dims
and the big-endian values in C order.
"""

from collections import namedtuple

from tokalign.align_exception import CheckpointError, ConfigurationError
from tokalign.common import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    SPECIAL_TOKENS,
)
from tokalign.config import RunConfig
from tokalign.data import Vocabulary
from tokalign.encoders import AlignmentModel
from tokalign.message import Message
from tokalign.toi import IdfTable
from tokalign.util import get_logger


Checkpoint = namedtuple("Checkpoint", ["config", "model", "vocab", "idf"])


def checkpoint_bytes(config, model, vocab, idf):
    """
    Encode a trained model and everything needed to score with it.

    :param config: `.RunConfig` the model was trained with
    :param model: `.AlignmentModel`
    :param vocab: `.Vocabulary` the text encoder was sized for
    :param idf: `.IdfTable` of the training captions
    :return: `bytes`
    """
    stored = config.copy()
    stored.encoder = model.config
    m = Message()
    m.add_bytes(CHECKPOINT_MAGIC)
    m.add_int(CHECKPOINT_VERSION)
    m.add_string(stored.to_text())
    m.add_boolean(model.has_fusion)
    m.add_list(vocab.words)
    table = idf.as_dict()
    m.add_int(table["corpus_size"])
    m.add_int(len(table["df"]))
    for word, df in table["df"].items():
        m.add_string(word)
        m.add_int(df)
        m.add_double(table["idf"][word])
    params = list(model.named_parameters())
    m.add_int(len(params))
    for name, p in params:
        m.add_string(name)
        m.add_array(p.data)
    return m.asbytes()


def save_checkpoint(path, config, model, vocab, idf):
    data = checkpoint_bytes(config, model, vocab, idf)
    with open(path, "wb") as f:
        f.write(data)
    get_logger(__name__).info(
        "Wrote checkpoint {} ({} bytes)".format(path, len(data))
    )
    return data


def parse_checkpoint(data, expected=None):
    """
    Decode `checkpoint_bytes` output.

    :param bytes data: encoded checkpoint
    :param expected:
        optional `.EncoderConfig`; every dimension except ``vocab_size``
        must match the stored one
    :return: `Checkpoint`
    :raises: `.CheckpointError` -- on a bad magic, another format version,
        or parameters that do not fit the stored architecture
    """
    m = Message(data)
    magic = m.get_bytes(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint (magic {!r})".format(magic))
    version = m.get_int()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            "checkpoint format version {}, this build reads {}".format(
                version, CHECKPOINT_VERSION
            )
        )
    try:
        config = RunConfig.from_text(m.get_text())
    except ConfigurationError as e:
        raise CheckpointError("stored config unreadable: {}".format(e))
    has_fusion = m.get_boolean()
    words = m.get_list()
    if tuple(words[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
        raise CheckpointError("vocabulary lacks the reserved tokens")
    vocab = Vocabulary(words[len(SPECIAL_TOKENS) :])
    corpus_size = m.get_int()
    df = {}
    for _ in range(m.get_int()):
        word = m.get_text()
        df[word] = m.get_int()
        m.get_double()
    idf = IdfTable(df, corpus_size)
    state = {}
    for _ in range(m.get_int()):
        name = m.get_text()
        state[name] = m.get_array()
    if m.get_remainder():
        raise CheckpointError("trailing bytes after checkpoint")
    if expected is not None:
        stored = config.encoder.as_dict()
        wanted = expected.as_dict()
        for key in stored:
            if key == "vocab_size" and not wanted[key]:
                continue
            if stored[key] != wanted[key]:
                raise CheckpointError(
                    "checkpoint {} is {}, config expects {}".format(
                        key, stored[key], wanted[key]
                    )
                )
    try:
        model = AlignmentModel(
            config.encoder,
            seed=config.seed,
            dtype=config.dtype,
            fusion=has_fusion,
        )
    except ConfigurationError as e:
        raise CheckpointError("stored architecture invalid: {}".format(e))
    model.load_state_dict(state)
    # spare embedding rows past the vocabulary are allowed
    if len(vocab) > config.encoder.vocab_size:
        raise CheckpointError(
            "vocabulary of {} entries for an embedding of {}".format(
                len(vocab), config.encoder.vocab_size
            )
        )
    return Checkpoint(config, model, vocab, idf)


def load_checkpoint(path, expected=None):
    with open(path, "rb") as f:
        return parse_checkpoint(f.read(), expected)
