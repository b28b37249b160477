import logging
import os

from invoke.vendor.lexicon import Lexicon

import pytest
from invoke import Context

from tokalign import (
    AlignmentModel,
    Vocabulary,
    compute_idf,
    generate_synthetic,
    save_corpus,
)
from tokalign.checkpoint import checkpoint_bytes
from tokalign.cli import train

from ._util import synthetic_spec, tiny_encoder, tiny_run_config

from icecream import ic, install as install_ic


# Better print() for debugging - use ic()!
install_ic()
ic.configureOutput(includeContext=True)


# Perform logging by default; pytest will capture and thus hide it normally,
# presenting it on error/failure. (But also allow turning it off when doing
# very pinpoint debugging - e.g. using breakpoints, so you don't want output
# hiding enabled, but also don't want all the logging to gum up the terminal.)
if not os.environ.get("DISABLE_LOGGING", False):
    logging.basicConfig(
        level=logging.DEBUG,
        # Also make sure to set up timestamping for more sanity when debugging.
        format="[%(relativeCreated)s]\t%(levelname)s:%(name)s:%(message)s",
        datefmt="%H:%M:%S",
    )


@pytest.fixture(scope="session")
def records():
    """
    A small planted-alignment corpus sized for `tiny_encoder`.
    """
    return generate_synthetic(synthetic_spec())


@pytest.fixture
def corpus_path(tmp_path, records):
    path = tmp_path / "corpus.jsonl"
    save_corpus(records, str(path))
    return str(path)


@pytest.fixture
def config():
    return tiny_run_config()


@pytest.fixture(scope="session")
def untrained(records):
    """
    Yield an untrained model plus everything needed to score with it:

    - ``records``: the corpus the vocabulary and idf table were built from
    - ``vocab``: `Vocabulary` over ``records``
    - ``idf``: `IdfTable` over ``records``
    - ``model``: `AlignmentModel` sized for ``vocab``, with fusion
    - ``bare``: the same architecture without fusion parameters
    """
    bag = Lexicon()
    bag.records = records
    bag.vocab = Vocabulary.from_corpus(records)
    bag.idf = compute_idf(records)
    encoder = tiny_encoder(vocab_size=len(bag.vocab))
    bag.model = AlignmentModel(encoder, seed=3)
    bag.bare = AlignmentModel(encoder, seed=3, fusion=False)
    yield bag


@pytest.fixture
def saved(untrained, config):
    """
    Checkpoint bytes of the ``untrained`` model.
    """
    return checkpoint_bytes(
        config, untrained.model, untrained.vocab, untrained.idf
    )


@pytest.fixture
def config_path(tmp_path):
    path = str(tmp_path / "run.json")
    tiny_run_config().save(path)
    return path


@pytest.fixture
def trained(tmp_path, corpus_path, config_path, capsys):
    """
    Path of a checkpoint written by the ``train`` command.
    """
    checkpoint = str(tmp_path / "model.tkal")
    train(
        Context(),
        config=config_path,
        corpus=corpus_path,
        checkpoint=checkpoint,
        loss_log=str(tmp_path / "loss.jsonl"),
    )
    capsys.readouterr()
    return checkpoint
