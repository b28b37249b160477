import numpy as np
import pytest

from tokalign import (
    CorpusRecord,
    EncoderConfig,
    LossConfig,
    RunConfig,
    SyntheticSpec,
    Token,
)
from tokalign.config import EvalConfig, OptimizerConfig


slow = pytest.mark.slow


def tiny_encoder(**kwargs):
    values = dict(
        d=8,
        video_layers=1,
        text_layers=1,
        fusion_layers=1,
        heads=2,
        d_video_in=4,
        vocab_size=0,
        max_video_tokens=4,
        max_text_tokens=10,
    )
    values.update(kwargs)
    return EncoderConfig(**values)


def tiny_run_config(steps=4, batch_size=4, k_prime=2, **kwargs):
    """
    A `RunConfig` small enough to train in well under a second per step.
    """
    return RunConfig(
        encoder=tiny_encoder(),
        loss=LossConfig(k_prime=k_prime),
        optimizer=OptimizerConfig(
            total_steps=steps, warmup_steps=1, batch_size=batch_size
        ),
        eval=EvalConfig(held_out=4),
        **kwargs,
    )


def synthetic_spec(**kwargs):
    values = dict(
        num_pairs=16,
        d_video_in=4,
        concepts=12,
        frames=4,
        noise_sigma=0.1,
        seed=0,
    )
    values.update(kwargs)
    return SyntheticSpec(**values)


def make_record(id, words, frames=1, width=4, value=0.0):
    """
    Record from ``[(text, pos), ...]``, one word per token.
    """
    tokens = [Token(text, pos, k) for k, (text, pos) in enumerate(words)]
    return CorpusRecord(id, np.full((frames, width), value), tokens)
