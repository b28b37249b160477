"""
Video encoder, language encoder and multi-modal fusion.

Each of the three parts is a stack of pre-LN self-attention blocks:

- the video encoder projects raw frame features to width ``d`` and runs
  ``video_layers`` blocks; its pooled output is the mean over real frames;
- the language encoder adds a learned token embedding and an absolute
  positional embedding and runs ``text_layers`` blocks; its summary is the
  output at the ``[CLS]`` position;
- fusion concatenates text and video tokens (text first by default, so
  ``[CLS]`` sits at position 0), adds a modality type embedding and a
  positional embedding spanning the concatenation, and runs
  ``fusion_layers`` blocks.

All entry points are batched; sequences are padded to the batch maximum and
padded keys are masked out of attention.
"""

from collections import namedtuple

import numpy as np

from tokalign.align_exception import (
    CheckpointError,
    ConfigurationError,
    DimensionError,
    EmptySequenceError,
    InputError,
    VocabularyError,
)
from tokalign.common import (
    CLS_ID,
    DTYPES,
    PAD_ID,
    SEP_ID,
    TEXT_TYPE,
    VIDEO_TYPE,
)
from tokalign.losses import ScoringHead
from tokalign.nn import Block, Embedding, Linear, Module, attention_mask
from tokalign.tensor import Tensor, concat
from tokalign.util import Rng


EncodedBatch = namedtuple(
    "EncodedBatch",
    ["X", "Y", "x_bar", "y_bar", "video_mask", "text_mask"],
)
EncodedBatch.__doc__ = """
Per-batch encoder outputs.

``X`` is ``(K, m, d)`` video tokens, ``Y`` is ``(K, n, d)`` text tokens,
``x_bar`` the ``(K, d)`` mean over each video's real frames and ``y_bar`` the
``(K, d)`` text outputs at ``[CLS]``. ``video_mask`` / ``text_mask`` are
boolean numpy arrays marking real (unpadded) positions.
"""

FusionOutput = namedtuple("FusionOutput", ["z", "z_cls"])


class EncoderConfig:
    """
    Architecture hyperparameters shared by the three encoders.

    Defaults are desk scale; `full_scale` documents the full-size settings.
    """

    FIELDS = (
        "d",
        "video_layers",
        "text_layers",
        "fusion_layers",
        "heads",
        "d_video_in",
        "vocab_size",
        "max_video_tokens",
        "max_text_tokens",
        "d_ff",
        "fusion_text_first",
    )

    def __init__(
        self,
        d=32,
        video_layers=1,
        text_layers=1,
        fusion_layers=2,
        heads=2,
        d_video_in=16,
        vocab_size=0,
        max_video_tokens=8,
        max_text_tokens=12,
        d_ff=0,
        fusion_text_first=True,
    ):
        self.d = d
        self.video_layers = video_layers
        self.text_layers = text_layers
        self.fusion_layers = fusion_layers
        self.heads = heads
        self.d_video_in = d_video_in
        # 0 means "size it from the training vocabulary"
        self.vocab_size = vocab_size
        self.max_video_tokens = max_video_tokens
        self.max_text_tokens = max_text_tokens
        # 0 means 4 * d
        self.d_ff = d_ff
        self.fusion_text_first = fusion_text_first

    @classmethod
    def full_scale(cls):
        return cls(
            d=768,
            video_layers=1,
            text_layers=12,
            fusion_layers=2,
            heads=12,
            d_video_in=2048,
            max_video_tokens=48,
            max_text_tokens=30,
        )

    @property
    def ffn_width(self):
        return self.d_ff or 4 * self.d

    def as_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}

    def __eq__(self, other):
        return isinstance(other, EncoderConfig) and (
            self.as_dict() == other.as_dict()
        )

    def __repr__(self):
        pairs = ", ".join(
            "{}={!r}".format(k, v) for k, v in self.as_dict().items()
        )
        return "EncoderConfig({})".format(pairs)

    def validate(self):
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigurationError(
                "d ({}) must be a positive multiple of heads ({})".format(
                    self.d, self.heads
                )
            )
        if self.max_video_tokens < 1:
            raise ConfigurationError("max_video_tokens must be >= 1")
        if self.max_text_tokens < 3:
            raise ConfigurationError(
                "max_text_tokens must be >= 3 ([CLS], a word, [SEP])"
            )
        for name in ("video_layers", "text_layers", "fusion_layers"):
            if getattr(self, name) < 0:
                raise ConfigurationError("{} must be >= 0".format(name))
        if self.d_video_in < 1:
            raise ConfigurationError("d_video_in must be >= 1")
        if self.vocab_size < 4:
            raise ConfigurationError(
                "vocab_size {} cannot hold the reserved tokens".format(
                    self.vocab_size
                )
            )
        return self


def _stack(blocks, x, mask):
    for block in blocks:
        x = block(x, mask)
    return x


class VideoEncoder(Module):
    def __init__(self, config, rng, dtype):
        self.proj = Linear(config.d_video_in, config.d, rng, dtype)
        self.blocks = [
            Block(config.d, config.heads, config.ffn_width, rng, dtype)
            for _ in range(config.video_layers)
        ]
        self._config = config
        self._dtype = dtype

    def __call__(self, videos):
        """
        Encode a list of ``(m_i, d_video_in)`` feature matrices.

        :return: ``(X, x_bar, mask)``
        """
        cfg = self._config
        if not len(videos):
            raise EmptySequenceError("no videos to encode")
        lengths = []
        for feats in videos:
            feats = np.asarray(feats)
            if feats.ndim != 2 or feats.shape[0] == 0:
                raise EmptySequenceError("video with no frames")
            if feats.shape[1] != cfg.d_video_in:
                raise DimensionError(
                    "video features have width {}, expected {}".format(
                        feats.shape[1], cfg.d_video_in
                    )
                )
            if feats.shape[0] > cfg.max_video_tokens:
                raise InputError(
                    "video has {} frames, max_video_tokens is {}".format(
                        feats.shape[0], cfg.max_video_tokens
                    )
                )
            lengths.append(feats.shape[0])
        width = max(lengths)
        padded = np.zeros(
            (len(videos), width, cfg.d_video_in), dtype=self._dtype
        )
        mask = np.zeros((len(videos), width), dtype=bool)
        for b, feats in enumerate(videos):
            padded[b, : lengths[b]] = feats
            mask[b, : lengths[b]] = True
        x = self.proj(Tensor(padded))
        x = _stack(self.blocks, x, attention_mask(mask, self._dtype))
        weights = mask.astype(self._dtype) / np.asarray(
            lengths, dtype=self._dtype
        )[:, None]
        x_bar = (x * Tensor(weights[:, :, None])).sum(axis=1)
        return x, x_bar, mask


class TextEncoder(Module):
    def __init__(self, config, rng, dtype):
        self.tokens = Embedding(config.vocab_size, config.d, rng, dtype)
        self.positions = Embedding(
            config.max_text_tokens, config.d, rng, dtype
        )
        self.blocks = [
            Block(config.d, config.heads, config.ffn_width, rng, dtype)
            for _ in range(config.text_layers)
        ]
        self._config = config
        self._dtype = dtype

    def __call__(self, sequences):
        """
        Encode a list of token id sequences, each ``[CLS] ... [SEP]``.

        :return: ``(Y, y_bar, mask)``
        """
        cfg = self._config
        if not len(sequences):
            raise EmptySequenceError("no token sequences to encode")
        for ids in sequences:
            if len(ids) < 2 or ids[0] != CLS_ID or ids[-1] != SEP_ID:
                raise InputError("token sequence must be [CLS] ... [SEP]")
            if len(ids) > cfg.max_text_tokens:
                raise InputError(
                    "token sequence of length {} exceeds {}".format(
                        len(ids), cfg.max_text_tokens
                    )
                )
            for token_id in ids:
                if not 0 <= token_id < cfg.vocab_size:
                    raise VocabularyError(token_id, cfg.vocab_size)
        width = max(len(ids) for ids in sequences)
        ids = np.full((len(sequences), width), PAD_ID, dtype=np.intp)
        mask = np.zeros((len(sequences), width), dtype=bool)
        for b, seq in enumerate(sequences):
            ids[b, : len(seq)] = seq
            mask[b, : len(seq)] = True
        y = self.tokens(ids) + self.positions(np.arange(width))
        y = _stack(self.blocks, y, attention_mask(mask, self._dtype))
        return y, y[:, 0, :], mask


class FusionEncoder(Module):
    def __init__(self, config, rng, dtype):
        self.types = Embedding(2, config.d, rng, dtype)
        self.positions = Embedding(
            config.max_text_tokens + config.max_video_tokens,
            config.d,
            rng,
            dtype,
        )
        self.blocks = [
            Block(config.d, config.heads, config.ffn_width, rng, dtype)
            for _ in range(config.fusion_layers)
        ]
        self._config = config
        self._dtype = dtype

    def __call__(self, video, video_mask, text, text_mask):
        """
        Fuse ``P`` (video, text) pairs.

        :param video: ``(P, m, d)`` video tokens
        :param video_mask: ``(P, m)`` boolean real-frame mask
        :param text: ``(P, n, d)`` text tokens
        :param text_mask: ``(P, n)`` boolean real-token mask
        :return: `FusionOutput` with ``z`` of shape ``(P, m + n, d)`` and
            ``z_cls`` of shape ``(P, d)``
        """
        d = self._config.d
        if video.shape[-1] != text.shape[-1] or video.shape[-1] != d:
            raise DimensionError(
                "fusion inputs have widths {} and {}, expected {}".format(
                    video.shape[-1], text.shape[-1], d
                )
            )
        pairs, m = video_mask.shape
        n = text_mask.shape[1]
        video_len = video_mask.sum(axis=1)
        text_len = text_mask.sum(axis=1)
        # Positions count real tokens only, so padding never shifts them.
        if self._config.fusion_text_first:
            parts, masks = (text, video), (text_mask, video_mask)
            types = [TEXT_TYPE] * n + [VIDEO_TYPE] * m
            pos = np.concatenate(
                [
                    np.broadcast_to(np.arange(n), (pairs, n)),
                    text_len[:, None] + np.arange(m),
                ],
                axis=1,
            )
            cls_index = 0
        else:
            parts, masks = (video, text), (video_mask, text_mask)
            types = [VIDEO_TYPE] * m + [TEXT_TYPE] * n
            pos = np.concatenate(
                [
                    np.broadcast_to(np.arange(m), (pairs, m)),
                    video_len[:, None] + np.arange(n),
                ],
                axis=1,
            )
            cls_index = m
        mask = np.concatenate(masks, axis=1)
        pos = np.minimum(pos, self.positions.weight.shape[0] - 1)
        z = concat(parts, axis=1) + self.types(types) + self.positions(pos)
        z = _stack(self.blocks, z, attention_mask(mask, self._dtype))
        return FusionOutput(z, z[:, cls_index, :])


class AlignmentModel(Module):
    """
    The three encoders plus the linear scoring head applied to fused
    ``[CLS]`` outputs.

    :param EncoderConfig config: architecture; must validate
    :param int seed: initialization seed
    :param str dtype: ``"float64"`` or ``"float32"``
    :param bool fusion:
        build the fusion encoder and scoring head; models trained without
        the fusion loss leave them out
    """

    def __init__(self, config, seed=0, dtype="float64", fusion=True):
        config.validate()
        if dtype not in DTYPES:
            raise ConfigurationError("unknown dtype {!r}".format(dtype))
        np_dtype = DTYPES[dtype]
        rng = Rng(seed).spawn("init")
        self.video = VideoEncoder(config, rng.spawn("video"), np_dtype)
        self.text = TextEncoder(config, rng.spawn("text"), np_dtype)
        self.fusion = self.head = None
        if fusion:
            self.fusion = FusionEncoder(config, rng.spawn("fusion"), np_dtype)
            self.head = ScoringHead(config.d, rng.spawn("head"), np_dtype)
        self._config = config
        self._dtype = np_dtype

    @property
    def config(self):
        return self._config

    @property
    def dtype(self):
        return self._dtype

    @property
    def has_fusion(self):
        return self.fusion is not None

    def encode(self, videos, sequences):
        """
        Encode ``K`` videos and ``K`` token sequences into an `EncodedBatch`.
        """
        X, x_bar, video_mask = self.video(videos)
        Y, y_bar, text_mask = self.text(sequences)
        return EncodedBatch(X, Y, x_bar, y_bar, video_mask, text_mask)

    def fuse_pairs(self, batch, pairs):
        """
        Fuse selected ``(video j, text i)`` pairs of an encoded batch.

        :param batch: `EncodedBatch`
        :param pairs: sequence of ``(j, i)`` index pairs
        :return: `FusionOutput` over the ``P`` pairs
        """
        if self.fusion is None:
            raise CheckpointError("model has no fusion parameters")
        pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
        js, is_ = pairs[:, 0], pairs[:, 1]
        return self.fusion(
            batch.X[js],
            batch.video_mask[js],
            batch.Y[is_],
            batch.text_mask[is_],
        )


def encode_video(model, features):
    """
    Encode a single ``(m, d_video_in)`` feature matrix.

    :return: ``(tokens, pooled)`` tensors of shapes ``(m, d)`` and ``(d,)``
    """
    X, x_bar, _ = model.video([features])
    return X[0], x_bar[0]


def encode_text(model, token_ids):
    """
    Encode a single ``[CLS] ... [SEP]`` token id list.

    :return: ``(tokens, cls)`` tensors of shapes ``(n, d)`` and ``(d,)``
    """
    Y, y_bar, _ = model.text([list(token_ids)])
    return Y[0], y_bar[0]


def fuse(model, video_tokens, text_tokens):
    """
    Fuse one video token sequence ``(m, d)`` with one text token sequence
    ``(n, d)``; returns a `FusionOutput` with ``z`` of shape ``(m + n, d)``.
    """
    if not model.has_fusion:
        raise CheckpointError("model has no fusion parameters")
    m, n = video_tokens.shape[0], text_tokens.shape[0]
    out = model.fusion(
        video_tokens.reshape(1, m, -1),
        np.ones((1, m), dtype=bool),
        text_tokens.reshape(1, n, -1),
        np.ones((1, n), dtype=bool),
    )
    return FusionOutput(out.z[0], out.z_cls[0])
