"""
Inference-time alignment scores and retrieval metrics.

A video-text pair is scored by a weighted sum of the three stages::

    w_sentence · x̄·ȳ
    + w_token  · Σ_p weight_p · s(x, y^p)
    + w_fusion · (w·z_cls + bias)

Raw stage scores are summed without calibration; `InferenceWeights` is the
only rebalancing knob. `StageMask` switches stages off entirely, which is how
single-stage evaluations are run.
"""

import enum
from collections import namedtuple

import numpy as np

from tokalign.align_exception import (
    CheckpointError,
    ConfigurationError,
    InputError,
)
from tokalign.common import DEFAULT_TARGET_POS, DIRECTIONS
from tokalign.losses import toi_similarities
from tokalign.tensor import no_grad
from tokalign.toi import batch_weights
from tokalign.util import get_logger


DEFAULT_RECALLS = (1, 5, 10)


class StageMask(enum.Flag):
    SENTENCE = 1
    TOKEN = 2
    FUSION = 4
    ALL = SENTENCE | TOKEN | FUSION

    @classmethod
    def parse(cls, text):
        """
        Parse ``"all"`` or a ``+``/``,`` separated list of stage names,
        e.g. ``"sentence+token"``.
        """
        mask = cls(0)
        for name in text.replace(",", "+").split("+"):
            name = name.strip().upper()
            if not name:
                continue
            try:
                mask |= cls[name]
            except KeyError:
                raise ConfigurationError("unknown stage {!r}".format(name))
        if not mask:
            raise ConfigurationError("stage mask selects no stage")
        return mask

    def names(self):
        return [s.name.lower() for s in STAGES if s in self]


STAGES = (StageMask.SENTENCE, StageMask.TOKEN, StageMask.FUSION)


class InferenceWeights:
    """
    Per-stage weights of the inference score.

    ``InferenceWeights()`` is a plain sum; `main_default` halves the token
    stage.
    """

    FIELDS = ("w_sentence", "w_token", "w_fusion")

    def __init__(self, w_sentence=1.0, w_token=1.0, w_fusion=1.0):
        self.w_sentence = w_sentence
        self.w_token = w_token
        self.w_fusion = w_fusion

    @classmethod
    def main_default(cls):
        return cls(1.0, 0.5, 1.0)

    def replace(self, **kwargs):
        values = self.as_dict()
        values.update(kwargs)
        return InferenceWeights(**values)

    def as_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}

    def __eq__(self, other):
        return isinstance(other, InferenceWeights) and (
            self.as_dict() == other.as_dict()
        )

    def __repr__(self):
        return "InferenceWeights({w_sentence}, {w_token}, {w_fusion})".format(
            **self.as_dict()
        )

    def for_stage(self, stage):
        return {
            StageMask.SENTENCE: self.w_sentence,
            StageMask.TOKEN: self.w_token,
            StageMask.FUSION: self.w_fusion,
        }[stage]

    def validate(self):
        values = list(self.as_dict().values())
        if any(v < 0 for v in values):
            raise ConfigurationError("inference weights must be >= 0")
        if not any(values):
            raise ConfigurationError("inference weights are all zero")
        return self


class RetrievalMetrics(
    namedtuple("RetrievalMetrics", ["recall_at", "median_rank", "ranks"])
):
    """
    ``recall_at`` maps ``n`` to the fraction of queries ranked within the top
    ``n``; ``median_rank`` is the median of ``ranks``, the 1-based rank of each
    query's correct candidate.
    """

    __slots__ = ()

    def as_dict(self):
        out = {"R{}".format(n): v for n, v in sorted(self.recall_at.items())}
        out["MR"] = self.median_rank
        return out


SweepResult = namedtuple("SweepResult", ["token_weight", "metrics", "top"])


def rank_metrics(scores, ground_truth=None, ns=DEFAULT_RECALLS):
    """
    Ranks, recalls and median rank from a ``(Q, C)`` score matrix.

    A query's rank is one plus the number of other candidates scoring at
    least as high as the correct one, so ties count against the query.

    :param scores: ``(Q, C)`` array-like, higher is better
    :param ground_truth: correct candidate per query; defaults to ``q``
    :param ns: recall cut-offs
    :raises: `.InputError` -- on ground truth outside ``0..C-1``
    """
    scores = np.asarray(scores.data if hasattr(scores, "data") else scores)
    if scores.ndim != 2 or not scores.size:
        raise InputError("score matrix must be a nonempty 2-D array")
    Q, C = scores.shape
    if ground_truth is None:
        ground_truth = np.arange(Q)
    ground_truth = np.asarray(ground_truth, dtype=np.intp)
    if ground_truth.shape != (Q,):
        raise InputError("need one ground-truth index per query")
    if np.any(ground_truth < 0) or np.any(ground_truth >= C):
        raise InputError("ground-truth index outside 0..{}".format(C - 1))
    correct = scores[np.arange(Q), ground_truth][:, None]
    at_least = (scores >= correct).sum(axis=1)
    # the correct candidate always ties with itself
    ranks = at_least.astype(np.intp)
    recall_at = {int(n): float(np.mean(ranks <= n)) for n in ns}
    return RetrievalMetrics(recall_at, float(np.median(ranks)), ranks.tolist())


def _encode(model, vocab, videos, texts, target_pos, idf):
    cfg = model.config
    sequences = [t.sequence(cfg.max_text_tokens) for t in texts]
    batch = model.encode(
        [v.frames(cfg.max_video_tokens) for v in videos],
        [vocab.encode(seq) for seq in sequences],
    )
    return batch, batch_weights(sequences, idf, target_pos)


def stage_scores(
    model,
    vocab,
    idf,
    videos,
    texts,
    stage_mask=StageMask.ALL,
    target_pos=DEFAULT_TARGET_POS,
    chunk=256,
):
    """
    Unweighted per-stage score matrices of every video against every text.

    :return: dict `StageMask` member -> ``(V, T)`` numpy array, ``[j, i]``
        scoring video ``j`` against text ``i``
    :raises: `.CheckpointError` -- if the fusion stage is requested from a
        model without fusion parameters
    """
    if StageMask.FUSION in stage_mask and not model.has_fusion:
        raise CheckpointError(
            "fusion stage requested but the model has no fusion parameters"
        )
    out = {}
    with no_grad():
        batch, toi = _encode(model, vocab, videos, texts, target_pos, idf)
        if StageMask.SENTENCE in stage_mask:
            out[StageMask.SENTENCE] = batch.x_bar.data @ batch.y_bar.data.T
        if StageMask.TOKEN in stage_mask:
            sims = toi_similarities(batch.X, batch.Y, toi, batch.video_mask)
            out[StageMask.TOKEN] = sims.token_sums(len(texts), weighted=True)
        if StageMask.FUSION in stage_mask:
            V, T = len(videos), len(texts)
            pairs = [(j, i) for j in range(V) for i in range(T)]
            scores = np.empty(len(pairs), dtype=model.dtype)
            for start in range(0, len(pairs), chunk):
                part = pairs[start : start + chunk]
                fused = model.fuse_pairs(batch, part)
                head = model.head(fused.z_cls)
                scores[start : start + len(part)] = head.data
            out[StageMask.FUSION] = scores.reshape(V, T)
    return out


def combine(stages, weights, stage_mask=StageMask.ALL):
    """
    Weighted sum of the masked stage matrices from `stage_scores`.
    """
    total = None
    for stage in STAGES:
        if stage not in stage_mask:
            continue
        term = weights.for_stage(stage) * stages[stage]
        total = term if total is None else total + term
    return total


def _orient(matrix, direction):
    if direction not in DIRECTIONS:
        raise ConfigurationError("unknown direction {!r}".format(direction))
    # t2v: texts query videos, so rows are texts
    return matrix.T if direction == "t2v" else matrix


def score_matrix(
    model,
    vocab,
    idf,
    videos,
    texts,
    weights=None,
    stage_mask=StageMask.ALL,
    target_pos=DEFAULT_TARGET_POS,
    direction="t2v",
):
    """
    ``(Q, C)`` inference scores. With ``direction="t2v"`` queries are
    ``texts`` and candidates ``videos``; ``"v2t"`` swaps them.
    """
    weights = (weights or InferenceWeights()).validate()
    stages = stage_scores(
        model, vocab, idf, videos, texts, stage_mask, target_pos
    )
    return _orient(combine(stages, weights, stage_mask), direction)


def score_pair(
    video,
    text,
    model,
    vocab,
    idf,
    weights=None,
    stage_mask=StageMask.ALL,
    target_pos=DEFAULT_TARGET_POS,
):
    """
    Inference score of one video record against one text record.
    """
    matrix = score_matrix(
        model,
        vocab,
        idf,
        [video],
        [text],
        weights,
        stage_mask,
        target_pos,
    )
    return float(matrix[0, 0])


def evaluate(
    model,
    vocab,
    idf,
    records,
    weights=None,
    stage_mask=StageMask.ALL,
    target_pos=DEFAULT_TARGET_POS,
    direction="t2v",
    ns=DEFAULT_RECALLS,
):
    """
    Retrieval metrics over paired ``records`` (record ``q`` is both query
    ``q`` and its correct candidate), for the combined score and for every
    masked stage alone.

    :return: ``(RetrievalMetrics, {stage name: RetrievalMetrics})``
    """
    weights = (weights or InferenceWeights()).validate()
    stages = stage_scores(
        model, vocab, idf, records, records, stage_mask, target_pos
    )
    combined = rank_metrics(
        _orient(combine(stages, weights, stage_mask), direction), ns=ns
    )
    per_stage = {
        stage.name.lower(): rank_metrics(
            _orient(stages[stage], direction), ns=ns
        )
        for stage in STAGES
        if stage in stage_mask
    }
    get_logger(__name__).info(
        "Evaluated {} pairs ({}): {}".format(
            len(records), direction, combined.as_dict()
        )
    )
    return combined, per_stage


def top_candidates(scores, ids, top_n):
    """
    Ids of the ``top_n`` best candidates of every query, best first, ties
    toward the lower index.
    """
    order = np.argsort(-np.asarray(scores), axis=1, kind="stable")
    return [[ids[c] for c in row[:top_n]] for row in order]


def sweep_token_weight(
    model,
    vocab,
    idf,
    records,
    token_weights,
    weights=None,
    stage_mask=StageMask.ALL,
    target_pos=DEFAULT_TARGET_POS,
    direction="t2v",
    ns=DEFAULT_RECALLS,
    top_n=5,
):
    """
    Re-rank ``records`` once per token weight, other weights held fixed.

    Stage scores are computed once and recombined for every weight.

    :return: list of `SweepResult`, in the order of ``token_weights``
    """
    base = weights or InferenceWeights()
    stage_mask = stage_mask | StageMask.TOKEN
    stages = stage_scores(
        model, vocab, idf, records, records, stage_mask, target_pos
    )
    ids = [r.id for r in records]
    results = []
    for w in token_weights:
        current = base.replace(w_token=w).validate()
        scores = _orient(combine(stages, current, stage_mask), direction)
        results.append(
            SweepResult(
                w,
                rank_metrics(scores, ns=ns),
                top_candidates(scores, ids, top_n),
            )
        )
    return results
