"""
The three contrastive losses and the combined training objective.

All three are noise-contrastive: each anchor's positive score is contrasted
against a softmax over its candidates.

- the sentence loss contrasts pooled video means with text ``[CLS]`` vectors
  over the whole batch;
- the token loss anchors on each text token of interest, scoring a video by
  the best dot product over its tokens, and weights the per-token terms by
  normalized idf;
- the fusion loss scores fused ``[CLS]`` outputs with a linear head, over the
  positive and the selected hard negatives of every anchor.

Losses are text-anchored (the denominator runs over videos) unless
``symmetric`` is set; the fusion loss always has both text and video anchors.
"""

from collections import namedtuple

import numpy as np

from tokalign.align_exception import (
    BatchSizeError,
    ConfigurationError,
    ConsistencyError,
    DimensionError,
    EmptySequenceError,
)
from tokalign.common import LOSS_NAMES, MASK_VALUE, REDUCTIONS
from tokalign.nn import Module, uniform_parameter
from tokalign.tensor import Tensor, stack


LossBreakdown = namedtuple("LossBreakdown", ["l1", "l2", "l3", "total"])


class LossConfig:
    """
    Loss hyperparameters.

    :param float tau1: sentence loss temperature
    :param float tau2: token loss temperature
    :param float lambda_t: weight of the token loss in the total
    :param int k_prime: hard negatives per anchor for the fusion loss
    :param bool symmetric: add video-anchored sentence and token terms
    :param str reduction: ``"sum"`` over anchors, or ``"mean"``
    :param losses: which of ``"sentence"``, ``"token"``, ``"fusion"`` to train
    :param bool weighted_cascade:
        weight the token term of the cascade score by idf
    :param bool dedup_fusion:
        fuse each distinct pair once even if several anchors select it
    """

    FIELDS = (
        "tau1",
        "tau2",
        "lambda_t",
        "k_prime",
        "symmetric",
        "reduction",
        "losses",
        "weighted_cascade",
        "dedup_fusion",
    )

    def __init__(
        self,
        tau1=1.0,
        tau2=1.0,
        lambda_t=0.5,
        k_prime=4,
        symmetric=False,
        reduction="sum",
        losses=LOSS_NAMES,
        weighted_cascade=False,
        dedup_fusion=False,
    ):
        self.tau1 = tau1
        self.tau2 = tau2
        self.lambda_t = lambda_t
        self.k_prime = k_prime
        self.symmetric = symmetric
        self.reduction = reduction
        self.losses = list(losses)
        self.weighted_cascade = weighted_cascade
        self.dedup_fusion = dedup_fusion

    @classmethod
    def full_scale(cls):
        return cls(k_prime=8)

    def as_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}

    def __eq__(self, other):
        return isinstance(other, LossConfig) and (
            self.as_dict() == other.as_dict()
        )

    def __repr__(self):
        return "LossConfig({})".format(
            ", ".join(
                "{}={!r}".format(k, v) for k, v in self.as_dict().items()
            )
        )

    def uses(self, name):
        return name in self.losses

    def validate(self, batch_size=None):
        """
        :raises: `.ConfigurationError` -- on any invalid field
        """
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ConfigurationError("temperatures must be positive")
        if self.lambda_t < 0:
            raise ConfigurationError("lambda_t must be >= 0")
        if self.reduction not in REDUCTIONS:
            raise ConfigurationError(
                "unknown reduction {!r}".format(self.reduction)
            )
        unknown = [name for name in self.losses if name not in LOSS_NAMES]
        if unknown or not self.losses:
            raise ConfigurationError(
                "losses must be a nonempty subset of {}, got {}".format(
                    list(LOSS_NAMES), self.losses
                )
            )
        if self.k_prime < 1:
            raise ConfigurationError("k_prime must be >= 1")
        if batch_size is not None and self.k_prime > batch_size - 1:
            raise ConfigurationError(
                "k_prime ({}) must be at most batch_size - 1 ({})".format(
                    self.k_prime, batch_size - 1
                )
            )
        return self


class ScoringHead(Module):
    """
    Linear scoring of fused ``[CLS]`` outputs, ``w·z + bias``. The bias
    cancels in every contrastive ratio but is kept as a parameter.
    """

    def __init__(self, d, rng, dtype):
        self.w = uniform_parameter(rng, (d,), d, dtype)
        self.bias = uniform_parameter(rng, (1,), d, dtype)
        self._d = d

    def __call__(self, z_cls):
        if z_cls.shape[-1] != self._d:
            raise DimensionError(
                "scoring head expects width {}, got {}".format(
                    self._d, z_cls.shape[-1]
                )
            )
        flat = z_cls.reshape(-1, self._d)
        scores = flat @ self.w.reshape(self._d, 1)
        return scores.reshape(flat.shape[0]) + self.bias


def _check_batch(size):
    if size < 2:
        raise BatchSizeError(size)


def _reduce(total, anchors, reduction):
    if reduction == "mean":
        return total / float(max(anchors, 1))
    return total


def _diagonal(matrix):
    idx = np.arange(matrix.shape[0])
    return matrix[idx, idx]


def sentence_loss(x_bar, y_bar, tau1=1.0, symmetric=False, reduction="sum"):
    """
    Sentence-level NCE over pooled video means ``x_bar`` and text ``[CLS]``
    vectors ``y_bar``, both ``(K, d)``.

    For each text ``i`` the positive ``x̄_i·ȳ_i`` is contrasted against
    ``x̄_j·ȳ_i`` for all ``K`` videos ``j`` (positive included).

    :raises: `.BatchSizeError` -- when ``K < 2``
    """
    K = x_bar.shape[0]
    _check_batch(K)
    if y_bar.shape[0] != K:
        raise DimensionError(
            "{} videos against {} texts".format(K, y_bar.shape[0])
        )
    # logits[j, i] scores video j against text i
    logits = (x_bar @ y_bar.T) / tau1
    positive = _diagonal(logits)
    total = (logits.logsumexp(axis=0) - positive).sum()
    anchors = K
    if symmetric:
        total = total + (logits.logsumexp(axis=1) - positive).sum()
        anchors = 2 * K
    return _reduce(total, anchors, reduction)


def token_similarity(video_tokens, token_emb):
    """
    Best dot product between ``token_emb`` ``(d,)`` and any row of
    ``video_tokens`` ``(m, d)``.

    :raises: `.EmptySequenceError` -- when ``m == 0``
    """
    if video_tokens.ndim != 2 or video_tokens.shape[0] == 0:
        raise EmptySequenceError("token similarity needs at least one frame")
    d = video_tokens.shape[1]
    if token_emb.shape != (d,):
        raise DimensionError(
            "token of shape {} against video width {}".format(
                token_emb.shape, d
            )
        )
    m = video_tokens.shape[0]
    return (video_tokens @ token_emb.reshape(d, 1)).reshape(m).max(axis=0)


class ToiSimilarities(
    namedtuple("ToiSimilarities", ["sims", "owners", "weights"])
):
    """
    Similarities of every token of interest in a batch against every video.

    ``sims`` is a ``(K_video, N)`` tensor, column ``n`` holding
    ``s(x_j, y_i^p)`` for the ``n``-th token of interest; ``owners[n]`` is its
    sentence ``i`` and ``weights[n]`` its normalized idf weight.
    """

    __slots__ = ()

    def token_sums(self, sentences, weighted=False):
        """
        ``(K_video, sentences)`` numpy matrix of per-sentence sums of token
        similarities, optionally idf weighted. Never tracks gradients.
        """
        onehot = np.zeros((len(self.owners), sentences))
        onehot[np.arange(len(self.owners)), self.owners] = (
            self.weights if weighted else 1.0
        )
        return self.sims.data @ onehot.astype(self.sims.data.dtype)


def toi_similarities(X, Y, toi, video_mask=None):
    """
    Gather the tokens of interest of ``Y`` and score each against every
    video of ``X``.

    :param X: ``(K_v, m, d)`` video tokens
    :param Y: ``(K_t, n, d)`` text tokens
    :param toi: one `.ToiWeights` per text, positions indexing rows of ``Y``
    :param video_mask: optional ``(K_v, m)`` boolean real-frame mask
    :return: `ToiSimilarities`
    """
    if len(toi) != Y.shape[0]:
        raise DimensionError(
            "{} token weight lists for {} texts".format(len(toi), Y.shape[0])
        )
    rows, cols, weights = [], [], []
    for i, item in enumerate(toi):
        for p, w in zip(item.positions, item.weights):
            if not 0 <= p < Y.shape[1]:
                raise DimensionError(
                    "token position {} outside text of length {}".format(
                        p, Y.shape[1]
                    )
                )
            rows.append(i)
            cols.append(p)
            weights.append(w)
    owners = np.asarray(rows, dtype=np.intp)
    weights = np.asarray(weights, dtype=X.data.dtype)
    K, m, d = X.shape
    if not rows:
        return ToiSimilarities(
            Tensor(np.zeros((K, 0), dtype=X.data.dtype)), owners, weights
        )
    tokens = Y[(owners, np.asarray(cols, dtype=np.intp))]
    # (K, m, N): every frame of every video against every token
    scores = X @ tokens.T
    if video_mask is not None:
        pad = np.where(video_mask, 0.0, MASK_VALUE).astype(X.data.dtype)
        scores = scores + Tensor(pad[:, :, None])
    return ToiSimilarities(scores.max(axis=1), owners, weights)


def token_loss(
    X,
    Y,
    toi,
    tau2=1.0,
    video_mask=None,
    similarities=None,
    symmetric=False,
    reduction="sum",
):
    """
    Token-level NCE over tokens of interest.

    For each text ``i`` and each of its tokens of interest ``p`` the term
    ``-log softmax_j(s(x_j, y_i^p) / tau2)[i]`` is scaled by the token's
    weight; sentences with no tokens of interest contribute nothing. With
    ``symmetric`` each video ``j`` also contrasts the weighted token score
    ``Σ_p w_p s(x_j, y_i^p)`` of its own text against all other texts.

    :param similarities: precomputed `ToiSimilarities` for the same inputs
    :raises: `.BatchSizeError` -- when ``K < 2``
    """
    K = X.shape[0]
    _check_batch(K)
    sims = similarities
    if sims is None:
        sims = toi_similarities(X, Y, toi, video_mask)
    if not len(sims.owners):
        return Tensor(np.zeros((), dtype=X.data.dtype))
    logits = sims.sims / tau2
    positive = logits[(sims.owners, np.arange(len(sims.owners)))]
    terms = logits.logsumexp(axis=0) - positive
    total = (terms * Tensor(sims.weights)).sum()
    anchors = K
    if symmetric:
        onehot = np.zeros((len(sims.owners), Y.shape[0]), dtype=X.data.dtype)
        onehot[np.arange(len(sims.owners)), sims.owners] = sims.weights
        # (K, K): weighted token score of video j against text i
        scores = (sims.sims @ Tensor(onehot)) / tau2
        total = total + (scores.logsumexp(axis=1) - _diagonal(scores)).sum()
        anchors = 2 * K
    return _reduce(total, anchors, reduction)


def _fused_scores(fused, head, pairs):
    # Scores for an (A, C, 2) array of (video, text) pairs -> (A, C) tensor.
    if not isinstance(fused, dict):
        return head(fused.z_cls)[fused.rows(pairs)]
    keys = list(fused)
    index = {tuple(k): r for r, k in enumerate(keys)}
    try:
        rows = np.asarray(
            [[index[(j, i)] for j, i in anchor] for anchor in pairs.tolist()],
            dtype=np.intp,
        )
    except KeyError as e:
        raise ConsistencyError("no fused output for pair {}".format(e.args[0]))
    return head(stack([fused[k] for k in keys]))[rows]


def fusion_loss(selection, fused, head, reduction="sum"):
    """
    Fusion NCE over every anchor of a `.CascadeSelection`.

    :param selection: the positives and negatives per anchor
    :param fused:
        `.FusedPairs`, or a dict mapping ``(j, i)`` to a fused ``[CLS]``
        tensor of shape ``(d,)``
    :param head: `ScoringHead`
    :raises: `.ConsistencyError` -- if a selected pair has no fused output
    """
    pairs = selection.anchor_pairs()
    logits = _fused_scores(fused, head, pairs)
    total = (logits.logsumexp(axis=1) - logits[:, 0]).sum()
    return _reduce(total, pairs.shape[0], reduction)


def total_objective(l1, l2, l3, lambda_t=0.5):
    return l1 + lambda_t * l2 + l3
