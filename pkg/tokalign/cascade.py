"""
Hard-negative selection for the fusion stage.

Pre-fusion similarities are already computed for the sentence and token
losses, so they are reused to rank every wrong partner of every anchor::

    S[j, i] = x̄_j·ȳ_i + Σ_{p ∈ P_i} s(x_j, y_i^p)

Each text anchor keeps its ``k'`` highest scoring wrong videos and each video
anchor its ``k'`` highest scoring wrong texts, giving ``2K·(k'+1)`` fused
pairs per batch. Selection is a discrete index choice and never carries
gradients.
"""

import numpy as np

from tokalign.align_exception import ConfigurationError, ConsistencyError
from tokalign.losses import toi_similarities
from tokalign.tensor import Tensor, no_grad


class CascadeSelection:
    """
    Negatives per anchor. Positives are implicit: text anchor ``i`` pairs
    with video ``i`` and vice versa.

    :param text_anchor_negs: ``K`` lists of video indices
    :param video_anchor_negs: ``K`` lists of text indices
    """

    def __init__(self, text_anchor_negs, video_anchor_negs):
        self.text_anchor_negs = [list(map(int, n)) for n in text_anchor_negs]
        self.video_anchor_negs = [list(map(int, n)) for n in video_anchor_negs]

    def __repr__(self):
        return "CascadeSelection(K={}, k_prime={})".format(
            self.batch_size, self.k_prime
        )

    def __eq__(self, other):
        return (
            isinstance(other, CascadeSelection)
            and self.text_anchor_negs == other.text_anchor_negs
            and self.video_anchor_negs == other.video_anchor_negs
        )

    @property
    def batch_size(self):
        return len(self.text_anchor_negs)

    @property
    def k_prime(self):
        if not self.text_anchor_negs:
            return 0
        return len(self.text_anchor_negs[0])

    def validate(self):
        """
        :raises: `.ConsistencyError` -- if any list holds its own anchor,
            repeats an entry, points outside the batch or has the wrong length
        """
        K, k = self.batch_size, self.k_prime
        if len(self.video_anchor_negs) != K:
            raise ConsistencyError("text and video anchor counts differ")
        for kind, lists in (
            ("text", self.text_anchor_negs),
            ("video", self.video_anchor_negs),
        ):
            for anchor, negs in enumerate(lists):
                if (
                    len(negs) != k
                    or len(set(negs)) != k
                    or anchor in negs
                    or any(not 0 <= n < K for n in negs)
                ):
                    raise ConsistencyError(
                        "bad negatives {} for {} anchor {}".format(
                            negs, kind, anchor
                        )
                    )
        return self

    def anchor_pairs(self):
        """
        ``(2K, k'+1, 2)`` array of ``(video, text)`` pairs. Rows ``0..K-1``
        are text anchors, rows ``K..2K-1`` video anchors; column 0 is always
        the positive.
        """
        K, k = self.batch_size, self.k_prime
        out = np.empty((2 * K, k + 1, 2), dtype=np.intp)
        for i, negs in enumerate(self.text_anchor_negs):
            out[i, :, 0] = [i] + negs
            out[i, :, 1] = i
        for j, negs in enumerate(self.video_anchor_negs):
            out[K + j, :, 0] = j
            out[K + j, :, 1] = [j] + negs
        return out

    def pairs(self):
        """
        All fused ``(video, text)`` pairs with multiplicity, anchor by anchor.
        """
        return [tuple(p) for p in self.anchor_pairs().reshape(-1, 2).tolist()]

    def as_dict(self):
        return {
            "text_anchor_negs": self.text_anchor_negs,
            "video_anchor_negs": self.video_anchor_negs,
        }


class CombinedScoreMatrix:
    """
    ``S[j, i]``: video ``j`` against text ``i``. ``S`` is a gradient-free
    `.Tensor`.
    """

    def __init__(self, S):
        self.S = S if isinstance(S, Tensor) else Tensor(S)

    @property
    def values(self):
        return self.S.data

    def __repr__(self):
        return "CombinedScoreMatrix(K={})".format(self.S.shape[0])


def combined_scores(
    x_bar,
    X,
    y_bar,
    Y,
    toi,
    video_mask=None,
    weighted=False,
    similarities=None,
):
    """
    Global plus summed token similarity of every video against every text.

    :param toi: one `.ToiWeights` per text
    :param bool weighted: weight token similarities by idf instead of
        summing them plainly
    :param similarities: `.ToiSimilarities` already computed for the batch
    :return: `CombinedScoreMatrix`
    """
    with no_grad():
        glob = x_bar.data @ y_bar.data.T
        if similarities is None:
            similarities = toi_similarities(X, Y, toi, video_mask)
        tokens = similarities.token_sums(Y.shape[0], weighted=weighted)
    return CombinedScoreMatrix(Tensor(glob + tokens))


def _check_k(K, k_prime):
    if not 1 <= k_prime <= K - 1:
        raise ConfigurationError(
            "k_prime must be in 1..{} for a batch of {}, got {}".format(
                K - 1, K, k_prime
            )
        )


def _top(scores, anchor, k_prime):
    # Stable sort on the negated scores breaks ties toward the lower index.
    order = np.argsort(-scores, kind="stable")
    chosen = [int(c) for c in order if c != anchor][:k_prime]
    return sorted(chosen)


def cascade_select(S, k_prime):
    """
    Pick the ``k_prime`` highest scoring wrong partners of every anchor.

    Returned negatives are in ascending index order.

    :param S: `CombinedScoreMatrix` or a ``(K, K)`` array
    :raises: `.ConfigurationError` -- unless ``1 <= k_prime <= K - 1``
    """
    values = S.values if isinstance(S, CombinedScoreMatrix) else np.asarray(S)
    K = values.shape[0]
    _check_k(K, k_prime)
    text_negs = [_top(values[:, i], i, k_prime) for i in range(K)]
    video_negs = [_top(values[j, :], j, k_prime) for j in range(K)]
    return CascadeSelection(text_negs, video_negs)


def random_select(K, k_prime, rng):
    """
    Uniform negatives without replacement, seeded by ``rng``.
    """
    _check_k(K, k_prime)

    def draw(anchor):
        others = [c for c in range(K) if c != anchor]
        picked = rng.choice(others, k_prime, replace=False)
        return sorted(int(c) for c in picked)

    text_negs = [draw(i) for i in range(K)]
    video_negs = [draw(j) for j in range(K)]
    return CascadeSelection(text_negs, video_negs)


def full_select(K):
    """
    Every wrong partner of every anchor.
    """
    _check_k(K, K - 1)
    negs = [[c for c in range(K) if c != a] for a in range(K)]
    return CascadeSelection(negs, [list(n) for n in negs])


class FusedPairs:
    """
    Fused ``[CLS]`` outputs for the pairs of a selection.

    By default every pair is fused once per anchor that selects it, so
    ``len(self) == 2K·(k'+1)``; with ``dedup`` each distinct pair is fused
    once and shared. ``self[j, i]`` is the ``(d,)`` output for video ``j``
    and text ``i``.

    :param model: `.AlignmentModel` with fusion parameters
    :param batch: `.EncodedBatch`
    :param selection: `CascadeSelection`
    :param bool dedup: fuse distinct pairs only
    """

    def __init__(self, model, batch, selection, dedup=False):
        self._anchors = selection.anchor_pairs()
        self.dedup = dedup
        pairs = selection.pairs()
        if dedup:
            pairs = sorted(set(pairs))
        self.pairs = pairs
        self.index = {}
        for row, pair in enumerate(pairs):
            self.index.setdefault(pair, row)
        self.z_cls = model.fuse_pairs(batch, pairs).z_cls

    def __len__(self):
        return len(self.pairs)

    def __contains__(self, pair):
        return tuple(pair) in self.index

    def __getitem__(self, pair):
        try:
            row = self.index[tuple(pair)]
        except KeyError:
            raise ConsistencyError("no fused output for pair {}".format(pair))
        return self.z_cls[row]

    def rows(self, anchor_pairs):
        """
        Row of `z_cls` for every entry of an ``(A, C, 2)`` pair array. The
        selection's own layout maps one to one onto the fused rows unless
        deduplicated.

        :raises: `.ConsistencyError` -- if a pair was never fused
        """
        anchor_pairs = np.asarray(anchor_pairs, dtype=np.intp)
        if not self.dedup and np.array_equal(anchor_pairs, self._anchors):
            return np.arange(len(self.pairs)).reshape(anchor_pairs.shape[:2])
        out = np.empty(anchor_pairs.shape[:2], dtype=np.intp)
        for a, anchor in enumerate(anchor_pairs.tolist()):
            for c, pair in enumerate(anchor):
                try:
                    out[a, c] = self.index[tuple(pair)]
                except KeyError:
                    raise ConsistencyError(
                        "no fused output for pair {}".format(tuple(pair))
                    )
        return out
