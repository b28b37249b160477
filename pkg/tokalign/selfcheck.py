"""
Self-verification suites: gradient checks through the whole model, scalar
loop oracles for the losses, brute-force oracles for negative selection and
retrieval metrics, and the idf closed forms.

Each suite reports its worst error against a threshold; `run_selfcheck`
collects them and `SelfCheckReport.raise_on_failure` turns failures into a
`.SelfCheckFailure` naming the failing properties.
"""

import math
from collections import namedtuple

import numpy as np

from tokalign.align_exception import SelfCheckFailure
from tokalign.cascade import (
    FusedPairs,
    cascade_select,
    combined_scores,
    full_select,
    random_select,
)
from tokalign.common import CLS_ID, SEP_ID, SPECIAL_TOKENS
from tokalign.data import Token
from tokalign.encoders import AlignmentModel, EncoderConfig
from tokalign.evaluation import rank_metrics
from tokalign.losses import (
    LossConfig,
    fusion_loss,
    sentence_loss,
    token_loss,
    total_objective,
)
from tokalign.tensor import Tensor, grad_check
from tokalign.toi import ToiWeights, compute_idf
from tokalign.util import Rng, get_logger


GRAD_THRESHOLD = 1e-4
# absolute gradient disagreement below round-off, read as exact
GRAD_ATOL = 1e-8
ORACLE_THRESHOLD = 1e-10

SuiteResult = namedtuple(
    "SuiteResult", ["name", "max_error", "threshold", "passed"]
)


class SelfCheckReport:
    def __init__(self, results):
        self.results = list(results)

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    @property
    def failures(self):
        return [r.name for r in self.results if not r.passed]

    def as_dict(self):
        return {
            "passed": self.passed,
            "suites": [r._asdict() for r in self.results],
        }

    def raise_on_failure(self):
        if not self.passed:
            raise SelfCheckFailure(self.failures)
        return self


def _result(name, error, threshold):
    return SuiteResult(name, float(error), threshold, bool(error <= threshold))


#
# Scalar loop oracles
#


def _nce(scores, positive):
    top = max(scores)
    denom = math.fsum(math.exp(s - top) for s in scores)
    return -(scores[positive] - top - math.log(denom))


def sentence_loss_oracle(x_bar, y_bar, tau1=1.0):
    x_bar, y_bar = np.asarray(x_bar), np.asarray(y_bar)
    K = len(x_bar)
    total = 0.0
    for i in range(K):
        scores = [float(np.dot(x_bar[j], y_bar[i])) / tau1 for j in range(K)]
        total += _nce(scores, i)
    return total


def token_loss_oracle(X, Y, toi, tau2=1.0):
    X, Y = np.asarray(X), np.asarray(Y)
    K = len(X)
    total = 0.0
    for i in range(K):
        for p, w in zip(toi[i].positions, toi[i].weights):
            scores = []
            for j in range(K):
                best = max(float(np.dot(x, Y[i][p])) for x in X[j])
                scores.append(best / tau2)
            total += w * _nce(scores, i)
    return total


def fusion_loss_oracle(selection, scores):
    """
    :param scores: dict ``(j, i)`` -> fused score ``w·z + bias``
    """
    total = 0.0
    for i, negs in enumerate(selection.text_anchor_negs):
        total += _nce([scores[(i, i)]] + [scores[(j, i)] for j in negs], 0)
    for j, negs in enumerate(selection.video_anchor_negs):
        total += _nce([scores[(j, j)]] + [scores[(j, i)] for i in negs], 0)
    return total


def top_k_oracle(S, k_prime):
    K = len(S)
    text = []
    video = []
    for a in range(K):
        others = [c for c in range(K) if c != a]
        col = sorted(others, key=lambda c: (-S[c][a], c))
        row = sorted(others, key=lambda c: (-S[a][c], c))
        text.append(sorted(col[:k_prime]))
        video.append(sorted(row[:k_prime]))
    return text, video


def rank_oracle(scores, ground_truth):
    ranks = []
    for q, row in enumerate(scores):
        gt = ground_truth[q]
        # ties sort the correct candidate last
        order = sorted(range(len(row)), key=lambda c: (-row[c], c == gt))
        ranks.append(order.index(gt) + 1)
    return ranks


#
# Fixtures
#


def tiny_config(vocab_size=12):
    return EncoderConfig(
        d=8,
        video_layers=1,
        text_layers=1,
        fusion_layers=1,
        heads=2,
        d_video_in=4,
        vocab_size=vocab_size,
        max_video_tokens=3,
        max_text_tokens=5,
    )


def random_batch(rng, K=4, config=None):
    """
    Random videos, ``[CLS] w w w [SEP]`` id sequences and normalized token
    weights on positions 1..3, sized for ``config``.
    """
    config = config or tiny_config()
    m, n = config.max_video_tokens, config.max_text_tokens
    videos = [rng.normal(1.0, (m, config.d_video_in)) for _ in range(K)]
    first = len(SPECIAL_TOKENS)
    sequences = [
        [CLS_ID]
        + [int(t) for t in rng.integers(first, config.vocab_size, n - 2)]
        + [SEP_ID]
        for _ in range(K)
    ]
    toi = []
    for _ in range(K):
        count = int(rng.integers(1, n - 1))
        positions = sorted(
            int(p) + 1 for p in rng.choice(n - 2, count, replace=False)
        )
        raw = rng.uniform(0.1, 1.0, count)
        toi.append(ToiWeights(positions, list(raw / raw.sum())))
    return videos, sequences, toi


LOSS_FNS = {
    "sentence": sentence_loss,
    "token": token_loss,
    "fusion": fusion_loss,
}


def _grad_suite(seeds, k_prime, samples, loss_fns):
    worst = {name: 0.0 for name in ("L1", "L2", "L3", "total")}
    loss = LossConfig(k_prime=k_prime)
    for seed in range(seeds):
        rng = Rng(seed).spawn("gradcheck")
        model = AlignmentModel(tiny_config(), seed=seed)
        videos, sequences, toi = random_batch(rng)
        first = model.encode(videos, sequences)
        S = combined_scores(
            first.x_bar, first.X, first.y_bar, first.Y, toi, first.video_mask
        )
        selection = cascade_select(S, loss.k_prime)

        def parts():
            batch = model.encode(videos, sequences)
            l1 = loss_fns["sentence"](batch.x_bar, batch.y_bar, loss.tau1)
            l2 = loss_fns["token"](
                batch.X, batch.Y, toi, loss.tau2, batch.video_mask
            )
            fused = FusedPairs(model, batch, selection)
            l3 = loss_fns["fusion"](selection, fused, model.head)
            return l1, l2, l3

        fns = {
            "L1": lambda: parts()[0],
            "L2": lambda: parts()[1],
            "L3": lambda: parts()[2],
            "total": lambda: total_objective(*parts(), loss.lambda_t),
        }
        params = model.parameters()
        for name, f in fns.items():
            err = grad_check(
                f,
                params,
                atol=GRAD_ATOL,
                samples=samples,
                rng=rng.spawn("coords-" + name),
            )
            worst[name] = max(worst[name], err)
    return [
        _result("grad." + name, err, GRAD_THRESHOLD)
        for name, err in worst.items()
    ]


def _loss_oracle_suite(instances, loss_fns):
    rng = Rng(0).spawn("loss-oracles")
    l1_err = l2_err = l3_err = 0.0
    for _ in range(instances):
        K = int(rng.integers(2, 6))
        d = int(rng.integers(1, 5))
        m = int(rng.integers(1, 4))
        n = int(rng.integers(2, 5))
        x_bar = rng.normal(1.0, (K, d))
        y_bar = rng.normal(1.0, (K, d))
        X = rng.normal(1.0, (K, m, d))
        Y = rng.normal(1.0, (K, n, d))
        toi = []
        for _ in range(K):
            count = int(rng.integers(0, n + 1))
            positions = sorted(
                int(p) for p in rng.choice(n, count, replace=False)
            )
            raw = rng.uniform(0.1, 1.0, count)
            weights = raw / max(raw.sum(), 1e-12)
            toi.append(ToiWeights(positions, list(weights)))
        tau = float(rng.uniform(0.5, 2.0))
        got = loss_fns["sentence"](Tensor(x_bar), Tensor(y_bar), tau).item()
        want = sentence_loss_oracle(x_bar, y_bar, tau)
        l1_err = max(l1_err, abs(got - want))
        got = loss_fns["token"](Tensor(X), Tensor(Y), toi, tau).item()
        want = token_loss_oracle(X, Y, toi, tau)
        l2_err = max(l2_err, abs(got - want))
        k_prime = int(rng.integers(1, K))
        selection = random_select(K, k_prime, rng)
        z = {pair: rng.normal(1.0, (d,)) for pair in set(selection.pairs())}
        w = rng.normal(1.0, (d,))
        from_head = {pair: float(np.dot(w, v)) for pair, v in z.items()}
        head = _FixedHead(w)
        got = loss_fns["fusion"](
            selection, {p: Tensor(v) for p, v in z.items()}, head
        ).item()
        want = fusion_loss_oracle(selection, from_head)
        l3_err = max(l3_err, abs(got - want))
    # closed forms
    zeros = Tensor(np.zeros((3, 2)))
    uniform = loss_fns["sentence"](zeros, zeros).item()
    spread = Tensor(np.eye(2) * math.sqrt(2))
    hand = loss_fns["sentence"](spread, spread).item()
    X0, Y0 = Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((3, 3, 2)))
    halves = [ToiWeights([0, 2], [0.5, 0.5])] * 3
    tokens = loss_fns["token"](X0, Y0, halves).item()
    everyone = full_select(3)
    flat = loss_fns["fusion"](
        everyone,
        {p: Tensor(np.zeros(2)) for p in set(everyone.pairs())},
        _FixedHead(np.ones(2)),
    ).item()
    closed = max(
        abs(uniform - 3 * math.log(3)),
        abs(hand - 2 * math.log(1 + math.exp(-2))),
        abs(tokens - 3 * math.log(3)),
        abs(flat - 6 * math.log(3)),
    )
    return [
        _result("oracle.sentence_loss", l1_err, ORACLE_THRESHOLD),
        _result("oracle.token_loss", l2_err, ORACLE_THRESHOLD),
        _result("oracle.fusion_loss", l3_err, ORACLE_THRESHOLD),
        _result("closed_form.losses", closed, ORACLE_THRESHOLD),
    ]


class _FixedHead:
    # Bias-free linear head over plain arrays, for the fusion oracle.
    def __init__(self, w):
        self._w = Tensor(w)

    def __call__(self, z_cls):
        rows = z_cls.shape[0]
        return (z_cls @ self._w.reshape(-1, 1)).reshape(rows)


def _sampler_suite(instances, draws):
    rng = Rng(0).spawn("sampler-oracles")
    mismatches = 0
    for _ in range(instances):
        K = int(rng.integers(2, 9))
        k_prime = int(rng.integers(1, K))
        # small integer scores so ties actually happen
        S = rng.integers(0, 4, (K, K)).astype(float)
        got = cascade_select(S, k_prime)
        text, video = top_k_oracle(S.tolist(), k_prime)
        if got.text_anchor_negs != text or got.video_anchor_negs != video:
            mismatches += 1
    K = int(rng.integers(2, 9))
    if cascade_select(np.zeros((K, K)), K - 1) != full_select(K):
        mismatches += 1
    counts = np.zeros(4)
    sampler = rng.spawn("uniformity")
    for _ in range(draws):
        counts[random_select(4, 1, sampler).text_anchor_negs[0][0]] += 1
    freq = counts[1:] / draws
    uniformity = float(np.max(np.abs(freq - 1.0 / 3)))
    return [
        _result("oracle.cascade_select", mismatches, 0),
        _result("sampler.uniformity", uniformity, 0.02),
    ]


def _metric_suite(instances):
    rng = Rng(0).spawn("metric-oracles")
    mismatches = 0
    for _ in range(instances):
        Q = int(rng.integers(1, 8))
        C = int(rng.integers(1, 8))
        scores = rng.integers(0, 5, (Q, C)).astype(float)
        gt = rng.integers(0, C, Q)
        got = rank_metrics(scores, gt, ns=(1, 5, 10))
        want = rank_oracle(scores.tolist(), gt.tolist())
        recall_ok = all(
            got.recall_at[n] == sum(r <= n for r in want) / Q
            for n in (1, 5, 10)
        )
        if got.ranks != want or not recall_ok:
            mismatches += 1
        if got.median_rank != float(np.median(want)):
            mismatches += 1
    return [_result("oracle.rank_metrics", mismatches, 0)]


IDF_TOY_CORPUS = (
    "stir the soup",
    "add the salt",
    "the pan is hot",
    "pour the oil",
)


def toy_corpus():
    """
    Four tagged captions; ``stir`` occurs in one, ``the`` in all.
    """
    tags = {
        "stir": "VERB",
        "add": "VERB",
        "pour": "VERB",
        "is": "AUX",
        "hot": "ADJ",
        "the": "DET",
    }
    return [
        [Token(w, tags.get(w, "NOUN"), k) for k, w in enumerate(s.split())]
        for s in IDF_TOY_CORPUS
    ]


def _idf_suite():
    table = compute_idf(toy_corpus())
    err = max(
        abs(table.lookup("stir") - math.log(2)),
        abs(table.lookup("the") - math.log(4 / 5)),
    )
    return [_result("closed_form.idf", err, 1e-12)]


def run_selfcheck(
    grad_seeds=3,
    grad_samples=6,
    oracle_instances=200,
    metric_instances=500,
    sampler_draws=10000,
    loss_fns=None,
):
    """
    Run every suite.

    :param loss_fns:
        optional replacements for ``"sentence"``, ``"token"`` or
        ``"fusion"`` loss functions, checked instead of the real ones
    :return: `SelfCheckReport`
    """
    fns = dict(LOSS_FNS)
    fns.update(loss_fns or {})
    results = []
    results += _grad_suite(grad_seeds, 1, grad_samples, fns)
    results += _loss_oracle_suite(oracle_instances, fns)
    results += _sampler_suite(oracle_instances, sampler_draws)
    results += _metric_suite(metric_instances)
    results += _idf_suite()
    log = get_logger(__name__)
    for r in results:
        log.info(
            "{:<28} {} max error {:.3e} (threshold {:.0e})".format(
                r.name,
                "ok  " if r.passed else "FAIL",
                r.max_error,
                r.threshold,
            )
        )
    return SelfCheckReport(results)
