"""
Training loop: encode a batch, compute the enabled losses, pick fusion
negatives, update with Adam under a linear warmup/decay schedule.
"""

import json
import math
from collections import namedtuple

import numpy as np

from tokalign.align_exception import ConfigurationError, NumericError
from tokalign.cascade import (
    FusedPairs,
    cascade_select,
    combined_scores,
    full_select,
    random_select,
)
from tokalign.data import Vocabulary, iter_batches, load_corpus, split_corpus
from tokalign.encoders import AlignmentModel
from tokalign.evaluation import evaluate
from tokalign.losses import (
    LossBreakdown,
    fusion_loss,
    sentence_loss,
    toi_similarities,
    token_loss,
    total_objective,
)
from tokalign.optim import Adam, LinearWarmupDecay
from tokalign.tensor import Tensor
from tokalign.toi import compute_idf, sentence_weights
from tokalign.util import Rng, get_logger


TrainResult = namedtuple(
    "TrainResult", ["model", "vocab", "idf", "history", "config"]
)

Ablation = namedtuple("Ablation", ["losses", "cascade_mode", "stages"])

# Loss ensembles, each evaluated with the stages it trained.
ABLATIONS = {
    "L1": Ablation(["sentence"], "cascade", "sentence"),
    "L2": Ablation(["token"], "cascade", "token"),
    "L1+L2": Ablation(["sentence", "token"], "cascade", "sentence+token"),
    "L3(random)": Ablation(["fusion"], "random", "fusion"),
    "L1+L3(random)": Ablation(
        ["sentence", "fusion"], "random", "sentence+fusion"
    ),
    "L1+L3(cascade)": Ablation(
        ["sentence", "fusion"], "cascade", "sentence+fusion"
    ),
    "L1+L2+L3(cascade)": Ablation(
        ["sentence", "token", "fusion"], "cascade", "all"
    ),
}


def select_negatives(
    batch, toi, loss, cascade_mode="cascade", rng=None, similarities=None
):
    """
    Fusion negatives for an encoded batch according to ``cascade_mode``.

    :return: `.CascadeSelection`
    """
    K = batch.x_bar.shape[0]
    if cascade_mode == "cascade":
        S = combined_scores(
            batch.x_bar,
            batch.X,
            batch.y_bar,
            batch.Y,
            toi,
            batch.video_mask,
            weighted=loss.weighted_cascade,
            similarities=similarities,
        )
        return cascade_select(S, loss.k_prime)
    if cascade_mode == "random":
        return random_select(K, loss.k_prime, rng)
    if cascade_mode == "full":
        return full_select(K)
    raise ConfigurationError("unknown cascade_mode {!r}".format(cascade_mode))


def batch_objective(
    model, batch, toi, loss, cascade_mode="cascade", rng=None, selection=None
):
    """
    Enabled losses of one encoded batch and their weighted total.

    :param selection:
        fixed `.CascadeSelection` to use instead of selecting afresh
    :return: ``(LossBreakdown of tensors, CascadeSelection or None)``
    """
    zero = Tensor(np.zeros((), dtype=model.dtype))
    l1 = l2 = l3 = zero
    sims = None
    if loss.uses("token"):
        sims = toi_similarities(batch.X, batch.Y, toi, batch.video_mask)
        l2 = token_loss(
            batch.X,
            batch.Y,
            toi,
            loss.tau2,
            similarities=sims,
            symmetric=loss.symmetric,
            reduction=loss.reduction,
        )
    if loss.uses("sentence"):
        l1 = sentence_loss(
            batch.x_bar, batch.y_bar, loss.tau1, loss.symmetric, loss.reduction
        )
    if loss.uses("fusion"):
        if selection is None:
            selection = select_negatives(
                batch, toi, loss, cascade_mode, rng, sims
            )
        fused = FusedPairs(model, batch, selection, dedup=loss.dedup_fusion)
        l3 = fusion_loss(selection, fused, model.head, loss.reduction)
    total = total_objective(l1, l2, l3, loss.lambda_t)
    return LossBreakdown(l1, l2, l3, total), selection


class Trainer:
    """
    Owns a model, its optimizer and the batch stream for one run.

    :param config: validated `.RunConfig`
    :param records: training `.CorpusRecord` list
    :param vocab: `.Vocabulary`; built from ``records`` when omitted
    :param idf: `.IdfTable`; computed from ``records`` when omitted
    :param loss_log: optional writable file receiving one JSON line per step
    """

    log_every = 100

    def __init__(self, config, records, vocab=None, idf=None, loss_log=None):
        config.validate()
        if len(records) < config.optimizer.batch_size:
            raise ConfigurationError(
                "{} training records for batch size {}".format(
                    len(records), config.optimizer.batch_size
                )
            )
        self.config = config
        self.records = records
        self.vocab = vocab or Vocabulary.from_corpus(records)
        self.idf = idf or compute_idf(records)
        encoder = config.resolved_encoder(len(self.vocab))
        if encoder.vocab_size < len(self.vocab):
            raise ConfigurationError(
                "vocab_size {} cannot hold {} vocabulary entries".format(
                    encoder.vocab_size, len(self.vocab)
                )
            )
        self.model = AlignmentModel(
            encoder,
            seed=config.seed,
            dtype=config.dtype,
            fusion=config.loss.uses("fusion"),
        )
        opt = config.optimizer
        self.optimizer = Adam(
            self.model.parameters(),
            lr=opt.learning_rate,
            betas=(opt.beta1, opt.beta2),
            eps=opt.eps,
            weight_decay=opt.weight_decay,
        )
        self.schedule = LinearWarmupDecay(
            opt.learning_rate, opt.warmup_steps, opt.total_steps
        )
        rng = Rng(config.seed)
        self._batches = iter_batches(
            list(range(len(records))), opt.batch_size, rng.spawn("batches")
        )
        self._negatives = rng.spawn("negatives")
        n_max = encoder.max_text_tokens
        m_max = encoder.max_video_tokens
        target = set(config.target_pos)
        self._frames = [r.frames(m_max) for r in records]
        sequences = [r.sequence(n_max) for r in records]
        self._ids = [self.vocab.encode(seq) for seq in sequences]
        self._toi = [sentence_weights(s, self.idf, target) for s in sequences]
        self._loss_log = loss_log
        self.step_index = 0
        self.history = []
        self._log = get_logger(__name__)

    def step(self):
        """
        Run one optimization step.

        :return: the step's JSON log record as a dict
        :raises: `.NumericError` -- naming the step, on a non-finite loss
            or gradient
        """
        step = self.step_index
        idx = next(self._batches)
        try:
            batch = self.model.encode(
                [self._frames[i] for i in idx], [self._ids[i] for i in idx]
            )
            parts, _ = batch_objective(
                self.model,
                batch,
                [self._toi[i] for i in idx],
                self.config.loss,
                self.config.cascade_mode,
                self._negatives,
            )
            values = [p.item() for p in parts]
            if not all(math.isfinite(v) for v in values):
                raise NumericError("non-finite loss {}".format(values))
            self.optimizer.zero_grad()
            parts.total.backward()
            lr = self.schedule(step)
            self.optimizer.step(lr)
        except NumericError as e:
            raise NumericError(e.message, step if e.step is None else e.step)
        record = dict(zip(("l1", "l2", "l3", "total"), values))
        record["step"] = step
        record["lr"] = lr
        line = json.dumps(record, sort_keys=True)
        self._log.debug(line)
        if self._loss_log is not None:
            self._loss_log.write(line + "\n")
        if step % self.log_every == 0 or step == self.total_steps - 1:
            self._log.info(
                "step {}/{} loss {:.4f} lr {:.2e}".format(
                    step + 1, self.total_steps, record["total"], lr
                )
            )
        self.history.append(record)
        self.step_index += 1
        return record

    @property
    def total_steps(self):
        return self.config.optimizer.total_steps

    def run(self):
        while self.step_index < self.total_steps:
            self.step()
        return TrainResult(
            self.model, self.vocab, self.idf, self.history, self.config
        )


def run_train(config, records=None, loss_log=None):
    """
    Train per ``config``. Records default to ``config.paths.corpus``.

    :return: `TrainResult`
    """
    if records is None:
        if not config.paths.corpus:
            raise ConfigurationError("no training corpus configured")
        records = load_corpus(config.paths.corpus)
    return Trainer(config, records, loss_log=loss_log).run()


def ablation_config(config, name):
    """
    Copy of ``config`` set up for the named entry of `ABLATIONS`.
    """
    try:
        ablation = ABLATIONS[name]
    except KeyError:
        raise ConfigurationError(
            "unknown ablation {!r}; known: {}".format(name, list(ABLATIONS))
        )
    out = config.copy()
    out.loss.losses = list(ablation.losses)
    out.cascade_mode = ablation.cascade_mode
    out.eval.stages = ablation.stages
    return out


def train_and_evaluate(config, train, held_out):
    """
    Train on ``train`` and report retrieval on ``held_out``.

    :return: ``(TrainResult, combined RetrievalMetrics, per-stage dict)``
    """
    result = Trainer(config, train).run()
    ev = config.eval
    combined, per_stage = evaluate(
        result.model,
        result.vocab,
        result.idf,
        held_out,
        ev.weights,
        ev.stage_mask,
        set(config.target_pos),
        ev.direction,
        ev.recalls,
    )
    return result, combined, per_stage


def run_ablations(config, records, names=None):
    """
    Train and evaluate each named ablation from the same split of
    ``records``.

    :return: dict name -> report dict
    """
    names = list(names or ABLATIONS)
    train, held_out = split_corpus(
        records, config.eval.held_out, Rng(config.seed).spawn("split")
    )
    reports = {}
    for name in names:
        cfg = ablation_config(config, name)
        _, combined, per_stage = train_and_evaluate(cfg, train, held_out)
        reports[name] = {
            "losses": cfg.loss.losses,
            "cascade_mode": cfg.cascade_mode,
            "stages": cfg.eval.stages,
            "metrics": combined.as_dict(),
            "per_stage": {k: v.as_dict() for k, v in per_stage.items()},
        }
        get_logger(__name__).info(
            "Ablation {}: {}".format(name, combined.as_dict())
        )
    return reports
