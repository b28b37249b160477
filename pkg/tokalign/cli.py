"""
The ``tokalign`` command line program.

Subcommands: ``train``, ``eval``, ``idf``, ``gen-synthetic``,
``sample-inspect``, ``selfcheck`` and ``ablate``. Every run writes an
artifact plus ``<artifact>.manifest.json`` holding the config, seed and
SHA-256 of each file involved. Commands whose output is a report write it
to ``--report``/``--output`` or, failing that, to ``<run-dir>/<command>.json``.

Exit codes: 0 on success, 1 on runtime or numeric failures, 2 on
configuration errors.
"""

import contextlib
import json
import os

import numpy as np
from invoke import Collection, Program, task
from invoke.exceptions import Exit

from tokalign import __version__
from tokalign.align_exception import AlignException, ConfigurationError
from tokalign.cascade import combined_scores
from tokalign.checkpoint import load_checkpoint, save_checkpoint
from tokalign.common import DEFAULT_RUN_DIR, EXIT_CONFIG, EXIT_FAILURE
from tokalign.config import RunConfig
from tokalign.data import (
    SyntheticSpec,
    generate_synthetic,
    load_corpus,
    save_corpus,
)
from tokalign.evaluation import (
    InferenceWeights,
    StageMask,
    evaluate,
    score_matrix,
    sweep_token_weight,
)
from tokalign.selfcheck import run_selfcheck
from tokalign.toi import batch_weights, compute_idf, corpus_statistics
from tokalign.train import (
    ABLATIONS,
    Trainer,
    run_ablations,
    select_negatives,
)
from tokalign.tensor import no_grad
from tokalign.util import Rng, file_digest, get_logger, log_to_file


@contextlib.contextmanager
def _exit_codes():
    try:
        yield
    except ConfigurationError as e:
        raise Exit("configuration error: {}".format(e), code=EXIT_CONFIG)
    except AlignException as e:
        raise Exit("error: {}".format(e), code=EXIT_FAILURE)
    except OSError as e:
        raise Exit("error: {}".format(e), code=EXIT_FAILURE)


def _load_config(config, override):
    cfg = RunConfig.from_path(config) if config else RunConfig()
    return cfg.apply_overrides(override or [])


def _write_json(path, obj):
    with open(path, "w") as f:
        f.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_manifest(artifact, command, config=None, seed=None, extra=None):
    """
    Write ``<artifact>.manifest.json`` describing how ``artifact`` was made.
    """
    artifacts = {
        p: file_digest(p)
        for p in [artifact] + list((extra or {}).get("inputs", []))
        if p and os.path.exists(p)
    }
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "artifacts": artifacts,
    }
    path = artifact + ".manifest.json"
    _write_json(path, manifest)
    return path


def _report_path(path, run_dir, command):
    if path:
        return path
    run_dir = run_dir or DEFAULT_RUN_DIR
    os.makedirs(run_dir, exist_ok=True)
    return os.path.join(run_dir, command + ".json")


def _emit(obj, path=None):
    if path:
        _write_json(path, obj)
    print(json.dumps(obj, sort_keys=True, indent=2))


@task(
    iterable=["override"],
    help={
        "config": "JSON run config; defaults to the desk-scale config",
        "override": "section.key=value, repeatable",
        "corpus": "training corpus (JSON lines)",
        "checkpoint": "where to write the trained checkpoint",
        "loss-log": "where to write per-step JSON loss records",
        "seed": "run seed",
        "steps": "total optimization steps",
        "log-file": "also send library logs to this file",
    },
)
def train(
    c,
    config=None,
    override=None,
    corpus=None,
    checkpoint=None,
    loss_log=None,
    seed=None,
    steps=None,
    log_file=None,
):
    """
    Train a model and write a checkpoint.
    """
    with _exit_codes():
        if log_file:
            log_to_file(log_file)
        cfg = _load_config(config, override)
        if corpus:
            cfg.paths.corpus = corpus
        if checkpoint:
            cfg.paths.checkpoint = checkpoint
        if loss_log:
            cfg.paths.loss_log = loss_log
        if seed is not None:
            cfg.seed = int(seed)
        if steps is not None:
            cfg.optimizer.total_steps = int(steps)
        cfg.validate()
        if not cfg.paths.corpus or not cfg.paths.checkpoint:
            raise ConfigurationError("train needs --corpus and --checkpoint")
        records = load_corpus(cfg.paths.corpus)
        with contextlib.ExitStack() as stack:
            log = None
            if cfg.paths.loss_log:
                log = stack.enter_context(open(cfg.paths.loss_log, "w"))
            result = Trainer(cfg, records, loss_log=log).run()
        save_checkpoint(
            cfg.paths.checkpoint,
            cfg,
            result.model,
            result.vocab,
            result.idf,
        )
        write_manifest(
            cfg.paths.checkpoint,
            "train",
            cfg.as_dict(),
            cfg.seed,
            {"inputs": [cfg.paths.corpus, cfg.paths.loss_log]},
        )
        last = result.history[-1]
        print(json.dumps(last, sort_keys=True))


def _parse_floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


@task(
    name="eval",
    iterable=["override"],
    help={
        "checkpoint": "checkpoint written by train",
        "corpus": "paired evaluation corpus",
        "config": "JSON config whose dimensions the checkpoint must match",
        "override": "section.key=value, repeatable",
        "report": "where to write the JSON report",
        "stages": "'all' or e.g. 'sentence+token'",
        "w-sentence": "sentence stage weight",
        "w-token": "token stage weight",
        "w-fusion": "fusion stage weight",
        "sweep": "comma separated token weights to sweep, e.g. 0,0.1,0.5",
        "direction": "t2v (text queries) or v2t",
        "scores-csv": "dump the combined score matrix as CSV",
        "run-dir": "report directory when --report is not given",
    },
)
def eval_(
    c,
    checkpoint,
    corpus,
    config=None,
    override=None,
    report=None,
    stages=None,
    w_sentence=None,
    w_token=None,
    w_fusion=None,
    sweep=None,
    direction=None,
    scores_csv=None,
    run_dir=None,
):
    """
    Evaluate retrieval on a paired corpus.
    """
    with _exit_codes():
        cfg = _load_config(config, override) if (config or override) else None
        expected = cfg.encoder if cfg is not None else None
        ckpt = load_checkpoint(checkpoint, expected)
        ev = (cfg or ckpt.config).eval
        weights = InferenceWeights(
            ev.w_sentence if w_sentence is None else float(w_sentence),
            ev.w_token if w_token is None else float(w_token),
            ev.w_fusion if w_fusion is None else float(w_fusion),
        ).validate()
        mask = StageMask.parse(stages or ev.stages)
        direction = direction or ev.direction
        target = set((cfg or ckpt.config).target_pos)
        records = load_corpus(corpus)
        combined, per_stage = evaluate(
            ckpt.model,
            ckpt.vocab,
            ckpt.idf,
            records,
            weights,
            mask,
            target,
            direction,
            ev.recalls,
        )
        out = combined.as_dict()
        out["per_stage"] = {k: v.as_dict() for k, v in per_stage.items()}
        out["weights"] = weights.as_dict()
        out["stages"] = mask.names()
        out["direction"] = direction
        weights_to_sweep = ev.sweep if sweep is None else _parse_floats(sweep)
        if weights_to_sweep:
            results = sweep_token_weight(
                ckpt.model,
                ckpt.vocab,
                ckpt.idf,
                records,
                weights_to_sweep,
                weights,
                mask,
                target,
                direction,
                ev.recalls,
            )
            out["sweep"] = [
                {
                    "token_weight": r.token_weight,
                    "metrics": r.metrics.as_dict(),
                    "top": r.top,
                }
                for r in results
            ]
        if scores_csv:
            scores = score_matrix(
                ckpt.model,
                ckpt.vocab,
                ckpt.idf,
                records,
                records,
                weights,
                mask,
                target,
                direction,
            )
            np.savetxt(scores_csv, scores, delimiter=",", fmt="%.17g")
        report = _report_path(report, run_dir, "eval")
        _emit(out, report)
        write_manifest(
            report,
            "eval",
            ckpt.config.as_dict(),
            ckpt.config.seed,
            {"inputs": [checkpoint, corpus, scores_csv]},
        )


@task(
    help={
        "corpus": "caption corpus (JSON lines)",
        "output": "where to write the idf table",
        "target-pos": "comma separated tags counted as tokens of interest",
        "run-dir": "output directory when --output is not given",
    }
)
def idf(c, corpus, output=None, target_pos="NOUN,VERB", run_dir=None):
    """
    Compute the idf table of a caption corpus.
    """
    with _exit_codes():
        records = load_corpus(corpus)
        table = compute_idf(records)
        target = {t.strip() for t in target_pos.split(",") if t.strip()}
        out = table.as_dict()
        out["ranked"] = [[w, v] for w, v in table.ranked()]
        out["statistics"] = corpus_statistics(records, target)
        output = _report_path(output, run_dir, "idf")
        _emit(out, output)
        write_manifest(
            output,
            "idf",
            {"target_pos": sorted(target)},
            extra={"inputs": [corpus]},
        )


@task(
    name="gen-synthetic",
    help={
        "output": "where to write the corpus",
        "num-pairs": "number of video-text pairs",
        "d-video-in": "raw video feature width",
        "concepts": "number of latent concepts (<= vocabulary size)",
        "noise-sigma": "Gaussian noise scale on video frames",
        "seed": "generator seed",
        "frames": "frames per video",
        "min-concepts": "fewest concepts per pair",
        "max-concepts": "most concepts per pair",
        "unique-sets": "never repeat a concept set",
    },
)
def gen_synthetic(
    c,
    output,
    num_pairs=500,
    d_video_in=16,
    concepts=48,
    noise_sigma=0.1,
    seed=0,
    frames=6,
    min_concepts=1,
    max_concepts=3,
    unique_sets=False,
):
    """
    Write a synthetic planted-alignment corpus.
    """
    with _exit_codes():
        spec = SyntheticSpec(
            num_pairs=int(num_pairs),
            d_video_in=int(d_video_in),
            concepts=int(concepts),
            noise_sigma=float(noise_sigma),
            seed=int(seed),
            frames=int(frames),
            min_concepts=int(min_concepts),
            max_concepts=int(max_concepts),
            unique_sets=unique_sets,
        )
        records = generate_synthetic(spec)
        save_corpus(records, output)
        write_manifest(output, "gen-synthetic", spec.as_dict(), spec.seed)
        get_logger(__name__).info(
            "Wrote {} synthetic pairs to {}".format(len(records), output)
        )


@task(
    name="sample-inspect",
    help={
        "checkpoint": "checkpoint written by train",
        "corpus": "corpus to draw the batch from",
        "offset": "index of the first record of the batch",
        "batch-size": "batch size; defaults to the trained batch size",
        "mode": "cascade, random or full",
        "report": "where to write the JSON output",
        "run-dir": "report directory when --report is not given",
    },
)
def sample_inspect(
    c,
    checkpoint,
    corpus,
    offset=0,
    batch_size=None,
    mode=None,
    report=None,
    run_dir=None,
):
    """
    Print a batch's combined score matrix and the negatives chosen from it.
    """
    with _exit_codes():
        ckpt = load_checkpoint(checkpoint)
        cfg = ckpt.config
        K = int(batch_size or cfg.optimizer.batch_size)
        offset = int(offset)
        records = load_corpus(corpus)[offset : offset + K]
        if len(records) < 2:
            raise ConfigurationError("need at least 2 records to inspect")
        enc = ckpt.model.config
        sequences = [r.sequence(enc.max_text_tokens) for r in records]
        with no_grad():
            batch = ckpt.model.encode(
                [r.frames(enc.max_video_tokens) for r in records],
                [ckpt.vocab.encode(s) for s in sequences],
            )
            toi = batch_weights(sequences, ckpt.idf, set(cfg.target_pos))
            S = combined_scores(
                batch.x_bar,
                batch.X,
                batch.y_bar,
                batch.Y,
                toi,
                batch.video_mask,
                weighted=cfg.loss.weighted_cascade,
            )
            loss = cfg.loss
            loss.k_prime = min(loss.k_prime, len(records) - 1)
            selection = select_negatives(
                batch,
                toi,
                loss,
                mode or cfg.cascade_mode,
                Rng(cfg.seed).spawn("inspect"),
            )
        report = _report_path(report, run_dir, "sample-inspect")
        _emit(
            {
                "ids": [r.id for r in records],
                "scores": S.values.tolist(),
                "selection": selection.as_dict(),
            },
            report,
        )
        write_manifest(
            report,
            "sample-inspect",
            cfg.as_dict(),
            cfg.seed,
            {"inputs": [checkpoint, corpus]},
        )


@task(
    help={
        "seeds": "random seeds for the gradient checks",
        "samples": "coordinates checked per parameter tensor",
        "report": "where to write the JSON summary",
        "run-dir": "summary directory when --report is not given",
    }
)
def selfcheck(c, seeds=3, samples=6, report=None, run_dir=None):
    """
    Run the gradient, oracle and metric self-checks.
    """
    with _exit_codes():
        result = run_selfcheck(
            grad_seeds=int(seeds), grad_samples=int(samples)
        )
        report = _report_path(report, run_dir, "selfcheck")
        _emit(result.as_dict(), report)
        write_manifest(
            report,
            "selfcheck",
            {"seeds": int(seeds), "samples": int(samples)},
        )
        result.raise_on_failure()


@task(
    iterable=["override"],
    help={
        "config": "JSON run config; defaults to the desk-scale config",
        "override": "section.key=value, repeatable",
        "corpus": "corpus to split into training and held-out pairs",
        "names": "comma separated ablations; default all",
        "report": "where to write the combined JSON report",
        "log-file": "also send library logs to this file",
        "run-dir": "report directory when --report is not given",
    },
)
def ablate(
    c,
    corpus,
    config=None,
    override=None,
    names=None,
    report=None,
    log_file=None,
    run_dir=None,
):
    """
    Train and evaluate each loss ensemble on one train/held-out split.
    """
    with _exit_codes():
        if log_file:
            log_to_file(log_file)
        cfg = _load_config(config, override).validate()
        chosen = [n.strip() for n in names.split(",")] if names else None
        for name in chosen or []:
            if name not in ABLATIONS:
                raise ConfigurationError(
                    "unknown ablation {!r}; known: {}".format(
                        name, list(ABLATIONS)
                    )
                )
        reports = run_ablations(cfg, load_corpus(corpus), chosen)
        out = {"config": cfg.as_dict(), "ablations": reports}
        report = _report_path(report, run_dir, "ablate")
        _emit(out, report)
        write_manifest(
            report, "ablate", cfg.as_dict(), cfg.seed, {"inputs": [corpus]}
        )


ns = Collection(
    train, eval_, idf, gen_synthetic, sample_inspect, selfcheck, ablate
)

program = Program(namespace=ns, version=__version__, name="tokalign")
