import json
from unittest.mock import patch

import numpy as np
from invoke import Context
from invoke.exceptions import Exit
from pytest import raises

from tokalign import __version__, load_corpus
from tokalign.cli import (
    ablate,
    eval_,
    gen_synthetic,
    idf,
    ns,
    sample_inspect,
    selfcheck,
    train,
)
from tokalign.selfcheck import SelfCheckReport, SuiteResult
from tokalign.util import file_digest

from ._util import slow


def _json(path):
    with open(path) as f:
        return json.load(f)


def collection_names_every_command():
    assert sorted(ns.task_names) == [
        "ablate",
        "eval",
        "gen-synthetic",
        "idf",
        "sample-inspect",
        "selfcheck",
        "train",
    ]


class gen_synthetic_:
    def writes_corpus_and_manifest(self, tmp_path):
        output = str(tmp_path / "synthetic.jsonl")
        gen_synthetic(
            Context(),
            output=output,
            num_pairs=10,
            d_video_in=4,
            concepts=12,
            frames=4,
            seed=3,
        )
        assert len(load_corpus(output)) == 10
        manifest = _json(output + ".manifest.json")
        assert manifest["command"] == "gen-synthetic"
        assert manifest["seed"] == 3
        assert manifest["version"] == __version__
        assert manifest["config"]["num_pairs"] == 10
        assert manifest["artifacts"] == {output: file_digest(output)}

    def invalid_spec_is_a_configuration_error(self, tmp_path):
        with raises(Exit) as info:
            gen_synthetic(
                Context(), output=str(tmp_path / "x.jsonl"), concepts=10000
            )
        assert info.value.code == 2


class idf_:
    def writes_table_ranking_and_statistics(self, tmp_path, corpus_path):
        output = str(tmp_path / "idf.json")
        idf(Context(), corpus=corpus_path, output=output)
        table = _json(output)
        assert table["corpus_size"] == 16
        assert table["statistics"]["sentences"] == 16
        values = [v for _, v in table["ranked"]]
        assert values == sorted(values, reverse=True)
        assert corpus_path in _json(output + ".manifest.json")["artifacts"]

    def defaults_to_the_run_directory(self, tmp_path, corpus_path):
        run_dir = tmp_path / "runs"
        idf(Context(), corpus=corpus_path, run_dir=str(run_dir))
        output = str(run_dir / "idf.json")
        assert _json(output)["corpus_size"] == 16
        manifest = _json(output + ".manifest.json")
        assert manifest["command"] == "idf"
        assert manifest["config"] == {"target_pos": ["NOUN", "VERB"]}

    def missing_corpus_is_a_runtime_failure(self, tmp_path):
        with raises(Exit) as info:
            idf(Context(), corpus=str(tmp_path / "absent.jsonl"))
        assert info.value.code == 1


class train_:
    def writes_checkpoint_manifest_and_loss_log(
        self, tmp_path, corpus_path, config_path, capsys
    ):
        checkpoint = str(tmp_path / "model.tkal")
        loss_log = str(tmp_path / "loss.jsonl")
        train(
            Context(),
            config=config_path,
            corpus=corpus_path,
            checkpoint=checkpoint,
            loss_log=loss_log,
            override=["seed=4"],
        )
        with open(loss_log) as f:
            lines = f.read().splitlines()
        assert len(lines) == 4
        last = json.loads(capsys.readouterr().out)
        assert last == json.loads(lines[-1])
        manifest = _json(checkpoint + ".manifest.json")
        assert manifest["seed"] == 4
        assert set(manifest["artifacts"]) == {
            checkpoint,
            corpus_path,
            loss_log,
        }

    def needs_a_checkpoint_path(self, corpus_path, config_path):
        with raises(Exit) as info:
            train(Context(), config=config_path, corpus=corpus_path)
        assert info.value.code == 2

    def bad_override(self, corpus_path, config_path, tmp_path):
        with raises(Exit) as info:
            train(
                Context(),
                config=config_path,
                corpus=corpus_path,
                checkpoint=str(tmp_path / "m.tkal"),
                override=["loss.tau9=1"],
            )
        assert info.value.code == 2


class eval_command:
    def reports_metrics_per_stage(self, tmp_path, trained, corpus_path):
        report = str(tmp_path / "report.json")
        eval_(
            Context(),
            checkpoint=trained,
            corpus=corpus_path,
            report=report,
            sweep="0,0.5",
            w_token="0.5",
        )
        out = _json(report)
        assert {"R1", "R5", "R10", "MR"} <= set(out)
        assert sorted(out["per_stage"]) == ["fusion", "sentence", "token"]
        assert out["weights"]["w_token"] == 0.5
        assert out["direction"] == "t2v"
        assert [s["token_weight"] for s in out["sweep"]] == [0.0, 0.5]
        assert _json(report + ".manifest.json")["command"] == "eval"

    def writes_the_score_matrix(self, tmp_path, trained, corpus_path):
        csv = str(tmp_path / "scores.csv")
        eval_(
            Context(),
            checkpoint=trained,
            corpus=corpus_path,
            stages="sentence",
            direction="v2t",
            scores_csv=csv,
            run_dir=str(tmp_path),
        )
        assert np.loadtxt(csv, delimiter=",").shape == (16, 16)
        manifest = _json(str(tmp_path / "eval.json.manifest.json"))
        assert csv in manifest["artifacts"]

    def sweeps_the_configured_weights_by_default(
        self, tmp_path, trained, corpus_path
    ):
        eval_(
            Context(),
            checkpoint=trained,
            corpus=corpus_path,
            run_dir=str(tmp_path / "runs"),
        )
        out = _json(str(tmp_path / "runs" / "eval.json"))
        weights = [s["token_weight"] for s in out["sweep"]]
        assert weights == [0.0, 0.1, 0.5]

    def an_empty_configured_sweep_skips_it(
        self, tmp_path, trained, corpus_path, config_path
    ):
        report = str(tmp_path / "report.json")
        eval_(
            Context(),
            checkpoint=trained,
            corpus=corpus_path,
            config=config_path,
            override=["eval.sweep=[]"],
            report=report,
        )
        assert "sweep" not in _json(report)

    def mismatched_architecture(self, tmp_path, trained, corpus_path):
        with raises(Exit) as info:
            eval_(
                Context(),
                checkpoint=trained,
                corpus=corpus_path,
                override=["encoder.d=16"],
            )
        assert info.value.code == 1

    def unknown_stage(self, trained, corpus_path):
        with raises(Exit) as info:
            eval_(
                Context(), checkpoint=trained, corpus=corpus_path, stages="x"
            )
        assert info.value.code == 2


class sample_inspect_:
    def prints_scores_and_negatives(
        self, tmp_path, trained, corpus_path, capsys
    ):
        report = str(tmp_path / "inspect.json")
        sample_inspect(
            Context(),
            checkpoint=trained,
            corpus=corpus_path,
            offset=2,
            report=report,
        )
        out = json.loads(capsys.readouterr().out)
        assert _json(report) == out
        manifest = _json(report + ".manifest.json")
        assert manifest["command"] == "sample-inspect"
        assert set(manifest["artifacts"]) == {report, trained, corpus_path}
        assert len(out["ids"]) == 4
        assert np.asarray(out["scores"]).shape == (4, 4)
        negs = out["selection"]["text_anchor_negs"]
        assert all(len(n) == 2 for n in negs)

    def needs_two_records(self, trained, corpus_path):
        with raises(Exit) as info:
            sample_inspect(
                Context(), checkpoint=trained, corpus=corpus_path, offset=15
            )
        assert info.value.code == 2


class ablate_:
    def reports_the_named_ablations(self, tmp_path, corpus_path, config_path):
        report = str(tmp_path / "ablations.json")
        ablate(
            Context(),
            corpus=corpus_path,
            config=config_path,
            names="L1",
            override=["optimizer.total_steps=2"],
            report=report,
        )
        out = _json(report)
        assert list(out["ablations"]) == ["L1"]
        assert out["config"]["optimizer"]["total_steps"] == 2

    def unknown_ablation(self, corpus_path):
        with raises(Exit) as info:
            ablate(Context(), corpus=corpus_path, names="L9")
        assert info.value.code == 2


@slow
def selfcheck_command_passes(tmp_path, capsys):
    report = str(tmp_path / "selfcheck.json")
    selfcheck(Context(), seeds=1, samples=3, report=report)
    assert _json(report)["passed"] is True
    manifest = _json(report + ".manifest.json")
    assert manifest["config"] == {"seeds": 1, "samples": 3}


def selfcheck_failures_still_write_summary_and_manifest(tmp_path):
    failed = SelfCheckReport([SuiteResult("grad.L1", 1.0, 1e-4, False)])
    with patch("tokalign.cli.run_selfcheck", return_value=failed):
        with raises(Exit) as info:
            selfcheck(Context(), run_dir=str(tmp_path))
    assert info.value.code == 1
    summary = str(tmp_path / "selfcheck.json")
    assert _json(summary)["passed"] is False
    assert _json(summary + ".manifest.json")["command"] == "selfcheck"
