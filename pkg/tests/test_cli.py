import json
import os

import numpy as np
import pytest

from rubric.cli import main
from rubric.config import load_run_config, parse_config_file, render_config, resolve_config
from rubric.data import load_csv, load_predictions, on_lattice, synth_corpus, write_csv


FAST = [
    "--set", "model.d_model=16", "--set", "model.n_layers=1",
    "--set", "model.n_heads=2", "--set", "model.d_ff=32",
    "--set", "model.dropout_p=0.0",
    "--set", "train.epochs=2", "--set", "train.batch_size=4",
    "--set", "train.learning_rate=1e-3",
]


@pytest.fixture()
def corpus_csv(tmp_path):
    path = tmp_path / "corpus.csv"
    write_csv(synth_corpus(14, seed=17), str(path))
    return str(path)


def run(args):
    return main([str(a) for a in args])


class TestConfig:
    def test_file_parsing_and_overrides(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            "# comment\n"
            "model.d_model = 16\n"
            "train.adv_lr = 0.5\n"
            "cv.k = 3\n"
        )
        cfg = load_run_config(str(cfg_file), ["train.adv_lr=0.25"])
        assert cfg.model["d_model"] == 16
        assert cfg.train.adv_lr == 0.25  # override wins
        assert cfg.cv_k == 3

    def test_unknown_key_rejected(self):
        from rubric.config import ConfigError

        with pytest.raises(ConfigError, match="unknown"):
            resolve_config({"model.width": "3"})

    def test_bad_value_rejected(self):
        from rubric.config import ConfigError

        with pytest.raises(ConfigError, match="d_model"):
            resolve_config({"model.d_model": "wide"})

    def test_render_round_trips_through_parser(self, tmp_path):
        cfg = resolve_config({"train.epochs": "3", "model.d_model": "16"})
        text = render_config(cfg)
        path = tmp_path / "echo.cfg"
        path.write_text(text)
        again = resolve_config(parse_config_file(str(path)))
        assert render_config(again) == text

    def test_invalid_train_field_value(self):
        from rubric.config import ConfigError

        with pytest.raises(ConfigError):
            resolve_config({"train.loss_kind": "hinge"})


class TestTrainCommand:
    def test_missing_data_file_exits_one_with_path(self, tmp_path, capsys):
        code = run(["train", "--data", tmp_path / "nope.csv", "--out", tmp_path / "o"])
        assert code == 1
        assert "nope.csv" in capsys.readouterr().err

    def test_artifacts_written(self, corpus_csv, tmp_path):
        out = tmp_path / "run1"
        code = run(["train", "--data", corpus_csv, "--out", out, "--seed", 5] + FAST)
        assert code == 0
        for name in ("checkpoint.bin", "report.csv", "metrics.json", "config.txt"):
            assert (out / name).exists(), name
        metrics = json.loads((out / "metrics.json").read_text())
        assert 0 <= metrics["valid_mcrmse"] < 5
        config_echo = (out / "config.txt").read_text()
        assert "train.seed = 5" in config_echo
        assert "model.d_model = 16" in config_echo

    def test_rerun_is_byte_identical_except_timing(self, corpus_csv, tmp_path):
        out = tmp_path / "same"
        args = ["train", "--data", corpus_csv, "--out", out, "--seed", 3] + FAST
        assert run(args) == 0
        first = {
            name: (out / name).read_bytes()
            for name in ("checkpoint.bin", "metrics.json", "config.txt", "report.csv")
        }
        assert run(args) == 0  # rerun with identical config into the same place
        for name in ("checkpoint.bin", "metrics.json", "config.txt"):
            assert (out / name).read_bytes() == first[name], name
        strip = lambda text: [line.rsplit(",", 1)[0] for line in text.splitlines()]
        assert strip((out / "report.csv").read_text()) == strip(
            first["report.csv"].decode()
        )

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_divergence_exits_two(self, corpus_csv, tmp_path, capsys):
        code = run(
            ["train", "--data", corpus_csv, "--out", tmp_path / "boom"]
            + FAST[:-4]
            + ["--set", "train.epochs=1", "--set", "train.learning_rate=1e300"]
        )
        assert code == 2
        assert "numeric" in capsys.readouterr().err.lower()


class TestPredictScoreCommands:
    @pytest.fixture()
    def trained(self, corpus_csv, tmp_path):
        out = tmp_path / "trained"
        assert run(["train", "--data", corpus_csv, "--out", out, "--seed", 1] + FAST) == 0
        return out

    def test_predict_shapes_and_round_flag(self, trained, corpus_csv, tmp_path):
        records = load_csv(corpus_csv)
        unlabeled = tmp_path / "unlabeled.csv"
        from rubric.data import EssayRecord

        write_csv([EssayRecord(r.text_id, r.full_text) for r in records], str(unlabeled))

        out = tmp_path / "pred"
        code = run(["predict", "--checkpoint", trained / "checkpoint.bin",
                    "--input", unlabeled, "--out", out])
        assert code == 0
        ids, preds = load_predictions(str(out / "predictions.csv"))
        assert len(ids) == len(records) and preds.shape == (len(records), 6)
        assert (preds >= 1.0).all() and (preds <= 5.0).all()

        out2 = tmp_path / "pred_round"
        code = run(["predict", "--checkpoint", trained / "checkpoint.bin",
                    "--input", unlabeled, "--out", out2, "--round"])
        assert code == 0
        _, rounded = load_predictions(str(out2 / "predictions.csv"))
        assert all(on_lattice(v) for v in rounded.ravel())

    def test_predict_on_train_matches_reported_train_metric(
        self, trained, corpus_csv, tmp_path, capsys
    ):
        # pipeline consistency: scoring the training CSV with its own
        # checkpoint reproduces the train MCRMSE recorded by the train command
        out = tmp_path / "pred_train"
        assert run(["predict", "--checkpoint", trained / "checkpoint.bin",
                    "--input", corpus_csv, "--out", out]) == 0
        capsys.readouterr()
        assert run(["score", corpus_csv, out / "predictions.csv"]) == 0
        printed = capsys.readouterr().out
        scored = float(printed.splitlines()[0].split("=")[1])

        metrics = json.loads((trained / "metrics.json").read_text())
        # the train metric covers the train split only; rescore those rows
        records = load_csv(corpus_csv)
        ids, preds = load_predictions(str(out / "predictions.csv"))
        from rubric.metrics import mcrmse
        from rubric.training import train_valid_split

        train_recs, _ = train_valid_split(records, 0.2, seed=1)
        keep = {r.text_id for r in train_recs}
        rows = [i for i, tid in enumerate(ids) if tid in keep]
        by_id = {r.text_id: r for r in records}
        truth = np.array([by_id[ids[i]].scores for i in rows])
        got = mcrmse(truth, preds[rows]).mcrmse
        assert abs(got - metrics["train_mcrmse"]) <= 1e-9
        assert np.isfinite(scored)

    def test_score_mismatched_ids_rejected(self, corpus_csv, tmp_path, capsys):
        from rubric.data import write_predictions

        pred_path = tmp_path / "bad_preds.csv"
        write_predictions(str(pred_path), ["ghost"], np.full((1, 6), 3.0))
        assert run(["score", corpus_csv, pred_path]) == 1
        assert "ghost" in capsys.readouterr().err


class TestCvCommand:
    def test_cv_artifacts(self, corpus_csv, tmp_path):
        out = tmp_path / "cv"
        code = run(["cv", "--data", corpus_csv, "--out", out, "--folds", 2,
                    "--seed", 2] + FAST)
        assert code == 0
        for name in ("fold_plan.json", "oof.csv", "cv_metrics.json", "config.txt",
                     "report_fold0.csv", "report_fold1.csv"):
            assert (out / name).exists(), name
        metrics = json.loads((out / "cv_metrics.json").read_text())
        assert len(metrics["folds"]) == 2
        ids, _ = load_predictions(str(out / "oof.csv"))
        assert sorted(ids) == sorted(r.text_id for r in load_csv(corpus_csv))


class TestAblateCommand:
    def test_minimal_grid(self, corpus_csv, tmp_path):
        out = tmp_path / "ablate"
        code = run(
            ["ablate", "--data", corpus_csv, "--out", out, "--folds", 2,
             "--seeds", "0,1", "--set", "train.epochs=1",
             "--set", "ablate.full_grid=false"] + FAST[:-4]
        )
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["ordering"]["cells_present"] is True
        assert "matched" in summary["ordering"]
        rows = (out / "ablation.csv").read_text().splitlines()
        assert len(rows) == 1 + 3 * 2  # header + three cells x two seeds


class TestSynthCommand:
    def test_synth_writes_loadable_corpus(self, tmp_path):
        out_csv = tmp_path / "synth.csv"
        code = run(["synth", "--n", 9, "--synth-seed", 4, "--out", tmp_path / "meta",
                    out_csv])
        assert code == 0
        records = load_csv(str(out_csv))
        assert len(records) == 9
        assert all(r.labeled for r in records)

    def test_usage_error_exits_one(self, capsys):
        assert run(["train", "--bogus-flag"]) == 1
