"""End-to-end command-line pipeline behavior and exit codes."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from progkit.cli import EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE, main


def run(*argv: str) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-corpus")
    corpus_path = root / "corpus.jsonl"
    truth_path = root / "truth.csv"
    code = run(
        "simenv",
        "gen",
        "--tasks",
        "6",
        "--per-task",
        "6",
        "--seed",
        "5",
        "--out",
        str(corpus_path),
        "--truth",
        str(truth_path),
    )
    assert code == EXIT_OK
    return corpus_path, truth_path


@pytest.fixture(scope="module")
def pipeline(corpus, tmp_path_factory):
    corpus_path, truth_path = corpus
    root = tmp_path_factory.mktemp("cli-pipeline")
    library = root / "library.json"
    labels = root / "labels.jsonl"
    model = root / "model.json"
    assert run(
        "recipes", "build", "--in", str(corpus_path), "--out", str(library)
    ) == EXIT_OK
    assert run(
        "label",
        "--in",
        str(corpus_path),
        "--library",
        str(library),
        "--mode",
        "lcs",
        "--out",
        str(labels),
    ) == EXIT_OK
    assert run(
        "train",
        "--labels",
        str(labels),
        "--corpus",
        str(corpus_path),
        "--epochs",
        "5",
        "--out",
        str(model),
    ) == EXIT_OK
    return corpus_path, truth_path, library, labels, model


class TestSimenvGen:
    def test_writes_both_outputs(self, corpus):
        corpus_path, truth_path = corpus
        assert corpus_path.read_text().count("\n") == 36
        assert truth_path.read_text().startswith("traj_id,step_index")

    def test_bad_mix_name_is_usage_error(self, tmp_path, capsys):
        code = run(
            "simenv",
            "gen",
            "--tasks",
            "1",
            "--per-task",
            "1",
            "--mix",
            "walker=1.0",
            "--out",
            str(tmp_path / "c.jsonl"),
            "--truth",
            str(tmp_path / "t.csv"),
        )
        assert code == EXIT_USAGE
        assert capsys.readouterr().err.startswith("error: usage:")

    def test_mix_must_sum_to_one(self, tmp_path, capsys):
        code = run(
            "simenv",
            "gen",
            "--tasks",
            "1",
            "--per-task",
            "1",
            "--mix",
            "optimal=0.5,noisy=0.2",
            "--out",
            str(tmp_path / "c.jsonl"),
            "--truth",
            str(tmp_path / "t.csv"),
        )
        assert code == EXIT_USAGE
        assert "sum to" in capsys.readouterr().err

    def test_zero_tasks_rejected_by_argparse(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            run(
                "simenv",
                "gen",
                "--tasks",
                "0",
                "--per-task",
                "1",
                "--out",
                str(tmp_path / "c.jsonl"),
                "--truth",
                str(tmp_path / "t.csv"),
            )
        assert excinfo.value.code == 2


class TestLabelCommand:
    def test_lcs_without_library_is_usage_error(self, corpus, tmp_path, capsys):
        corpus_path, _ = corpus
        code = run(
            "label",
            "--in",
            str(corpus_path),
            "--mode",
            "lcs",
            "--out",
            str(tmp_path / "labels.jsonl"),
        )
        assert code == EXIT_USAGE
        assert "requires --library" in capsys.readouterr().err

    def test_env_mode_needs_no_library(self, corpus, tmp_path):
        corpus_path, _ = corpus
        out = tmp_path / "env-labels.jsonl"
        assert run(
            "label", "--in", str(corpus_path), "--mode", "env", "--out", str(out)
        ) == EXIT_OK
        assert out.exists()

    def test_missing_input_is_io_error(self, tmp_path, capsys):
        code = run(
            "label",
            "--in",
            str(tmp_path / "absent.jsonl"),
            "--mode",
            "env",
            "--out",
            str(tmp_path / "labels.jsonl"),
        )
        assert code == EXIT_IO
        assert capsys.readouterr().err.startswith("error: io:")

    def test_malformed_input_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json}\n")
        code = run(
            "label",
            "--in",
            str(bad),
            "--mode",
            "env",
            "--out",
            str(tmp_path / "labels.jsonl"),
        )
        assert code == EXIT_DATA
        assert capsys.readouterr().err.startswith("error: data:")


class TestConfigPrecedence:
    def test_config_value_used_when_flag_absent(self, corpus, tmp_path):
        corpus_path, _ = corpus
        cfg = tmp_path / "run.cfg"
        cfg.write_text("theta=0.9\n")
        out = tmp_path / "library.json"
        assert run(
            "recipes",
            "build",
            "--in",
            str(corpus_path),
            "--config",
            str(cfg),
            "--out",
            str(out),
        ) == EXIT_OK
        assert json.loads(out.read_text())["config"]["theta"] == 0.9

    def test_flag_overrides_config(self, corpus, tmp_path):
        corpus_path, _ = corpus
        cfg = tmp_path / "run.cfg"
        cfg.write_text("theta=0.9\n")
        out = tmp_path / "library.json"
        assert run(
            "recipes",
            "build",
            "--in",
            str(corpus_path),
            "--config",
            str(cfg),
            "--theta",
            "0.7",
            "--out",
            str(out),
        ) == EXIT_OK
        assert json.loads(out.read_text())["config"]["theta"] == 0.7

    def test_invalid_config_is_data_error(self, corpus, tmp_path, capsys):
        corpus_path, _ = corpus
        cfg = tmp_path / "run.cfg"
        cfg.write_text("mystery=1\n")
        code = run(
            "recipes",
            "build",
            "--in",
            str(corpus_path),
            "--config",
            str(cfg),
            "--out",
            str(tmp_path / "library.json"),
        )
        assert code == EXIT_DATA
        assert "unknown key" in capsys.readouterr().err


class TestSynthBalance:
    def test_balances_and_reports(self, corpus, tmp_path):
        corpus_path, _ = corpus
        out = tmp_path / "balanced.jsonl"
        report = tmp_path / "balance.csv"
        assert run(
            "synth",
            "balance",
            "--in",
            str(corpus_path),
            "--ratio",
            "1.0",
            "--out",
            str(out),
            "--report",
            str(report),
        ) == EXIT_OK
        assert report.read_text().startswith("source,success,")
        assert out.read_text().count("\n") >= 36


class TestRewardCommand:
    def test_estimator_source_requires_model(self, pipeline, tmp_path, capsys):
        corpus_path = pipeline[0]
        code = run(
            "reward",
            "--in",
            str(corpus_path),
            "--source",
            "estimator",
            "--out",
            str(tmp_path / "r.jsonl"),
        )
        assert code == EXIT_USAGE
        assert "requires --model" in capsys.readouterr().err

    def test_labels_source_requires_labels(self, pipeline, tmp_path, capsys):
        corpus_path = pipeline[0]
        code = run(
            "reward",
            "--in",
            str(corpus_path),
            "--source",
            "labels",
            "--out",
            str(tmp_path / "r.jsonl"),
        )
        assert code == EXIT_USAGE
        assert "requires --labels" in capsys.readouterr().err

    def test_remote_source_requires_endpoint(self, pipeline, tmp_path, capsys):
        corpus_path = pipeline[0]
        code = run(
            "reward",
            "--in",
            str(corpus_path),
            "--source",
            "remote",
            "--out",
            str(tmp_path / "r.jsonl"),
        )
        assert code == EXIT_USAGE
        assert "requires --endpoint" in capsys.readouterr().err

    def test_estimator_rewards_written(self, pipeline, tmp_path):
        corpus_path, _, _, _, model = pipeline
        out = tmp_path / "rewards.jsonl"
        assert run(
            "reward",
            "--in",
            str(corpus_path),
            "--source",
            "estimator",
            "--model",
            str(model),
            "--out",
            str(out),
        ) == EXIT_OK
        assert out.read_text().count("\n") == 36

    def test_label_rewards_written(self, pipeline, tmp_path):
        corpus_path, _, _, labels, _ = pipeline
        out = tmp_path / "rewards.jsonl"
        assert run(
            "reward",
            "--in",
            str(corpus_path),
            "--source",
            "labels",
            "--labels",
            str(labels),
            "--k",
            "2",
            "--out",
            str(out),
        ) == EXIT_OK
        first = json.loads(out.read_text().splitlines()[0])
        assert first["k"] == 2


class TestEvalCommand:
    def test_writes_report_directory(self, pipeline, tmp_path):
        corpus_path, truth_path, _, labels, model = pipeline
        out_dir = tmp_path / "reports"
        assert run(
            "eval",
            "--corpus",
            str(corpus_path),
            "--truth",
            str(truth_path),
            "--model",
            str(model),
            "--labels",
            str(labels),
            "--out-dir",
            str(out_dir),
        ) == EXIT_OK
        names = sorted(p.name for p in out_dir.iterdir())
        assert names == [
            "final_scores.png",
            "keystep_error.png",
            "progress_curves.png",
            "summary.txt",
            "table2.csv",
            "table3.csv",
        ]


class TestDeterminism:
    def test_pipeline_reruns_byte_identical(self, tmp_path):
        outputs = []
        for name in ("a", "b"):
            root = tmp_path / name
            root.mkdir()
            corpus = root / "corpus.jsonl"
            truth = root / "truth.csv"
            library = root / "library.json"
            labels = root / "labels.jsonl"
            model = root / "model.json"
            rewards = root / "rewards.jsonl"
            assert run(
                "simenv", "gen", "--tasks", "4", "--per-task", "4",
                "--seed", "9", "--out", str(corpus), "--truth", str(truth),
            ) == EXIT_OK
            assert run(
                "recipes", "build", "--in", str(corpus), "--out", str(library)
            ) == EXIT_OK
            assert run(
                "label", "--in", str(corpus), "--library", str(library),
                "--mode", "lcs", "--out", str(labels),
            ) == EXIT_OK
            assert run(
                "train", "--labels", str(labels), "--corpus", str(corpus),
                "--epochs", "3", "--seed", "9", "--out", str(model),
            ) == EXIT_OK
            assert run(
                "reward", "--in", str(corpus), "--source", "labels",
                "--labels", str(labels), "--out", str(rewards),
            ) == EXIT_OK
            outputs.append([corpus, truth, library, labels, model, rewards])
        for left, right in zip(*outputs):
            assert left.read_bytes() == right.read_bytes(), left.name

    def test_stdout_stays_clean(self, corpus, tmp_path, capsys):
        corpus_path, _ = corpus
        out = tmp_path / "labels.jsonl"
        assert run(
            "label", "--in", str(corpus_path), "--mode", "env", "--out", str(out)
        ) == EXIT_OK
        assert capsys.readouterr().out == ""


class TestModuleEntry:
    def test_python_dash_m_help(self):
        result = subprocess.run(
            [sys.executable, "-m", "progkit", "--help"],
            capture_output=True,
            text=True,
        )
        assert result.returncode == 0
        assert "progress labeling" in result.stdout
