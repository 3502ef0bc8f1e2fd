"""End-to-end CLI tests: every subcommand plus the exit-code contract."""

import glob
import json
import os

import pytest

from seqbench.cli import main, write_fallback_report
from seqbench.runner import read_results

from test_runner import write_config, write_raw


@pytest.fixture
def raw_file(tmp_path):
    return write_raw(tmp_path / "raw.tsv")


def run_cli(*argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# usage and exit codes


def test_no_command_is_usage_error(capsys):
    assert run_cli() == 1
    assert "usage" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert run_cli("--help") == 0
    out = capsys.readouterr().out
    for command in ("preprocess", "run", "eval", "report"):
        assert command in out


def test_unknown_flag_is_usage_error():
    assert run_cli("run", "--confg", "x.yaml") == 1


# ---------------------------------------------------------------------------
# preprocess


def test_preprocess_writes_artifact(tmp_path, raw_file, capsys):
    out = tmp_path / "processed"
    assert run_cli("preprocess", "--dataset", "canonical", "--in", raw_file, "--out", out) == 0
    for name in ("dataset.tsv", "items.vocab.tsv", "users.vocab.tsv", "stats.json"):
        assert os.path.exists(out / name)
    shown = capsys.readouterr().out
    assert "users" in shown and "interactions" in shown


def test_preprocess_missing_file_exit_two(tmp_path, capsys):
    code = run_cli(
        "preprocess", "--dataset", "canonical",
        "--in", tmp_path / "gone.tsv", "--out", tmp_path / "o",
    )
    assert code == 2


def test_preprocess_unknown_dataset_exit_one(tmp_path, raw_file):
    assert run_cli("preprocess", "--dataset", "netflix", "--in", raw_file, "--out", tmp_path / "o") == 1


def test_preprocess_malformed_file_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("just one column\n")
    assert run_cli("preprocess", "--dataset", "canonical", "--in", bad, "--out", tmp_path / "o") == 2
    assert "bad.tsv:1:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# run


def test_run_executes_config(tmp_path, raw_file, capsys):
    out_dir = tmp_path / "out"
    cfg = write_config(tmp_path / "cfg.yaml", raw_file, out_dir)
    assert run_cli("run", "--config", cfg) == 0
    rows = read_results(out_dir / "results.csv")
    assert len(rows) == 1
    assert "1/1 points ok" in capsys.readouterr().out


def test_run_bad_config_key_exit_one(tmp_path, raw_file, capsys):
    cfg = write_config(tmp_path / "cfg.yaml", raw_file, tmp_path / "out", epochs=3)
    assert run_cli("run", "--config", cfg) == 1
    assert "epochs" in capsys.readouterr().err


def test_run_missing_dataset_exit_two(tmp_path, raw_file):
    cfg = write_config(tmp_path / "cfg.yaml", tmp_path / "gone.tsv", tmp_path / "out")
    assert run_cli("run", "--config", cfg) == 2


def test_run_missing_config_file_exit_one(tmp_path):
    assert run_cli("run", "--config", tmp_path / "none.yaml") == 1


def test_run_with_failed_point_exit_three(tmp_path, raw_file, capsys):
    cfg = write_config(
        tmp_path / "cfg.yaml", raw_file, tmp_path / "out",
        models=["gru4rec", "sasrec"], model={"heads": 3},
    )
    assert run_cli("run", "--config", cfg) == 3
    out = capsys.readouterr().out
    assert "1/2 points ok" in out
    assert len(read_results(tmp_path / "out" / "results.csv")) == 1


def test_run_resume_flag(tmp_path, raw_file, capsys):
    cfg = write_config(tmp_path / "cfg.yaml", raw_file, tmp_path / "out")
    assert run_cli("run", "--config", cfg) == 0
    capsys.readouterr()
    assert run_cli("run", "--config", cfg, "--resume") == 0
    assert "resume: skipping" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# eval


@pytest.fixture
def finished_run(tmp_path, raw_file):
    out_dir = tmp_path / "out"
    cfg = write_config(tmp_path / "cfg.yaml", raw_file, out_dir)
    assert run_cli("run", "--config", cfg) == 0
    checkpoint = glob.glob(str(out_dir / "artifacts" / "*" / "checkpoint.bin"))[0]
    processed = glob.glob(str(out_dir / "cache" / "canonical-*"))[0]
    return out_dir, checkpoint, processed


def test_eval_prints_metrics_json(finished_run, capsys):
    _, checkpoint, processed = finished_run
    capsys.readouterr()
    assert run_cli("eval", "--checkpoint", checkpoint, "--dataset", processed, "--neg", 5) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["family"] == "gru4rec"
    assert 0.0 <= payload["ndcg10"] <= 1.0
    assert payload["params"] > 0


def test_eval_neg_all(finished_run, capsys):
    _, checkpoint, processed = finished_run
    capsys.readouterr()
    assert run_cli("eval", "--checkpoint", checkpoint, "--dataset", processed, "--neg", "all") == 0
    assert json.loads(capsys.readouterr().out)["m_neg_eval"] == "all"


def test_eval_bad_neg_is_usage_error(finished_run):
    _, checkpoint, processed = finished_run
    assert run_cli("eval", "--checkpoint", checkpoint, "--dataset", processed, "--neg", "-3") == 1


def test_eval_mismatched_dataset_exit_two(finished_run, tmp_path, capsys):
    _, checkpoint, _ = finished_run
    other_raw = write_raw(tmp_path / "other.tsv", num_users=40, num_items=30)
    other = tmp_path / "other-processed"
    assert run_cli("preprocess", "--dataset", "canonical", "--in", other_raw, "--out", other) == 0
    assert run_cli("eval", "--checkpoint", checkpoint, "--dataset", other) == 2


def test_eval_garbage_checkpoint_exit_one(finished_run, tmp_path):
    _, _, processed = finished_run
    fake = tmp_path / "fake.bin"
    fake.write_bytes(b"not a checkpoint")
    assert run_cli("eval", "--checkpoint", fake, "--dataset", processed) == 1


# ---------------------------------------------------------------------------
# report


def test_report_writes_tables(finished_run, tmp_path, capsys):
    out_dir, _, _ = finished_run
    report_dir = tmp_path / "report"
    assert run_cli("report", "--results", out_dir / "results.csv", "--out", report_dir) == 0
    assert os.listdir(report_dir)


def test_fallback_report_cells_match_csv(finished_run, tmp_path):
    out_dir, _, _ = finished_run
    report_dir = tmp_path / "fallback"
    written = write_fallback_report(str(out_dir / "results.csv"), str(report_dir))
    assert written == [str(report_dir / "table-canonical.md")]
    text = open(written[0]).read()
    row = read_results(out_dir / "results.csv")[0]
    for col in ("model", "ndcg10", "r20", "kwh"):
        assert row[col] in text


def test_fallback_report_rejects_foreign_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(Exception):
        write_fallback_report(str(bad), str(tmp_path / "r"))
