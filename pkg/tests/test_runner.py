"""Runner tests: config schema, caching, sweep execution, resume, isolation."""

import json
import os

import pytest
import yaml

from seqbench.errors import ConfigError, DataError
from seqbench.runner import (
    DEFAULT_EMB,
    DEFAULT_SEQLEN,
    RESULTS_COLUMNS,
    ExperimentConfig,
    cached_preprocess,
    dataset_format,
    export_results,
    load_config,
    plan_points,
    point_seed,
    read_results,
    run_plan,
    write_resolved,
)

import seqbench.runner as runner_mod


def write_raw(path, num_users=30, num_items=20, length=8):
    """Canonical TSV with a successor pattern; every user/item clears 5-core."""
    with open(path, "w") as fh:
        t = 0
        for u in range(num_users):
            for step in range(length):
                item = (u + step) % num_items
                fh.write(f"u{u}\ti{item}\t{t}\n")
                t += 1
    return path


def write_config(path, raw_path, out_dir, **overrides):
    cfg = {
        "dataset": {"name": "canonical", "path": str(raw_path)},
        "models": ["gru4rec"],
        "emb": [8],
        "seqlen": [6],
        "seed": 7,
        "out": str(out_dir),
        "train": {"epochs": 2, "batch_size": 16, "validate_every": 2},
        "eval": {"m_neg_eval": 5},
    }
    cfg.update(overrides)
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh)
    return path


@pytest.fixture
def raw_file(tmp_path):
    return write_raw(tmp_path / "raw.tsv")


# ---------------------------------------------------------------------------
# config loading


def test_dataset_format_mapping():
    assert dataset_format("ml-100k") == "movielens"
    assert dataset_format("beauty") == "amazon"
    assert dataset_format("fs-tky") == "foursquare"
    assert dataset_format("canonical") == "canonical"
    with pytest.raises(ConfigError):
        dataset_format("netflix")


def test_minimal_config_fills_defaults(tmp_path, raw_file):
    path = tmp_path / "cfg.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(
            {"dataset": {"name": "canonical", "path": str(raw_file)}, "models": ["narm"]},
            fh,
        )
    cfg = load_config(path)
    assert cfg.emb == list(DEFAULT_EMB)
    assert cfg.seqlen == list(DEFAULT_SEQLEN)
    assert cfg.replicates == 1
    assert cfg.seed == 42
    resolved = cfg.resolved()
    assert resolved["train"]["epochs"] == 400
    assert resolved["train"]["validate_every"] == 5
    assert resolved["eval"]["m_neg_eval"] == 100
    assert resolved["emissions"]["carbon_intensity_kg_per_kwh"] == 0.4


def test_resolved_echo_is_byte_stable(tmp_path, raw_file):
    path = write_config(tmp_path / "cfg.yaml", raw_file, tmp_path / "out")
    first = write_resolved(load_config(path), tmp_path / "echo1")
    second = write_resolved(load_config(path), tmp_path / "echo2")
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()


def test_unknown_top_key_fatal(tmp_path, raw_file):
    path = write_config(tmp_path / "cfg.yaml", raw_file, tmp_path / "out")
    data = yaml.safe_load(open(path))
    data["modles"] = ["gru4rec"]
    yaml.safe_dump(data, open(path, "w"))
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "modles" in str(err.value)
    assert "models" in str(err.value)  # suggestion plus valid-key list


def test_misspelled_train_key_names_correct_one(tmp_path, raw_file):
    path = write_config(
        tmp_path / "cfg.yaml", raw_file, tmp_path / "out",
        train={"epcohs": 3},
    )
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "epcohs" in str(err.value) and "epochs" in str(err.value)


def test_bad_yaml_syntax_is_config_error(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("dataset: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_required_fields(tmp_path, raw_file):
    path = tmp_path / "cfg.yaml"
    yaml.safe_dump({"models": ["gru4rec"]}, open(path, "w"))
    with pytest.raises(ConfigError):
        load_config(path)
    yaml.safe_dump({"dataset": {"name": "canonical", "path": str(raw_file)}}, open(path, "w"))
    with pytest.raises(ConfigError):
        load_config(path)


def test_validation_rejects_bad_values(raw_file):
    ok = dict(dataset_name="canonical", dataset_path=str(raw_file), models=["gru4rec"])
    ExperimentConfig(**ok).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(**{**ok, "models": []}).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(**{**ok, "models": ["gpt"]}).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(**{**ok, "emb": [0]}).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(**{**ok, "replicates": 0}).validate()
    with pytest.raises(DataError):
        ExperimentConfig(**{**ok, "dataset_path": "/nope/missing.tsv"}).validate()


def test_plan_is_cartesian(raw_file):
    cfg = ExperimentConfig(
        dataset_name="canonical", dataset_path=str(raw_file),
        models=["gru4rec", "core"], emb=[32, 64], seqlen=[20], replicates=2,
    )
    points = plan_points(cfg)
    assert len(points) == 2 * 2 * 1 * 2
    assert ("core", 64, 20, 1) in points
    assert len(set(points)) == len(points)


def test_point_seeds_are_axis_local():
    a = point_seed(42, "gru4rec", 32, 20, 0)
    assert a == point_seed(42, "gru4rec", 32, 20, 0)
    others = {
        point_seed(42, "gru4rec", 64, 20, 0),
        point_seed(42, "gru4rec", 32, 50, 0),
        point_seed(42, "core", 32, 20, 0),
        point_seed(42, "gru4rec", 32, 20, 1),
        point_seed(43, "gru4rec", 32, 20, 0),
    }
    assert a not in others
    assert len(others) == 5


# ---------------------------------------------------------------------------
# preprocessing cache


def test_cached_preprocess_reuses_artifact(tmp_path, raw_file):
    cache = tmp_path / "cache"
    dir1, split1 = cached_preprocess("canonical", str(raw_file), str(cache))
    assert os.path.exists(os.path.join(dir1, "stats.json"))

    def boom(*a, **k):
        raise AssertionError("cache miss on identical bytes")

    original = runner_mod.preprocess
    runner_mod.preprocess = boom
    try:
        dir2, split2 = cached_preprocess("canonical", str(raw_file), str(cache))
    finally:
        runner_mod.preprocess = original
    assert dir1 == dir2
    assert split1.num_items == split2.num_items


def test_cached_preprocess_keys_on_content(tmp_path, raw_file):
    cache = tmp_path / "cache"
    dir1, _ = cached_preprocess("canonical", str(raw_file), str(cache))
    os.utime(raw_file)  # metadata change alone must not invalidate
    dir2, _ = cached_preprocess("canonical", str(raw_file), str(cache))
    assert dir1 == dir2
    with open(raw_file, "a") as fh:
        fh.write("u0\ti1\t99999\n")
    dir3, _ = cached_preprocess("canonical", str(raw_file), str(cache))
    assert dir3 != dir1


def test_cached_preprocess_missing_file(tmp_path):
    with pytest.raises(DataError):
        cached_preprocess("canonical", str(tmp_path / "gone.tsv"), str(tmp_path / "c"))


# ---------------------------------------------------------------------------
# sweep execution


def run_tiny(tmp_path, raw_file, out_name="out", **overrides):
    out_dir = tmp_path / out_name
    path = write_config(tmp_path / f"{out_name}.yaml", raw_file, out_dir, **overrides)
    cfg = load_config(path)
    return cfg, run_plan(cfg, log=None)


def test_single_point_populates_everything(tmp_path, raw_file):
    cfg, records = run_tiny(tmp_path, raw_file)
    assert len(records) == 1
    rec = records[0]
    assert rec.status == "ok"
    assert rec.params is not None and rec.params > 0
    assert rec.seconds > 0 and rec.kwh > 0 and rec.co2kg > 0
    rows = read_results(os.path.join(cfg.out, "results.csv"))
    assert len(rows) == 1
    row = rows[0]
    assert row["dataset"] == "canonical" and row["model"] == "gru4rec"
    assert (int(row["emb"]), int(row["seqlen"])) == (8, 6)
    assert int(row["params"]) == rec.params
    for col in RESULTS_COLUMNS[5:]:
        assert float(row[col]) == float(row[col])  # parses, not NaN
    assert os.path.exists(os.path.join(cfg.out, "config.resolved.yaml"))


def test_sidecar_is_self_describing(tmp_path, raw_file):
    cfg, records = run_tiny(tmp_path, raw_file)
    rec = records[0]
    sidecar = os.path.join(cfg.out, "records", f"{rec.id}-{rec.config_hash}.json")
    payload = json.load(open(sidecar))
    assert payload["status"] == "ok"
    assert payload["seed"] == rec.seed
    assert payload["config"]["dataset"]["path"] == cfg.dataset_path
    assert payload["config"]["train"]["epochs"] == 2
    assert payload["csv_written"] is True
    assert payload["metrics"]["ndcg10"] == rec.metrics["ndcg10"]
    artifact = os.path.join(cfg.out, "artifacts", f"{rec.id}-{rec.config_hash}")
    assert os.path.exists(os.path.join(artifact, "checkpoint.bin"))
    assert os.path.exists(os.path.join(artifact, "history.csv"))


def test_resume_skips_completed_points(tmp_path, raw_file):
    out_dir = tmp_path / "out"
    path = write_config(tmp_path / "cfg.yaml", raw_file, out_dir)
    cfg = load_config(path)
    first = run_plan(cfg, log=None)
    lines = []
    second = run_plan(load_config(path), resume=True, log=lines.append)
    assert any("resume: skipping" in line for line in lines)
    assert second[0].metrics == first[0].metrics
    assert len(read_results(os.path.join(cfg.out, "results.csv"))) == 1


def test_rerun_without_resume_appends_no_duplicates(tmp_path, raw_file):
    out_dir = tmp_path / "out"
    path = write_config(tmp_path / "cfg.yaml", raw_file, out_dir)
    first = run_plan(load_config(path), log=None)
    lines = []
    second = run_plan(load_config(path), resume=False, log=lines.append)
    assert not any("resume: skipping" in line for line in lines)  # really retrained
    assert second[0].metrics == first[0].metrics  # determinism
    assert len(read_results(os.path.join(out_dir, "results.csv"))) == 1


def test_changed_config_appends_new_row(tmp_path, raw_file):
    out_dir = tmp_path / "out"
    path = write_config(tmp_path / "cfg.yaml", raw_file, out_dir)
    run_plan(load_config(path), log=None)
    path2 = write_config(
        tmp_path / "cfg2.yaml", raw_file, out_dir,
        train={"epochs": 3, "batch_size": 16, "validate_every": 2},
    )
    run_plan(load_config(path2), log=None)
    assert len(read_results(os.path.join(out_dir, "results.csv"))) == 2


def test_failed_point_is_isolated(tmp_path, raw_file):
    # heads=3 cannot divide d=8, so the sasrec point fails at model build;
    # the gru4rec point must still complete and land in the CSV.
    cfg, records = run_tiny(
        tmp_path, raw_file,
        models=["gru4rec", "sasrec"], model={"heads": 3},
    )
    by_model = {r.model: r for r in records}
    assert by_model["gru4rec"].status == "ok"
    assert by_model["sasrec"].status == "failed"
    assert "heads" in by_model["sasrec"].error
    rows = read_results(os.path.join(cfg.out, "results.csv"))
    assert [row["model"] for row in rows] == ["gru4rec"]


def test_failed_point_retried_on_resume(tmp_path, raw_file):
    out_dir = tmp_path / "out"
    path = write_config(
        tmp_path / "cfg.yaml", raw_file, out_dir,
        models=["sasrec"], model={"heads": 3},
    )
    run_plan(load_config(path), log=None)
    lines = []
    records = run_plan(load_config(path), resume=True, log=lines.append)
    assert not any("resume: skipping" in line for line in lines)
    assert records[0].status == "failed"


def test_parallel_matches_serial_bitwise(tmp_path, raw_file):
    serial_cfg, serial = run_tiny(tmp_path, raw_file, out_name="serial", emb=[6, 8])
    out_dir = tmp_path / "par"
    path = write_config(tmp_path / "par.yaml", raw_file, out_dir, emb=[6, 8])
    parallel = run_plan(load_config(path), parallel=2, log=None)
    key = lambda r: (r.model, r.d, r.L, r.replicate)
    for a, b in zip(sorted(serial, key=key), sorted(parallel, key=key)):
        assert a.metrics == b.metrics
        assert a.params == b.params
        assert a.seed == b.seed


def test_export_results_header_only(tmp_path):
    path = export_results(str(tmp_path / "fresh"))
    rows = read_results(path)
    assert rows == []
    with open(path) as fh:
        assert fh.read().strip() == ",".join(RESULTS_COLUMNS)


def test_read_results_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("model,score\na,1\n")
    with pytest.raises(DataError):
        read_results(path)
