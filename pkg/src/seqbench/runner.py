"""Config-driven experiment orchestration.

A YAML file names a dataset, model families, and sweep axes; the runner
expands the cartesian plan, preprocesses once per raw file (content-addressed
cache), trains and test-evaluates every point, and persists each run as one
append-only CSV row plus a self-describing JSON sidecar. Failed points are
recorded and skipped over, never aborting the rest of a sweep.
"""

from __future__ import annotations

import concurrent.futures
import csv
import datetime
import difflib
import fcntl
import hashlib
import json
import os
import subprocess
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__
from .data import (
    FORMATS,
    SplitDataset,
    build_sequences,
    five_core_filter,
    leave_one_out_split,
    load_processed,
    parse_dataset,
    write_processed,
)
from .emissions import EmissionsConfig, track
from .errors import ConfigError, DataError
from .evaluator import evaluate
from .models import FAMILIES, ModelConfig, build_model, save_checkpoint
from .rng import derive_seed
from .trainer import TrainConfig, train

RESULTS_COLUMNS = (
    "dataset", "model", "emb", "seqlen", "params",
    "p10", "r10", "ndcg10", "map10", "p20", "r20", "ndcg20", "map20",
    "kwh", "co2kg", "seconds",
)

DATASET_FORMATS = {
    "ml-100k": "movielens",
    "ml-1m": "movielens",
    "ml-20m": "movielens",
    "beauty": "amazon",
    "fs-nyc": "foursquare",
    "fs-tky": "foursquare",
}

DEFAULT_EMB = (32, 64, 128, 256, 512)
DEFAULT_SEQLEN = (20, 50, 100, 200)

_TOP_KEYS = (
    "dataset", "models", "emb", "seqlen", "replicates", "seed", "out",
    "train", "eval", "emissions", "model",
)
_SECTION_KEYS = {
    "dataset": ("name", "path"),
    "train": (
        "epochs", "batch_size", "m_neg_train", "lr", "val_metric",
        "validate_every", "patience", "grad_clip",
    ),
    "eval": ("m_neg_eval",),
    "emissions": ("device_power_watts", "carbon_intensity_kg_per_kwh"),
    "model": ("layers", "heads", "dropout", "mask_prob"),
}


def dataset_format(name: str) -> str:
    """Raw-file format for a dataset name; format names pass through."""
    if name in DATASET_FORMATS:
        return DATASET_FORMATS[name]
    if name in FORMATS:
        return name
    known = sorted(DATASET_FORMATS) + [f for f in FORMATS if f not in DATASET_FORMATS]
    raise ConfigError(f"unknown dataset {name!r}, expected one of {known}")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    dataset_name: str
    dataset_path: str
    models: list[str]
    emb: list[int] = field(default_factory=lambda: list(DEFAULT_EMB))
    seqlen: list[int] = field(default_factory=lambda: list(DEFAULT_SEQLEN))
    replicates: int = 1
    seed: int = 42
    out: str = "runs"
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    emissions: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)

    def validate(self) -> None:
        dataset_format(self.dataset_name)
        if not self.models:
            raise ConfigError("models list must not be empty")
        for family in self.models:
            if family not in FAMILIES:
                raise ConfigError(
                    f"unknown model family {family!r}, expected one of {FAMILIES}"
                )
        for axis, values in (("emb", self.emb), ("seqlen", self.seqlen)):
            if not values:
                raise ConfigError(f"{axis} list must not be empty")
            for v in values:
                if not isinstance(v, int) or v < 1:
                    raise ConfigError(f"{axis} values must be integers >= 1, got {v!r}")
        if self.replicates < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")
        self.train_config(seed=0).validate()
        self.emissions_config().validate()
        # Model knobs are rechecked per point; catch type errors early with a
        # heads-compatible probe size.
        probe_d = 2 * int(self.model.get("heads", 2))
        ModelConfig("gru4rec", d=probe_d, L=8, **self.model).validate()
        if not os.path.exists(self.dataset_path):
            raise DataError(f"dataset file not found: {self.dataset_path}")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, m_neg_eval=self.m_neg_eval(), **self.train)

    def m_neg_eval(self) -> int | str:
        value = self.eval.get("m_neg_eval", 100)
        if value == "all":
            return "all"
        if not isinstance(value, int) or value < 1:
            raise ConfigError(f"eval.m_neg_eval must be an integer >= 1 or 'all', got {value!r}")
        return value

    def emissions_config(self) -> EmissionsConfig:
        return EmissionsConfig(**self.emissions)

    def model_config(self, family: str, d: int, length: int) -> ModelConfig:
        return ModelConfig(family, d=d, L=length, **self.model)

    def resolved(self) -> dict:
        """Fully-resolved mapping: defaults filled in, stable ordering."""
        out = {
            "dataset": {"name": self.dataset_name, "path": self.dataset_path},
            "models": list(self.models),
            "emb": list(self.emb),
            "seqlen": list(self.seqlen),
            "replicates": self.replicates,
            "seed": self.seed,
            "out": self.out,
            "train": asdict(self.train_config(seed=0)),
            "eval": {"m_neg_eval": self.m_neg_eval()},
            "emissions": asdict(self.emissions_config()),
            "model": asdict(self.model_config("gru4rec", 2 * int(self.model.get("heads", 2)), 8)),
        }
        # Per-point fields do not belong in the shared snapshot.
        for key in ("seed", "m_neg_eval"):
            out["train"].pop(key)
        for key in ("family", "d", "L"):
            out["model"].pop(key)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


def _reject_unknown(mapping: dict, allowed: tuple, where: str) -> None:
    for key in mapping:
        if key not in allowed:
            close = difflib.get_close_matches(str(key), allowed, n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise ConfigError(
                f"unknown key {key!r} in {where}{hint} (valid keys: {', '.join(allowed)})"
            )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid config syntax: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping of keys to values")
    _reject_unknown(raw, _TOP_KEYS, "config")
    for section, allowed in _SECTION_KEYS.items():
        sub = raw.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"{section} section must be a mapping")
        _reject_unknown(sub, allowed, f"'{section}' section")
    dataset = raw.get("dataset") or {}
    for required in ("name", "path"):
        if required not in dataset:
            raise ConfigError(f"dataset.{required} is required")
    if "models" not in raw:
        raise ConfigError("models list is required")
    cfg = ExperimentConfig(
        dataset_name=str(dataset["name"]),
        dataset_path=str(dataset["path"]),
        models=list(raw["models"]),
        emb=list(raw.get("emb", DEFAULT_EMB)),
        seqlen=list(raw.get("seqlen", DEFAULT_SEQLEN)),
        replicates=raw.get("replicates", 1),
        seed=raw.get("seed", 42),
        out=str(raw.get("out", "runs")),
        train=dict(raw.get("train") or {}),
        eval=dict(raw.get("eval") or {}),
        emissions=dict(raw.get("emissions") or {}),
        model=dict(raw.get("model") or {}),
    )
    cfg.validate()
    return cfg


def write_resolved(cfg: ExperimentConfig, out_dir: str) -> str:
    """Echo the resolved config for provenance; byte-stable across loads."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved.yaml")
    text = yaml.safe_dump(cfg.resolved(), sort_keys=True, default_flow_style=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


# ---------------------------------------------------------------------------
# preprocessing (content-addressed cache)


def preprocess(fmt: str, path: str, out_dir: str, min_count: int = 5):
    """Parse, filter, and persist one dataset; returns (split, stats)."""
    interactions = five_core_filter(parse_dataset(fmt, path), min_count)
    if not interactions:
        raise DataError(f"no interactions survive {min_count}-core filtering of {path}")
    item_vocab, user_vocab, seqs = build_sequences(interactions)
    stats = write_processed(out_dir, interactions, item_vocab, user_vocab)
    split = leave_one_out_split(seqs, len(item_vocab), item_vocab, user_vocab)
    return split, stats


def raw_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()[:16]


def cached_preprocess(name: str, path: str, cache_root: str, log=None) -> tuple[str, SplitDataset]:
    """Preprocess keyed by raw bytes: same file content, same artifact, reused."""
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    cache_dir = os.path.join(cache_root, f"{name}-{raw_digest(path)}")
    if os.path.exists(os.path.join(cache_dir, "stats.json")):
        if log:
            log(f"preprocess cache hit: {cache_dir}")
        return cache_dir, load_processed(cache_dir)
    split, stats = preprocess(dataset_format(name), path, cache_dir)
    if log:
        log(
            f"preprocessed {name}: {stats['users']} users, {stats['items']} items, "
            f"{stats['interactions']} interactions -> {cache_dir}"
        )
    return cache_dir, split


# ---------------------------------------------------------------------------
# run records


@dataclass
class RunRecord:
    id: str
    status: str  # "ok" | "failed"
    dataset: str
    model: str
    d: int
    L: int
    replicate: int
    seed: int
    config_hash: str
    params: int | None = None
    metrics: dict | None = None
    seconds: float = 0.0
    kwh: float = 0.0
    co2kg: float = 0.0
    best_epoch: int = 0
    error: str | None = None
    config: dict = field(default_factory=dict)
    version: str = __version__
    git_rev: str | None = None
    started_at: str = ""
    finished_at: str = ""

    def csv_row(self) -> list:
        assert self.status == "ok" and self.metrics is not None
        row = [self.dataset, self.model, self.d, self.L, self.params]
        row += [repr(self.metrics[c]) for c in RESULTS_COLUMNS[5:13]]
        row += [repr(self.kwh), repr(self.co2kg), repr(self.seconds)]
        return row


def _git_rev() -> str | None:
    try:
        proc = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        )
    except (OSError, subprocess.TimeoutExpired):
        return None
    rev = proc.stdout.strip()
    return rev if proc.returncode == 0 and rev else None


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def append_result(path: str, record: RunRecord) -> None:
    """Append one CSV row under an exclusive advisory lock."""
    with open(path, "a", newline="") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            if fh.tell() == 0:
                csv.writer(fh).writerow(RESULTS_COLUMNS)
            csv.writer(fh).writerow(record.csv_row())
            fh.flush()
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def export_results(out_dir: str) -> str:
    """Path of the results CSV; creates a header-only file when nothing ran."""
    path = os.path.join(out_dir, "results.csv")
    if not os.path.exists(path):
        os.makedirs(out_dir, exist_ok=True)
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(RESULTS_COLUMNS)
    return path


def read_results(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULTS_COLUMNS:
            raise DataError(
                f"{path}: expected results columns {','.join(RESULTS_COLUMNS)}, "
                f"got {','.join(reader.fieldnames or ())}"
            )
        return list(reader)


# ---------------------------------------------------------------------------
# the plan


def plan_points(cfg: ExperimentConfig) -> list[tuple[str, int, int, int]]:
    return [
        (family, d, length, rep)
        for family in cfg.models
        for d in cfg.emb
        for length in cfg.seqlen
        for rep in range(cfg.replicates)
    ]


def point_seed(base_seed: int, family: str, d: int, length: int, replicate: int) -> int:
    return derive_seed(base_seed, family, d, length, replicate)


def record_id(cfg: ExperimentConfig, family: str, d: int, length: int, rep: int) -> str:
    return f"{cfg.dataset_name}-{family}-d{d}-L{length}-r{rep}"


def run_point(
    cfg: ExperimentConfig,
    split: SplitDataset,
    family: str,
    d: int,
    length: int,
    rep: int,
    artifact_dir: str | None = None,
    log=None,
) -> RunRecord:
    """Train, test-evaluate, and meter one sweep point."""
    rid = record_id(cfg, family, d, length, rep)
    seed = point_seed(cfg.seed, family, d, length, rep)
    record = RunRecord(
        id=rid,
        status="failed",
        dataset=cfg.dataset_name,
        model=family,
        d=d,
        L=length,
        replicate=rep,
        seed=seed,
        config_hash=cfg.config_hash(),
        config=cfg.resolved(),
        git_rev=_git_rev(),
        started_at=_now(),
    )
    try:
        model_cfg = cfg.model_config(family, d, length)
        train_cfg = cfg.train_config(seed=seed)
        emissions_cfg = cfg.emissions_config()
        model = build_model(model_cfg, split.num_items, seed)

        def run():
            trained, history = train(model, split, train_cfg, emissions=emissions_cfg, log=log)
            report = evaluate(
                trained, split, "test",
                m_neg_eval=cfg.m_neg_eval(),
                seed=derive_seed(seed, "test"),
            )
            return trained, history, report

        (model, history, report), emissions = track(run, emissions_cfg)
        record.status = "ok"
        record.params = model.count_params()
        record.metrics = report.flat()
        record.seconds = emissions.elapsed_seconds
        record.kwh = emissions.energy_kwh
        record.co2kg = emissions.co2eq_kg
        record.best_epoch = history.best_epoch
        if artifact_dir is not None:
            os.makedirs(artifact_dir, exist_ok=True)
            save_checkpoint(
                model,
                os.path.join(artifact_dir, "checkpoint.bin"),
                epoch=history.best_epoch,
                val_metric=None if np.isnan(history.best_metric) else history.best_metric,
            )
            history.write_csv(os.path.join(artifact_dir, "history.csv"))
    except Exception as exc:  # failure isolation: one bad point never ends a sweep
        record.error = f"{type(exc).__name__}: {exc}"
    record.finished_at = _now()
    return record


def _sidecar_path(out_dir: str, record: RunRecord) -> str:
    return os.path.join(out_dir, "records", f"{record.id}-{record.config_hash}.json")


def _write_sidecar(out_dir: str, record: RunRecord, csv_written: bool) -> None:
    path = _sidecar_path(out_dir, record)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    payload = asdict(record)
    payload["csv_written"] = csv_written
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_sidecar(out_dir: str, rid: str, config_hash: str) -> dict | None:
    path = os.path.join(out_dir, "records", f"{rid}-{config_hash}.json")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _record_from_sidecar(payload: dict) -> RunRecord:
    fields = {k: v for k, v in payload.items() if k != "csv_written"}
    return RunRecord(**fields)


def _worker(cfg_dict: dict, cache_dir: str, point: tuple, artifact_dir: str) -> RunRecord:
    cfg = ExperimentConfig(**cfg_dict)
    split = load_processed(cache_dir)
    family, d, length, rep = point
    return run_point(cfg, split, family, d, length, rep, artifact_dir=artifact_dir)


def _cfg_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def run_plan(
    cfg: ExperimentConfig,
    parallel: int = 1,
    resume: bool = False,
    log=None,
) -> list[RunRecord]:
    """Execute the cartesian sweep; every point lands in the CSV + a sidecar.

    Resume skips points whose sidecar shows a completed run of the identical
    resolved config; failed points are always retried. Reruns never duplicate
    CSV rows: a row is appended once per (record id, config hash).
    """
    out_dir = cfg.out
    os.makedirs(out_dir, exist_ok=True)
    write_resolved(cfg, out_dir)
    results_csv = export_results(out_dir)
    cache_dir, split = cached_preprocess(
        cfg.dataset_name, cfg.dataset_path, os.path.join(out_dir, "cache"), log=log
    )
    points = plan_points(cfg)
    config_hash = cfg.config_hash()

    todo = []
    records: dict[tuple, RunRecord] = {}
    for point in points:
        family, d, length, rep = point
        rid = record_id(cfg, family, d, length, rep)
        prior = _read_sidecar(out_dir, rid, config_hash)
        if resume and prior is not None and prior["status"] == "ok":
            if log:
                log(f"resume: skipping completed {rid}")
            records[point] = _record_from_sidecar(prior)
            continue
        todo.append(point)

    def finish(point, record):
        prior = _read_sidecar(out_dir, record.id, record.config_hash)
        already = bool(prior and prior.get("csv_written"))
        written = already
        if record.status == "ok" and not already:
            append_result(results_csv, record)
            written = True
        _write_sidecar(out_dir, record, csv_written=written)
        records[point] = record
        if log:
            shown = "ok" if record.status == "ok" else f"FAILED ({record.error})"
            log(f"{record.id}: {shown}")

    if parallel <= 1:
        for point in todo:
            family, d, length, rep = point
            artifact_dir = os.path.join(
                out_dir, "artifacts", f"{record_id(cfg, family, d, length, rep)}-{config_hash}"
            )
            finish(point, run_point(cfg, split, family, d, length, rep, artifact_dir=artifact_dir))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = {}
            for point in todo:
                family, d, length, rep = point
                artifact_dir = os.path.join(
                    out_dir, "artifacts", f"{record_id(cfg, family, d, length, rep)}-{config_hash}"
                )
                futures[pool.submit(_worker, _cfg_dict(cfg), cache_dir, point, artifact_dir)] = point
            for future in concurrent.futures.as_completed(futures):
                finish(futures[future], future.result())

    return [records[point] for point in points]
