"""Experiment composition: strategy + model + methods + metrics.

Every method sees the very same post-strategy batch. The runner hashes
each batch once before fan-out and re-hashes it for every method; the
hashes land in the report's audit log and any mismatch aborts the run.
Augmentation randomness is derived per sample index, so batch size,
method count and processing order never change what a sample looks like.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .adapters import DatasetAdapter, adapt
from .augment import AugmentationSpec, apply, ood_fraction
from .core import (
    CapabilityError,
    ConfigError,
    DataError,
    Rng,
    Sample,
    ShapeError,
    TaskType,
    derive_stream_seed,
)
from .frtd import save_tensor
from .methods import OODMethod, method_from_config
from .metrics import (
    BinnedAuRoC,
    DEFAULT_HISTOGRAM_BINS,
    Metric,
    MetricResult,
    ScoreHistogram,
    ScoredRecord,
    metric_from_config,
    score_histogram,
)
from .model import Model, build_model

log = logging.getLogger(__name__)

CONFIG_KEYS = {"seed", "task", "dataset", "strategy", "model", "methods", "metrics", "batch_size", "limit", "dump_scores"}
REQUIRED_KEYS = {"seed", "task", "dataset", "strategy", "model", "methods", "metrics"}
DATASET_KEYS = {"manifest", "remapping"}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _check_int(name: str, value, minimum: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def _dataset_config(name: str, cfg) -> dict:
    if not isinstance(cfg, Mapping) or "manifest" not in cfg:
        raise ConfigError(f"{name} must be an object with a 'manifest' path")
    unknown = set(cfg) - DATASET_KEYS
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    remap = cfg.get("remapping")
    if remap is not None:
        try:
            {int(k): int(v) for k, v in remap.items()}
        except (AttributeError, TypeError, ValueError):
            raise ConfigError(f"{name}.remapping must map class indices to class indices") from None
    return dict(cfg)


@dataclass
class ExperimentConfig:
    seed: int
    task: TaskType
    dataset: dict
    model: str
    methods: list[OODMethod]
    metrics: list[Metric]
    augmentation: Optional[AugmentationSpec] = None
    ood_dataset: Optional[dict] = None
    batch_size: int = 8
    limit: Optional[int] = None
    dump_scores: bool = False
    base_dir: Path = Path(".")
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping, base_dir=".") -> "ExperimentConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = REQUIRED_KEYS - set(data)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        seed = _check_int("seed", data["seed"], 0)
        task = TaskType.parse(data["task"])
        dataset = _dataset_config("dataset", data["dataset"])

        strategy = data["strategy"]
        if not isinstance(strategy, Mapping) or len(strategy) != 1:
            raise ConfigError("strategy must be {'augmentation': {...}} or {'ood_dataset': {...}}")
        (kind, body), = strategy.items()
        augmentation = ood_dataset = None
        if kind == "augmentation":
            if not isinstance(body, Mapping):
                raise ConfigError("strategy.augmentation must be an object")
            augmentation = AugmentationSpec.from_config(body)
        elif kind == "ood_dataset":
            ood_dataset = _dataset_config("strategy.ood_dataset", body)
        else:
            raise ConfigError(f"unknown strategy {kind!r}")

        model = data["model"]
        if not isinstance(model, str) or model.partition(":")[0] not in {"init", "bundle", "replay"}:
            raise ConfigError(f"model must be 'init:<seed>', 'bundle:<dir>' or 'replay:<manifest>', got {model!r}")

        if not isinstance(data["methods"], list) or not data["methods"]:
            raise ConfigError("methods must be a non-empty list")
        methods = [method_from_config(m) for m in data["methods"]]
        names = [m.name for m in methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"each method may be configured once, got {names}")

        if not isinstance(data["metrics"], list) or not data["metrics"]:
            raise ConfigError("metrics must be a non-empty list")
        metrics = [metric_from_config(m) for m in data["metrics"]]
        for m in metrics:
            if not m.applies_to(task):
                raise ConfigError(f"metric {m.name!r} is not available for {task.value}")

        batch_size = _check_int("batch_size", data.get("batch_size", 8), 1)
        limit = data.get("limit")
        if limit is not None:
            limit = _check_int("limit", limit, 0)
        dump = data.get("dump_scores", False)
        if not isinstance(dump, bool):
            raise ConfigError("dump_scores must be true or false")
        return cls(
            seed=seed,
            task=task,
            dataset=dataset,
            model=model,
            methods=methods,
            metrics=metrics,
            augmentation=augmentation,
            ood_dataset=ood_dataset,
            batch_size=batch_size,
            limit=limit,
            dump_scores=dump,
            base_dir=Path(base_dir),
            raw=copy.deepcopy(dict(data)),
        )

    @classmethod
    def load(cls, path, overrides: Optional[Mapping] = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if isinstance(data, dict) and overrides:
            data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data, base_dir=path.parent)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()

    def open_dataset(self, cfg: Mapping) -> DatasetAdapter:
        return adapt(self.base_dir / cfg["manifest"], cfg.get("remapping"), self.task)


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


def augment_sample(spec: AugmentationSpec, sample: Sample, seed: int, index: int) -> Sample:
    return apply(spec, sample, Rng(derive_stream_seed(seed, "aug", index)))


def augmentation_strategy(adapter: Iterable[Sample], spec: AugmentationSpec, seed: int) -> Iterator[Sample]:
    for i, sample in enumerate(adapter):
        yield augment_sample(spec, sample, seed, i)


def ood_dataset_strategy(in_adapter: Iterable[Sample], ood_adapter: Iterable[Sample]) -> Iterator[Sample]:
    """All ID samples (mask zeros), then all OoD-dataset samples (mask ones)."""
    channels = None
    for sample in in_adapter:
        channels = sample.channels if channels is None else channels
        yield sample.evolve(ood_mask=np.zeros(sample.hw, np.uint8), meta={"strategy": "ood_dataset", "ood": "0"})
    for sample in ood_adapter:
        channels = sample.channels if channels is None else channels
        if sample.channels != channels:
            raise DataError(f"entry {sample.id!r}: OoD dataset has {sample.channels} channels, expected {channels}")
        yield sample.evolve(ood_mask=np.ones(sample.hw, np.uint8), meta={"strategy": "ood_dataset", "ood": "1"})


def batch_hash(batch: Sequence[Sample]) -> str:
    h = hashlib.sha256()
    for s in batch:
        h.update(s.id.encode())
        h.update(b"\0")
        h.update(np.asarray(s.image.shape, dtype="<u4").tobytes())
        h.update(s.image.astype("<f4").tobytes())
        h.update(s.ood_mask.tobytes())
    return h.hexdigest()


def _batched(it: Iterable, n: int) -> Iterator[list]:
    it = iter(it)
    while chunk := list(islice(it, n)):
        yield chunk


def worker_count() -> int:
    env = os.environ.get("OODBENCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"OODBENCH_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    config: dict
    config_hash: str
    task: TaskType
    method_names: list[str]
    results: list[MetricResult]
    skips: dict[str, str]
    histograms: dict[str, dict]
    audit: list[dict]
    records: dict[str, list[ScoredRecord]]
    n_samples: int
    n_ood_samples: int = 0
    dump_scores: bool = False
    runtime: dict = field(default_factory=dict)

    def results_by_method(self) -> dict:
        out: dict = {m: {} for m in self.method_names}
        for r in self.results:
            out[r.method].setdefault(r.metric, {})[r.bin_key] = r.to_dict()
        return out

    def to_dict(self, include_runtime: bool = True) -> dict:
        data = {
            "config": self.config,
            "config_hash": self.config_hash,
            "task": self.task.value,
            "methods": self.method_names,
            "n_samples": self.n_samples,
            "n_ood_samples": self.n_ood_samples,
            "results": self.results_by_method(),
            "skips": self.skips,
            "histograms": self.histograms,
            "audit": {"batches": self.audit},
            "notes": {
                "orientation": "AuROC = P(ID score > OoD score), ties count 1/2; scores are confidences",
                "image_score": "segmentation image-level score = mean of the pixel score map",
                "pixel_auroc": "pixels pooled globally across all images",
            },
        }
        if self.dump_scores:
            data["scores"] = {
                m: {r.sample_id: {"score": r.image_score, "ood_fraction": r.ood_fraction} for r in recs}
                for m, recs in self.records.items()
            }
        if include_runtime:
            data["runtime"] = self.runtime
        return data

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True) + "\n"

    def csv_rows(self) -> list[list]:
        rows = []
        for r in self.results:
            lo, hi = ("", "") if r.bin is None else (repr(r.bin[0]), repr(r.bin[1]))
            value = "" if r.value is None else repr(r.value)
            rows.append([r.method, r.metric, lo, hi, value, r.n_in, r.n_ood])
        return rows

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(self.to_json())
        with open(out_dir / "results.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "metric", "bin_lo", "bin_hi", "value", "n_in", "n_ood"])
            writer.writerows(self.csv_rows())


def _metric_slots(metric: Metric) -> list[Optional[tuple[float, float]]]:
    if isinstance(metric, BinnedAuRoC):
        return metric.bins()
    return [None]


def _undefined(metric: Metric, method: str) -> list[MetricResult]:
    return [MetricResult(metric.name, method, None, 0, 0, b) for b in _metric_slots(metric)]


def _check_score(score, sample: Sample, task: TaskType, method: str):
    if task is TaskType.SEGMENTATION:
        if not isinstance(score, np.ndarray) or score.shape != sample.hw:
            raise ShapeError(f"method {method!r} returned a score of wrong shape for {sample.id!r}")
        if not np.isfinite(score).all():
            raise DataError(f"method {method!r} returned a non-finite score map for {sample.id!r}")
        return score
    if isinstance(score, np.ndarray):
        if score.size != 1:
            raise ShapeError(f"method {method!r} returned a map for classification sample {sample.id!r}")
        score = float(score.reshape(-1)[0])
    if not np.isfinite(score):
        raise DataError(f"method {method!r} returned a non-finite score for {sample.id!r}")
    return float(score)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def sample_stream(
    config: ExperimentConfig,
    adapter: Optional[DatasetAdapter] = None,
    executor: Optional[ThreadPoolExecutor] = None,
) -> Iterator[list[Sample]]:
    """Post-strategy samples of ``config`` in batches.

    ``limit`` truncates the ID dataset; under the OoD-dataset strategy it
    truncates the OoD dataset separately as well.
    """
    adapter = adapter if adapter is not None else config.open_dataset(config.dataset)
    if config.ood_dataset is not None:
        ood = config.open_dataset(config.ood_dataset)
        merged = ood_dataset_strategy(islice(adapter, config.limit), islice(ood, config.limit))
        yield from _batched(merged, config.batch_size)
        return
    spec = config.augmentation
    start = 0
    for chunk in _batched(islice(adapter, config.limit), config.batch_size):
        idx = range(start, start + len(chunk))
        if executor is not None and len(chunk) > 1:
            out = list(executor.map(lambda s, i: augment_sample(spec, s, config.seed, i), chunk, idx))
        else:
            out = [augment_sample(spec, s, config.seed, i) for s, i in zip(chunk, idx)]
        start += len(chunk)
        yield out


def _load_model(config: ExperimentConfig, channels: int, class_count: int) -> Model:
    model = build_model(config.model, config.base_dir, C=channels, K=class_count, task=config.task)
    model_task = getattr(model, "task", config.task)
    if model_task is not config.task:
        raise ConfigError(f"model {config.model!r} is a {model_task.value} model, config task is {config.task.value}")
    return model


def run_experiment(config: ExperimentConfig, out_dir=None, threads: Optional[int] = None) -> ExperimentReport:
    t0 = time.perf_counter()
    threads = threads or worker_count()
    task = config.task
    method_names = [m.name for m in config.methods]
    records: dict[str, list[ScoredRecord]] = {m: [] for m in method_names}
    skips: dict[str, str] = {}
    audit: list[dict] = []
    model: Optional[Model] = None
    n_samples = n_ood = 0
    adapter = config.open_dataset(config.dataset)
    dump_dir = Path(out_dir) / "scores" if (out_dir is not None and config.dump_scores) else None

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for b_index, batch in enumerate(sample_stream(config, adapter, executor)):
            if model is None:
                model = _load_model(config, batch[0].channels, adapter.manifest.class_count)
            reference = batch_hash(batch)
            entry = {"index": b_index, "size": len(batch), "hash": reference, "method_hashes": {}}
            fractions = [ood_fraction(s) for s in batch]
            for method in config.methods:
                seen = batch_hash(batch)
                entry["method_hashes"][method.name] = seen
                if seen != reference:
                    raise RuntimeError(f"batch {b_index} changed before method {method.name!r} was scored")
                if method.name in skips:
                    continue
                try:
                    scores = method.calculate_ood_score(batch, model)
                except CapabilityError as exc:
                    skips[method.name] = str(exc)
                    records[method.name] = []
                    log.warning("skipping method %s: %s", method.name, exc)
                    continue
                if len(scores) != len(batch):
                    raise ShapeError(f"method {method.name!r} returned {len(scores)} scores for {len(batch)} samples")
                for sample, score, frac in zip(batch, scores, fractions):
                    score = _check_score(score, sample, task, method.name)
                    mask = sample.ood_mask if task is TaskType.SEGMENTATION else None
                    records[method.name].append(ScoredRecord(sample.id, score, frac, mask))
                    if dump_dir is not None:
                        target = dump_dir / method.name
                        target.mkdir(parents=True, exist_ok=True)
                        save_tensor(target / f"{sample.id}.frtd", np.atleast_1d(np.asarray(score, dtype=np.float32)))
            audit.append(entry)
            n_samples += len(batch)
            n_ood += sum(f > 0 for f in fractions)
    finally:
        if executor is not None:
            executor.shutdown()

    hist_bins = next((m.bins for m in config.metrics if isinstance(m, ScoreHistogram)), DEFAULT_HISTOGRAM_BINS)
    results: list[MetricResult] = []
    histograms: dict[str, dict] = {}
    for name in method_names:
        if name in skips:
            for metric in config.metrics:
                if not isinstance(metric, ScoreHistogram):
                    results.extend(_undefined(metric, name))
            continue
        recs = records[name]
        for metric in config.metrics:
            results.extend(metric.compute(recs, name))
        histograms[name] = score_histogram(recs, hist_bins).to_dict()

    return ExperimentReport(
        config=config.raw,
        config_hash=config.config_hash,
        task=task,
        method_names=method_names,
        results=results,
        skips=skips,
        histograms=histograms,
        audit=audit,
        records=records,
        n_samples=n_samples,
        n_ood_samples=n_ood,
        dump_scores=config.dump_scores,
        runtime={"seconds": round(time.perf_counter() - t0, 6), "threads": threads},
    )
