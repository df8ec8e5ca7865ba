"""AuROC metrics over scored records.

AuROC here is the probability that an in-distribution item outscores an
OoD item, ties counting one half (the Mann-Whitney U statistic divided by
``n_in * n_ood``). An empty population makes a metric undefined: the value
is ``None`` and the supports say why.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import ConfigError, InvalidArgumentError, TaskType
from .methods import OodScore

DEFAULT_BIN_EDGES = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_HISTOGRAM_BINS = 20


@dataclass(frozen=True)
class ScoredRecord:
    """One sample's method score plus its OoD ground truth."""

    sample_id: str
    score: OodScore
    ood_fraction: float
    ood_mask: Optional[np.ndarray] = None

    @property
    def image_score(self) -> float:
        if isinstance(self.score, np.ndarray):
            return float(np.mean(self.score, dtype=np.float64))
        return float(self.score)

    @property
    def is_ood(self) -> bool:
        return self.ood_fraction > 0


@dataclass(frozen=True)
class MetricResult:
    metric: str
    method: str
    value: Optional[float]
    n_in: int
    n_ood: int
    bin: Optional[tuple[float, float]] = None

    @property
    def bin_key(self) -> str:
        if self.bin is None:
            return "all"
        return f"({self.bin[0]:g},{self.bin[1]:g}]"

    def to_dict(self) -> dict:
        return {"value": self.value, "n_in": self.n_in, "n_ood": self.n_ood}


def auroc(scores_in: Sequence[float], scores_ood: Sequence[float]) -> Optional[float]:
    """Rank-sum AuROC; ``None`` if either side is empty."""
    a = np.asarray(scores_in, dtype=np.float64).reshape(-1)
    b = np.asarray(scores_ood, dtype=np.float64).reshape(-1)
    n_in, n_ood = a.size, b.size
    if n_in == 0 or n_ood == 0:
        return None
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise InvalidArgumentError("scores must be finite")
    # Doubled average ranks are integers, so the U statistic is exact.
    doubled = np.rint(2.0 * rankdata(np.concatenate([a, b]), method="average")).astype(np.int64)
    u2 = int(doubled[:n_in].sum()) - n_in * (n_in + 1)
    return (u2 / 2) / (n_in * n_ood)


def pairwise_auroc(scores_in: Sequence[float], scores_ood: Sequence[float]) -> Optional[float]:
    """O(n^2) reference AuROC by direct pair counting."""
    a = np.asarray(scores_in, dtype=np.float64).reshape(-1, 1)
    b = np.asarray(scores_ood, dtype=np.float64).reshape(1, -1)
    if a.size == 0 or b.size == 0:
        return None
    wins = int((a > b).sum())
    ties = int((a == b).sum())
    return ((2 * wins + ties) / 2) / (a.size * b.size)


def image_auroc(records: Sequence[ScoredRecord], method: str = "") -> MetricResult:
    ins = [r.image_score for r in records if not r.is_ood]
    oods = [r.image_score for r in records if r.is_ood]
    return MetricResult("auroc", method, auroc(ins, oods), len(ins), len(oods))


def pixel_auroc(records: Sequence[ScoredRecord], method: str = "") -> MetricResult:
    """Pool pixels of all records: mask 0 pixels are ID, mask 1 pixels OoD."""
    ins, oods = [], []
    for r in records:
        if r.ood_mask is None or not isinstance(r.score, np.ndarray):
            raise InvalidArgumentError(f"record {r.sample_id!r} lacks a pixel score map or mask")
        if r.score.shape != r.ood_mask.shape:
            raise InvalidArgumentError(f"record {r.sample_id!r}: score map and mask shapes differ")
        m = r.ood_mask.astype(bool)
        ins.append(r.score[~m])
        oods.append(r.score[m])
    a = np.concatenate(ins) if ins else np.empty(0)
    b = np.concatenate(oods) if oods else np.empty(0)
    return MetricResult("pixel_auroc", method, auroc(a, b), int(a.size), int(b.size))


def _check_edges(bin_edges) -> tuple[float, ...]:
    edges = tuple(float(e) for e in bin_edges)
    if not edges or any(not 0 < e <= 1 for e in edges) or any(x >= y for x, y in zip(edges, edges[1:])):
        raise InvalidArgumentError(f"bin edges must be strictly increasing within (0, 1], got {list(edges)}")
    return edges


def binned_auroc(
    records: Sequence[ScoredRecord], bin_edges=DEFAULT_BIN_EDGES, method: str = ""
) -> list[MetricResult]:
    """One AuROC per right-closed OoD-fraction bin against the fraction-0 population."""
    edges = _check_edges(bin_edges)
    ins = [r.image_score for r in records if r.ood_fraction == 0]
    results = []
    lo = 0.0
    for hi in edges:
        oods = [r.image_score for r in records if lo < r.ood_fraction <= hi]
        results.append(MetricResult("binned_auroc", method, auroc(ins, oods), len(ins), len(oods), (lo, hi)))
        lo = hi
    return results


@dataclass(frozen=True)
class Histogram:
    edges: list[float]
    counts_in: list[int]
    counts_ood: list[int]

    def to_dict(self) -> dict:
        return {"edges": self.edges, "in": self.counts_in, "ood": self.counts_ood}


def score_histogram(records: Sequence[ScoredRecord], n_bins: int = DEFAULT_HISTOGRAM_BINS) -> Histogram:
    """Equal-width histogram of image-level scores over the pooled [min, max]."""
    if n_bins < 1:
        raise InvalidArgumentError("n_bins must be >= 1")
    scores = np.array([r.image_score for r in records], dtype=np.float64)
    is_ood = np.array([r.is_ood for r in records], dtype=bool)
    if scores.size == 0:
        return Histogram([], [0] * n_bins, [0] * n_bins)
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        idx = np.zeros(scores.size, dtype=np.int64)
        edges = [lo] * (n_bins + 1)
    else:
        edges_arr = np.linspace(lo, hi, n_bins + 1)
        idx = np.clip(np.searchsorted(edges_arr, scores, side="right") - 1, 0, n_bins - 1)
        edges = edges_arr.tolist()
    counts_in = np.bincount(idx[~is_ood], minlength=n_bins)
    counts_ood = np.bincount(idx[is_ood], minlength=n_bins)
    return Histogram(edges, counts_in.tolist(), counts_ood.tolist())


# ---------------------------------------------------------------------------
# Metric configs
# ---------------------------------------------------------------------------


class Metric:
    name: ClassVar[str]
    keys: ClassVar[tuple[str, ...]] = ()

    def config(self) -> dict:
        return {"name": self.name, **{k: getattr(self, k) for k in self.keys}}

    def applies_to(self, task: TaskType) -> bool:
        return True

    def compute(self, records, method: str) -> list[MetricResult]:
        raise NotImplementedError


class OODAuRoC(Metric):
    name = "auroc"

    def compute(self, records, method):
        return [image_auroc(records, method)]


class BinnedAuRoC(Metric):
    name = "binned_auroc"
    keys = ("edges",)

    def __init__(self, edges=DEFAULT_BIN_EDGES):
        try:
            self.edges = list(_check_edges(edges))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def compute(self, records, method):
        return binned_auroc(records, self.edges, method)

    def bins(self) -> list[tuple[float, float]]:
        lows = [0.0] + self.edges[:-1]
        return list(zip(lows, self.edges))


class PixelAuRoC(Metric):
    name = "pixel_auroc"

    def applies_to(self, task):
        return task is TaskType.SEGMENTATION

    def compute(self, records, method):
        return [pixel_auroc(records, method)]


class ScoreHistogram(Metric):
    name = "histogram"
    keys = ("bins",)

    def __init__(self, bins: int = DEFAULT_HISTOGRAM_BINS):
        if not isinstance(bins, int) or bins < 1:
            raise ConfigError(f"histogram bins must be a positive integer, got {bins!r}")
        self.bins = bins

    def compute(self, records, method):
        return []


METRICS: dict[str, type[Metric]] = {m.name: m for m in (OODAuRoC, BinnedAuRoC, PixelAuRoC, ScoreHistogram)}


def metric_from_config(cfg) -> Metric:
    if isinstance(cfg, str):
        cfg = {"name": cfg}
    cfg = dict(cfg)
    name = cfg.pop("name", None)
    if name not in METRICS:
        raise ConfigError(f"unknown metric {name!r}; known: {sorted(METRICS)}")
    cls = METRICS[name]
    unknown = set(cfg) - set(cls.keys)
    if unknown:
        raise ConfigError(f"metric {name!r}: unknown keys {sorted(unknown)}")
    return cls(**cfg)
