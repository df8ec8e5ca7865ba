"""Augmentation OoD strategy: corrupt ID images and mark the corrupted pixels.

The OoD mask after an augmentation is the previous mask OR'ed with the set
of pixels whose value changed in any channel. Parameter sampling happens
in a fixed order per kind, which is part of the reproducibility contract:

* ``apply``: one draw decides whether to augment at all (``u < p``).
* dark spots: ``n``, then per spot ``(cy, cx, r, d)``.
* patch overlay: ``size``, ``value``, ``top``, ``left``.
* gaussian noise patch: ``sigma``, ``coverage``, ``top``, ``left``, then
  the noise field in ``(channel, row, col)`` order, two normals per
  Box-Muller pair.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields
from typing import ClassVar, Mapping

import numpy as np

from .core import ConfigError, InvalidArgumentError, Rng, Sample

Range = tuple[float, float]


@dataclass(frozen=True)
class AppliedAugmentation:
    kind: str
    params: dict
    affected_pixels: int

    def to_meta(self) -> dict[str, str]:
        return {
            "augmentation": self.kind,
            "augmentation_params": json.dumps(self.params, sort_keys=True),
            "affected_pixels": str(self.affected_pixels),
        }


def ood_fraction(sample: Sample) -> float:
    mask = sample.ood_mask
    return float(mask.sum(dtype=np.float64)) / float(mask.size)


def _finish(sample: Sample, new_image: np.ndarray, kind: str, params: dict) -> Sample:
    new_image = np.clip(new_image, 0.0, 1.0).astype(np.float32)
    changed = (new_image != sample.image).any(axis=0)
    mask = sample.ood_mask | changed.astype(np.uint8)
    applied = AppliedAugmentation(kind, params, int(mask.sum()) - int(sample.ood_mask.sum()))
    return sample.evolve(image=new_image, ood_mask=mask, meta=applied.to_meta())


def _noop(sample: Sample, kind: str, reason: str) -> Sample:
    return sample.evolve(meta={"augmentation": kind, "augmentation_noop": reason, "affected_pixels": "0"})


def _check_range(name: str, rng_: Range, lo: float, hi: float, open_lo: bool = False) -> Range:
    try:
        a, b = (float(v) for v in rng_)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"{name} must be a [lo, hi] pair") from None
    low_ok = a > lo if open_lo else a >= lo
    if not (low_ok and a <= b <= hi):
        bound = "(" if open_lo else "["
        raise InvalidArgumentError(f"{name} range [{a}, {b}] must be non-empty and within {bound}{lo}, {hi}]")
    return a, b


def render_dark_spots(sample: Sample, spots: list[dict]) -> Sample:
    """Darken explicit disks ``{"cy", "cx", "r", "d"}``; pixel ``(i, j)`` is
    covered when ``(i - cy)^2 + (j - cx)^2 <= r^2``."""
    _, h, w = sample.image.shape
    ii, jj = np.mgrid[0:h, 0:w]
    factor = np.ones((h, w), dtype=np.float32)
    for spot in spots:
        disk = (ii - spot["cy"]) ** 2 + (jj - spot["cx"]) ** 2 <= spot["r"] ** 2
        factor[disk] *= np.float32(1.0 - spot["d"])
    return _finish(sample, sample.image * factor[None], "dark_spots", {"spots": spots})


def apply_dark_spots(sample: Sample, n_spots, radius: Range, darkness: Range, rng: Rng) -> Sample:
    """Darken ``n`` random disks, multiplying covered pixels by ``1 - d``."""
    _, h, w = sample.image.shape
    n = rng.integer(int(n_spots[0]), int(n_spots[1]))
    if n == 0:
        return _noop(sample, "dark_spots", "zero spots sampled")
    spots = []
    for _ in range(n):
        cy = rng.integer(0, h - 1)
        cx = rng.integer(0, w - 1)
        r = rng.uniform(*radius)
        d = rng.uniform(*darkness)
        spots.append({"cy": cy, "cx": cx, "r": r, "d": d})
    return render_dark_spots(sample, spots)


def apply_patch_overlay(sample: Sample, size: Range, value: Range, rng: Rng) -> Sample:
    """Paint one constant-valued square of side ``ceil(size * min(H, W))``."""
    _, h, w = sample.image.shape
    s = rng.uniform(*size)
    v = rng.uniform(*value)
    side = min(max(1, math.ceil(s * min(h, w))), min(h, w))
    top = rng.integer(0, h - side)
    left = rng.integer(0, w - side)
    img = sample.image.copy()
    img[:, top : top + side, left : left + side] = np.float32(v)
    params = {"size": s, "value": v, "side": side, "top": top, "left": left}
    return _finish(sample, img, "patch_overlay", params)


def _box_muller(rng: Rng, n: int) -> np.ndarray:
    pairs = (n + 1) // 2
    u = rng.f64_array(2 * pairs).reshape(pairs, 2)
    radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    z = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1).reshape(-1)
    return z[:n]


def apply_gaussian_noise_patch(sample: Sample, sigma: Range, coverage: Range, rng: Rng) -> Sample:
    """Add N(0, sigma^2) noise to a region covering ``coverage`` of the image area.

    The region keeps the image's aspect ratio (each side scaled by
    ``sqrt(coverage)``), so ``coverage = 1`` is exactly the whole image.
    """
    c, h, w = sample.image.shape
    sg = rng.uniform(*sigma)
    cov = rng.uniform(*coverage)
    scale = math.sqrt(cov)
    ph = min(h, max(1, math.ceil(scale * h)))
    pw = min(w, max(1, math.ceil(scale * w)))
    top = rng.integer(0, h - ph)
    left = rng.integer(0, w - pw)
    noise = _box_muller(rng, c * ph * pw).reshape(c, ph, pw)
    img = sample.image.astype(np.float64)
    img[:, top : top + ph, left : left + pw] += sg * noise
    params = {"sigma": sg, "coverage": cov, "height": ph, "width": pw, "top": top, "left": left}
    return _finish(sample, img, "gaussian_noise_patch", params)


# ---------------------------------------------------------------------------
# Extension contract and registry
# ---------------------------------------------------------------------------


class OODAugmentation(ABC):
    """Base class for augmentation kinds.

    Subclasses are dataclasses of parameter ranges and implement
    ``_augment``, which must return a sample whose ``ood_mask`` covers every
    changed pixel.
    """

    kind: ClassVar[str]

    @abstractmethod
    def _augment(self, sample: Sample, rng: Rng) -> Sample: ...

    def __call__(self, sample: Sample, rng: Rng) -> Sample:
        return self._augment(sample, rng)

    def params(self) -> dict:
        return {f.name: list(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class DarkSpots(OODAugmentation):
    kind: ClassVar[str] = "dark_spots"
    n_spots: tuple[int, int] = (1, 4)
    radius: Range = (5.0, 20.0)
    darkness: Range = (0.5, 1.0)

    def __post_init__(self):
        lo, hi = self.n_spots
        if int(lo) != lo or int(hi) != hi or not 0 <= lo <= hi:
            raise InvalidArgumentError(f"n_spots must be an integer range with 0 <= lo <= hi, got {self.n_spots}")
        object.__setattr__(self, "n_spots", (int(lo), int(hi)))
        object.__setattr__(self, "radius", _check_range("radius", self.radius, 1.0, math.inf))
        object.__setattr__(self, "darkness", _check_range("darkness", self.darkness, 0.0, 1.0))

    def _augment(self, sample, rng):
        _, h, w = sample.image.shape
        if self.radius[1] > min(h, w) / 2:
            return _noop(sample, self.kind, f"radius range exceeds min(H,W)/2 for {h}x{w} image")
        return apply_dark_spots(sample, self.n_spots, self.radius, self.darkness, rng)


@dataclass(frozen=True)
class PatchOverlay(OODAugmentation):
    kind: ClassVar[str] = "patch_overlay"
    size: Range = (0.1, 0.5)
    value: Range = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "size", _check_range("size", self.size, 0.0, 1.0, open_lo=True))
        object.__setattr__(self, "value", _check_range("value", self.value, 0.0, 1.0))

    def _augment(self, sample, rng):
        return apply_patch_overlay(sample, self.size, self.value, rng)


@dataclass(frozen=True)
class GaussianNoisePatch(OODAugmentation):
    kind: ClassVar[str] = "gaussian_noise_patch"
    sigma: Range = (0.05, 0.2)
    coverage: Range = (0.1, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "sigma", _check_range("sigma", self.sigma, 0.0, 1.0, open_lo=True))
        object.__setattr__(self, "coverage", _check_range("coverage", self.coverage, 0.0, 1.0, open_lo=True))

    def _augment(self, sample, rng):
        return apply_gaussian_noise_patch(sample, self.sigma, self.coverage, rng)


AUGMENTATIONS: dict[str, type[OODAugmentation]] = {}


def register_augmentation(cls: type[OODAugmentation]) -> type[OODAugmentation]:
    AUGMENTATIONS[cls.kind] = cls
    return cls


for _cls in (DarkSpots, PatchOverlay, GaussianNoisePatch):
    register_augmentation(_cls)


@dataclass(frozen=True)
class AugmentationSpec:
    """An augmentation kind plus the probability of applying it."""

    augmentation: OODAugmentation
    p: float = 1.0
    extra: Mapping = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= float(self.p) <= 1.0:
            raise InvalidArgumentError(f"p must be in [0, 1], got {self.p}")

    @property
    def kind(self) -> str:
        return self.augmentation.kind

    @classmethod
    def from_config(cls, cfg: Mapping) -> "AugmentationSpec":
        cfg = dict(cfg)
        kind = cfg.pop("kind", None)
        if kind not in AUGMENTATIONS:
            raise ConfigError(f"unknown augmentation kind {kind!r}; known: {sorted(AUGMENTATIONS)}")
        p = cfg.pop("p", 1.0)
        aug_cls = AUGMENTATIONS[kind]
        allowed = {f.name for f in fields(aug_cls)}
        unknown = set(cfg) - allowed
        if unknown:
            raise ConfigError(f"augmentation {kind!r}: unknown keys {sorted(unknown)}")
        try:
            aug = aug_cls(**{k: tuple(v) for k, v in cfg.items()})
            return cls(aug, float(p))
        except (InvalidArgumentError, TypeError) as exc:
            raise ConfigError(f"augmentation {kind!r}: {exc}") from None

    def to_config(self) -> dict:
        return {"kind": self.kind, "p": self.p, **self.augmentation.params()}


def apply(spec: AugmentationSpec, sample: Sample, rng: Rng) -> Sample:
    """Apply ``spec`` with probability ``p`` (one draw), else return ``sample`` unchanged."""
    if rng.next_f64() >= spec.p:
        return sample
    return spec.augmentation(sample, rng)
