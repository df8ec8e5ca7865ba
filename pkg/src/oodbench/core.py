"""Shared types, errors, deterministic RNG and numeric primitives.

Tensors are plain ``numpy.ndarray`` objects of dtype ``float32`` in
row-major order. Images are ``C x H x W`` with values in ``[0, 1]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class OodBenchError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(OodBenchError, ValueError):
    pass


class FormatError(OodBenchError, ValueError):
    """A file is not in a supported format."""


class CorruptionError(FormatError):
    """A file has the right header but an inconsistent payload."""


class DataError(OodBenchError, ValueError):
    """Dataset content violates an invariant (bad class index, missing id, ...)."""


class ShapeError(OodBenchError, ValueError):
    pass


class CapabilityError(OodBenchError, NotImplementedError):
    """A model lacks a capability a method needs (e.g. input gradients)."""


class ConfigError(OodBenchError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


class TaskType(enum.Enum):
    CLASSIFICATION = "classification"
    SEGMENTATION = "segmentation"

    @classmethod
    def parse(cls, value: "str | TaskType") -> "TaskType":
        if isinstance(value, TaskType):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown task type {value!r}") from None


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Sample:
    """One image flowing through the pipeline.

    ``ood_mask`` uses 1 for OoD pixels and 0 for in-distribution pixels.
    Arrays are made read-only on construction, so a sample can be shared
    between methods without defensive copies.
    """

    image: np.ndarray
    ood_mask: Optional[np.ndarray] = None
    seg_mask: Optional[np.ndarray] = None
    label: Optional[int] = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float32)
        if image.ndim != 3:
            raise ShapeError(f"image must be C x H x W, got shape {image.shape}")
        _, h, w = image.shape
        if self.ood_mask is None:
            mask = np.zeros((h, w), dtype=np.uint8)
        else:
            mask = np.asarray(self.ood_mask)
            if mask.shape != (h, w):
                raise ShapeError(f"ood_mask shape {mask.shape} does not match image {h}x{w}")
            if not np.isin(mask, (0, 1)).all():
                raise DataError("ood_mask values must be exactly 0 or 1")
            mask = mask.astype(np.uint8)
        object.__setattr__(self, "image", _frozen(image))
        object.__setattr__(self, "ood_mask", _frozen(mask))
        if self.seg_mask is not None:
            seg = np.asarray(self.seg_mask, dtype=np.int64)
            if seg.shape != (h, w):
                raise ShapeError(f"seg_mask shape {seg.shape} does not match image {h}x{w}")
            object.__setattr__(self, "seg_mask", _frozen(seg))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def id(self) -> str:
        return self.meta.get("id", "")

    @property
    def channels(self) -> int:
        return self.image.shape[0]

    @property
    def hw(self) -> tuple[int, int]:
        return self.image.shape[1], self.image.shape[2]

    def evolve(self, **changes) -> "Sample":
        """Return a copy with some fields replaced (``meta`` is merged)."""
        if "meta" in changes:
            changes["meta"] = {**self.meta, **changes["meta"]}
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# SplitMix64
# ---------------------------------------------------------------------------


def splitmix64_mix(z: int) -> int:
    """The SplitMix64 output finalizer applied to a 64-bit value."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 generator.

    The stream is a pure function of the seed. Bulk draws (``u64_array``,
    ``f64_array``) return exactly the values that the same number of scalar
    calls would, so callers may mix both styles freely.
    """

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return splitmix64_mix(self.state)

    def next_f64(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def u64_array(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return _mix_array(states)

    def f64_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_f64()

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range ``[lo, hi]``."""
        if hi < lo:
            raise InvalidArgumentError(f"empty integer range [{lo}, {hi}]")
        span = hi - lo + 1
        return lo + min(int(self.next_f64() * span), span - 1)


def rng_new(seed: int) -> Rng:
    return Rng(seed)


def fnv1a_64(data: "str | bytes") -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def derive_stream_seed(master_seed: int, domain_tag: str, index: int) -> int:
    """Seed for an independent stream identified by ``(domain_tag, index)``."""
    z = (int(master_seed) & MASK64) ^ fnv1a_64(domain_tag) ^ ((int(index) * GOLDEN_GAMMA) & MASK64)
    return splitmix64_mix(z)


# ---------------------------------------------------------------------------
# Numerics
# ---------------------------------------------------------------------------


def check_temperature(T: float) -> None:
    if not (isinstance(T, (int, float, np.floating)) and math.isfinite(T) and T > 0):
        raise InvalidArgumentError(f"temperature must be a positive finite number, got {T!r}")


def softmax(logits, T: float = 1.0, axis: int = 0) -> np.ndarray:
    """Temperature-scaled softmax along ``axis`` (the class axis).

    Computed in float64 with the max-subtraction trick.
    """
    check_temperature(T)
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 0 or z.shape[axis] < 2:
        raise InvalidArgumentError("softmax needs at least two classes")
    if not np.isfinite(z).all():
        raise InvalidArgumentError("logits must be finite")
    z = z / T
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(values, axis: Optional[int] = None):
    """Overflow-safe ``log(sum(exp(values)))`` in float64.

    With ``axis=None`` the input must be a vector and a Python float is
    returned; otherwise the reduction runs along ``axis``.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgumentError("logsumexp of an empty input")
    if not np.isfinite(v).all():
        raise InvalidArgumentError("logsumexp input must be finite")
    if axis is None:
        v = v.reshape(-1)
        m = v.max()
        return float(m + np.log(np.exp(v - m).sum()))
    m = v.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(v - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)
