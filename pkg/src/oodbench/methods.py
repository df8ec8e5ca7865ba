"""Post-hoc OoD scoring methods.

All scores are confidences: higher means more in-distribution. Logits
carry the class axis first (``K`` or ``K x H x W``); a classification
score is a Python float, a segmentation score an ``H x W`` float64 map.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import ClassVar, Sequence, Union

import numpy as np

from .core import ConfigError, InvalidArgumentError, Sample, check_temperature, logsumexp, softmax
from .model import Model

OodScore = Union[float, np.ndarray]


def _as_score(values: np.ndarray) -> OodScore:
    return float(values) if values.ndim == 0 else values


def _check_logits(logits) -> np.ndarray:
    z = np.asarray(logits)
    if z.ndim not in (1, 3):
        raise InvalidArgumentError(f"logits must be K or K x H x W, got shape {z.shape}")
    if z.shape[0] < 2:
        raise InvalidArgumentError("need at least two classes")
    return z


def msp_score(logits, T: float = 1.0) -> OodScore:
    """Maximum temperature-scaled softmax probability per position."""
    return _as_score(softmax(_check_logits(logits), T).max(axis=0))


def energy_score(logits, T: float = 1.0) -> OodScore:
    """Negative free energy, ``T * logsumexp(logits / T)``."""
    z = _check_logits(logits)
    check_temperature(T)
    return _as_score(T * logsumexp(np.asarray(z, dtype=np.float64) / T, axis=0))


def argmax_label(logits):
    """Index of the largest logit per position; ties go to the lowest index."""
    z = np.asarray(logits)
    labels = np.argmax(z, axis=0)
    return int(labels) if labels.ndim == 0 else labels


def odin_perturb(image: np.ndarray, model: Model, T: float, epsilon: float) -> np.ndarray:
    """Step the input against the gradient of the pseudo-label NLL.

    ``x - eps * sign(grad NLL)`` raises the softmax score of the predicted
    class to first order; the result is clamped to [0, 1].
    """
    if epsilon < 0:
        raise InvalidArgumentError(f"epsilon must be >= 0, got {epsilon}")
    pseudo = argmax_label(model.forward(image))
    grad = model.input_gradient(image, pseudo, T)
    step = np.float32(epsilon) * np.sign(grad).astype(np.float32)
    return np.clip(image - step, 0.0, 1.0).astype(np.float32)


def odin_score(sample: Sample, model: Model, T: float = 1000.0, epsilon: float = 0.01) -> OodScore:
    check_temperature(T)
    perturbed = odin_perturb(sample.image, model, T, epsilon)
    return msp_score(model.forward(perturbed), T)


# ---------------------------------------------------------------------------
# Extension contract and registry
# ---------------------------------------------------------------------------


class OODMethod(ABC):
    """Base class for OoD methods.

    Subclasses implement ``calculate_ood_score`` returning one score per
    sample of the batch, in order.
    """

    name: ClassVar[str]
    hyperparameters: ClassVar[tuple[str, ...]] = ()

    @abstractmethod
    def calculate_ood_score(self, batch: Sequence[Sample], model: Model) -> list[OodScore]: ...

    def config(self) -> dict:
        return {"name": self.name, **{k: getattr(self, k) for k in self.hyperparameters}}

    def __repr__(self):
        args = ", ".join(f"{k}={getattr(self, k)!r}" for k in self.hyperparameters)
        return f"{type(self).__name__}({args})"


class MaxClassBaseline(OODMethod):
    name = "max_softmax"
    hyperparameters = ("T",)

    def __init__(self, T: float = 1.0):
        check_temperature(T)
        self.T = float(T)

    def calculate_ood_score(self, batch, model):
        return [msp_score(model.logits_for(s), self.T) for s in batch]


class EnergyBased(OODMethod):
    name = "energy"
    hyperparameters = ("T",)

    def __init__(self, T: float = 1.0):
        check_temperature(T)
        self.T = float(T)

    def calculate_ood_score(self, batch, model):
        return [energy_score(model.logits_for(s), self.T) for s in batch]


class ODIN(OODMethod):
    name = "odin"
    hyperparameters = ("T", "epsilon")

    def __init__(self, T: float = 1000.0, epsilon: float = 0.01):
        check_temperature(T)
        self.T = float(T)
        if epsilon < 0:
            raise InvalidArgumentError(f"epsilon must be >= 0, got {epsilon}")
        self.epsilon = float(epsilon)

    def calculate_ood_score(self, batch, model):
        return [odin_score(s, model, self.T, self.epsilon) for s in batch]


METHODS: dict[str, type[OODMethod]] = {}


def register_method(cls: type[OODMethod]) -> type[OODMethod]:
    METHODS[cls.name] = cls
    return cls


for _cls in (MaxClassBaseline, EnergyBased, ODIN):
    register_method(_cls)


def method_from_config(cfg) -> OODMethod:
    if isinstance(cfg, str):
        cfg = {"name": cfg}
    cfg = dict(cfg)
    name = cfg.pop("name", None)
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; known: {sorted(METHODS)}")
    cls = METHODS[name]
    unknown = set(cfg) - set(cls.hyperparameters)
    if unknown:
        raise ConfigError(f"method {name!r}: unknown keys {sorted(unknown)}")
    try:
        return cls(**cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"method {name!r}: {exc}") from None
