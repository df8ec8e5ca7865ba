"""Models: a tiny differentiable conv net and a logit-replay pseudo-model.

MicroNet architecture (weights float32, arithmetic float64)::

    conv3x3 C->8 (pad 1) + bias -> ReLU -> head

where the head is a 1x1 conv 8->K for segmentation, or global average
pooling followed by an affine 8->K for classification. Both heads share
the ``head.weight`` (K x 8) / ``head.bias`` (K) parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .core import (
    CapabilityError,
    ConfigError,
    DataError,
    FormatError,
    Rng,
    Sample,
    ShapeError,
    TaskType,
    derive_stream_seed,
    softmax,
)
from .frtd import load_tensor, save_tensor

HIDDEN = 8
LAYERS = ("conv1.weight", "conv1.bias", "head.weight", "head.bias")


class Model:
    """Network interface used by the OoD methods.

    ``logits_for`` is what methods call; the default forwards the sample's
    image. Models that cannot differentiate leave ``input_gradient``
    unimplemented and report ``supports_gradients = False``.
    """

    supports_gradients = False

    def forward(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def logits_for(self, sample: Sample) -> np.ndarray:
        return self.forward(sample.image)

    def input_gradient(self, image: np.ndarray, pseudo_labels, T: float) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} does not provide input gradients")


def _conv3x3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.empty((weight.shape[0], h, w), dtype=np.float64)
    out[...] = bias[:, None, None]
    for di in range(3):
        for dj in range(3):
            out += np.einsum("oc,chw->ohw", weight[:, :, di, dj], xp[:, di : di + h, dj : dj + w])
    return out


def _conv3x3_input_grad(grad_out: np.ndarray, weight: np.ndarray, c: int) -> np.ndarray:
    _, h, w = grad_out.shape
    gp = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            gp[:, di : di + h, dj : dj + w] += np.einsum("oc,ohw->chw", weight[:, :, di, dj], grad_out)
    return gp[:, 1:-1, 1:-1]


@dataclass(frozen=True, eq=False)
class MicroNet(Model):
    task: TaskType
    conv1_weight: np.ndarray  # 8 x C x 3 x 3
    conv1_bias: np.ndarray  # 8
    head_weight: np.ndarray  # K x 8
    head_bias: np.ndarray  # K

    supports_gradients = True

    def __post_init__(self):
        for name in ("conv1_weight", "conv1_bias", "head_weight", "head_bias"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        c = self.conv1_weight.shape[1] if self.conv1_weight.ndim == 4 else -1
        k = self.head_weight.shape[0] if self.head_weight.ndim == 2 else -1
        expected = {
            "conv1_weight": (HIDDEN, c, 3, 3),
            "conv1_bias": (HIDDEN,),
            "head_weight": (k, HIDDEN),
            "head_bias": (k,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape or c < 1 or k < 2:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def in_channels(self) -> int:
        return self.conv1_weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.head_weight.shape[0]

    def _check(self, image: np.ndarray) -> np.ndarray:
        x = np.asarray(image, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ShapeError(f"expected a {self.in_channels} x H x W image, got shape {x.shape}")
        return x

    def _trunk(self, x: np.ndarray) -> np.ndarray:
        return _conv3x3(x, self.conv1_weight.astype(np.float64), self.conv1_bias.astype(np.float64))

    def _head(self, act: np.ndarray) -> np.ndarray:
        w2 = self.head_weight.astype(np.float64)
        b2 = self.head_bias.astype(np.float64)
        if self.task is TaskType.SEGMENTATION:
            return np.einsum("kc,chw->khw", w2, act) + b2[:, None, None]
        return w2 @ act.mean(axis=(1, 2)) + b2

    def raw_forward(self, image: np.ndarray) -> np.ndarray:
        """Logits in float64 (``forward`` rounds these to float32)."""
        return self._head(np.maximum(self._trunk(self._check(image)), 0.0))

    def forward(self, image: np.ndarray) -> np.ndarray:
        return self.raw_forward(image).astype(np.float32)

    def loss(self, image: np.ndarray, pseudo_labels, T: float) -> float:
        """Mean over positions of ``-log softmax(logits / T)[label]``."""
        z = self.raw_forward(image)
        labels = np.asarray(pseudo_labels)
        p = softmax(z, T)
        if self.task is TaskType.SEGMENTATION:
            picked = np.take_along_axis(p, labels[None].astype(np.int64), axis=0)[0]
        else:
            picked = p[int(labels)]
        return float(-np.log(picked).mean())

    def input_gradient(self, image: np.ndarray, pseudo_labels, T: float) -> np.ndarray:
        """Gradient of ``loss`` with respect to the input image."""
        x = self._check(image)
        pre = self._trunk(x)
        act = np.maximum(pre, 0.0)
        z = self._head(act)
        p = softmax(z, T)
        labels = np.asarray(pseudo_labels, dtype=np.int64)
        w2 = self.head_weight.astype(np.float64)
        _, h, w = x.shape
        if self.task is TaskType.SEGMENTATION:
            if labels.shape != (h, w):
                raise ShapeError(f"pseudo_labels shape {labels.shape} does not match {h}x{w}")
            dz = p.copy()
            np.put_along_axis(dz, labels[None], np.take_along_axis(dz, labels[None], axis=0) - 1.0, axis=0)
            dz /= h * w * T
            dact = np.einsum("kc,khw->chw", w2, dz)
        else:
            dz = p.copy()
            dz[int(labels)] -= 1.0
            dz /= T
            dact = np.broadcast_to((w2.T @ dz)[:, None, None] / (h * w), act.shape)
        dpre = dact * (pre > 0)
        grad = _conv3x3_input_grad(dpre, self.conv1_weight.astype(np.float64), x.shape[0])
        return grad.astype(np.float32)

    # -- persistence -------------------------------------------------------

    def weights(self) -> dict[str, np.ndarray]:
        return dict(zip(LAYERS, (self.conv1_weight, self.conv1_bias, self.head_weight, self.head_bias)))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        layers = {}
        for name, arr in self.weights().items():
            fname = f"{name}.frtd"
            save_tensor(directory / fname, arr)
            layers[name] = {"file": fname, "dims": list(arr.shape)}
        manifest = {
            "task": self.task.value,
            "C": self.in_channels,
            "K": self.num_classes,
            "layers": layers,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "MicroNet":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text())
            task = TaskType.parse(manifest["task"])
            c, k = int(manifest["C"]), int(manifest["K"])
            layers = manifest["layers"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{directory}: malformed weight bundle manifest ({exc})") from None
        expected = {
            "conv1.weight": (HIDDEN, c, 3, 3),
            "conv1.bias": (HIDDEN,),
            "head.weight": (k, HIDDEN),
            "head.bias": (k,),
        }
        arrays = []
        for name in LAYERS:
            if name not in layers:
                raise FormatError(f"{directory}: weight bundle lacks layer {name!r}")
            arr = load_tensor(directory / layers[name]["file"])
            if arr.shape != expected[name] or tuple(layers[name].get("dims", arr.shape)) != arr.shape:
                raise FormatError(f"{directory}: layer {name!r} has shape {arr.shape}, expected {expected[name]}")
            arrays.append(arr)
        return cls(task, *arrays)


def micro_net_init(seed: int, C: int, K: int, task: "TaskType | str") -> MicroNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, one derived stream per layer."""
    if C < 1 or K < 2:
        raise ShapeError(f"need C >= 1 and K >= 2, got C={C}, K={K}")
    shapes = [(HIDDEN, C, 3, 3), (HIDDEN,), (K, HIDDEN), (K,)]
    fan_ins = [9 * C, 9 * C, HIDDEN, HIDDEN]
    arrays = []
    for index, (shape, fan_in) in enumerate(zip(shapes, fan_ins)):
        bound = 1.0 / math.sqrt(fan_in)
        rng = Rng(derive_stream_seed(seed, "w", index))
        u = rng.f64_array(int(np.prod(shape)))
        arrays.append(((2.0 * u - 1.0) * bound).astype(np.float32).reshape(shape))
    return MicroNet(TaskType.parse(task), *arrays)


class LogitReplayModel(Model):
    """Returns stored logits keyed by sample id.

    Manifest JSON: ``{"task": ..., "class_count": K, "logits": {id: "rel/path.frtd"}}``.
    """

    def __init__(self, task: "TaskType | str", class_count: int, logits: Mapping[str, np.ndarray]):
        self.task = TaskType.parse(task)
        self.class_count = int(class_count)
        self._logits = {}
        for sid, arr in logits.items():
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            expected_ndim = 1 if self.task is TaskType.CLASSIFICATION else 3
            if arr.ndim != expected_ndim or arr.shape[0] != self.class_count:
                raise ShapeError(f"logits for {sid!r} have shape {arr.shape}, expected K={self.class_count} on axis 0")
            arr.flags.writeable = False
            self._logits[sid] = arr

    @classmethod
    def load(cls, path) -> "LogitReplayModel":
        path = Path(path)
        try:
            manifest = json.loads(path.read_text())
            task, k, files = manifest["task"], manifest["class_count"], manifest["logits"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed logit-replay manifest ({exc})") from None
        return cls(task, k, {sid: load_tensor(path.parent / rel) for sid, rel in files.items()})

    def logits_for(self, sample: Sample) -> np.ndarray:
        sid = sample.id
        if sid not in self._logits:
            raise DataError(f"no stored logits for sample id {sid!r}")
        arr = self._logits[sid]
        if self.task is TaskType.SEGMENTATION and arr.shape[1:] != sample.hw:
            raise ShapeError(f"stored logits for {sid!r} are {arr.shape[1:]}, image is {sample.hw}")
        return arr

    def forward(self, image: np.ndarray) -> np.ndarray:
        raise CapabilityError("logit replay can only score known samples, not arbitrary images")


def logit_replay(manifest_path) -> LogitReplayModel:
    return LogitReplayModel.load(manifest_path)


def build_model(spec: str, base_dir: Optional[Path] = None, *, C: int = 0, K: int = 0, task=None) -> Model:
    """Resolve a model string: ``init:<seed>``, ``bundle:<dir>`` or ``replay:<manifest>``."""
    kind, _, arg = str(spec).partition(":")
    base = Path(base_dir or ".")
    if kind == "init":
        try:
            seed = int(arg, 0)
        except ValueError:
            raise ConfigError(f"bad init seed in model spec {spec!r}") from None
        return micro_net_init(seed, C, K, task)
    if kind == "bundle":
        return MicroNet.load(base / arg)
    if kind == "replay":
        return logit_replay(base / arg)
    raise ConfigError(f"model must be 'init:<seed>', 'bundle:<dir>' or 'replay:<manifest>', got {spec!r}")
