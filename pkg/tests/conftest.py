import json
from pathlib import Path

import numpy as np
import pytest
from scipy.signal import correlate2d

from oodbench.core import Rng, Sample, TaskType, derive_stream_seed
from oodbench.synthetic import make_image_dataset, make_replay_dataset

REPO = Path(__file__).resolve().parent.parent


# ---------------------------------------------------------------------------
# Independent MicroNet reference (scipy correlate2d, explicit loops)
# ---------------------------------------------------------------------------


def reference_preactivation(net, x):
    x = np.asarray(x, dtype=np.float64)
    w1 = net.conv1_weight.astype(np.float64)
    b1 = net.conv1_bias.astype(np.float64)
    out = []
    for o in range(w1.shape[0]):
        acc = np.full(x.shape[1:], b1[o])
        for c in range(x.shape[0]):
            acc = acc + correlate2d(x[c], w1[o, c], mode="same", boundary="fill", fillvalue=0.0)
        out.append(acc)
    return np.stack(out)


def reference_logits(net, x):
    act = np.maximum(reference_preactivation(net, x), 0.0)
    w2 = net.head_weight.astype(np.float64)
    b2 = net.head_bias.astype(np.float64)
    if net.task is TaskType.SEGMENTATION:
        return np.tensordot(w2, act, axes=([1], [0])) + b2[:, None, None]
    return w2 @ act.mean(axis=(1, 2)) + b2


def reference_loss(net, x, labels, T):
    z = reference_logits(net, x) / T
    z = z - z.max(axis=0, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=0, keepdims=True))
    if net.task is TaskType.SEGMENTATION:
        picked = np.take_along_axis(logp, np.asarray(labels)[None], axis=0)[0]
        return float(-picked.mean())
    return float(-logp[int(labels)])


def finite_difference_check(net, x, labels, T, h=1e-3):
    """Central differences of the reference loss.

    Returns (fd_grad, crossed) where ``crossed`` marks components whose
    stencil ``x +- h e_i`` flips any ReLU, i.e. where the loss is not
    differentiable at the scale of ``h``.
    """
    x = np.asarray(x, dtype=np.float64)
    active = reference_preactivation(net, x) > 0
    fd = np.zeros_like(x)
    crossed = np.zeros(x.shape, dtype=bool)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        fd[idx] = (reference_loss(net, xp, labels, T) - reference_loss(net, xm, labels, T)) / (2 * h)
        crossed[idx] = ((reference_preactivation(net, xp) > 0) != active).any() or (
            (reference_preactivation(net, xm) > 0) != active
        ).any()
    return fd, crossed


def relative_error(a, b, floor=1e-4):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def seeded_image(seed, shape, tag="x"):
    n = int(np.prod(shape))
    return Rng(derive_stream_seed(seed, tag, 0)).f64_array(n).reshape(shape).astype(np.float32)


def sample_from(image, **kw):
    kw.setdefault("meta", {"id": "s"})
    return Sample(image=np.asarray(image, dtype=np.float32), **kw)


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


@pytest.fixture
def seg_dataset(tmp_path):
    return make_image_dataset(tmp_path / "seg", n=16, seed=11, size=16, channels=3, class_count=3)


@pytest.fixture
def replay_dataset(tmp_path):
    return make_replay_dataset(tmp_path / "replay", n_in=8, n_ood=8, seed=5)


def write_config(path, **cfg):
    path = Path(path)
    path.write_text(json.dumps(cfg, indent=2))
    return path


@pytest.fixture
def seg_config(tmp_path, seg_dataset):
    def make(_name="config.json", **overrides):
        cfg = {
            "seed": 4321,
            "task": "segmentation",
            "dataset": {"manifest": str(seg_dataset)},
            "strategy": {
                "augmentation": {"kind": "dark_spots", "p": 0.5, "n_spots": [1, 3], "radius": [2, 5], "darkness": [0.5, 1.0]}
            },
            "model": "init:7",
            "methods": [{"name": "max_softmax"}, {"name": "odin", "T": 1000, "epsilon": 0.01}, {"name": "energy"}],
            "metrics": ["auroc", {"name": "binned_auroc", "edges": [0.1, 0.2, 0.5, 1.0]}, "pixel_auroc", {"name": "histogram", "bins": 10}],
            "batch_size": 4,
        }
        cfg.update(overrides)
        return write_config(tmp_path / _name, **cfg)

    return make
