"""Seeded synthetic datasets for demos and end-to-end tests.

All randomness comes from the package's SplitMix64 streams, so the files
written are identical on every platform for a given seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .core import Rng, TaskType, derive_stream_seed
from .frtd import save_tensor


def _texture(rng: Rng, channels: int, size: int) -> np.ndarray:
    """Smooth stripes plus mild noise, kept inside [0.25, 0.9] (no zero pixels)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    fy, fx, phase = rng.uniform(1, 3), rng.uniform(1, 3), rng.uniform(0, 2 * np.pi)
    base = 0.5 + 0.2 * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    out = np.empty((channels, size, size))
    for c in range(channels):
        tint = rng.uniform(-0.08, 0.08)
        noise = (rng.f64_array(size * size).reshape(size, size) - 0.5) * 0.1
        out[c] = np.clip(base + tint + noise, 0.25, 0.9)
    return np.round(out * 255).astype(np.uint8)


def _blob_mask(rng: Rng, size: int, class_count: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=np.uint8)
    for k in range(1, class_count):
        cy, cx = rng.integer(0, size - 1), rng.integer(0, size - 1)
        r = rng.uniform(size / 6, size / 3)
        mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = k
    return mask


def _save_png(path: Path, pixels: np.ndarray) -> None:
    if pixels.ndim == 3 and pixels.shape[0] == 1:
        pixels = pixels[0]
    elif pixels.ndim == 3:
        pixels = pixels.transpose(1, 2, 0)
    Image.fromarray(pixels).save(path, format="PNG")


def make_image_dataset(
    out_dir,
    n: int = 16,
    seed: int = 0,
    size: int = 16,
    channels: int = 3,
    class_count: int = 3,
    task: "TaskType | str" = TaskType.SEGMENTATION,
    prefix: str = "img",
) -> Path:
    """Write ``n`` textured images (plus seg masks or labels) and a manifest.json."""
    task = TaskType.parse(task)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    if task is TaskType.SEGMENTATION:
        (out_dir / "masks").mkdir(exist_ok=True)
    entries = []
    for i in range(n):
        rng = Rng(derive_stream_seed(seed, "synthetic", i))
        sid = f"{prefix}{i:03d}"
        _save_png(out_dir / "images" / f"{sid}.png", _texture(rng, channels, size))
        entry = {"id": sid, "image": f"images/{sid}.png", "seg_mask": None, "label": None}
        if task is TaskType.SEGMENTATION:
            _save_png(out_dir / "masks" / f"{sid}.png", _blob_mask(rng, size, class_count))
            entry["seg_mask"] = f"masks/{sid}.png"
        else:
            entry["label"] = rng.integer(0, class_count - 1)
        entries.append(entry)
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"class_count": class_count, "entries": entries}, indent=2) + "\n")
    return manifest


def make_replay_dataset(out_dir, n_in: int = 8, n_ood: int = 8, seed: int = 0) -> dict[str, Path]:
    """Classification datasets with stored symmetric logits.

    ID samples get logits ``[a, a]`` with ``a`` in [2.5, 3.5], OoD samples
    ``[b, b]`` with ``b`` in [0.5, 1.5]: every max-softmax score is exactly
    0.5 while the energy confidences of the two groups do not overlap.
    """
    out_dir = Path(out_dir)
    in_manifest = make_image_dataset(out_dir / "id", n_in, seed, size=4, channels=1, class_count=2,
                                     task=TaskType.CLASSIFICATION, prefix="id")
    ood_manifest = make_image_dataset(out_dir / "ood", n_ood, seed + 1, size=4, channels=1, class_count=2,
                                      task=TaskType.CLASSIFICATION, prefix="ood")
    (out_dir / "logits").mkdir(parents=True, exist_ok=True)
    files = {}
    rng = Rng(derive_stream_seed(seed, "replay", 0))
    for prefix, count, (lo, hi) in (("id", n_in, (2.5, 3.5)), ("ood", n_ood, (0.5, 1.5))):
        for i in range(count):
            sid = f"{prefix}{i:03d}"
            a = np.float32(rng.uniform(lo, hi))
            save_tensor(out_dir / "logits" / f"{sid}.frtd", np.array([a, a], dtype=np.float32))
            files[sid] = f"logits/{sid}.frtd"
    replay = out_dir / "replay.json"
    replay.write_text(json.dumps({"task": "classification", "class_count": 2, "logits": files}, indent=2) + "\n")
    return {"id": in_manifest, "ood": ood_manifest, "replay": replay}
