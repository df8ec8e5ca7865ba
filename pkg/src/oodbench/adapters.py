"""Dataset adapters: turn an on-disk manifest into a stream of Samples.

Manifest JSON::

    {"class_count": K,
     "entries": [{"id": "...", "image": "rel/path.png",
                  "seg_mask": "rel/path.png" | null, "label": int | null}]}

Paths are relative to the manifest's directory. Seg masks are 8-bit gray
PNGs holding class indices.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import ConfigError, DataError, FormatError, Sample, TaskType
from .frtd import load_tensor, save_tensor

__all__ = [
    "ManifestEntry",
    "DatasetManifest",
    "DatasetAdapter",
    "adapt",
    "load_image",
    "load_index_mask",
    "load_tensor",
    "save_tensor",
]

_SUPPORTED_FORMATS = {"PNG", "PPM"}  # Pillow reports both P5 and P6 as "PPM"
_SUPPORTED_MODES = {"L": 1, "RGB": 3}


def _open_8bit(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except UnidentifiedImageError:
        raise FormatError(f"{path}: not a PNG/PPM/PGM image") from None
    if img.format not in _SUPPORTED_FORMATS:
        raise FormatError(f"{path}: unsupported image format {img.format}")
    if img.mode not in _SUPPORTED_MODES:
        raise FormatError(f"{path}: unsupported mode {img.mode!r} (need 8-bit gray or RGB)")
    return img


def load_image(path) -> np.ndarray:
    """Load an 8-bit gray/RGB PNG or PGM/PPM as a ``C x H x W`` float32 array in [0, 1]."""
    img = _open_8bit(path)
    raw = np.asarray(img, dtype=np.uint8)
    if raw.ndim == 2:
        raw = raw[None, :, :]
    else:
        raw = raw.transpose(2, 0, 1)
    return (raw.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def load_index_mask(path) -> np.ndarray:
    """Load an 8-bit gray image whose values are class indices."""
    img = _open_8bit(path)
    if img.mode != "L":
        raise FormatError(f"{path}: segmentation masks must be 8-bit grayscale")
    return np.asarray(img, dtype=np.uint8).astype(np.int64)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image: str
    seg_mask: Optional[str] = None
    label: Optional[int] = None


@dataclass(frozen=True)
class DatasetManifest:
    class_count: int
    entries: tuple[ManifestEntry, ...]
    root: Path = Path(".")
    name: str = "dataset"

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ConfigError(f"duplicate manifest ids: {dup}")

    @classmethod
    def from_dict(cls, data: Mapping, root=".", name: str = "dataset") -> "DatasetManifest":
        if not isinstance(data, Mapping):
            raise ConfigError("manifest must be a JSON object")
        unknown = set(data) - {"class_count", "entries"}
        if unknown:
            raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
        try:
            k = data["class_count"]
            raw_entries = data["entries"]
        except KeyError as exc:
            raise ConfigError(f"manifest missing key {exc.args[0]!r}") from None
        if not isinstance(k, int) or isinstance(k, bool):
            raise ConfigError("class_count must be an integer")
        entries = []
        for i, e in enumerate(raw_entries):
            if not isinstance(e, Mapping) or "id" not in e or "image" not in e:
                raise ConfigError(f"manifest entry {i} needs 'id' and 'image'")
            extra = set(e) - {"id", "image", "seg_mask", "label"}
            if extra:
                raise ConfigError(f"manifest entry {e['id']!r}: unknown keys {sorted(extra)}")
            label = e.get("label")
            if label is not None and (not isinstance(label, int) or isinstance(label, bool)):
                raise ConfigError(f"manifest entry {e['id']!r}: label must be an integer or null")
            entries.append(ManifestEntry(str(e["id"]), str(e["image"]), e.get("seg_mask"), label))
        return cls(k, tuple(entries), Path(root), name)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, root=path.parent, name=path.stem)

    def to_dict(self) -> dict:
        return {
            "class_count": self.class_count,
            "entries": [
                {"id": e.id, "image": e.image, "seg_mask": e.seg_mask, "label": e.label}
                for e in self.entries
            ],
        }

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class DatasetAdapter:
    """Re-iterable view of a manifest as Samples.

    Every iteration re-reads the files and yields identical Samples in
    manifest order. ``ood_mask`` starts as all zeros.
    """

    manifest: DatasetManifest
    task: TaskType
    remapping: Optional[Mapping[int, int]] = None
    name: str = field(default="")

    def __len__(self):
        return len(self.manifest)

    def _remap(self, entry_id: str, values: np.ndarray) -> np.ndarray:
        if self.remapping is None:
            return values
        present = np.unique(values)
        missing = [int(v) for v in present if int(v) not in self.remapping]
        if missing:
            raise DataError(f"entry {entry_id!r}: class indices {missing} not covered by remapping")
        table = np.zeros(int(present.max()) + 1, dtype=np.int64)
        for v in present:
            table[int(v)] = self.remapping[int(v)]
        return table[values]

    def load_sample(self, entry: ManifestEntry) -> Sample:
        root = self.manifest.root
        image = load_image(root / entry.image)
        seg = None
        if entry.seg_mask is not None:
            seg = self._remap(entry.id, load_index_mask(root / entry.seg_mask))
            if seg.shape != image.shape[1:]:
                raise DataError(f"entry {entry.id!r}: seg_mask shape {seg.shape} != image {image.shape[1:]}")
        label = entry.label
        if label is not None:
            label = int(self._remap(entry.id, np.array([label]))[0])
        meta = {
            "id": entry.id,
            "source": self.name or self.manifest.name,
            "layout": "CHW",
            "value_range": "[0,1]",
        }
        return Sample(image=image, seg_mask=seg, label=label, meta=meta)

    def __iter__(self) -> Iterator[Sample]:
        for entry in self.manifest.entries:
            yield self.load_sample(entry)


def adapt(
    manifest: "DatasetManifest | str | os.PathLike",
    remapping: Optional[Mapping] = None,
    task: "TaskType | str" = TaskType.SEGMENTATION,
    name: str = "",
) -> DatasetAdapter:
    """Wrap a manifest (object or path) as a DatasetAdapter.

    Raises ``FileNotFoundError`` naming the entry if any referenced file is
    missing.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    for entry in manifest.entries:
        for kind, rel in (("image", entry.image), ("seg_mask", entry.seg_mask)):
            if rel is not None and not (manifest.root / rel).is_file():
                raise FileNotFoundError(f"entry {entry.id!r}: {kind} file not found: {manifest.root / rel}")
    if remapping is not None:
        remapping = {int(k): int(v) for k, v in remapping.items()}
    return DatasetAdapter(manifest, TaskType.parse(task), remapping, name)
