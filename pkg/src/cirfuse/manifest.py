"""Dataset manifests: line-oriented JSON plus a companion gallery file.

A dataset directory contains ``manifest.jsonl`` (one object per sample)
and ``gallery.jsonl`` (one object per candidate target).  Sample objects:

    {"id": ..., "split": "train"|"val"|"test", "patches": path, "cls": path,
     "instances": path or null, "text_mod": path, "text_retained": path,
     "text_deleted": path, "text_target": path, "target_id": ...}

Gallery objects: ``{"id": ..., "embedding": path}``.  Paths are relative
to the manifest's directory.  Loading validates everything eagerly and
errors name the offending line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .core import GalleryEntry, InstanceSet, PatchSet, QuerySample
from .errors import (
    DanglingPathError,
    DimMismatchError,
    DuplicateIdError,
    FormatError,
    UnresolvedTargetError,
)
from .tensorfile import read_tensor

MANIFEST_NAME = "manifest.jsonl"
GALLERY_NAME = "gallery.jsonl"
SPLITS = ("train", "val", "test")

_SAMPLE_KEYS = {
    "id",
    "split",
    "patches",
    "cls",
    "instances",
    "text_mod",
    "text_retained",
    "text_deleted",
    "text_target",
    "target_id",
}


@dataclass(frozen=True)
class DatasetBundle:
    """All loaded samples grouped by split, plus the gallery."""

    by_split: dict[str, tuple[QuerySample, ...]]
    gallery: tuple[GalleryEntry, ...]

    def split(self, name: str) -> tuple[QuerySample, ...]:
        return self.by_split.get(name, ())

    @property
    def gallery_map(self) -> dict[str, GalleryEntry]:
        return {entry.id: entry for entry in self.gallery}

    @property
    def dim(self) -> int:
        return self.gallery[0].dim


def _read_jsonl(path: Path) -> list[tuple[int, dict]]:
    if not path.is_file():
        raise DanglingPathError(f"missing file: {path}")
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise FormatError(f"{path}:{lineno}: expected a JSON object")
        records.append((lineno, obj))
    return records


def _load_tensor(root: Path, rel: str, where: str, rank: int):
    path = root / rel
    if not path.is_file():
        raise DanglingPathError(f"{where}: missing tensor file {path}")
    values, dims = read_tensor(path)
    if len(dims) != rank:
        raise DimMismatchError(f"{where}: {rel} has rank {len(dims)}, expected {rank}")
    return values


def load_manifest(data_dir) -> tuple[list[tuple[str, QuerySample]], list[GalleryEntry]]:
    """Load and fully validate a dataset directory.

    Returns ([(split, sample), ...] in manifest order, gallery).  Most
    callers want ``load_dataset`` which groups samples by split.
    """
    root = Path(data_dir)
    if root.is_file():
        root = root.parent
    manifest_path = root / MANIFEST_NAME
    gallery_path = root / GALLERY_NAME

    gallery: list[GalleryEntry] = []
    seen_gallery: set[str] = set()
    dim: int | None = None
    for lineno, obj in _read_jsonl(gallery_path):
        where = f"{gallery_path}:{lineno}"
        extra = set(obj) - {"id", "embedding"}
        if extra or set(obj) != {"id", "embedding"}:
            raise FormatError(f"{where}: gallery entries need exactly id and embedding")
        entry_id = obj["id"]
        if not isinstance(entry_id, str) or not entry_id:
            raise FormatError(f"{where}: id must be a nonempty string")
        if entry_id in seen_gallery:
            raise DuplicateIdError(f"{where}: duplicate gallery id {entry_id!r}")
        seen_gallery.add(entry_id)
        embedding = _load_tensor(root, obj["embedding"], where, rank=1)
        if dim is None:
            dim = embedding.shape[0]
        elif embedding.shape[0] != dim:
            raise DimMismatchError(
                f"{where}: embedding dimension {embedding.shape[0]} != {dim}"
            )
        gallery.append(GalleryEntry(id=entry_id, embedding=embedding))
    if not gallery:
        raise FormatError(f"{gallery_path}: gallery is empty")

    samples: list[tuple[str, QuerySample]] = []
    seen_per_split: dict[str, set[str]] = {s: set() for s in SPLITS}
    for lineno, obj in _read_jsonl(manifest_path):
        where = f"{manifest_path}:{lineno}"
        missing = _SAMPLE_KEYS - set(obj)
        extra = set(obj) - _SAMPLE_KEYS
        if missing:
            raise FormatError(f"{where}: missing keys: {', '.join(sorted(missing))}")
        if extra:
            raise FormatError(f"{where}: unknown keys: {', '.join(sorted(extra))}")
        split = obj["split"]
        if split not in SPLITS:
            raise FormatError(f"{where}: split must be one of {SPLITS}, got {split!r}")
        sample_id = obj["id"]
        if not isinstance(sample_id, str) or not sample_id:
            raise FormatError(f"{where}: id must be a nonempty string")
        if sample_id in seen_per_split[split]:
            raise DuplicateIdError(f"{where}: duplicate id {sample_id!r} in split {split!r}")
        seen_per_split[split].add(sample_id)
        if obj["target_id"] not in seen_gallery:
            raise UnresolvedTargetError(
                f"{where}: target_id {obj['target_id']!r} not found in the gallery"
            )

        patches = _load_tensor(root, obj["patches"], where, rank=2)
        cls = _load_tensor(root, obj["cls"], where, rank=1)
        if obj["instances"] is None:
            instances = InstanceSet.empty(cls.shape[0])
        else:
            instances = InstanceSet(_load_tensor(root, obj["instances"], where, rank=2))
        texts = {
            key: _load_tensor(root, obj[key], where, rank=1)
            for key in ("text_mod", "text_retained", "text_deleted", "text_target")
        }
        try:
            sample = QuerySample(
                id=sample_id,
                patch_set=PatchSet(cls=cls, patches=patches),
                instance_set=instances,
                s_mt=texts["text_mod"],
                r_rt=texts["text_retained"],
                r_dt=texts["text_deleted"],
                r_tt=texts["text_target"],
                target_id=obj["target_id"],
            )
        except DimMismatchError as exc:
            raise DimMismatchError(f"{where}: {exc}") from exc
        if sample.dim != dim:
            raise DimMismatchError(
                f"{where}: sample dimension {sample.dim} != gallery dimension {dim}"
            )
        samples.append((split, sample))

    return samples, gallery


def load_dataset(data_dir) -> DatasetBundle:
    """Load a dataset directory and group samples by split."""
    samples, gallery = load_manifest(data_dir)
    by_split: dict[str, list[QuerySample]] = {s: [] for s in SPLITS}
    for split, sample in samples:
        by_split[split].append(sample)
    return DatasetBundle(
        by_split={s: tuple(v) for s, v in by_split.items() if v},
        gallery=tuple(gallery),
    )
