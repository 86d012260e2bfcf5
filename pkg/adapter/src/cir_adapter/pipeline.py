"""Build fusion-engine manifests from images and modification texts.

Per sample: encode the reference image (patch tokens + summary token),
segment and pool instance features, run the chain-of-thought decomposition,
embed the four texts, and write everything in the engine's tensor format.
Target images are encoded once each (their summary token is the gallery
embedding).  Sample tensor directories are written atomically
(temp-then-rename), reasoning results are cached by content hash, and the
manifest is assembled single-threaded at the end, so re-runs over unchanged
inputs are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import AdapterConfig, check_endpoint
from .cot import CotClient, CotResult, load_template
from .encoders import text_encoder, vision_encoder
from .errors import AdapterError, ConfigError, DecodeFailureError
from .formats import gallery_line, manifest_line, write_tensor
from .segmenter import segment_and_pool


@dataclass(frozen=True)
class QueryTriple:
    """One input row: reference image, modification text, target image."""

    reference: Path
    text: str
    target: Path


def read_triples(path, images_root=None) -> list[QueryTriple]:
    """Load (reference, text, target) rows from a JSONL or CSV file."""
    path = Path(path)
    root = Path(images_root) if images_root else path.parent
    rows: list[dict] = []
    if path.suffix.lower() == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    else:
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    triples = []
    for i, row in enumerate(rows):
        missing = {"reference", "text", "target"} - set(row)
        if missing:
            raise ConfigError(f"{path} row {i}: missing fields {sorted(missing)}")
        triples.append(
            QueryTriple(
                reference=root / row["reference"],
                text=str(row["text"]),
                target=root / row["target"],
            )
        )
    if not triples:
        raise ConfigError(f"{path}: no input rows")
    return triples


class _CotCache:
    """Content-addressed cache of reasoning results (with transcripts)."""

    def __init__(self, cache_dir: Path, config: AdapterConfig):
        self.dir = cache_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self._salt = hashlib.sha256(
            "\x1f".join(
                [config.mllm_model, config.mllm_endpoint, load_template(config)]
            ).encode("utf-8")
        ).hexdigest()

    def key(self, image_bytes: bytes, text: str) -> str:
        digest = hashlib.sha256()
        digest.update(self._salt.encode())
        digest.update(image_bytes)
        digest.update(b"\x1f")
        digest.update(text.encode("utf-8"))
        return digest.hexdigest()

    def get(self, key: str) -> CotResult | None:
        path = self.dir / f"{key}.json"
        if not path.is_file():
            return None
        return CotResult.from_json_dict(json.loads(path.read_text(encoding="utf-8")))

    def put(self, key: str, result: CotResult) -> None:
        path = self.dir / f"{key}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(result.to_json_dict()), encoding="utf-8")
        os.replace(tmp, path)


def _atomic_tensor_dir(final_dir: Path):
    tmp_dir = final_dir.parent / f".tmp-{final_dir.name}"
    if tmp_dir.exists():
        shutil.rmtree(tmp_dir)
    tmp_dir.mkdir(parents=True)
    return tmp_dir


def build_manifest(
    triples: list[QueryTriple],
    out_dir,
    config: AdapterConfig,
    split: str = "val",
    cot_client: CotClient | None = None,
    skip_endpoint_check: bool = False,
) -> Path:
    """Produce a dataset directory the fusion engine can load; returns its path."""
    if split not in ("train", "val", "test"):
        raise ConfigError(f"split must be train/val/test, got {split!r}")
    if not skip_endpoint_check:
        check_endpoint(config)
    client = cot_client if cot_client is not None else CotClient(config)

    out = Path(out_dir)
    tensors = out / "tensors"
    transcripts = out / "transcripts"
    tensors.mkdir(parents=True, exist_ok=True)
    transcripts.mkdir(parents=True, exist_ok=True)
    cache = _CotCache(
        Path(config.cache_dir) if config.cache_dir else out / ".cot-cache", config
    )

    vision = vision_encoder(config.vision_encoder, config.dim)
    text = text_encoder(config.text_encoder, config.dim)

    target_ids: dict[Path, str] = {}
    gallery_lines: list[str] = []
    manifest_lines: list[str] = []

    for i, triple in enumerate(triples):
        sample_id = f"q{i:04d}"
        if not triple.reference.is_file():
            raise DecodeFailureError(f"missing reference image {triple.reference}")
        if not triple.target.is_file():
            raise DecodeFailureError(f"missing target image {triple.target}")

        encoded = vision.encode(triple.reference)
        instances = segment_and_pool(triple.reference, encoded, config.box_threshold)

        image_bytes = triple.reference.read_bytes()
        key = cache.key(image_bytes, triple.text)
        cot = cache.get(key)
        if cot is None:
            cot = client.reason(image_bytes, triple.text)
            cache.put(key, cot)

        texts = {
            "text_mod": text.encode(triple.text),
            "text_retained": text.encode(cot.retained),
            "text_deleted": text.encode(cot.deleted),
            "text_target": text.encode(cot.target),
        }

        target = triple.target.resolve()
        if target not in target_ids:
            target_id = f"t{len(target_ids):04d}"
            target_ids[target] = target_id
            target_dir = tensors / "gallery"
            target_dir.mkdir(exist_ok=True)
            tmp = target_dir / f".tmp-{target_id}.mvst"
            write_tensor(tmp, vision.encode(triple.target).cls)
            os.replace(tmp, target_dir / f"{target_id}.mvst")
            gallery_lines.append(
                gallery_line(target_id, f"tensors/gallery/{target_id}.mvst")
            )
        target_id = target_ids[target]

        final_dir = tensors / sample_id
        tmp_dir = _atomic_tensor_dir(final_dir)
        write_tensor(tmp_dir / "patches.mvst", encoded.patches)
        write_tensor(tmp_dir / "cls.mvst", encoded.cls)
        has_instances = instances.shape[0] > 0
        if has_instances:
            write_tensor(tmp_dir / "instances.mvst", instances)
        for name, vec in texts.items():
            write_tensor(tmp_dir / f"{name}.mvst", vec)
        if final_dir.exists():
            shutil.rmtree(final_dir)
        os.replace(tmp_dir, final_dir)

        (transcripts / f"{sample_id}.json").write_text(
            json.dumps(cot.to_json_dict(), indent=2), encoding="utf-8"
        )

        base = f"tensors/{sample_id}"
        manifest_lines.append(
            manifest_line(
                sample_id,
                split,
                {
                    "patches": f"{base}/patches.mvst",
                    "cls": f"{base}/cls.mvst",
                    "instances": f"{base}/instances.mvst" if has_instances else None,
                    "text_mod": f"{base}/text_mod.mvst",
                    "text_retained": f"{base}/text_retained.mvst",
                    "text_deleted": f"{base}/text_deleted.mvst",
                    "text_target": f"{base}/text_target.mvst",
                },
                target_id,
            )
        )

    (out / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    (out / "gallery.jsonl").write_text("\n".join(gallery_lines) + "\n", encoding="utf-8")
    return out
