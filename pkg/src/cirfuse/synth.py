"""Synthetic planted-retrieval datasets.

Every sample's features are unit vectors from a seeded spherical Gaussian.
The retain/delete texts are noisy copies of two distinct patch tokens, so
selection weights carry signal, and the target embedding is a normalized
weighted blend of the four fused streams plus Gaussian noise.  The blend
weights are equal for the "equal" plant and deliberately lopsided for the
"skewed" plant, which makes equal-weight summation provably suboptimal and
gives the trainable fusion something to learn.

Tensors are rounded to 32 bits before any dependent quantity is computed,
so the planted relationship holds exactly on the values the engine later
reads back.  Identical seeds produce byte-identical directory trees.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import InstanceSet, PatchSet
from .errors import ConfigError, IoFailureError
from .selection import ivrs_select, pvrs_select
from .tensorfile import write_tensor

PLANT_WEIGHTS = {
    "equal": (0.25, 0.25, 0.25, 0.25),
    "skewed": (0.7, 0.1, 0.1, 0.1),
}


def _round32(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


def _unit(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 1:
        return arr / np.linalg.norm(arr)
    return arr / np.linalg.norm(arr, axis=1, keepdims=True)


def synth_dataset(
    seed: int,
    dim: int,
    n_train: int,
    n_eval: int,
    gallery_extra: int,
    n_patches: int,
    n_instances: int,
    noise_sigma: float,
    plant: str,
    out_dir,
) -> Path:
    """Generate a planted dataset directory; returns its path."""
    if dim < 2:
        raise ConfigError("dim must be at least 2")
    if n_train < 1 or n_eval < 1:
        raise ConfigError("train and eval counts must be at least 1")
    if n_patches < 2:
        raise ConfigError("need at least 2 patches to plant distinct retain/delete cues")
    if n_instances < 0 or gallery_extra < 0:
        raise ConfigError("instance and distractor counts must be nonnegative")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be nonnegative")
    if plant not in PLANT_WEIGHTS:
        raise ConfigError(f"plant must be one of {sorted(PLANT_WEIGHTS)}, got {plant!r}")

    w_p, w_i, w_m, w_t = PLANT_WEIGHTS[plant]
    rng = np.random.default_rng(seed)
    root = Path(out_dir)
    tensors = root / "tensors"
    try:
        tensors.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailureError(f"cannot create {tensors}: {exc}") from exc

    manifest_lines: list[str] = []
    gallery_lines: list[str] = []

    def emit(rel: str, values: np.ndarray) -> str:
        path = root / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            write_tensor(path, values)
        except OSError as exc:
            raise IoFailureError(f"cannot write {path}: {exc}") from exc
        return rel

    total = n_train + n_eval
    for i in range(total):
        sample_id = f"q{i:04d}"
        target_id = f"t{i:04d}"
        split = "train" if i < n_train else "val"

        patches = _round32(_unit(rng.standard_normal((n_patches, dim))))
        cls = _round32(_unit(rng.standard_normal(dim)))
        instances = _round32(_unit(rng.standard_normal((n_instances, dim)))) if n_instances else None
        s_mt = _round32(_unit(rng.standard_normal(dim)))
        r_tt = _round32(_unit(rng.standard_normal(dim)))
        j1, j2 = rng.choice(n_patches, size=2, replace=False)
        r_rt = _round32(_unit(patches[j1] + 0.1 * rng.standard_normal(dim)))
        r_dt = _round32(_unit(patches[j2] + 0.1 * rng.standard_normal(dim)))

        v_p = pvrs_select(PatchSet(cls=cls, patches=patches), r_rt, r_dt)
        inst_set = InstanceSet(instances) if instances is not None else InstanceSet.empty(dim)
        v_i = ivrs_select(inst_set, r_rt, r_dt)
        blend = w_p * v_p + w_i * v_i + w_m * s_mt + w_t * r_tt
        target = _round32(_unit(blend + noise_sigma * rng.standard_normal(dim)))

        base = f"tensors/{sample_id}"
        record = {
            "id": sample_id,
            "split": split,
            "patches": emit(f"{base}/patches.mvst", patches),
            "cls": emit(f"{base}/cls.mvst", cls),
            "instances": emit(f"{base}/instances.mvst", instances) if instances is not None else None,
            "text_mod": emit(f"{base}/text_mod.mvst", s_mt),
            "text_retained": emit(f"{base}/text_retained.mvst", r_rt),
            "text_deleted": emit(f"{base}/text_deleted.mvst", r_dt),
            "text_target": emit(f"{base}/text_target.mvst", r_tt),
            "target_id": target_id,
        }
        manifest_lines.append(json.dumps(record))
        gallery_lines.append(
            json.dumps(
                {"id": target_id, "embedding": emit(f"tensors/gallery/{target_id}.mvst", target)}
            )
        )

    for i in range(gallery_extra):
        distractor_id = f"d{i:04d}"
        vec = _round32(_unit(rng.standard_normal(dim)))
        gallery_lines.append(
            json.dumps(
                {
                    "id": distractor_id,
                    "embedding": emit(f"tensors/gallery/{distractor_id}.mvst", vec),
                }
            )
        )

    try:
        (root / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
        (root / "gallery.jsonl").write_text("\n".join(gallery_lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailureError(f"cannot write manifest files: {exc}") from exc
    return root
