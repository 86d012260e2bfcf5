"""Planted dataset generator: determinism, validity, and plant structure."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from cirfuse.errors import ConfigError
from cirfuse.manifest import load_dataset
from cirfuse.selection import ivrs_select, pvrs_select
from cirfuse.synth import PLANT_WEIGHTS, synth_dataset


def tree_digest(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def small(out, seed=124, plant="equal", **overrides):
    kwargs = dict(
        seed=seed, dim=16, n_train=6, n_eval=3, gallery_extra=4,
        n_patches=4, n_instances=2, noise_sigma=0.05, plant=plant, out_dir=out,
    )
    kwargs.update(overrides)
    return synth_dataset(**kwargs)


class TestSynth:
    def test_same_seed_byte_identical_trees(self, tmp_path):
        small(tmp_path / "a")
        small(tmp_path / "b")
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        small(tmp_path / "a", seed=124)
        small(tmp_path / "b", seed=125)
        assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "b")

    def test_generated_manifest_loads_cleanly(self, tmp_path):
        small(tmp_path / "d")
        bundle = load_dataset(tmp_path / "d")
        assert len(bundle.split("train")) == 6
        assert len(bundle.split("val")) == 3
        assert len(bundle.gallery) == 6 + 3 + 4
        assert bundle.dim == 16

    def test_zero_instances_gives_null_entries(self, tmp_path):
        small(tmp_path / "d", n_instances=0)
        bundle = load_dataset(tmp_path / "d")
        assert all(s.instance_set.is_empty for s in bundle.split("train"))

    def test_plant_structure_holds_on_stored_values(self, tmp_path):
        # Re-derive the planted blend from the files themselves: the stored
        # target must match the weighted fused streams up to the noise term.
        small(tmp_path / "d", noise_sigma=0.0)
        bundle = load_dataset(tmp_path / "d")
        w_p, w_i, w_m, w_t = PLANT_WEIGHTS["equal"]
        for sample in bundle.split("train"):
            v_p = pvrs_select(sample.patch_set, sample.r_rt, sample.r_dt)
            v_i = ivrs_select(sample.instance_set, sample.r_rt, sample.r_dt)
            blend = w_p * v_p + w_i * v_i + w_m * sample.s_mt + w_t * sample.r_tt
            blend = blend / np.linalg.norm(blend)
            target = bundle.gallery_map[sample.target_id].embedding
            np.testing.assert_allclose(target, blend, atol=1e-6)

    def test_retain_text_correlates_with_a_patch(self, tmp_path):
        small(tmp_path / "d")
        bundle = load_dataset(tmp_path / "d")
        for sample in bundle.split("train"):
            sims = sample.patch_set.patches @ sample.r_rt / (
                np.linalg.norm(sample.patch_set.patches, axis=1) * np.linalg.norm(sample.r_rt)
            )
            assert sims.max() > 0.5

    def test_invalid_args_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            small(tmp_path / "d", plant="bogus")
        with pytest.raises(ConfigError):
            small(tmp_path / "d", dim=1)
        with pytest.raises(ConfigError):
            small(tmp_path / "d", n_patches=1)
