"""Vision and text encoders: determinism, grid shape, finiteness."""

import numpy as np
import pytest
from PIL import Image

from cir_adapter.encoders import GridPatchEncoder, HashedNgramTextEncoder, PATCH
from cir_adapter.errors import DecodeFailureError, EncoderFailureError

from conftest import paint


class TestGridPatchEncoder:
    def test_identical_image_identical_tensors(self, tmp_path):
        path = paint(tmp_path / "a.png")
        enc = GridPatchEncoder(dim=32)
        one = enc.encode(path)
        two = enc.encode(path)
        np.testing.assert_array_equal(one.patches, two.patches)
        np.testing.assert_array_equal(one.cls, two.cls)

    def test_token_count_matches_grid_for_resolution(self, tmp_path):
        enc = GridPatchEncoder(dim=16)
        for size, grid in (((64, 64), (4, 4)), ((48, 32), (2, 3)), ((50, 34), (3, 4))):
            path = paint(tmp_path / f"img{size[0]}x{size[1]}.png", size=size)
            out = enc.encode(path)
            assert out.grid == grid  # (rows, cols) incl. padding to PATCH multiples
            assert out.patches.shape == (grid[0] * grid[1], 16)

    def test_random_image_all_finite_unit_norm(self, tmp_path):
        rng = np.random.default_rng(0)
        noise = (rng.uniform(0, 255, size=(80, 48, 3))).astype(np.uint8)
        Image.fromarray(noise).save(tmp_path / "noise.png")
        out = GridPatchEncoder(dim=24).encode(tmp_path / "noise.png")
        assert np.all(np.isfinite(out.patches)) and np.all(np.isfinite(out.cls))
        np.testing.assert_allclose(np.linalg.norm(out.patches, axis=1), 1.0, atol=1e-12)

    def test_black_image_still_encodes(self, tmp_path):
        path = paint(tmp_path / "black.png", background=(0, 0, 0))
        out = GridPatchEncoder(dim=8).encode(path)
        assert np.linalg.norm(out.cls) > 0

    def test_decode_failure(self, tmp_path):
        bad = tmp_path / "not_an_image.png"
        bad.write_bytes(b"this is not a png")
        with pytest.raises(DecodeFailureError):
            GridPatchEncoder(dim=8).encode(bad)

    def test_different_images_differ(self, tmp_path):
        enc = GridPatchEncoder(dim=16)
        a = enc.encode(paint(tmp_path / "a.png"))
        b = enc.encode(paint(tmp_path / "b.png", boxes=[(0, 0, 32, 32, (200, 10, 10))]))
        assert not np.allclose(a.cls, b.cls)


class TestHashedNgramTextEncoder:
    def test_deterministic_across_instances(self):
        a = HashedNgramTextEncoder(dim=32).encode("a red square on  green grass")
        b = HashedNgramTextEncoder(dim=32).encode("a red square on  green grass")
        np.testing.assert_array_equal(a, b)

    def test_unit_norm_and_finite(self):
        vec = HashedNgramTextEncoder(dim=16).encode("replace the dog with a cat")
        assert np.isfinite(vec).all()
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-12)

    def test_different_texts_differ(self):
        enc = HashedNgramTextEncoder(dim=64)
        assert not np.allclose(enc.encode("red square"), enc.encode("blue circle"))

    def test_empty_text_rejected(self):
        with pytest.raises(EncoderFailureError):
            HashedNgramTextEncoder(dim=8).encode("   ")
