"""Deterministic feature extraction for images and texts.

The default backends are self-contained stand-ins for pretrained encoders:
real functions of their input (no network, no weights to download) that are
bit-stable across runs and processes.

* ``grid16``: splits the image into 16x16 pixel patches and projects each
  flattened patch (plus a constant bias channel, so even black frames map to
  nonzero features) through a fixed seeded random matrix, then L2-normalizes.
  The summary token is the normalized mean of the projected patches.  The
  token count is the patch grid implied by the input resolution.
* ``hashed-ngram``: signed hashing of word unigrams and bigrams into the
  target dimension, L2-normalized.  Uses sha256, so values do not depend on
  interpreter hash randomization.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DecodeFailureError, EncoderFailureError

PATCH = 16


@dataclass(frozen=True)
class EncodedImage:
    """Patch-token features plus the summary token, with the grid shape."""

    cls: np.ndarray  # (D,)
    patches: np.ndarray  # (N, D), N = grid_h * grid_w
    grid: tuple[int, int]

    @property
    def feature_grid(self) -> np.ndarray:
        gh, gw = self.grid
        return self.patches.reshape(gh, gw, -1)


def _stable_seed(*parts: str) -> int:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def load_image(source) -> np.ndarray:
    """Decode to an RGB float array in [0, 1]."""
    try:
        if isinstance(source, Image.Image):
            img = source
        else:
            img = Image.open(source)
        rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DecodeFailureError(f"cannot decode image {source}: {exc}") from exc
    if rgb.size == 0:
        raise DecodeFailureError(f"image {source} is empty")
    return rgb


class GridPatchEncoder:
    """Fixed random projection of raw pixel patches; dimension ``dim``."""

    name = "grid16"

    def __init__(self, dim: int):
        self.dim = dim
        rng = np.random.default_rng(_stable_seed("vision", self.name, str(dim)))
        # +1 input for the constant bias channel.
        self._projection = rng.standard_normal((PATCH * PATCH * 3 + 1, dim)) / np.sqrt(dim)

    def encode(self, source) -> EncodedImage:
        rgb = load_image(source)
        h, w, _ = rgb.shape
        pad_h = (-h) % PATCH
        pad_w = (-w) % PATCH
        if pad_h or pad_w:
            rgb = np.pad(rgb, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
        gh, gw = rgb.shape[0] // PATCH, rgb.shape[1] // PATCH
        blocks = rgb.reshape(gh, PATCH, gw, PATCH, 3).transpose(0, 2, 1, 3, 4)
        flat = blocks.reshape(gh * gw, PATCH * PATCH * 3)
        flat = np.concatenate([flat, np.ones((flat.shape[0], 1))], axis=1)
        raw = flat @ self._projection
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if not np.all(norms > 0) or not np.all(np.isfinite(raw)):
            raise EncoderFailureError("patch features degenerate or non-finite")
        patches = raw / norms
        cls = patches.mean(axis=0)
        cls_norm = np.linalg.norm(cls)
        if cls_norm == 0:
            raise EncoderFailureError("summary token collapsed to zero")
        return EncodedImage(cls=cls / cls_norm, patches=patches, grid=(gh, gw))


class HashedNgramTextEncoder:
    """Signed n-gram hashing into ``dim`` coordinates."""

    name = "hashed-ngram"

    def __init__(self, dim: int):
        self.dim = dim

    def _grams(self, text: str):
        words = text.lower().split()
        yield from words
        yield from (f"{a} {b}" for a, b in zip(words, words[1:]))

    def encode(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EncoderFailureError("cannot encode empty text")
        vec = np.zeros(self.dim)
        for gram in self._grams(text):
            digest = hashlib.sha256(gram.encode("utf-8")).digest()
            index = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[index] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # Pathological cancellation: pin a deterministic slot instead.
            vec[_stable_seed("text-fallback", text) % self.dim] = 1.0
            norm = 1.0
        return vec / norm


_VISION = {"grid16": GridPatchEncoder}
_TEXT = {"hashed-ngram": HashedNgramTextEncoder}


def vision_encoder(name: str, dim: int):
    try:
        return _VISION[name](dim)
    except KeyError:
        raise ConfigError(f"unknown vision encoder {name!r}; known: {sorted(_VISION)}") from None


def text_encoder(name: str, dim: int):
    try:
        return _TEXT[name](dim)
    except KeyError:
        raise ConfigError(f"unknown text encoder {name!r}; known: {sorted(_TEXT)}") from None
