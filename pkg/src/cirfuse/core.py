"""Core record types and the numeric kernels shared by every other module.

All arithmetic is 64-bit; on-disk tensors are 32-bit and promoted on read.
Feature vectors are plain 1-D float64 numpy arrays.  The record types below
copy their inputs and freeze them, so instances are immutable and safe to
share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatchError,
    EmptyInputError,
    NonFiniteValueError,
    ZeroVectorError,
)

# Threshold below which a min-max range counts as degenerate.
DEFAULT_EPS = 1e-12


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Validate and return ``values`` as a 1-D float64 array.

    Raises ``EmptyInputError`` on zero length and ``ZeroVectorError`` is left
    to the operations that actually need a direction.  Non-finite entries are
    rejected here because no downstream kernel can give them meaning.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size < 1:
        raise EmptyInputError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError(f"{name} contains non-finite entries")
    return arr


def _frozen_copy(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


def _check_same_dim(dim: int, arr: np.ndarray, name: str) -> None:
    if arr.shape[-1] != dim:
        raise DimMismatchError(
            f"{name} has dimension {arr.shape[-1]}, expected {dim}"
        )


@dataclass(frozen=True)
class PatchSet:
    """A global summary token plus N patch tokens, all of one dimension."""

    cls: np.ndarray
    patches: np.ndarray  # shape (N, D)

    def __post_init__(self):
        cls = as_vector(self.cls, "cls")
        patches = np.asarray(self.patches, dtype=np.float64)
        if patches.ndim != 2 or patches.shape[0] < 1:
            raise EmptyInputError("patches must be a nonempty (N, D) array")
        if not np.all(np.isfinite(patches)):
            raise NonFiniteValueError("patches contain non-finite entries")
        _check_same_dim(cls.shape[0], patches, "patches")
        object.__setattr__(self, "cls", _frozen_copy(cls))
        object.__setattr__(self, "patches", _frozen_copy(patches))

    @property
    def n(self) -> int:
        return self.patches.shape[0]

    @property
    def dim(self) -> int:
        return self.cls.shape[0]


@dataclass(frozen=True)
class InstanceSet:
    """M segmented-object features; M = 0 is legal and means nothing survived."""

    instances: np.ndarray  # shape (M, D); M may be 0

    def __post_init__(self):
        inst = np.asarray(self.instances, dtype=np.float64)
        if inst.ndim != 2 or inst.shape[1] < 1:
            raise DimMismatchError(
                f"instances must be an (M, D) array with D >= 1, got shape {inst.shape}"
            )
        if not np.all(np.isfinite(inst)):
            raise NonFiniteValueError("instances contain non-finite entries")
        object.__setattr__(self, "instances", _frozen_copy(inst))

    @classmethod
    def empty(cls, dim: int) -> "InstanceSet":
        return cls(np.zeros((0, dim)))

    @property
    def m(self) -> int:
        return self.instances.shape[0]

    @property
    def dim(self) -> int:
        return self.instances.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.m == 0


@dataclass(frozen=True)
class QuerySample:
    """One composed query: visual feature sets, four text embeddings, target id."""

    id: str
    patch_set: PatchSet
    instance_set: InstanceSet
    s_mt: np.ndarray  # modification text
    r_rt: np.ndarray  # retained-content text
    r_dt: np.ndarray  # deleted-content text
    r_tt: np.ndarray  # imagined target text
    target_id: str

    def __post_init__(self):
        if not self.id:
            raise EmptyInputError("sample id must be nonempty")
        if not self.target_id:
            raise EmptyInputError(f"sample {self.id!r}: target_id must be nonempty")
        dim = self.patch_set.dim
        for name in ("s_mt", "r_rt", "r_dt", "r_tt"):
            vec = as_vector(getattr(self, name), name)
            _check_same_dim(dim, vec, f"sample {self.id!r} {name}")
            object.__setattr__(self, name, _frozen_copy(vec))
        _check_same_dim(dim, self.instance_set.instances, f"sample {self.id!r} instances")

    @property
    def dim(self) -> int:
        return self.patch_set.dim


@dataclass(frozen=True)
class GalleryEntry:
    """A candidate target image: id plus its embedding."""

    id: str
    embedding: np.ndarray

    def __post_init__(self):
        if not self.id:
            raise EmptyInputError("gallery id must be nonempty")
        vec = as_vector(self.embedding, f"gallery {self.id!r} embedding")
        object.__setattr__(self, "embedding", _frozen_copy(vec))

    @property
    def dim(self) -> int:
        return self.embedding.shape[0]


def cosine(u, v) -> float:
    """Cosine similarity of two nonzero vectors of equal dimension."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape[0] != v.shape[0]:
        raise DimMismatchError(
            f"cosine requires equal dims, got {u.shape[0]} and {v.shape[0]}"
        )
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine is undefined for zero-norm vectors")
    return float(np.dot(u, v) / (nu * nv))


def softmax(logits) -> np.ndarray:
    """Stable softmax over a nonempty sequence of finite logits."""
    z = as_vector(logits, "logits")
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def minmax_normalize(values, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Map values affinely onto [0, 1]; a degenerate range maps everything to 0.5.

    The 0.5 fallback keeps downstream attention arithmetic total: a constant
    profile carries no discriminative signal either way.
    """
    x = as_vector(values, "values")
    lo = x.min()
    hi = x.max()
    if hi - lo < eps:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def mean_vectors(vectors) -> np.ndarray:
    """Coordinate-wise arithmetic mean of equally sized vectors."""
    vecs = [as_vector(v, f"vectors[{i}]") for i, v in enumerate(vectors)]
    if not vecs:
        raise EmptyInputError("mean_vectors needs at least one vector")
    dim = vecs[0].shape[0]
    for i, v in enumerate(vecs[1:], start=1):
        if v.shape[0] != dim:
            raise DimMismatchError(
                f"vectors[{i}] has dimension {v.shape[0]}, expected {dim}"
            )
    return np.mean(np.stack(vecs), axis=0)
