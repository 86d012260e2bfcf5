"""Multi-level visual reference selection.

Two selectors re-weight stored reference-image features by how well they
agree with the retained-content text and disagree with the deleted-content
text:

* patch level: per-patch cosine attention against both texts, then a
  contrastive re-weighting that is averaged with the global summary token;
* instance level: the same cosine attention, but each side is min-max
  normalized across instances before taking the difference, and the result
  is a weighted mean of the instance features.

Features are used exactly as stored; cosine self-normalizes the weights and
the weighted sums deliberately keep feature magnitude.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_EPS, InstanceSet, PatchSet, as_vector, minmax_normalize
from .errors import DimMismatchError, EmptyInstanceSetError, ZeroVectorError

log = logging.getLogger(__name__)


def _unit_norms(rows: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVectorError(f"{what} contains a zero-norm vector")
    return norms


def _guidance(vec, dim: int, name: str) -> tuple[np.ndarray, float]:
    v = as_vector(vec, name)
    if v.shape[0] != dim:
        raise DimMismatchError(f"{name} has dimension {v.shape[0]}, expected {dim}")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVectorError(f"{name} has zero norm")
    return v, norm


def _cosine_rows(rows: np.ndarray, row_norms: np.ndarray, text: np.ndarray, text_norm: float) -> np.ndarray:
    return (rows @ text) / (row_norms * text_norm)


@dataclass(frozen=True)
class PatchAttention:
    """Per-patch retain/delete attention weights (cosines, in [-1, 1])."""

    alpha_plus: np.ndarray
    alpha_minus: np.ndarray


@dataclass(frozen=True)
class InstanceAttention:
    """Per-instance attention: raw cosines, min-max normalized sides, and their difference."""

    alpha_plus_raw: np.ndarray
    alpha_minus_raw: np.ndarray
    alpha_plus_norm: np.ndarray
    alpha_minus_norm: np.ndarray
    net: np.ndarray


def pvrs_weights(patch_set: PatchSet, r_rt, r_dt) -> PatchAttention:
    """Cosine attention of every patch token against the retain/delete texts.

    The summary token is excluded; it re-enters only additively in
    ``pvrs_select``.
    """
    patches = patch_set.patches
    norms = _unit_norms(patches, "patch set")
    rt, rt_norm = _guidance(r_rt, patch_set.dim, "r_rt")
    dt, dt_norm = _guidance(r_dt, patch_set.dim, "r_dt")
    return PatchAttention(
        alpha_plus=_cosine_rows(patches, norms, rt, rt_norm),
        alpha_minus=_cosine_rows(patches, norms, dt, dt_norm),
    )


def pvrs_select(patch_set: PatchSet, r_rt, r_dt) -> np.ndarray:
    """Contrastively re-weighted patch feature, averaged with the summary token.

    Returns ((1/N) * sum_i (alpha_plus_i - alpha_minus_i) * patch_i + cls) / 2.
    """
    attn = pvrs_weights(patch_set, r_rt, r_dt)
    weights = attn.alpha_plus - attn.alpha_minus
    weighted = (weights @ patch_set.patches) / patch_set.n
    return (weighted + patch_set.cls) / 2.0


def ivrs_weights(instance_set: InstanceSet, r_rt, r_dt, eps: float = DEFAULT_EPS) -> InstanceAttention:
    """Instance attention: raw cosines per side, min-max normalized independently.

    Raises ``EmptyInstanceSetError`` for M = 0; ``ivrs_select`` handles that
    case itself.
    """
    if instance_set.is_empty:
        raise EmptyInstanceSetError("cannot weight an empty instance set")
    inst = instance_set.instances
    norms = _unit_norms(inst, "instance set")
    rt, rt_norm = _guidance(r_rt, instance_set.dim, "r_rt")
    dt, dt_norm = _guidance(r_dt, instance_set.dim, "r_dt")
    plus_raw = _cosine_rows(inst, norms, rt, rt_norm)
    minus_raw = _cosine_rows(inst, norms, dt, dt_norm)
    plus_norm = minmax_normalize(plus_raw, eps)
    minus_norm = minmax_normalize(minus_raw, eps)
    return InstanceAttention(
        alpha_plus_raw=plus_raw,
        alpha_minus_raw=minus_raw,
        alpha_plus_norm=plus_norm,
        alpha_minus_norm=minus_norm,
        net=plus_norm - minus_norm,
    )


def ivrs_select(instance_set: InstanceSet, r_rt, r_dt, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Weighted mean of instance features under the net attention.

    Returns (1/M) * sum_i net_i * instance_i.  An empty instance set yields
    the zero vector so batch shapes stay uniform; the trainable fusion can
    learn to suppress that stream.
    """
    if instance_set.is_empty:
        log.warning("instance set is empty; instance stream falls back to the zero vector")
        return np.zeros(instance_set.dim)
    attn = ivrs_weights(instance_set, r_rt, r_dt, eps)
    return (attn.net @ instance_set.instances) / instance_set.m
