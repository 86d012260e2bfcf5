"""Weighted hierarchical combination of query streams.

A ``Combiner`` block fuses k input vectors: each input is projected and the
projections are concatenated; a shared rectifier trunk feeds two heads, a
k-logit attention head whose softmax produces per-stream weights and a
D-dimensional residual head; the output is the beta-weighted sum of the raw
inputs plus the residual.  Three such blocks form the hierarchy: one fuses
the visual streams with the modification text, one fuses them with the
imagined target text, and a final block fuses those two stream outputs.

Backward passes are hand-derived reverse-mode differentiation of exactly
this architecture.  The rectifier uses subgradient 0 at z = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_vector, softmax
from .errors import (
    ArityMismatchError,
    ConfigError,
    DimMismatchError,
    NonFiniteValueError,
    ShapeMismatchError,
    StaleCacheError,
)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class CombinerParams:
    """All parameters of one k-input combiner block.

    Shapes for arity k, input dimension D, hidden width H:
    projections k x (D, D), trunk (H, k*D) + (H,), attention head (k, H) +
    (k,), residual head (D, H) + (D,).
    """

    projections: tuple[np.ndarray, ...]
    trunk_weights: np.ndarray
    trunk_bias: np.ndarray
    attn_head_weights: np.ndarray
    attn_head_bias: np.ndarray
    res_head_weights: np.ndarray
    res_head_bias: np.ndarray

    def __post_init__(self):
        projections = tuple(np.asarray(p, dtype=np.float64) for p in self.projections)
        if len(projections) < 1:
            raise ConfigError("combiner arity must be at least 1")
        if projections[0].ndim != 2:
            raise ShapeMismatchError("projections must be square matrices")
        dim = projections[0].shape[0]
        for j, p in enumerate(projections):
            if p.shape != (dim, dim):
                raise ShapeMismatchError(
                    f"projection {j} has shape {p.shape}, expected {(dim, dim)}"
                )
        k = len(projections)
        trunk_w = np.asarray(self.trunk_weights, dtype=np.float64)
        if trunk_w.ndim != 2:
            raise ShapeMismatchError("trunk_weights must be a matrix")
        hidden = trunk_w.shape[0]
        expected = {
            "trunk_weights": (hidden, k * dim),
            "trunk_bias": (hidden,),
            "attn_head_weights": (k, hidden),
            "attn_head_bias": (k,),
            "res_head_weights": (dim, hidden),
            "res_head_bias": (dim,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatchError(f"{name} has shape {arr.shape}, expected {shape}")
            _check_finite(name, arr)
            object.__setattr__(self, name, arr)
        for j, p in enumerate(projections):
            _check_finite(f"projection {j}", p)
        object.__setattr__(self, "projections", projections)

    @property
    def k(self) -> int:
        return len(self.projections)

    @property
    def dim(self) -> int:
        return self.projections[0].shape[0]

    @property
    def hidden(self) -> int:
        return self.trunk_weights.shape[0]

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Parameters in the fixed order used by the optimizer and model packs."""
        out = [(f"proj{j}", p) for j, p in enumerate(self.projections)]
        out += [
            ("trunk_w", self.trunk_weights),
            ("trunk_b", self.trunk_bias),
            ("attn_w", self.attn_head_weights),
            ("attn_b", self.attn_head_bias),
            ("res_w", self.res_head_weights),
            ("res_b", self.res_head_bias),
        ]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "CombinerParams":
        """Rebuild from the ``named_arrays`` naming scheme; arity is inferred."""
        k = sum(1 for name in arrays if name.startswith("proj"))
        try:
            projections = tuple(arrays[f"proj{j}"] for j in range(k))
            return cls(
                projections=projections,
                trunk_weights=arrays["trunk_w"],
                trunk_bias=arrays["trunk_b"],
                attn_head_weights=arrays["attn_w"],
                attn_head_bias=arrays["attn_b"],
                res_head_weights=arrays["res_w"],
                res_head_bias=arrays["res_b"],
            )
        except KeyError as exc:
            raise ShapeMismatchError(f"combiner parameter entry missing: {exc}") from exc


@dataclass(frozen=True)
class CombinerCache:
    """Forward activations needed for the exact backward pass."""

    inputs: np.ndarray  # (k, D) raw stream inputs
    concat_projected: np.ndarray  # (k*D,)
    pre_activation: np.ndarray  # (H,)
    hidden: np.ndarray  # (H,)
    logits: np.ndarray  # (k,)
    betas: np.ndarray  # (k,)
    residual: np.ndarray  # (D,)


@dataclass(frozen=True)
class WhcParams:
    """The three-block hierarchy: modification, target, and final combiners."""

    mod_combiner: CombinerParams
    tgt_combiner: CombinerParams
    final_combiner: CombinerParams

    def __post_init__(self):
        if self.mod_combiner.k != 3 or self.tgt_combiner.k != 3:
            raise ConfigError("modification and target combiners must have arity 3")
        if self.final_combiner.k != 2:
            raise ConfigError("final combiner must have arity 2")
        dim = self.mod_combiner.dim
        if self.tgt_combiner.dim != dim or self.final_combiner.dim != dim:
            raise DimMismatchError("all three combiners must share one dimension")

    @property
    def dim(self) -> int:
        return self.mod_combiner.dim

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for prefix, params in (
            ("mod", self.mod_combiner),
            ("tgt", self.tgt_combiner),
            ("final", self.final_combiner),
        ):
            out += [(f"{prefix}.{name}", arr) for name, arr in params.named_arrays()]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "WhcParams":
        split: dict[str, dict[str, np.ndarray]] = {"mod": {}, "tgt": {}, "final": {}}
        for name, arr in arrays.items():
            prefix, _, rest = name.partition(".")
            if prefix not in split or not rest:
                raise ShapeMismatchError(f"unexpected model entry {name!r}")
            split[prefix][rest] = arr
        return cls(
            mod_combiner=CombinerParams.from_arrays(split["mod"]),
            tgt_combiner=CombinerParams.from_arrays(split["tgt"]),
            final_combiner=CombinerParams.from_arrays(split["final"]),
        )


@dataclass(frozen=True)
class WhcTrace:
    """Per-sample caches (and betas) from one hierarchical forward pass."""

    mod_cache: CombinerCache
    tgt_cache: CombinerCache
    final_cache: CombinerCache

    @property
    def betas(self) -> dict[str, np.ndarray]:
        return {
            "mod": self.mod_cache.betas,
            "tgt": self.tgt_cache.betas,
            "final": self.final_cache.betas,
        }


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_combiner(seed: int, k: int, dim: int, hidden: int) -> CombinerParams:
    """Seeded uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases.

    Identical seeds produce bit-identical parameters.  Arity 1 is allowed so
    ablations that drop every stream but one still run through a combiner.
    """
    if k < 1 or dim < 1 or hidden < 1:
        raise ConfigError(f"invalid combiner configuration k={k}, dim={dim}, hidden={hidden}")
    rng = np.random.default_rng(seed)
    projections = tuple(_xavier(rng, dim, dim, (dim, dim)) for _ in range(k))
    trunk_w = _xavier(rng, k * dim, hidden, (hidden, k * dim))
    attn_w = _xavier(rng, hidden, k, (k, hidden))
    res_w = _xavier(rng, hidden, dim, (dim, hidden))
    return CombinerParams(
        projections=projections,
        trunk_weights=trunk_w,
        trunk_bias=np.zeros(hidden),
        attn_head_weights=attn_w,
        attn_head_bias=np.zeros(k),
        res_head_weights=res_w,
        res_head_bias=np.zeros(dim),
    )


def zero_mlp_combiner(k: int, dim: int, hidden: int) -> CombinerParams:
    """All-zero parameters: the block reduces to the arithmetic mean of its inputs."""
    if k < 1 or dim < 1 or hidden < 1:
        raise ConfigError(f"invalid combiner configuration k={k}, dim={dim}, hidden={hidden}")
    return CombinerParams(
        projections=tuple(np.zeros((dim, dim)) for _ in range(k)),
        trunk_weights=np.zeros((hidden, k * dim)),
        trunk_bias=np.zeros(hidden),
        attn_head_weights=np.zeros((k, hidden)),
        attn_head_bias=np.zeros(k),
        res_head_weights=np.zeros((dim, hidden)),
        res_head_bias=np.zeros(dim),
    )


def init_whc(seed: int, dim: int, hidden: int) -> WhcParams:
    """Three independently initialized combiners from one base seed."""
    child = np.random.SeedSequence(seed).generate_state(3)
    return WhcParams(
        mod_combiner=init_combiner(int(child[0]), 3, dim, hidden),
        tgt_combiner=init_combiner(int(child[1]), 3, dim, hidden),
        final_combiner=init_combiner(int(child[2]), 2, dim, hidden),
    )


def zero_mlp_whc(dim: int, hidden: int) -> WhcParams:
    return WhcParams(
        mod_combiner=zero_mlp_combiner(3, dim, hidden),
        tgt_combiner=zero_mlp_combiner(3, dim, hidden),
        final_combiner=zero_mlp_combiner(2, dim, hidden),
    )


def combiner_forward(
    params: CombinerParams, inputs
) -> tuple[np.ndarray, np.ndarray, CombinerCache]:
    """Evaluate one combiner block.

    Returns (output, betas, cache).  Betas always form a probability vector;
    the output is sum_j betas_j * inputs_j + residual, where the residual and
    the beta logits come from the shared rectifier trunk over the
    concatenated projected inputs.
    """
    xs = [as_vector(x, f"inputs[{j}]") for j, x in enumerate(inputs)]
    if len(xs) != params.k:
        raise ArityMismatchError(f"combiner of arity {params.k} received {len(xs)} inputs")
    dim = params.dim
    for j, x in enumerate(xs):
        if x.shape[0] != dim:
            raise DimMismatchError(f"inputs[{j}] has dimension {x.shape[0]}, expected {dim}")
    stacked = np.stack(xs)
    concat_projected = np.concatenate([w @ x for w, x in zip(params.projections, xs)])
    pre_activation = params.trunk_weights @ concat_projected + params.trunk_bias
    hidden = np.maximum(pre_activation, 0.0)
    logits = params.attn_head_weights @ hidden + params.attn_head_bias
    betas = softmax(logits)
    residual = params.res_head_weights @ hidden + params.res_head_bias
    output = betas @ stacked + residual
    cache = CombinerCache(
        inputs=stacked,
        concat_projected=concat_projected,
        pre_activation=pre_activation,
        hidden=hidden,
        logits=logits,
        betas=betas,
        residual=residual,
    )
    return output, betas, cache


def _check_cache(params: CombinerParams, cache: CombinerCache) -> None:
    if (
        cache.inputs.shape != (params.k, params.dim)
        or cache.concat_projected.shape != (params.k * params.dim,)
        or cache.hidden.shape != (params.hidden,)
        or cache.betas.shape != (params.k,)
    ):
        raise StaleCacheError("cache shapes do not match the combiner parameters")


def combiner_backward(
    params: CombinerParams, cache: CombinerCache, d_output
) -> tuple[CombinerParams, list[np.ndarray]]:
    """Exact reverse-mode gradients of one combiner block.

    Given dL/d(output), returns (dL/d(params) in a CombinerParams-shaped
    container, dL/d(inputs) as k vectors).  Chains through the weighted sum,
    the softmax, the rectifier (subgradient 0 at 0), and the projections.
    """
    g = as_vector(d_output, "d_output")
    if g.shape[0] != params.dim:
        raise DimMismatchError(f"d_output has dimension {g.shape[0]}, expected {params.dim}")
    _check_cache(params, cache)

    # Residual head: output += res_w @ h + res_b.
    d_res_w = np.outer(g, cache.hidden)
    d_res_b = g.copy()
    d_hidden = params.res_head_weights.T @ g

    # Beta-weighted sum: output += sum_j betas_j * x_j.
    d_betas = cache.inputs @ g
    # Softmax jacobian applied to d_betas.
    d_logits = cache.betas * (d_betas - float(cache.betas @ d_betas))
    d_attn_w = np.outer(d_logits, cache.hidden)
    d_attn_b = d_logits
    d_hidden = d_hidden + params.attn_head_weights.T @ d_logits

    # Trunk: h = max(z, 0), z = trunk_w @ vcat + trunk_b.
    d_pre = d_hidden * (cache.pre_activation > 0.0)
    d_trunk_w = np.outer(d_pre, cache.concat_projected)
    d_trunk_b = d_pre
    d_concat = params.trunk_weights.T @ d_pre

    # Projections: vcat segment j is W_j @ x_j.
    dim = params.dim
    d_projections = []
    d_inputs = []
    for j in range(params.k):
        seg = d_concat[j * dim : (j + 1) * dim]
        x_j = cache.inputs[j]
        d_projections.append(np.outer(seg, x_j))
        d_inputs.append(cache.betas[j] * g + params.projections[j].T @ seg)

    d_params = CombinerParams(
        projections=tuple(d_projections),
        trunk_weights=d_trunk_w,
        trunk_bias=d_trunk_b,
        attn_head_weights=d_attn_w,
        attn_head_bias=d_attn_b,
        res_head_weights=d_res_w,
        res_head_bias=d_res_b,
    )
    return d_params, d_inputs


def whc_forward(whc: WhcParams, v_p, v_i, s_mt, r_tt) -> tuple[np.ndarray, WhcTrace]:
    """Hierarchical fusion of the four query streams into one query vector."""
    q_mod, _, mod_cache = combiner_forward(whc.mod_combiner, [v_p, v_i, s_mt])
    q_tgt, _, tgt_cache = combiner_forward(whc.tgt_combiner, [v_p, v_i, r_tt])
    q, _, final_cache = combiner_forward(whc.final_combiner, [q_mod, q_tgt])
    return q, WhcTrace(mod_cache=mod_cache, tgt_cache=tgt_cache, final_cache=final_cache)


def whc_backward(
    whc: WhcParams, trace: WhcTrace, d_q
) -> tuple[WhcParams, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Chain combiner gradients through the hierarchy (final, then both streams).

    Returns (parameter gradients in a WhcParams-shaped container, gradients
    with respect to the four stream inputs v_p, v_i, s_mt, r_tt).
    """
    d_final, (d_q_mod, d_q_tgt) = combiner_backward(whc.final_combiner, trace.final_cache, d_q)
    d_mod, (d_vp_m, d_vi_m, d_smt) = combiner_backward(whc.mod_combiner, trace.mod_cache, d_q_mod)
    d_tgt, (d_vp_t, d_vi_t, d_rtt) = combiner_backward(whc.tgt_combiner, trace.tgt_cache, d_q_tgt)
    grads = WhcParams(mod_combiner=d_mod, tgt_combiner=d_tgt, final_combiner=d_final)
    return grads, (d_vp_m + d_vp_t, d_vi_m + d_vi_t, d_smt, d_rtt)
