"""Contrastive training of the fusion parameters over frozen embeddings.

The loss is a batch-based classification loss: each query's cosine
similarity to its own target is contrasted against the in-batch targets at
temperature tau.  Backbone embeddings never receive gradients; only the
fusion parameters train, with a from-scratch Adam and a counter-based
per-epoch shuffle so that (seed, config, data) determine every number
bit-exactly.

The ablation switchboard mirrors the standard variant grid: the full
hierarchy, a single combiner over any subset of streams, or plain
summation.  Disabled streams are dropped from the combiner arity rather
than zero-filled.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .combiner import (
    CombinerParams,
    WhcParams,
    combiner_backward,
    combiner_forward,
    init_combiner,
    init_whc,
    whc_backward,
    whc_forward,
    zero_mlp_combiner,
    zero_mlp_whc,
)
from .core import GalleryEntry, QuerySample, as_vector
from .errors import (
    ConfigError,
    DimMismatchError,
    EmptyDatasetError,
    MissingTargetError,
    NonPositiveTauError,
    ShapeMismatchError,
    ZeroVectorError,
)
from .selection import ivrs_select, pvrs_select

STREAM_ORDER = ("v_p", "v_i", "s_mt", "r_tt")

FUSION_MODES = ("whc", "sum", "single_combiner")

# Reference hyperparameters for the two public benchmark protocols.
PRESETS = {
    "cirr": {"tau": 0.01, "learning_rate": 1e-6, "batch_size": 16, "seed": 124},
    "fashioniq": {"tau": 0.1, "learning_rate": 1e-5, "batch_size": 16, "seed": 124},
}


@dataclass(frozen=True)
class AblationVariant:
    """Which fusion path runs and which query streams feed it."""

    fusion: str = "whc"
    use_mod_text: bool = True
    use_target_text: bool = True
    use_pvrs: bool = True
    use_ivrs: bool = True

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.fusion!r}; expected one of {FUSION_MODES}")
        if not (self.use_mod_text or self.use_target_text):
            raise ConfigError("at least one text stream must be enabled")
        if self.fusion == "whc" and not (
            self.use_mod_text and self.use_target_text and self.use_pvrs and self.use_ivrs
        ):
            raise ConfigError(
                "the hierarchical fusion needs all four streams; "
                "drop streams via fusion='single_combiner' or 'sum'"
            )

    @property
    def enabled_streams(self) -> tuple[str, ...]:
        flags = {
            "v_p": self.use_pvrs,
            "v_i": self.use_ivrs,
            "s_mt": self.use_mod_text,
            "r_tt": self.use_target_text,
        }
        return tuple(name for name in STREAM_ORDER if flags[name])

    def to_json_dict(self) -> dict:
        return {
            "fusion": self.fusion,
            "use_mod_text": self.use_mod_text,
            "use_target_text": self.use_target_text,
            "use_pvrs": self.use_pvrs,
            "use_ivrs": self.use_ivrs,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "AblationVariant":
        if not isinstance(data, dict):
            raise ConfigError("variant must be a JSON object")
        known = {"fusion", "use_mod_text", "use_target_text", "use_pvrs", "use_ivrs"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown variant keys: {', '.join(unknown)}")
        return cls(**data)


# The eight standard ablation rows: full hierarchy, plain sum, then single
# combiners over successively smaller stream subsets, and a text-only sum.
ABLATION_GRID = (
    AblationVariant("whc", True, True, True, True),
    AblationVariant("sum", True, True, True, True),
    AblationVariant("single_combiner", False, True, True, True),
    AblationVariant("single_combiner", True, False, True, True),
    AblationVariant("single_combiner", True, False, True, False),
    AblationVariant("single_combiner", True, False, False, True),
    AblationVariant("single_combiner", True, False, False, False),
    AblationVariant("sum", True, False, False, False),
)


@dataclass(frozen=True)
class RunConfig:
    """Everything a training or evaluation run depends on."""

    tau: float = 0.1
    batch_size: int = 16
    epochs: int = 1
    learning_rate: float = 1e-4
    seed: int = 124
    dim: int | None = None
    hidden: int | None = None
    variant: AblationVariant = field(default_factory=AblationVariant)

    def __post_init__(self):
        if not self.tau > 0:
            raise NonPositiveTauError(f"tau must be positive, got {self.tau}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        for name in ("dim", "hidden"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be positive when given")

    def resolved(self, data_dim: int) -> "RunConfig":
        """Fill dim from the data and default hidden to 4 * dim."""
        dim = self.dim if self.dim is not None else data_dim
        if dim != data_dim:
            raise DimMismatchError(f"config dim {dim} does not match data dimension {data_dim}")
        hidden = self.hidden if self.hidden is not None else 4 * dim
        return replace(self, dim=dim, hidden=hidden)

    def to_json_dict(self) -> dict:
        return {
            "tau": self.tau,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "dim": self.dim,
            "hidden": self.hidden,
            "variant": self.variant.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {
            "preset",
            "tau",
            "batch_size",
            "epochs",
            "learning_rate",
            "seed",
            "dim",
            "hidden",
            "variant",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged: dict = {}
        preset = data.get("preset")
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
            merged.update(PRESETS[preset])
        merged.update({k: v for k, v in data.items() if k != "preset"})
        if "variant" in merged:
            merged["variant"] = AblationVariant.from_json_dict(merged["variant"])
        return cls(**merged)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    recalls: dict[int, float] | None = None


@dataclass(frozen=True)
class TrainLog:
    epochs: tuple[EpochStats, ...]
    wall_clock_seconds: float
    config: RunConfig

    def to_jsonl(self) -> str:
        import json

        lines = []
        for stats in self.epochs:
            record: dict = {"epoch": stats.epoch, "mean_loss": stats.mean_loss}
            if stats.recalls is not None:
                record["recalls"] = {f"R@{k}": v for k, v in stats.recalls.items()}
            lines.append(json.dumps(record))
        return "\n".join(lines) + "\n"


def batch_loss(queries, targets, tau: float) -> tuple[float, np.ndarray]:
    """Batch classification loss and its exact gradient w.r.t. the queries.

    loss = mean_i -log( exp(cos(Q_i, H_i)/tau) / sum_j exp(cos(Q_i, H_j)/tau) ),
    evaluated via log-sum-exp.  The gradient flows through the cosine,
    including its normalization term; targets receive no gradient.
    """
    if not tau > 0:
        raise NonPositiveTauError(f"tau must be positive, got {tau}")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    h = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if q.ndim != 2 or h.ndim != 2 or q.shape != h.shape:
        raise DimMismatchError(f"queries {q.shape} and targets {h.shape} must be (B, D) alike")
    if q.shape[0] < 1:
        raise EmptyDatasetError("batch must contain at least one sample")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(h))):
        raise ZeroVectorError("batch contains non-finite vectors")
    b = q.shape[0]
    q_norm = np.linalg.norm(q, axis=1)
    h_norm = np.linalg.norm(h, axis=1)
    if np.any(q_norm == 0.0) or np.any(h_norm == 0.0):
        raise ZeroVectorError("batch contains a zero-norm vector")

    cos = (q @ h.T) / np.outer(q_norm, h_norm)
    logits = cos / tau
    row_max = logits.max(axis=1)
    shifted = np.exp(logits - row_max[:, None])
    row_sum = shifted.sum(axis=1)
    # log-sum-exp minus the positive-pair logit; nonnegative by construction.
    losses = np.log(row_sum) + row_max - np.diagonal(logits)
    loss = float(losses.mean())

    probs = shifted / row_sum[:, None]
    d_logits = (probs - np.eye(b)) / b
    # d cos(Q_i, H_j)/d Q_i = H_j/(|Q_i||H_j|) - cos_ij Q_i/|Q_i|^2
    term_targets = (d_logits / h_norm[None, :]) @ h / q_norm[:, None]
    term_self = ((d_logits * cos).sum(axis=1) / q_norm**2)[:, None] * q
    d_queries = (term_targets - term_self) / tau
    return loss, d_queries


@dataclass
class AdamState:
    """First and second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params,
    grads,
    state: AdamState,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update over a list of parameter arrays."""
    if t < 1:
        raise ConfigError("step counter t must be at least 1")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatchError("params, grads, and state must have equal lengths")
    new_params: list[np.ndarray] = []
    new_m: list[np.ndarray] = []
    new_v: list[np.ndarray] = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatchError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
        m_t = beta1 * m + (1.0 - beta1) * g
        v_t = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m_t / (1.0 - beta1**t)
        v_hat = v_t / (1.0 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m_t)
        new_v.append(v_t)
    return new_params, AdamState(m=new_m, v=new_v)


def sum_fusion(v_p, v_i, s_mt, r_tt, variant: AblationVariant | None = None) -> np.ndarray:
    """Elementwise sum of the enabled streams (all four when no variant given)."""
    streams = {"v_p": v_p, "v_i": v_i, "s_mt": s_mt, "r_tt": r_tt}
    names = variant.enabled_streams if variant is not None else STREAM_ORDER
    vecs = [as_vector(streams[name], name) for name in names]
    dim = vecs[0].shape[0]
    for name, vec in zip(names, vecs):
        if vec.shape[0] != dim:
            raise DimMismatchError(f"{name} has dimension {vec.shape[0]}, expected {dim}")
    total = np.zeros(dim)
    for vec in vecs:
        total = total + vec
    return total


def compute_streams(sample: QuerySample, variant: AblationVariant) -> dict[str, np.ndarray]:
    """Selection outputs and text embeddings for the streams the variant uses.

    These are constants of the data: backbones are frozen, so no gradient
    ever reaches them.
    """
    streams: dict[str, np.ndarray] = {}
    if variant.use_pvrs:
        streams["v_p"] = pvrs_select(sample.patch_set, sample.r_rt, sample.r_dt)
    if variant.use_ivrs:
        streams["v_i"] = ivrs_select(sample.instance_set, sample.r_rt, sample.r_dt)
    if variant.use_mod_text:
        streams["s_mt"] = sample.s_mt
    if variant.use_target_text:
        streams["r_tt"] = sample.r_tt
    return streams


class WhcFusion:
    """The full three-combiner hierarchy."""

    kind = "whc"

    def __init__(self, params: WhcParams):
        self.params = params

    @classmethod
    def init(cls, config: RunConfig) -> "WhcFusion":
        return cls(init_whc(config.seed, config.dim, config.hidden))

    @classmethod
    def zero_mlp(cls, config: RunConfig) -> "WhcFusion":
        return cls(zero_mlp_whc(config.dim, config.hidden))

    def forward(self, streams: dict[str, np.ndarray]):
        return whc_forward(
            self.params, streams["v_p"], streams["v_i"], streams["s_mt"], streams["r_tt"]
        )

    def backward(self, trace, d_q) -> list[np.ndarray]:
        grads, _ = whc_backward(self.params, trace, d_q)
        return [arr for _, arr in grads.named_arrays()]

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return self.params.named_arrays()

    def with_arrays(self, values: list[np.ndarray]) -> "WhcFusion":
        names = [name for name, _ in self.params.named_arrays()]
        return WhcFusion(WhcParams.from_arrays(dict(zip(names, values))))

    def betas(self, trace) -> dict[str, np.ndarray]:
        return trace.betas


class SingleCombinerFusion:
    """One combiner over the variant's enabled streams."""

    kind = "single_combiner"

    def __init__(self, params: CombinerParams, variant: AblationVariant):
        if params.k != len(variant.enabled_streams):
            raise ConfigError(
                f"combiner arity {params.k} does not match "
                f"{len(variant.enabled_streams)} enabled streams"
            )
        self.params = params
        self.variant = variant

    @classmethod
    def init(cls, config: RunConfig) -> "SingleCombinerFusion":
        k = len(config.variant.enabled_streams)
        return cls(init_combiner(config.seed, k, config.dim, config.hidden), config.variant)

    @classmethod
    def zero_mlp(cls, config: RunConfig) -> "SingleCombinerFusion":
        k = len(config.variant.enabled_streams)
        return cls(zero_mlp_combiner(k, config.dim, config.hidden), config.variant)

    def forward(self, streams: dict[str, np.ndarray]):
        inputs = [streams[name] for name in self.variant.enabled_streams]
        q, _, cache = combiner_forward(self.params, inputs)
        return q, cache

    def backward(self, cache, d_q) -> list[np.ndarray]:
        d_params, _ = combiner_backward(self.params, cache, d_q)
        return [arr for _, arr in d_params.named_arrays()]

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return self.params.named_arrays()

    def with_arrays(self, values: list[np.ndarray]) -> "SingleCombinerFusion":
        names = [name for name, _ in self.params.named_arrays()]
        return SingleCombinerFusion(
            CombinerParams.from_arrays(dict(zip(names, values))), self.variant
        )

    def betas(self, cache) -> dict[str, np.ndarray]:
        return {"combiner": cache.betas}


class SumFusion:
    """Parameter-free direct summation of the enabled streams."""

    kind = "sum"

    def __init__(self, variant: AblationVariant):
        self.params = None
        self.variant = variant

    @classmethod
    def init(cls, config: RunConfig) -> "SumFusion":
        return cls(config.variant)

    zero_mlp = init

    def forward(self, streams: dict[str, np.ndarray]):
        total = None
        for name in self.variant.enabled_streams:
            total = streams[name] if total is None else total + streams[name]
        return total, None

    def backward(self, trace, d_q) -> list[np.ndarray]:
        return []

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return []

    def with_arrays(self, values) -> "SumFusion":
        return self

    def betas(self, trace) -> dict[str, np.ndarray]:
        return {}


_FUSION_CLASSES = {
    "whc": WhcFusion,
    "single_combiner": SingleCombinerFusion,
    "sum": SumFusion,
}

FusionModel = WhcFusion | SingleCombinerFusion | SumFusion


def build_fusion(config: RunConfig, params=None, zero_mlp: bool = False) -> FusionModel:
    """Construct the variant's fusion model: seeded, zero-MLP, or from loaded params."""
    if config.dim is None or config.hidden is None:
        raise ConfigError("config dim and hidden must be resolved before building the fusion")
    fusion_cls = _FUSION_CLASSES[config.variant.fusion]
    if params is not None:
        if fusion_cls is SumFusion:
            raise ConfigError("sum fusion has no parameters to load")
        if fusion_cls is SingleCombinerFusion:
            if not isinstance(params, CombinerParams):
                raise ConfigError("single_combiner fusion expects CombinerParams")
            return SingleCombinerFusion(params, config.variant)
        if not isinstance(params, WhcParams):
            raise ConfigError("whc fusion expects WhcParams")
        return WhcFusion(params)
    if zero_mlp:
        return fusion_cls.zero_mlp(config)
    return fusion_cls.init(config)


def fusion_for_inference(config: RunConfig, params=None, zero_mlp: bool = False) -> FusionModel:
    """Like ``build_fusion`` but refuses to fabricate untrained parameters.

    Inference paths must either load parameters or ask for the zero-MLP
    baseline explicitly; only the parameter-free sum fusion needs neither.
    """
    if params is None and not zero_mlp and config.variant.fusion != "sum":
        raise ConfigError(
            "inference needs trained parameters or an explicit zero-MLP baseline"
        )
    return build_fusion(config, params=params, zero_mlp=zero_mlp)


def shuffle_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Deterministic epoch shuffle from a counter-based generator keyed by (seed, epoch)."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, epoch], dtype=np.uint64)))
    return rng.permutation(n)


def check_targets(samples, gallery_map) -> None:
    for sample in samples:
        if sample.target_id not in gallery_map:
            raise MissingTargetError(
                f"sample {sample.id!r} targets {sample.target_id!r}, absent from the gallery"
            )


def gallery_by_id(gallery) -> dict[str, GalleryEntry]:
    return {entry.id: entry for entry in gallery}


def train(
    dataset,
    gallery,
    config: RunConfig,
    eval_dataset=None,
    eval_ks: tuple[int, ...] = (1, 5, 10, 50),
):
    """Run the training loop and return (fusion parameters, log).

    Per epoch: a seeded shuffle, then per batch a forward pass of every
    sample through selection (precomputed, frozen) and the configured
    fusion, the batch classification loss against the batch's own targets,
    exact backpropagation, and one Adam step.  A fixed seed makes the final
    parameters and the log bit-identical across runs.
    """
    samples = list(dataset)
    if not samples:
        raise EmptyDatasetError("training requires at least one sample")
    gallery_map = gallery if isinstance(gallery, dict) else gallery_by_id(gallery)
    check_targets(samples, gallery_map)
    config = config.resolved(samples[0].dim)

    started = time.perf_counter()
    variant = config.variant
    streams = [compute_streams(s, variant) for s in samples]
    targets = np.stack([gallery_map[s.target_id].embedding for s in samples])

    model = build_fusion(config)
    arrays = [arr for _, arr in model.named_arrays()]
    state = AdamState.zeros_like(arrays)
    trainable = bool(arrays)
    step = 0
    n = len(samples)
    epoch_stats: list[EpochStats] = []

    for epoch in range(1, config.epochs + 1):
        perm = shuffle_permutation(config.seed, epoch, n)
        total_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            forwards = [model.forward(streams[i]) for i in idx]
            queries = np.stack([q for q, _ in forwards])
            loss, d_queries = batch_loss(queries, targets[idx], config.tau)
            total_loss += loss * len(idx)
            if trainable:
                grads = [np.zeros_like(arr) for arr in arrays]
                for (_, trace), d_q in zip(forwards, d_queries):
                    for acc, g in zip(grads, model.backward(trace, d_q)):
                        acc += g
                step += 1
                arrays, state = adam_step(arrays, grads, state, step, config.learning_rate)
                model = model.with_arrays(arrays)
        recalls = None
        if eval_dataset is not None:
            from .evaluation import evaluate

            report = evaluate(
                eval_dataset, list(gallery_map.values()), model.params, config, ks=eval_ks
            )
            recalls = report.recalls
        epoch_stats.append(EpochStats(epoch=epoch, mean_loss=total_loss / n, recalls=recalls))

    log = TrainLog(
        epochs=tuple(epoch_stats),
        wall_clock_seconds=time.perf_counter() - started,
        config=config,
    )
    return model.params, log


def dataset_mean_loss(dataset, gallery, config: RunConfig, params=None, zero_mlp: bool = False) -> float:
    """Mean batch loss over the whole dataset in stored order (no shuffle).

    Useful for comparing fusion variants on identical data and batching.
    """
    samples = list(dataset)
    if not samples:
        raise EmptyDatasetError("loss evaluation requires at least one sample")
    gallery_map = gallery if isinstance(gallery, dict) else gallery_by_id(gallery)
    check_targets(samples, gallery_map)
    config = config.resolved(samples[0].dim)
    model = fusion_for_inference(config, params=params, zero_mlp=zero_mlp)
    streams = [compute_streams(s, config.variant) for s in samples]
    targets = np.stack([gallery_map[s.target_id].embedding for s in samples])
    total = 0.0
    n = len(samples)
    for start in range(0, n, config.batch_size):
        idx = range(start, min(start + config.batch_size, n))
        queries = np.stack([model.forward(streams[i])[0] for i in idx])
        loss, _ = batch_loss(queries, targets[list(idx)], config.tau)
        total += loss * len(list(idx))
    return total / n
