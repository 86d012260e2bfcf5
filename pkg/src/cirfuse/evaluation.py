"""Cosine ranking against a gallery and Recall@K reports.

Ranking is an exact full sort of cosine similarities with ties broken by
ascending gallery id; the temperature never enters inference, so rankings
are identical for every tau.  Recall@K is the fraction of queries whose
true target appears among the top K ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GalleryEntry, as_vector
from .errors import (
    DimMismatchError,
    DuplicateIdError,
    EmptyDatasetError,
    EmptyGalleryError,
    MissingTruthError,
    ZeroVectorError,
)
from .training import (
    RunConfig,
    check_targets,
    compute_streams,
    fusion_for_inference,
    gallery_by_id,
)


@dataclass(frozen=True)
class RankedResult:
    """Gallery ids for one query, best first, with their cosine scores."""

    query_id: str
    ordered_gallery_ids: tuple[str, ...]
    scores: tuple[float, ...]


@dataclass(frozen=True)
class RecallReport:
    """Recall at each requested cutoff, their mean, and the query count."""

    recalls: dict[int, float]
    mean: float
    query_count: int

    def to_json_dict(self) -> dict:
        out: dict = {f"R@{k}": self.recalls[k] for k in sorted(self.recalls)}
        out["Avg"] = self.mean
        out["queries"] = self.query_count
        return out


def rank(q, gallery, query_id: str = "") -> RankedResult:
    """Full-sort cosine ranking of a query against the gallery."""
    entries = list(gallery)
    if not entries:
        raise EmptyGalleryError("cannot rank against an empty gallery")
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise DuplicateIdError("gallery ids must be unique")
    qv = as_vector(q, "query")
    q_norm = np.linalg.norm(qv)
    if q_norm == 0.0:
        raise ZeroVectorError("query has zero norm")
    mat = np.stack([e.embedding for e in entries])
    if mat.shape[1] != qv.shape[0]:
        raise DimMismatchError(
            f"query dimension {qv.shape[0]} does not match gallery dimension {mat.shape[1]}"
        )
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVectorError("gallery contains a zero-norm embedding")
    scores = (mat @ qv) / (norms * q_norm)
    order = sorted(range(len(entries)), key=lambda i: (-scores[i], ids[i]))
    return RankedResult(
        query_id=query_id,
        ordered_gallery_ids=tuple(ids[i] for i in order),
        scores=tuple(float(scores[i]) for i in order),
    )


def recall_at_k(results, truth: dict[str, str], ks) -> RecallReport:
    """Aggregate Recall@K over ranked results against a truth mapping."""
    results = list(results)
    if not results:
        raise EmptyDatasetError("recall needs at least one ranked result")
    ks = sorted(set(int(k) for k in ks))
    if any(k < 1 for k in ks):
        raise ValueError("every K must be positive")
    hits = {k: 0 for k in ks}
    for result in results:
        if result.query_id not in truth:
            raise MissingTruthError(f"no ground truth for query {result.query_id!r}")
        target = truth[result.query_id]
        for k in ks:
            if target in result.ordered_gallery_ids[:k]:
                hits[k] += 1
    n = len(results)
    recalls = {k: hits[k] / n for k in ks}
    return RecallReport(
        recalls=recalls,
        mean=sum(recalls.values()) / len(ks),
        query_count=n,
    )


def evaluate(
    dataset,
    gallery,
    params,
    config: RunConfig,
    ks=(1, 5, 10, 50),
    zero_mlp: bool = False,
) -> RecallReport:
    """Rank every sample's fused query against the full gallery and aggregate recalls.

    Deterministic: results are produced in input order and recalls do not
    depend on gallery order.
    """
    samples = list(dataset)
    if not samples:
        raise EmptyDatasetError("evaluation requires at least one sample")
    entries = list(gallery) if not isinstance(gallery, dict) else list(gallery.values())
    gallery_map = gallery_by_id(entries)
    if len(gallery_map) != len(entries):
        raise DuplicateIdError("gallery ids must be unique")
    check_targets(samples, gallery_map)
    config = config.resolved(samples[0].dim)
    model = fusion_for_inference(config, params=params, zero_mlp=zero_mlp)
    results = []
    truth = {}
    for sample in samples:
        streams = compute_streams(sample, config.variant)
        q, _ = model.forward(streams)
        results.append(rank(q, entries, query_id=sample.id))
        truth[sample.id] = sample.target_id
    return recall_at_k(results, truth, ks)
